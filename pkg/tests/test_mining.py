import numpy as np
import pytest

from islab.gan import init_gan
from islab.mining import (
    NoCandidate, ProxyCandidate, enlarge, generate_candidates, knn_neighborhood,
    knn_neighborhoods, mine_all, select_optimal,
)
from islab.nn import ConfigurationError, l2_normalize
from islab.similarity import Triplet, init_identity


def cand(conf, proxy=(1.0, 0.0), anchor=0):
    return ProxyCandidate(anchor, np.asarray(proxy, dtype=float), conf, Triplet(anchor, anchor, 1))


def brute_force(anchor, proxy, conf, state, bank, r, h):
    """Plain loop over the bank; the reference for enlarge."""
    if not conf > h:
        return set()
    out = set()
    for j in range(len(bank)):
        dist = sum((float(p) - float(b)) ** 2 for p, b in zip(proxy, bank[j])) ** 0.5
        if dist < r and not state.is_positive(anchor, j):
            out.add(j)
    return out


def test_select_optimal_takes_the_max():
    c = [cand(0.2), cand(0.9), cand(0.4)]
    assert select_optimal(c) is c[1]


def test_select_optimal_ties_go_to_the_first():
    c = [cand(0.7), cand(0.7, (0.0, 1.0))]
    assert select_optimal(c) is c[0]
    with pytest.raises(NoCandidate):
        select_optimal([])


def test_confidence_equal_to_threshold_adds_nothing():
    bank = np.array([[1.0, 0.0], [0.0, 1.0]])
    state = init_identity(2)
    assert enlarge(0, cand(0.5, (0.0, 1.0)), state, bank, r=1.0, h=0.5) == set()
    assert enlarge(0, cand(0.51, (0.0, 1.0)), state, bank, r=1.0, h=0.5) == {1}
    assert state.positives(0).tolist() == [0, 1]


def test_radius_is_strict():
    bank = np.array([[1.0, 0.0], [0.0, 1.0]])
    # the second row sits at exactly distance 1 from the proxy (1, 1)
    state = init_identity(2)
    assert enlarge(0, cand(1.0, (1.0, 1.0)), state, bank, r=1.0, h=0.5) == set()


def test_tiny_radius_adds_only_exact_matches():
    bank = l2_normalize(np.random.default_rng(0).standard_normal((20, 3)))
    state = init_identity(20)
    assert enlarge(3, cand(1.0, bank[7]), state, bank, r=1e-12, h=0.0) == {7}


def test_threshold_one_never_adds():
    bank = l2_normalize(np.random.default_rng(0).standard_normal((20, 3)))
    assert enlarge(0, cand(1.0, bank[1]), init_identity(20), bank, r=10.0, h=1.0) == set()


def test_argument_validation():
    bank = np.eye(2)
    with pytest.raises(ConfigurationError):
        enlarge(0, cand(1.0), init_identity(2), bank, r=0.0, h=0.5)
    with pytest.raises(ConfigurationError):
        enlarge(0, cand(1.0), init_identity(2), bank, r=1.0, h=1.5)


def test_enlarge_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        N, d = int(rng.integers(2, 200)), int(rng.integers(2, 6))
        bank = l2_normalize(rng.standard_normal((N, d)))
        state = init_identity(N)
        anchor = int(rng.integers(N))
        state.add_positives(anchor, rng.choice(N, size=min(N, 5), replace=False))
        proxy = l2_normalize(rng.standard_normal(d))
        conf, r, h = rng.random(), rng.uniform(0.05, 2.0), rng.random()
        expected = brute_force(anchor, proxy, conf, state, bank, r, h)
        before = set(state.positives(anchor).tolist())
        got = enlarge(anchor, cand(conf, proxy, anchor), state, bank, r, h)
        assert got == expected
        assert set(state.positives(anchor).tolist()) == before | expected


def test_max_add_keeps_the_closest():
    bank = np.array([[1.0, 0.0], [0.9, 0.1], [0.8, 0.2], [0.0, 1.0]])
    state = init_identity(4)
    got = enlarge(3, cand(1.0, (1.0, 0.0), anchor=3), state, bank, r=1.0, h=0.0, max_add=2)
    assert got == {0, 1}


def make_world(N=30, d=3, seed=0):
    rng = np.random.default_rng(seed)
    bank = l2_normalize(rng.standard_normal((N, d)))
    pair = init_gan(d, rng, hidden=8)
    return bank, pair


def test_candidates_for_exhausted_anchor_are_empty():
    bank, pair = make_world(N=3)
    state = init_identity(3)
    state.add_positives(0, np.array([1, 2]))
    assert generate_candidates(0, 5, state, bank, pair, np.random.default_rng(0)) == []


def test_candidates_are_scored_with_the_proxy_in_the_positive_slot():
    bank, pair = make_world()
    cands = generate_candidates(4, 5, init_identity(30), bank, pair, np.random.default_rng(1))
    assert len(cands) == 5
    for c in cands:
        assert c.anchor == 4 and c.source_triplet.positive == 4
        assert 0.0 < c.confidence < 1.0
        assert np.linalg.norm(c.proxy) == pytest.approx(1.0)


def test_mine_all_bookkeeping_and_determinism():
    bank, pair = make_world(N=40)
    results = []
    for _ in range(2):
        state = init_identity(40)
        _, rep = mine_all(state, bank, pair, 5, 1.0, 0.0, np.random.default_rng(3))
        results.append((state.matrix.copy(), rep))
    (m1, r1), (m2, r2) = results
    np.testing.assert_array_equal(m1, m2)
    assert r1.added == r2.added
    assert r1.total_added == int(m1.sum()) - 40
    assert r1.anchors_processed == 40 and len(r1.confidences) == 40
    assert r1.added_counts(40).sum() == r1.total_added


def test_threshold_one_leaves_state_unchanged():
    bank, pair = make_world()
    state = init_identity(30)
    _, rep = mine_all(state, bank, pair, 5, 2.0, 1.0, np.random.default_rng(0))
    assert rep.total_added == 0 and state.sizes().sum() == 30


def test_frozen_pass_differs_only_in_sampling_source():
    bank, pair = make_world(N=25)
    s1, s2 = init_identity(25), init_identity(25)
    mine_all(s1, bank, pair, 3, 0.5, 0.0, np.random.default_rng(2), frozen=True)
    mine_all(s2, bank, pair, 3, 0.5, 0.0, np.random.default_rng(2), frozen=True)
    np.testing.assert_array_equal(s1.matrix, s2.matrix)


def test_knn_neighborhood_matches_sort_oracle():
    rng = np.random.default_rng(0)
    bank = rng.standard_normal((50, 4))
    for a in (0, 17, 49):
        dist = [(float(np.sqrt(np.sum((bank[j] - bank[a]) ** 2))), j) for j in range(50)]
        expected = [j for _, j in sorted(dist)[:10]]
        assert knn_neighborhood(a, 10, bank).tolist() == expected
    np.testing.assert_array_equal(knn_neighborhoods(10, bank, chunk=7)[17],
                                  knn_neighborhood(17, 10, bank))


def test_knn_ties_break_by_index():
    bank = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    assert knn_neighborhood(0, 3, bank).tolist() == [0, 1, 2]
    assert knn_neighborhood(0, 4, bank).tolist() == [0, 1, 2, 3]
    with pytest.raises(ConfigurationError):
        knn_neighborhood(0, 5, bank)
