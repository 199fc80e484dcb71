"""Positive-set enlargement with trained proxies, plus the Euclidean kNN baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .gan import GanPair, disc_scores, proxies_from_features, synthetic_inputs
from .nn import ConfigurationError
from .similarity import (
    ExhaustedNegatives, SimilarityState, Triplet, sample_triplets, triplet_features,
)


class NoCandidate(LookupError):
    """No proxy could be generated for an anchor."""


@dataclass
class ProxyCandidate:
    anchor: int
    proxy: np.ndarray
    confidence: float
    source_triplet: Triplet


@dataclass
class MiningReport:
    round: int = 0
    anchors_processed: int = 0
    skipped: list[int] = field(default_factory=list)
    added: dict[int, list[int]] = field(default_factory=dict)
    confidences: list[float] = field(default_factory=list)

    @property
    def total_added(self) -> int:
        return sum(len(v) for v in self.added.values())

    @property
    def mean_confidence(self) -> float:
        return float(np.mean(self.confidences)) if self.confidences else float("nan")

    def added_counts(self, N: int) -> np.ndarray:
        counts = np.zeros(N, dtype=np.int64)
        for a, js in self.added.items():
            counts[a] = len(js)
        return counts

    def summary(self, precision: float | None = None) -> dict:
        out = {
            "round": self.round,
            "anchors_processed": self.anchors_processed,
            "total_added": self.total_added,
            "mean_confidence": self.mean_confidence,
        }
        if precision is not None:
            out["precision"] = precision
        return out


def generate_candidates(anchor: int, m: int, state: SimilarityState, bank_features,
                        pair: GanPair, rng) -> list[ProxyCandidate]:
    """Sample ``m`` real triplets for ``anchor`` and score a proxy from each.

    Confidence is ``D`` on the triplet with the proxy in the positive slot.
    Returns an empty list when the anchor has no negatives left.
    """
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    try:
        idx = sample_triplets(state, np.full(m, anchor), rng)
    except ExhaustedNegatives:
        return []
    X = triplet_features(bank_features, idx)
    proxies = proxies_from_features(pair.G, X)[0]
    X_sp, _ = synthetic_inputs(X, proxies)
    conf = disc_scores(pair.D, X_sp)
    return [
        ProxyCandidate(anchor, proxies[k], float(conf[k]),
                       Triplet(int(idx[k, 0]), int(idx[k, 1]), int(idx[k, 2])))
        for k in range(m)
    ]


def select_optimal(candidates: list[ProxyCandidate]) -> ProxyCandidate:
    """Highest-confidence candidate; the earliest wins ties."""
    if not candidates:
        raise NoCandidate("empty candidate list")
    best = 0
    for k, c in enumerate(candidates):
        if c.confidence > candidates[best].confidence:
            best = k
    return candidates[best]


def enlarge(anchor: int, opt: ProxyCandidate, state: SimilarityState, bank_features,
            r: float, h: float, max_add: int | None = None) -> set[int]:
    """Add every non-positive ``j`` with ``|proxy - f_j| < r`` when confidence > h.

    ``max_add`` keeps only the instances closest to the proxy. Returns the
    set of newly added indices.
    """
    if not r > 0:
        raise ConfigurationError("r must be > 0")
    if not 0.0 <= h <= 1.0:
        raise ConfigurationError("h must lie in [0, 1]")
    if not opt.confidence > h:
        return set()
    dist = np.linalg.norm(np.asarray(bank_features) - opt.proxy, axis=1)
    hits = np.flatnonzero((dist < r) & ~state.matrix[anchor])
    if max_add is not None and len(hits) > max_add:
        hits = hits[np.argsort(dist[hits], kind="stable")[:max_add]]
    return {int(j) for j in state.add_positives(anchor, hits)}


def mine_all(state: SimilarityState, bank_features, pair: GanPair, m: int, r: float,
             h: float, rng, frozen: bool = False,
             max_add: int | None = None) -> tuple[SimilarityState, MiningReport]:
    """One mining pass over all anchors in ascending index order.

    In the default dynamic mode additions are visible to later anchors
    immediately; ``frozen=True`` samples every anchor's triplets from a
    snapshot taken at the start of the pass.
    """
    report = MiningReport(round=state.round)
    source = state.copy() if frozen else state
    for anchor in range(state.N):
        cands = generate_candidates(anchor, m, source, bank_features, pair, rng)
        if not cands:
            report.skipped.append(anchor)
            continue
        opt = select_optimal(cands)
        report.anchors_processed += 1
        report.confidences.append(opt.confidence)
        added = enlarge(anchor, opt, state, bank_features, r, h, max_add)
        if added:
            report.added[anchor] = sorted(added)
    return state, report


def knn_neighborhood(anchor: int, k: int, bank_features) -> np.ndarray:
    """The ``k`` indices closest to the anchor's feature (Euclidean), ties by index."""
    bank = np.asarray(bank_features)
    if not 0 < k < len(bank) + 1:
        raise ConfigurationError(f"k must be in 1..{len(bank)}")
    dist = np.linalg.norm(bank - bank[anchor], axis=1)
    return np.argsort(dist, kind="stable")[:k]


def knn_neighborhoods(k: int, bank_features, chunk: int = 128) -> np.ndarray:
    """``knn_neighborhood`` for every anchor at once; returns an (N, k) array."""
    bank = np.asarray(bank_features)
    out = np.empty((len(bank), k), dtype=np.int64)
    for start in range(0, len(bank), chunk):
        dist = cdist(bank[start:start + chunk], bank)
        out[start:start + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out
