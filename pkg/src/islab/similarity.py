"""Positive sets, the feature memory bank, and triplet sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError, l2_normalize

REAL, SYNTHETIC_POS, SYNTHETIC_NEG = "real", "synthetic_pos", "synthetic_neg"


class ExhaustedNegatives(LookupError):
    """The anchor's positive set already covers every instance."""


class SimilarityState:
    """Binary similarity matrix stored row-wise as positive sets.

    Row ``i`` holds ``P_i``. Rows only ever grow, and ``i`` is always in
    ``P_i``. With ``symmetric=True`` every addition is mirrored.
    """

    def __init__(self, matrix: np.ndarray, round: int = 0, symmetric: bool = False):
        self.matrix = matrix
        self.round = round
        self.symmetric = symmetric
        self._cache: dict[int, np.ndarray] = {}

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    def positives(self, i: int) -> np.ndarray:
        """Sorted indices of ``P_i``."""
        cached = self._cache.get(i)
        if cached is None:
            cached = np.flatnonzero(self.matrix[i])
            self._cache[i] = cached
        return cached

    def negatives(self, i: int) -> np.ndarray:
        return np.flatnonzero(~self.matrix[i])

    def sizes(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def is_positive(self, i: int, j: int) -> bool:
        return bool(self.matrix[i, j])

    def add_positive(self, anchor: int, j: int) -> bool:
        """Put ``j`` into ``P_anchor``; returns whether anything changed."""
        if not 0 <= j < self.N:
            raise IndexError(f"index {j} outside 0..{self.N - 1}")
        changed = not self.matrix[anchor, j]
        if changed:
            self.matrix[anchor, j] = True
            self._cache.pop(anchor, None)
        if self.symmetric and not self.matrix[j, anchor]:
            self.matrix[j, anchor] = True
            self._cache.pop(j, None)
        return changed

    def add_positives(self, anchor: int, js) -> np.ndarray:
        """Vectorized :meth:`add_positive`; returns the indices that were new."""
        js = np.asarray(js, dtype=np.int64)
        new = js[~self.matrix[anchor, js]]
        if len(new):
            self.matrix[anchor, new] = True
            self._cache.pop(anchor, None)
        if self.symmetric and len(js):
            self.matrix[js, anchor] = True
            self._cache.clear()
        return new

    def copy(self) -> "SimilarityState":
        return SimilarityState(self.matrix.copy(), self.round, self.symmetric)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(self.N):
                fh.write(json.dumps({"anchor": i,
                                     "positives": self.positives(i).tolist()}) + "\n")

    @classmethod
    def from_jsonl(cls, path, symmetric: bool = False) -> "SimilarityState":
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        state = init_identity(len(rows), symmetric=symmetric)
        for row in rows:
            state.matrix[row["anchor"], row["positives"]] = True
        return state


def init_identity(N: int, symmetric: bool = False) -> SimilarityState:
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    return SimilarityState(np.eye(N, dtype=bool), round=0, symmetric=symmetric)


def add_positive(state: SimilarityState, anchor: int, j: int) -> SimilarityState:
    state.add_positive(anchor, j)
    return state


# -------------------------------------------------------------- memory bank


class MemoryBank:
    """Per-instance feature store updated by exponential mixing.

    ``f_hat <- eta * f + (1 - eta) * f_hat``, followed by renormalization
    when ``renorm`` is on. ``eta`` of exactly 0 or 1 skips the arithmetic so
    those boundary cases are bit-exact.
    """

    def __init__(self, features, eta: float = 0.5, renorm: bool = True):
        if not 0.0 <= eta <= 1.0:
            raise ConfigurationError("eta must lie in [0, 1]")
        self.features = np.array(features, dtype=float)
        self.eta = eta
        self.renorm = renorm

    @classmethod
    def random(cls, N: int, d: int, rng, eta: float = 0.5, renorm: bool = True):
        return cls(l2_normalize(rng.standard_normal((N, d))), eta=eta, renorm=renorm)

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def update(self, idx, feats) -> None:
        """Mix ``feats`` into rows ``idx``. Duplicate indices apply in order."""
        idx = np.atleast_1d(np.asarray(idx))
        feats = np.atleast_2d(np.asarray(feats, dtype=float))
        if self.eta == 0.0:
            return
        if self.eta == 1.0:
            self.features[idx] = feats
            return
        if len(np.unique(idx)) != len(idx):
            for i, f in zip(idx, feats):
                self.update([i], f[None])
            return
        mixed = self.eta * feats + (1.0 - self.eta) * self.features[idx]
        self.features[idx] = l2_normalize(mixed) if self.renorm else mixed

    def snapshot(self) -> np.ndarray:
        return self.features.copy()

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.features.copy(), self.eta, self.renorm)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.features:
                writer.writerow([repr(float(v)) for v in row])


def memory_update(bank: MemoryBank, i: int, f_i) -> MemoryBank:
    bank.update([i], np.asarray(f_i)[None])
    return bank


# ----------------------------------------------------------------- triplets


@dataclass
class Triplet:
    anchor: int
    positive: int
    negative: int
    kind: str = REAL
    proxy: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (REAL, SYNTHETIC_POS, SYNTHETIC_NEG):
            raise ConfigurationError(f"unknown triplet kind {self.kind!r}")
        if self.kind != REAL and self.proxy is None:
            raise ConfigurationError("synthetic triplets need a proxy feature")

    def with_proxy(self, proxy, kind: str) -> "Triplet":
        return Triplet(self.anchor, self.positive, self.negative, kind, proxy)

    def features(self, bank_features: np.ndarray) -> np.ndarray:
        """Concatenate ``(anchor, positive slot, negative slot)`` features."""
        fa = bank_features[self.anchor]
        fp = bank_features[self.positive]
        fn = bank_features[self.negative]
        if self.kind == SYNTHETIC_POS:
            fp = self.proxy
        elif self.kind == SYNTHETIC_NEG:
            fn = self.proxy
        return np.concatenate([fa, fp, fn])


def sample_triplets(state: SimilarityState, anchors, rng) -> np.ndarray:
    """Draw one real triplet per entry of ``anchors``; returns an (M, 3) int array.

    Positives are uniform over ``P_anchor`` and negatives uniform over its
    complement. Anchors whose set covers everything raise
    :class:`ExhaustedNegatives`; filter them with :func:`sampleable_anchors`.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    N = state.N
    sizes = state.matrix[anchors].sum(axis=1)
    if np.any(sizes >= N):
        raise ExhaustedNegatives(f"anchor {int(anchors[np.argmax(sizes >= N)])} "
                                 "has no negatives left")
    slot = np.floor(rng.random(len(anchors)) * sizes).astype(np.int64)
    pos = np.empty(len(anchors), dtype=np.int64)
    for k, (a, s) in enumerate(zip(anchors, slot)):
        pos[k] = state.positives(int(a))[s]
    neg = rng.integers(0, N, size=len(anchors))
    # rejection sampling keeps the draw uniform over the complement
    for _ in range(64):
        clash = state.matrix[anchors, neg]
        if not clash.any():
            break
        neg[clash] = rng.integers(0, N, size=int(clash.sum()))
    else:
        for k in np.flatnonzero(state.matrix[anchors, neg]):
            neg[k] = rng.choice(state.negatives(int(anchors[k])))
    return np.column_stack([anchors, pos, neg])


def sampleable_anchors(state: SimilarityState) -> np.ndarray:
    return np.flatnonzero(state.sizes() < state.N)


def sample_triplet(state: SimilarityState, anchor: int, rng) -> Triplet:
    a, p, n = sample_triplets(state, [anchor], rng)[0]
    return Triplet(int(a), int(p), int(n))


def triplet_features(bank_features: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Concatenated ``(f_a, f_p, f_n)`` rows for an (M, 3) index array."""
    return np.concatenate([bank_features[idx[:, 0]], bank_features[idx[:, 1]],
                           bank_features[idx[:, 2]]], axis=1)
