"""Weighted kNN, linear probe and mined-positive precision.

These are the only functions that read ground-truth labels.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .mining import MiningReport, knn_neighborhoods
from .nn import UsageError, backward, build_mlp, forward, opt_step, sgd
from .similarity import SimilarityState

SIZE_BUCKETS = (("1", 1, 1), ("2-9", 2, 9), ("10+", 10, None))


@dataclass
class EvalReport:
    round: int
    knn_accuracy: float
    linear_accuracy: float | None = None
    mining_precision_by_setsize: dict[str, float] = field(default_factory=dict)
    euclidean_precision: float | None = None
    mean_positive_set_size: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(**d)


def default_knn_k(n_train: int) -> int:
    return max(1, min(200, n_train // 10))


def weighted_knn(train_feats, train_labels, query_feats, k: int, tau: float = 0.07,
                 n_classes: int | None = None, chunk: int = 256) -> np.ndarray:
    """Predict labels by ``exp(f_i . f / tau)``-weighted votes of the top-k neighbors.

    Neighbors are ranked by inner product (features are unit norm); ties in
    ranking and in the vote go to the smallest index.
    """
    train_feats = np.asarray(train_feats, dtype=float)
    train_labels = np.asarray(train_labels)
    if len(train_feats) == 0:
        raise UsageError("weighted_knn needs a non-empty training set")
    k = min(k, len(train_feats))
    C = int(train_labels.max()) + 1 if n_classes is None else n_classes
    query_feats = np.atleast_2d(np.asarray(query_feats, dtype=float))
    preds = np.empty(len(query_feats), dtype=np.int64)
    for start in range(0, len(query_feats), chunk):
        sims = query_feats[start:start + chunk] @ train_feats.T
        top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        weights = np.exp(np.take_along_axis(sims, top, axis=1) / tau)
        votes = np.zeros((len(top), C))
        rows = np.repeat(np.arange(len(top)), k)
        np.add.at(votes, (rows, train_labels[top].ravel()), weights.ravel())
        preds[start:start + chunk] = np.argmax(votes, axis=1)
    return preds


def knn_accuracy(train_feats, train_labels, test_feats, test_labels, k=None,
                 tau: float = 0.07) -> float:
    k = default_knn_k(len(train_feats)) if k is None else k
    pred = weighted_knn(train_feats, train_labels, test_feats, k, tau)
    return float(np.mean(pred == np.asarray(test_labels)))


def linear_probe(train_feats, train_labels, test_feats, test_labels, epochs: int = 100,
                 lr: float = 0.1, seed: int = 0, batch_size: int = 128,
                 momentum: float = 0.9, n_classes: int | None = None) -> float:
    """Train a softmax-regression layer on frozen features; returns test top-1 accuracy."""
    train_feats = np.asarray(train_feats, dtype=float)
    train_labels = np.asarray(train_labels)
    C = int(max(train_labels.max(), np.max(test_labels))) + 1 if n_classes is None else n_classes
    rng = np.random.default_rng(seed)
    layer = build_mlp([train_feats.shape[1], C], rng=rng)
    opt = sgd(lr, momentum)
    onehot = np.eye(C)[train_labels]
    for _ in range(epochs):
        order = rng.permutation(len(train_feats))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            logits, tape = forward(layer, train_feats[idx])
            logits = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            grads, _ = backward(layer, tape, (p - onehot[idx]) / len(idx))
            opt_step(opt, layer.params(), grads, layer)
    pred = np.argmax(layer(np.asarray(test_feats, dtype=float)), axis=1)
    return float(np.mean(pred == np.asarray(test_labels)))


def set_precisions(state: SimilarityState, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor ``(precision, |P_i|)`` against ground truth."""
    labels = np.asarray(labels)
    same = labels[None, :] == labels[:, None]
    sizes = state.matrix.sum(axis=1)
    hits = np.sum(state.matrix & same, axis=1)
    return hits / sizes, sizes


def mining_precision(state: SimilarityState, labels) -> dict[str, float]:
    """Mean precision of positive sets, bucketed by set size, plus ``all``."""
    prec, sizes = set_precisions(state, labels)
    out = {"all": float(prec.mean())}
    for name, lo, hi in SIZE_BUCKETS:
        sel = (sizes >= lo) & (sizes <= (hi if hi is not None else sizes.max()))
        if sel.any():
            out[name] = float(prec[sel].mean())
    return out


def euclidean_precision(bank_features, labels, k: int = 10) -> float:
    """Mean precision of each anchor's self-inclusive Euclidean k-neighborhood."""
    labels = np.asarray(labels)
    nbrs = knn_neighborhoods(k, bank_features)
    return float(np.mean(labels[nbrs] == labels[:, None]))


def additions_precision(report: MiningReport, labels) -> float | None:
    """Fraction of pairs added in one mining pass that share the anchor's class."""
    labels = np.asarray(labels)
    hits = total = 0
    for a, js in report.added.items():
        hits += int(np.sum(labels[js] == labels[a]))
        total += len(js)
    return hits / total if total else None
