"""Non-parametric instance probabilities and the positive-set losses.

For a batch of unit features ``F`` (rows ``f_i``) against memory-bank rows
``f_hat_k``::

    p_ik = softmax_k(f_i . f_hat_k / tau)
    L1   = -sum_i log sum_{k in P_i} p_ik
    L2   = sum_i KL(p_i || p_i^hard)
    L    = L1 + lam * L2

Bank rows are constants. Every function returns the loss value together with
the gradient w.r.t. the batch features (and the hard-positive features for
L2), so encoders can backpropagate through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError, l2_normalize
from .similarity import SimilarityState


@dataclass
class ProbRow:
    anchor: int
    p: np.ndarray
    tau: float


def _check_tau(tau):
    if not tau > 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")


EXP_FLOOR = -700.0  # exp() of deeper negatives falls into a slow subnormal path


def _exp(x):
    out = np.maximum(x, EXP_FLOOR)
    return np.exp(out, out=out)


def logsumexp(a, axis=1, keepdims=False, where=None):
    """Max-shifted log-sum-exp along ``axis``, optionally over ``where`` only."""
    if where is None:
        m = np.max(a, axis=axis, keepdims=True)
        shifted = _exp(a - m)
    else:
        m = np.max(a, axis=axis, keepdims=True, where=where, initial=-np.inf)
        m[~np.isfinite(m)] = 0.0
        shifted = _exp(a - m)
        shifted *= where
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = np.log(total) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def log_probs(F, bank_features, tau: float) -> np.ndarray:
    """Row-wise log softmax of ``F @ bank.T / tau`` (max-subtracted)."""
    _check_tau(tau)
    logits = (np.atleast_2d(F) / tau) @ np.asarray(bank_features).T
    logits -= logsumexp(logits, axis=1, keepdims=True)
    return logits


def prob_row(f_i, bank_features, tau: float, anchor: int = -1) -> ProbRow:
    return ProbRow(anchor, _exp(log_probs(f_i, bank_features, tau)[0]), tau)


def _reduce(values, reduction):
    if reduction == "sum":
        return float(values.sum()), 1.0
    if reduction == "mean":
        return float(values.mean()), 1.0 / len(values)
    raise ConfigurationError(f"unknown reduction {reduction!r}")


def _l1_logit_grad(logp, p, mask):
    """Per-row L1 terms and their gradient w.r.t. the logits (``p - q``)."""
    pos_logmass = logsumexp(logp, axis=1, where=mask)
    q = _exp(logp - pos_logmass[:, None])
    q *= mask
    return -pos_logmass, p - q


def loss_l1(F, anchors, state: SimilarityState, bank_features, tau: float,
            reduction: str = "sum"):
    """Positive-set log-likelihood loss; returns ``(value, dL/dF)``."""
    bank = np.asarray(bank_features)
    logp = log_probs(F, bank, tau)
    terms, d_logits = _l1_logit_grad(logp, _exp(logp), state.matrix[np.asarray(anchors)])
    value, scale = _reduce(terms, reduction)
    return value, (scale / tau) * (d_logits @ bank)


def hard_positive_indices(F, anchors, state: SimilarityState, bank_features) -> np.ndarray:
    """Index of the lowest-probability positive other than the anchor, or -1.

    Lowest ``p_ij`` is the lowest logit since rows share a denominator; ties
    go to the smallest index. ``-1`` marks anchors whose set is just ``{i}``.
    """
    anchors = np.asarray(anchors)
    mask = state.matrix[anchors].copy()
    mask[np.arange(len(anchors)), anchors] = False
    sims = np.atleast_2d(F) @ np.asarray(bank_features).T
    idx = np.argmin(np.where(mask, sims, np.inf), axis=1)
    idx[~mask.any(axis=1)] = -1
    return idx


def hard_positive(anchor: int, f_i, state: SimilarityState, bank_features,
                  encode_augmented) -> np.ndarray:
    """Hard positive feature for one anchor.

    ``encode_augmented(anchor)`` must return the normalized encoding of a
    random transform of ``x_anchor``; it is only called when ``P_i = {i}``.
    """
    j = hard_positive_indices(np.asarray(f_i)[None], [anchor], state, bank_features)[0]
    if j < 0:
        return l2_normalize(encode_augmented(anchor))
    return np.asarray(bank_features)[j].copy()


def _l2_logit_grads(logp, p, logq):
    """Per-row KL terms and gradients w.r.t. both rows of logits."""
    log_ratio = logp - logq
    kl = np.sum(p * log_ratio, axis=1)
    log_ratio -= kl[:, None]
    log_ratio *= p
    d_logits_q = _exp(logq)
    d_logits_q -= p
    return kl, log_ratio, d_logits_q


def loss_l2(F, F_hard, bank_features, tau: float, reduction: str = "sum"):
    """Sum of ``KL(p_i || p_i^hard)``; returns ``(value, dL/dF, dL/dF_hard)``."""
    bank = np.asarray(bank_features)
    logp = log_probs(F, bank, tau)
    kl, d_p, d_q = _l2_logit_grads(logp, _exp(logp), log_probs(F_hard, bank, tau))
    value, scale = _reduce(kl, reduction)
    return value, (scale / tau) * (d_p @ bank), (scale / tau) * (d_q @ bank)


def total_loss(F, anchors, state: SimilarityState, bank_features, tau: float,
               lam: float, F_hard=None, reduction: str = "sum"):
    """``L1 + lam * L2``; ``F_hard=None`` turns hard-positive enhancement off.

    Returns ``(total, l1, l2, dL/dF, dL/dF_hard_or_None)``.
    """
    if lam < 0:
        raise ConfigurationError("lambda must be >= 0")
    bank = np.asarray(bank_features)
    logp = log_probs(F, bank, tau)
    p = _exp(logp)
    terms1, d_logits = _l1_logit_grad(logp, p, state.matrix[np.asarray(anchors)])
    l1, scale = _reduce(terms1, reduction)
    if F_hard is None:
        return l1, l1, 0.0, (scale / tau) * (d_logits @ bank), None
    kl, d_p, d_q = _l2_logit_grads(logp, p, log_probs(F_hard, bank, tau))
    l2, _ = _reduce(kl, reduction)
    d_logits += lam * d_p
    dF = (scale / tau) * (d_logits @ bank)
    dH = (lam * scale / tau) * (d_q @ bank)
    return l1 + lam * l2, l1, l2, dF, dH
