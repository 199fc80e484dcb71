"""Proxy generator and triplet discriminator trained adversarially.

G maps a real triplet ``(f_a, f_p, f_n)`` to a unit-norm proxy feature. D
scores triplets: real ones against the two synthetic variants where the
proxy takes the positive slot or the negative slot. The value D maximizes is

    log D(T_r) + log(1 - D(T_p)) + alpha * log(1 - D(T_n))

and G minimizes the last two terms (or, with ``non_saturating``, maximizes
``log D(T_p) + alpha * log D(T_n)``). Log arguments are clamped at 1e-12.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .nn import (
    ConfigurationError, Net, NonFiniteError, OptimizerState, adam, backward,
    build_mlp, forward, l2_normalize, l2_normalize_backward, log_sigmoid,
    opt_step, sigmoid,
)
from .similarity import (
    REAL, SYNTHETIC_NEG, SYNTHETIC_POS, SimilarityState, Triplet,
    sample_triplets, sampleable_anchors, triplet_features,
)

logger = logging.getLogger(__name__)

LOG_FLOOR = float(np.log(1e-12))


@dataclass
class GanConfig:
    hidden: int = 256
    lr: float = 1e-4
    alpha: float = 1.0
    batch_size: int = 128
    triplets_per_anchor: int = 5
    max_epochs: int = 200
    conv_tol: float = 1e-3
    conv_window: int = 5
    d_steps: int = 1
    g_steps: int = 1
    non_saturating: bool = False


@dataclass
class GanPair:
    G: Net
    D: Net
    alpha: float = 1.0
    opt_g: OptimizerState = field(default_factory=adam)
    opt_d: OptimizerState = field(default_factory=adam)
    non_saturating: bool = False

    @property
    def dim(self) -> int:
        return self.G.out_dim


def init_gan(d: int, rng, hidden: int = 256, alpha: float = 1.0, lr: float = 1e-4,
             non_saturating: bool = False) -> GanPair:
    """Three fully connected layers each for G (3d -> d) and D (3d -> 1)."""
    G = build_mlp([3 * d, hidden, hidden, d], rng=rng)
    D = build_mlp([3 * d, hidden, hidden, 1], output_activation="sigmoid", rng=rng)
    return GanPair(G, D, alpha, adam(lr), adam(lr), non_saturating)


def _d_logits(D: Net, X):
    """Pre-sigmoid outputs of D plus the tape of the full forward pass."""
    _, tape = forward(D, X)
    return tape.preacts[-1][:, 0], tape


def _clamped(logp):
    return np.maximum(logp, LOG_FLOOR), logp > LOG_FLOOR


def proxies_from_features(G: Net, X_real):
    """Unit-norm proxies for rows of concatenated real triplet features."""
    z, tape = forward(G, np.atleast_2d(X_real))
    return l2_normalize(z), z, tape


def generate_proxy(G: Net, t: Triplet, bank_features) -> np.ndarray:
    if t.kind != REAL:
        raise ConfigurationError("proxies are generated from real triplets")
    return proxies_from_features(G, t.features(bank_features))[0][0]


def disc_score(D: Net, t: Triplet, bank_features) -> float:
    z, _ = _d_logits(D, t.features(bank_features)[None])
    return float(sigmoid(z)[0])


def disc_scores(D: Net, X) -> np.ndarray:
    return sigmoid(_d_logits(D, np.atleast_2d(X))[0])


def synthetic_inputs(X_real, proxies):
    d = proxies.shape[1]
    X_sp = X_real.copy()
    X_sp[:, d:2 * d] = proxies
    X_sn = X_real.copy()
    X_sn[:, 2 * d:] = proxies
    return X_sp, X_sn


def gan_loss(pair: GanPair, X_real, alpha: float | None = None) -> tuple[float, float]:
    """Batch-mean ``(d_objective, g_objective)`` for real triplet rows ``X_real``.

    ``d_objective`` is what D maximizes; ``g_objective`` is what G minimizes
    (saturating or non-saturating form, per ``pair.non_saturating``).
    """
    alpha = pair.alpha if alpha is None else alpha
    if alpha < 0:
        raise ConfigurationError("alpha must be >= 0")
    X_real = np.atleast_2d(X_real)
    proxies, _, _ = proxies_from_features(pair.G, X_real)
    X_sp, X_sn = synthetic_inputs(X_real, proxies)
    z_r = _d_logits(pair.D, X_real)[0]
    z_p = _d_logits(pair.D, X_sp)[0]
    z_n = _d_logits(pair.D, X_sn)[0]
    fake_p = _clamped(log_sigmoid(-z_p))[0]
    fake_n = _clamped(log_sigmoid(-z_n))[0]
    d_obj = _clamped(log_sigmoid(z_r))[0] + fake_p + alpha * fake_n
    if pair.non_saturating:
        g_obj = -(_clamped(log_sigmoid(z_p))[0] + alpha * _clamped(log_sigmoid(z_n))[0])
    else:
        g_obj = fake_p + alpha * fake_n
    return float(d_obj.mean()), float(g_obj.mean())


def d_gradients(pair: GanPair, X_real):
    """Gradients of ``-d_objective`` w.r.t. D's parameters (G held fixed)."""
    return _d_grads_and_loss(pair, X_real)[0]


def _d_grads_and_loss(pair: GanPair, X_real):
    X_real = np.atleast_2d(X_real)
    M = len(X_real)
    proxies = proxies_from_features(pair.G, X_real)[0]
    X_sp, X_sn = synthetic_inputs(X_real, proxies)
    z, tape = _d_logits(pair.D, np.vstack([X_real, X_sp, X_sn]))
    z_r, z_p, z_n = z[:M], z[M:2 * M], z[2 * M:]
    lr_, live_r = _clamped(log_sigmoid(z_r))
    lp_, live_p = _clamped(log_sigmoid(-z_p))
    ln_, live_n = _clamped(log_sigmoid(-z_n))
    d_obj = float(np.mean(lr_ + lp_ + pair.alpha * ln_))
    # d/dz log sigma(z) = 1 - sigma(z); d/dz log sigma(-z) = -sigma(z)
    dz = np.concatenate([
        -(1.0 - sigmoid(z_r)) * live_r,
        sigmoid(z_p) * live_p,
        pair.alpha * sigmoid(z_n) * live_n,
    ]) / M
    return _backprop_logit(pair.D, tape, dz)[0], -d_obj


def _backprop_logit(D: Net, tape, dz):
    """Backward from the pre-sigmoid logit, skipping the final sigmoid."""
    saved = D.layers[-1].activation
    D.layers[-1].activation = "identity"
    try:
        return backward(D, tape, dz[:, None])
    finally:
        D.layers[-1].activation = saved


def g_gradients(pair: GanPair, X_real):
    """Gradients of ``g_objective`` w.r.t. G's parameters (D held fixed)."""
    return _g_grads_and_loss(pair, X_real)[0]


def _g_grads_and_loss(pair: GanPair, X_real):
    X_real = np.atleast_2d(X_real)
    M = len(X_real)
    d = pair.dim
    proxies, raw, g_tape = proxies_from_features(pair.G, X_real)
    X_sp, X_sn = synthetic_inputs(X_real, proxies)
    z, d_tape = _d_logits(pair.D, np.vstack([X_sp, X_sn]))
    z_p, z_n = z[:M], z[M:]
    if pair.non_saturating:
        lp_, live_p = _clamped(log_sigmoid(z_p))
        ln_, live_n = _clamped(log_sigmoid(z_n))
        g_obj = -float(np.mean(lp_ + pair.alpha * ln_))
        dz_p = -(1.0 - sigmoid(z_p)) * live_p
        dz_n = -pair.alpha * (1.0 - sigmoid(z_n)) * live_n
    else:
        lp_, live_p = _clamped(log_sigmoid(-z_p))
        ln_, live_n = _clamped(log_sigmoid(-z_n))
        g_obj = float(np.mean(lp_ + pair.alpha * ln_))
        dz_p = -sigmoid(z_p) * live_p
        dz_n = -pair.alpha * sigmoid(z_n) * live_n
    _, dX = _backprop_logit(pair.D, d_tape, np.concatenate([dz_p, dz_n]) / M)
    d_proxy = dX[:M, d:2 * d] + dX[M:, 2 * d:]
    d_raw = l2_normalize_backward(raw, d_proxy)
    return backward(pair.G, g_tape, d_raw)[0], g_obj


def _check_finite(pair, epoch, *values):
    if not all(np.isfinite(v) for v in values) or not (pair.G.is_finite() and pair.D.is_finite()):
        err = NonFiniteError(f"GAN training diverged at epoch {epoch}: losses {values}")
        err.snapshot = {"G": pair.G.copy(), "D": pair.D.copy(), "epoch": epoch}
        raise err


def _converged(g_hist, window, tol) -> bool:
    if len(g_hist) < 2 * window:
        return False
    cur = np.mean(g_hist[-window:])
    prev = np.mean(g_hist[-2 * window:-window])
    return abs(cur - prev) <= tol * max(abs(prev), 1e-12)


def train_gan(pair: GanPair, state: SimilarityState, bank_features, config: GanConfig,
              rng, log=None) -> tuple[GanPair, list[tuple[int, float, float]]]:
    """Alternate D and G steps over real triplets sampled from ``state``.

    ``bank_features`` is a frozen snapshot. Each epoch draws
    ``triplets_per_anchor`` triplets per anchor for the D pool and an
    independent pool for G; minibatches are paired. Training stops when the
    mean generator loss over the last ``conv_window`` epochs differs from the
    window before by less than ``conv_tol`` (relative), or at ``max_epochs``.
    Returns the pair and a list of ``(epoch, d_loss, g_loss)``.
    """
    bank_features = np.asarray(bank_features)
    history = []
    anchors = sampleable_anchors(state)
    if config.max_epochs <= 0 or len(anchors) == 0:
        return pair, history
    pool = np.repeat(anchors, config.triplets_per_anchor)
    bs = config.batch_size
    g_hist = []
    for epoch in range(config.max_epochs):
        d_idx = sample_triplets(state, rng.permutation(pool), rng)
        g_idx = sample_triplets(state, rng.permutation(pool), rng)
        d_losses, g_losses = [], []
        for start in range(0, len(pool), bs):
            Xd = triplet_features(bank_features, d_idx[start:start + bs])
            Xg = triplet_features(bank_features, g_idx[start:start + bs])
            # logged losses are the first step's pre-update values, free by-products
            for k in range(config.d_steps):
                grads, loss = _d_grads_and_loss(pair, Xd)
                opt_step(pair.opt_d, pair.D.params(), grads, pair.D)
                if k == 0:
                    d_losses.append(loss)
            for k in range(config.g_steps):
                grads, loss = _g_grads_and_loss(pair, Xg)
                opt_step(pair.opt_g, pair.G.params(), grads, pair.G)
                if k == 0:
                    g_losses.append(loss)
        d_loss, g_loss = float(np.mean(d_losses)), float(np.mean(g_losses))
        _check_finite(pair, epoch, d_loss, g_loss)
        history.append((epoch, d_loss, g_loss))
        g_hist.append(g_loss)
        if log is not None:
            log(epoch, d_loss, g_loss)
        if _converged(g_hist, config.conv_window, config.conv_tol):
            logger.info("GAN converged after %d epochs", epoch + 1)
            break
    return pair, history


__all__ = [
    "GanConfig", "GanPair", "init_gan", "generate_proxy", "disc_score", "disc_scores",
    "gan_loss", "d_gradients", "g_gradients", "train_gan", "proxies_from_features",
    "synthetic_inputs", "SYNTHETIC_POS", "SYNTHETIC_NEG",
]
