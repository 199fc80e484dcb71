"""Dense feed-forward networks with exact backprop, SGD/Adam and checkpoints.

Everything here works on float64 arrays by default. A forward pass accepts
either a single vector or a batch (rows are samples) and returns a ``Tape``
that ``backward`` consumes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")
EPS_NORM = 1e-12


class ConfigurationError(ValueError):
    """Raised for invalid shapes, kinds or hyperparameters."""


class UsageError(RuntimeError):
    """Raised when an API is called out of order (e.g. a stale tape)."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or loss stops being finite."""


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_sigmoid(z):
    z = np.asarray(z, dtype=float)
    return -np.logaddexp(0.0, -z)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(kind, z, a, grad):
    if kind == "relu":
        return grad * (z > 0)
    if kind == "tanh":
        return grad * (1.0 - a * a)
    if kind == "sigmoid":
        return grad * a * (1.0 - a)
    return grad


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class Net:
    layers: list[Layer]
    version: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("a Net needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigurationError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {layer.activation!r}")
            if layer.b.shape != (layer.out_dim,):
                raise ConfigurationError("bias shape does not match weight rows")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def param_count(self) -> int:
        return sum(layer.W.size + layer.b.size for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def copy(self) -> "Net":
        return Net(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
            version=self.version,
        )

    def __call__(self, x):
        return forward(self, x)[0]


def build_mlp(sizes, hidden_activation="relu", output_activation="identity",
              rng=None, dtype=np.float64) -> Net:
    """Build an MLP with uniform He-style fan-in initialization.

    ``sizes`` lists every width including input and output, so
    ``build_mlp([6, 256, 256, 2])`` has three layers.
    """
    if len(sizes) < 2:
        raise ConfigurationError("sizes needs at least input and output widths")
    rng = np.random.default_rng() if rng is None else rng
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        last = i == len(sizes) - 2
        layers.append(Layer(W, b, output_activation if last else hidden_activation))
    return Net(layers)


@dataclass
class Tape:
    net_id: int
    version: int
    squeeze: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def forward(net: Net, x):
    """Run ``net`` on a vector or a batch; returns ``(output, tape)``."""
    x = np.asarray(x, dtype=net.layers[0].W.dtype)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != net.in_dim:
        raise ConfigurationError(
            f"input has dimension {a.shape[-1]}, net expects {net.in_dim}"
        )
    tape = Tape(id(net), net.version, squeeze)
    for layer in net.layers:
        tape.inputs.append(a)
        z = a @ layer.W.T + layer.b
        a = _activate(layer.activation, z)
        tape.preacts.append(z)
        tape.outputs.append(a)
    return (a[0] if squeeze else a), tape


def backward(net: Net, tape: Tape, output_grad):
    """Backpropagate ``output_grad`` through the pass recorded in ``tape``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` follows the
    order of ``net.params()``. Gradients are summed over the batch.
    """
    if tape.net_id != id(net) or tape.version != net.version:
        raise UsageError("tape does not belong to the current state of this net")
    g = np.asarray(output_grad, dtype=tape.outputs[-1].dtype)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise UsageError(f"output_grad shape {g.shape} != {tape.outputs[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g = _activation_grad(layer.activation, tape.preacts[i], tape.outputs[i], g)
        grads[2 * i] = g.T @ tape.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.W
    return grads, (g[0] if tape.squeeze else g)


def l2_normalize(v, eps: float = EPS_NORM):
    """Scale rows to unit L2 norm.

    Rows with norm at most ``eps`` are replaced by ``e1`` and a warning is
    logged, so the result is always a unit vector.
    """
    v = np.asarray(v, dtype=float)
    rows = v[None, :] if v.ndim == 1 else v
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    bad = norms[:, 0] <= eps
    out = rows / np.where(bad[:, None], 1.0, norms)
    if bad.any():
        logger.warning("degenerate feature (norm <= %g) in %d row(s); using e1",
                       eps, int(bad.sum()))
        out[bad] = 0.0
        out[bad, 0] = 1.0
    return out[0] if v.ndim == 1 else out


def l2_normalize_backward(z, grad, eps: float = EPS_NORM):
    """Vector-Jacobian product of ``l2_normalize`` at ``z``.

    Degenerate rows map to a constant, so their gradient is zero.
    """
    z = np.atleast_2d(z)
    grad = np.atleast_2d(grad)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.where(norms <= eps, 1.0, norms)
    u = z / safe
    out = (grad - u * np.sum(u * grad, axis=1, keepdims=True)) / safe
    out[norms[:, 0] <= eps] = 0.0
    return out


# --------------------------------------------------------------- optimizers


@dataclass
class OptimizerState:
    kind: str
    lr: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buffers: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")


def sgd(lr: float, momentum: float = 0.9) -> OptimizerState:
    return OptimizerState("sgd_momentum", lr=lr, momentum=momentum)


def adam(lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
         eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def opt_step(state: OptimizerState, params, grads, net: Net | None = None):
    """Update ``params`` in place and return them.

    Buffers are created lazily on the first call. A non-finite gradient
    aborts the step before anything is modified. Passing ``net`` bumps its
    version so that tapes recorded before the update are rejected.
    """
    if len(params) != len(grads):
        raise ConfigurationError("params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != np.shape(g):
            raise ConfigurationError(f"grad {i} has shape {np.shape(g)}, param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {i} "
                                 f"(max |g| = {np.nanmax(np.abs(g))})")
    if not state.buffers:
        n_buf = 1 if state.kind == "sgd_momentum" else 2
        state.buffers = [[np.zeros_like(p) for p in params] for _ in range(n_buf)]
    state.step_count += 1
    if state.kind == "sgd_momentum":
        (vel,) = state.buffers
        for p, g, v in zip(params, grads, vel):
            v *= state.momentum
            v -= state.lr * g
            p += v
    else:
        m_buf, v_buf = state.buffers
        t = state.step_count
        c1 = 1.0 - state.beta1 ** t
        c2 = 1.0 - state.beta2 ** t
        for p, g, m, v in zip(params, grads, m_buf, v_buf):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if net is not None:
        net.version += 1
    return params


@dataclass
class LrSchedule:
    base_lr: float = 0.03
    decay_factor: float = 0.1
    decay_points: tuple[float, ...] = (0.75, 0.90)

    def __post_init__(self):
        pts = tuple(self.decay_points)
        if any(not 0.0 < p < 1.0 for p in pts) or any(
            b <= a for a, b in zip(pts, pts[1:])
        ):
            raise ConfigurationError("decay_points must be strictly increasing in (0, 1)")
        self.decay_points = pts

    def lr_at(self, epoch: int, total_epochs: int) -> float:
        """Learning rate for a 0-based ``epoch`` out of ``total_epochs``."""
        n_decays = sum(epoch >= p * total_epochs for p in self.decay_points)
        return self.base_lr * self.decay_factor ** n_decays


# -------------------------------------------------------------- checkpoints


def net_to_arrays(net: Net, prefix: str) -> tuple[dict, dict]:
    arrays = {}
    for i, layer in enumerate(net.layers):
        arrays[f"{prefix}.{i}.W"] = layer.W
        arrays[f"{prefix}.{i}.b"] = layer.b
    meta = {"activations": [l.activation for l in net.layers]}
    return arrays, meta


def net_from_arrays(arrays, meta, prefix: str) -> Net:
    layers = [
        Layer(np.array(arrays[f"{prefix}.{i}.W"]), np.array(arrays[f"{prefix}.{i}.b"]), act)
        for i, act in enumerate(meta["activations"])
    ]
    return Net(layers)


def opt_to_arrays(opt: OptimizerState, prefix: str) -> tuple[dict, dict]:
    arrays = {}
    for k, buf in enumerate(opt.buffers):
        for j, arr in enumerate(buf):
            arrays[f"{prefix}.buf{k}.{j}"] = arr
    meta = {
        "kind": opt.kind, "lr": opt.lr, "momentum": opt.momentum,
        "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
        "step_count": opt.step_count,
        "n_buffers": len(opt.buffers),
        "buffer_len": len(opt.buffers[0]) if opt.buffers else 0,
    }
    return arrays, meta


def opt_from_arrays(arrays, meta, prefix: str) -> OptimizerState:
    buffers = [
        [np.array(arrays[f"{prefix}.buf{k}.{j}"]) for j in range(meta["buffer_len"])]
        for k in range(meta["n_buffers"])
    ]
    return OptimizerState(
        meta["kind"], lr=meta["lr"], momentum=meta["momentum"], beta1=meta["beta1"],
        beta2=meta["beta2"], eps=meta["eps"], step_count=meta["step_count"],
        buffers=buffers,
    )


def save_arrays(path, arrays: dict, meta: dict) -> None:
    """Write arrays plus a JSON metadata blob to an ``.npz`` file."""
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
        meta = json.loads(bytes(data["__meta__"]).decode())
    return arrays, meta


def save_checkpoint(path, net: Net, opt: OptimizerState | None = None, rng=None) -> None:
    """Dump a net, its optimizer buffers and an RNG state; restores bit-exactly."""
    arrays, net_meta = net_to_arrays(net, "net")
    meta = {"net": net_meta}
    if opt is not None:
        opt_arrays, meta["opt"] = opt_to_arrays(opt, "opt")
        arrays.update(opt_arrays)
    if rng is not None:
        meta["rng"] = rng.bit_generator.state
    save_arrays(path, arrays, meta)


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``: returns ``(net, opt_or_None, rng_or_None)``."""
    arrays, meta = load_arrays(path)
    net = net_from_arrays(arrays, meta["net"], "net")
    opt = opt_from_arrays(arrays, meta["opt"], "opt") if "opt" in meta else None
    rng = None
    if "rng" in meta:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
    return net, opt, rng
