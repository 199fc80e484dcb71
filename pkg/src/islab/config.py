"""Run configuration: every knob of the training protocol in one flat record."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import MANIFOLDS
from .gan import GanConfig
from .nn import ConfigurationError, LrSchedule


@dataclass
class RunConfig:
    # data
    dataset: str = "two_moons"
    n_per_class: int = 1000
    noise: float = 0.08
    n_test_per_class: int = 500
    cifar_dir: str | None = None
    standardize_inputs: bool = True
    # encoder
    encoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    feature_dim: int = 128
    # protocol
    rounds: int = 4
    epochs_per_round: int = 30
    batch_size: int = 128
    base_lr: float = 0.03
    lr_decay: float = 0.1
    lr_decay_points: list[float] = field(default_factory=lambda: [0.75, 0.90])
    momentum: float = 0.9
    reset_encoder_opt: bool = False
    # similarity learning
    alpha: float = 1.0
    h: float = 0.5
    r: float = 1.0
    m: int = 5
    eta: float = 0.5
    tau: float = 0.07
    lam: float = 0.5
    hpe_enabled: bool = True
    augment_sigma: float = 0.1
    max_add_per_anchor: int | None = None
    # GAN
    gan_hidden: int = 64
    gan_lr: float = 1e-4
    gan_batch_size: int = 128
    gan_triplets_per_anchor: int = 5
    max_gan_epochs: int = 10
    gan_conv_tol: float = 1e-3
    gan_conv_window: int = 5
    gan_d_steps: int = 1
    gan_g_steps: int = 1
    gan_reinit: bool = False
    # mode flags
    frozen_pass: bool = False
    symmetric: bool = False
    renorm_bank: bool = True
    non_saturating: bool = False
    reinit_similarity: bool = False
    # evaluation
    knn_k: int | None = None
    knn_tau: float = 0.07
    euclid_k: int = 10
    probe_epochs: int = 30
    probe_lr: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigurationError(msg)

        need(self.dataset in MANIFOLDS + ("cifar10",), f"unknown dataset {self.dataset!r}")
        need(self.dataset != "cifar10" or self.cifar_dir, "cifar10 needs cifar_dir")
        need(self.n_per_class >= 1 and self.n_test_per_class >= 1, "sample counts must be >= 1")
        need(self.noise >= 0, "noise must be >= 0")
        need(self.feature_dim >= 1, "feature_dim must be >= 1")
        need(all(w >= 1 for w in self.encoder_hidden), "encoder widths must be >= 1")
        need(self.rounds >= 0 and self.epochs_per_round >= 0, "rounds/epochs must be >= 0")
        need(self.batch_size >= 1 and self.gan_batch_size >= 1, "batch sizes must be >= 1")
        need(self.base_lr > 0 and 0 < self.lr_decay <= 1, "bad learning-rate schedule")
        LrSchedule(self.base_lr, self.lr_decay, tuple(self.lr_decay_points))
        need(0 <= self.momentum < 1, "momentum must lie in [0, 1)")
        need(self.alpha >= 0, "alpha must be >= 0")
        need(0 <= self.h <= 1, "h must lie in [0, 1]")
        need(self.r > 0, "r must be > 0")
        need(self.m >= 1, "m must be >= 1")
        need(0 <= self.eta <= 1, "eta must lie in [0, 1]")
        need(self.tau > 0 and self.knn_tau > 0, "temperatures must be > 0")
        need(self.lam >= 0, "lambda must be >= 0")
        need(self.augment_sigma >= 0, "augment_sigma must be >= 0")
        need(self.max_add_per_anchor is None or self.max_add_per_anchor >= 0,
             "max_add_per_anchor must be >= 0")
        need(self.gan_hidden >= 1 and self.gan_lr > 0, "bad GAN settings")
        need(self.gan_triplets_per_anchor >= 1 and self.max_gan_epochs >= 0, "bad GAN settings")
        need(self.gan_conv_window >= 1 and self.gan_conv_tol >= 0, "bad GAN convergence rule")
        need(self.gan_d_steps >= 1 and self.gan_g_steps >= 1, "GAN step counts must be >= 1")
        need(self.knn_k is None or self.knn_k >= 1, "knn_k must be >= 1")
        need(self.euclid_k >= 1 and self.probe_epochs >= 0, "bad evaluation settings")

    @classmethod
    def full_scale(cls, **overrides) -> "RunConfig":
        """Defaults as reported for the full-size image experiments."""
        base = dict(feature_dim=128, epochs_per_round=200, gan_hidden=256, max_gan_epochs=200,
                    knn_k=200, euclid_k=10)
        base.update(overrides)
        return cls(**base)

    @property
    def n_train(self) -> int:
        return 2 * self.n_per_class

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, self.lr_decay, tuple(self.lr_decay_points))

    def gan_config(self) -> GanConfig:
        return GanConfig(
            hidden=self.gan_hidden, lr=self.gan_lr, alpha=self.alpha,
            batch_size=self.gan_batch_size,
            triplets_per_anchor=self.gan_triplets_per_anchor,
            max_epochs=self.max_gan_epochs, conv_tol=self.gan_conv_tol,
            conv_window=self.gan_conv_window, d_steps=self.gan_d_steps,
            g_steps=self.gan_g_steps, non_saturating=self.non_saturating,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def parse_override(text: str) -> tuple[str, object]:
    """Parse ``key=value``; the value is read as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().replace("-", "_"), value
