"""Synthetic manifolds, the CIFAR-10 binary format, and augmentations."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError

MANIFOLDS = ("two_moons", "concentric_circles", "swiss_roll")
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


class FormatError(ValueError):
    """Raised for malformed dataset files."""


class Dataset:
    """Immutable set of raw samples with optional, evaluation-only labels.

    Training code reads ``samples``. Ground truth lives behind
    :meth:`eval_labels` so that nothing on the training path picks it up by
    accident.
    """

    def __init__(self, samples, labels=None, name: str = "dataset"):
        samples = np.array(samples, dtype=float)
        if samples.ndim != 2:
            raise ConfigurationError("samples must be a 2-D array (N, D)")
        samples.setflags(write=False)
        if labels is not None:
            labels = np.array(labels, dtype=np.int64)
            if labels.shape != (len(samples),):
                raise ConfigurationError("labels must have one entry per sample")
            labels.setflags(write=False)
        self._samples = samples
        self._labels = labels
        self.name = name

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def N(self) -> int:
        return len(self._samples)

    @property
    def dim(self) -> int:
        return self._samples.shape[1]

    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    def eval_labels(self) -> np.ndarray:
        if self._labels is None:
            raise ConfigurationError(f"dataset {self.name!r} carries no labels")
        return self._labels

    def __len__(self):
        return self.N

    def __repr__(self):
        return f"Dataset(name={self.name!r}, N={self.N}, dim={self.dim})"


def gen_manifold(kind: str, n_per_class: int, noise_sigma: float = 0.0,
                 seed: int = 0) -> Dataset:
    """Sample a two-class toy manifold.

    * ``two_moons``: upper arc ``(cos t, sin t)`` and lower arc
      ``(1 - cos t, 0.5 - sin t)`` for ``t`` in ``[0, pi]``.
    * ``concentric_circles``: radii 1 and 3.
    * ``swiss_roll``: two interleaved arms ``(t cos(t + c pi), y, t sin(t + c pi))``
      with ``t`` in ``[1.5 pi, 4.5 pi]`` and height ``y`` in ``[0, 10]``.

    Gaussian noise of std ``noise_sigma`` is added to every coordinate.
    Labels are the branch index. Classes are interleaved in sample order
    (``0, 1, 0, 1, ...``).
    """
    if kind not in MANIFOLDS:
        raise ConfigurationError(f"unknown manifold {kind!r}; expected one of {MANIFOLDS}")
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1")
    if noise_sigma < 0:
        raise ConfigurationError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    parts = []
    for c in range(2):
        if kind == "two_moons":
            t = rng.uniform(0.0, np.pi, n_per_class)
            if c == 0:
                pts = np.column_stack([np.cos(t), np.sin(t)])
            else:
                pts = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
        elif kind == "concentric_circles":
            t = rng.uniform(0.0, 2 * np.pi, n_per_class)
            radius = 1.0 if c == 0 else 3.0
            pts = radius * np.column_stack([np.cos(t), np.sin(t)])
        else:
            t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, n_per_class)
            y = rng.uniform(0.0, 10.0, n_per_class)
            phase = t + c * np.pi
            pts = np.column_stack([t * np.cos(phase), y, t * np.sin(phase)])
        parts.append(pts)
    samples = np.empty((2 * n_per_class, parts[0].shape[1]))
    samples[0::2] = parts[0]
    samples[1::2] = parts[1]
    labels = np.tile([0, 1], n_per_class)
    if noise_sigma > 0:
        samples = samples + rng.normal(0.0, noise_sigma, samples.shape)
    return Dataset(samples, labels, name=kind)


def export_csv(dataset: Dataset, path) -> None:
    """Write ``x0,...,xD-1,label`` rows (label column empty when unlabeled)."""
    labels = dataset.eval_labels() if dataset.has_labels else None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["label"])
        for i, row in enumerate(dataset.samples):
            writer.writerow([repr(float(v)) for v in row]
                            + ["" if labels is None else int(labels[i])])


def read_csv(path, name: str | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "label":
        raise FormatError(f"{path}: last column must be 'label'")
    samples = np.array([[float(v) for v in r[:-1]] for r in body])
    labels = None
    if body and all(r[-1] != "" for r in body):
        labels = [int(r[-1]) for r in body]
    return Dataset(samples, labels, name=name or os.path.basename(str(path)))


# ----------------------------------------------------------------- CIFAR-10


def read_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch into ``(pixels in [0,1] of shape (k, 3072), labels)``.

    Each 3073-byte record is a label byte followed by the red, green and blue
    32x32 planes in row-major order.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise FormatError(
            f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD} bytes"
        )
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if np.any(labels > 9):
        bad = int(np.flatnonzero(labels > 9)[0])
        raise FormatError(f"{path}: record {bad} has label byte {labels[bad]} > 9")
    return records[:, 1:].astype(np.float64) / 255.0, labels


def load_cifar10(dir_path, split: str = "train") -> Dataset:
    """Load the ``train`` (data_batch_1..5) or ``test`` split from ``dir_path``."""
    if split not in ("train", "test"):
        raise ConfigurationError("split must be 'train' or 'test'")
    names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    xs, ys = [], []
    for name in names:
        path = os.path.join(dir_path, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing CIFAR-10 batch file: {path}")
        x, y = read_cifar10_batch(path)
        xs.append(x)
        ys.append(y)
    return Dataset(np.concatenate(xs), np.concatenate(ys), name=f"cifar10-{split}")


# ------------------------------------------------------------- augmentation


@dataclass
class AugmentSpec:
    kind: str = "vector_jitter"
    jitter_sigma: float = 0.0
    flip_prob: float = 0.5
    crop_pad: int = 4
    brightness: float = 0.0
    image_shape: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self):
        if self.kind not in ("vector_jitter", "image_basic"):
            raise ConfigurationError(f"unknown augmentation {self.kind!r}")


def flip_image(x, shape=(3, 32, 32), axis: int = 2):
    """Mirror a flattened channel-planar image along ``axis`` of ``shape``."""
    img = np.asarray(x).reshape(shape)
    return np.flip(img, axis=axis).reshape(-1)


def augment(x, spec: AugmentSpec, seed) -> np.ndarray:
    """Randomly transform one sample (or a batch of rows for vector jitter).

    ``seed`` may be an int or a ``numpy.random.Generator``. Null parameters
    give the identity.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    if spec.kind == "vector_jitter":
        if spec.jitter_sigma == 0:
            return x.copy()
        return x + spec.jitter_sigma * rng.standard_normal(x.shape)

    c, h, w = spec.image_shape
    if x.size != c * h * w:
        raise ConfigurationError(f"sample of size {x.size} does not match {spec.image_shape}")
    img = x.reshape(c, h, w)
    if spec.flip_prob > 0 and rng.random() < spec.flip_prob:
        img = img[:, :, ::-1]
    p = spec.crop_pad
    if p > 0:
        padded = np.pad(img, ((0, 0), (p, p), (p, p)))
        dy, dx = rng.integers(0, 2 * p + 1, size=2)
        img = padded[:, dy:dy + h, dx:dx + w]
    if spec.brightness > 0:
        img = np.clip(img + rng.uniform(-spec.brightness, spec.brightness), 0.0, 1.0)
    return np.ascontiguousarray(img).reshape(-1)
