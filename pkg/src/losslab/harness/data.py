"""Datasets: two-moons points, synthetic tiny images, and the CIFAR-10 binary format."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from sklearn.datasets import make_moons

DATA_DIR_ENV = "LOSSLAB_DATA_DIR"

CIFAR_RECORD = 1 + 3 * 32 * 32


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def is_image(self) -> bool:
        return self.x_train.ndim == 4

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.x_train.shape[1:]


def _split(name, x, y, val_fraction, seed, n_classes, meta=None) -> Dataset:
    perm = np.random.default_rng(seed).permutation(len(x))
    n_val = int(round(len(x) * val_fraction))
    val, train = perm[:n_val], perm[n_val:]
    return Dataset(name, x[train], y[train], x[val], y[val], n_classes, meta or {})


def two_moons(n: int = 1000, noise: float = 0.1, seed: int = 0, val_fraction: float = 0.25) -> Dataset:
    x, y = make_moons(n_samples=n, noise=noise, random_state=seed)
    return _split("two-moons", x.astype(np.float64), y.astype(np.int64), val_fraction, seed, 2)


def tiny_images(
    classes: int = 2,
    size: int = 16,
    n: int = 2400,
    seed: int = 0,
    noise: float = 0.6,
    val_fraction: float = 0.25,
) -> Dataset:
    """Noisy oriented gratings; the class is the grating orientation.

    Each image is ``3 x size x size``: a sinusoid at orientation
    ``pi * k / classes`` with random frequency, phase, contrast and per-channel
    colour, plus i.i.d. Gaussian pixel noise; the whole set is scaled to unit
    pixel standard deviation.
    """
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, size=n)
    angle = np.pi * y / classes + rng.normal(0.0, 0.15, size=n)
    freq = rng.uniform(0.5, 1.5, size=n)
    phase = rng.uniform(0.0, 2 * np.pi, size=n)
    contrast = rng.uniform(0.3, 1.0, size=n)
    colour = rng.uniform(0.2, 1.0, size=(n, 3))
    r = np.arange(size) - (size - 1) / 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    proj = np.cos(angle)[:, None, None] * xx + np.sin(angle)[:, None, None] * yy
    grating = contrast[:, None, None] * np.sin(freq[:, None, None] * proj + phase[:, None, None])
    x = colour[:, :, None, None] * grating[:, None] + noise * rng.normal(size=(n, 3, size, size))
    x /= x.std()
    meta = {"generator": "gratings", "noise": noise}
    return _split("tiny-images", x, y.astype(np.int64), val_fraction, seed, classes, meta)


def read_cifar10_records(path) -> tuple[np.ndarray, np.ndarray]:
    """Labels and uint8 pixels (N, 3, 32, 32) from one binary batch file."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise DatasetFormatError(
            f"{path}: size {len(raw)} bytes is not a positive multiple of the {CIFAR_RECORD}-byte record size"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DatasetFormatError(f"{path}: label byte {labels.max()} outside [0, 9]")
    return labels, rec[:, 1:].reshape(-1, 3, 32, 32)


def avg_pool(x: np.ndarray, size: int) -> np.ndarray:
    """Average-pool NCHW images down to ``size x size`` (size must divide H and W)."""
    h, w = x.shape[2:]
    if h % size or w % size:
        raise ValueError(f"{size} does not divide image size {h}x{w}")
    fh, fw = h // size, w // size
    return x.reshape(x.shape[0], x.shape[1], size, fh, size, fw).mean(axis=(3, 5))


def load_cifar10_binary(
    path,
    classes: list[int] | None = None,
    downsample: int | None = None,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """Load CIFAR-10 binary batches.

    ``path`` is either one batch file (split into train/val with
    ``val_fraction``) or a directory holding ``data_batch_*.bin`` and
    ``test_batch.bin`` (the latter becomes the validation split).
    """
    path = Path(path)
    if path.is_dir():
        train_files = sorted(path.glob("data_batch_*.bin"))
        if not train_files:
            raise DatasetFormatError(f"{path}: no data_batch_*.bin files")
        parts = [read_cifar10_records(f) for f in train_files]
        ytr = np.concatenate([p[0] for p in parts])
        xtr = np.concatenate([p[1] for p in parts])
        yva, xva = read_cifar10_records(path / "test_batch.bin")
    else:
        y, x = read_cifar10_records(path)
        perm = np.random.default_rng(seed).permutation(len(y))
        n_val = int(round(len(y) * val_fraction))
        yva, xva, ytr, xtr = y[perm[:n_val]], x[perm[:n_val]], y[perm[n_val:]], x[perm[n_val:]]

    def prep(x, y):
        if classes is not None:
            keep = np.isin(y, classes)
            x, y = x[keep], np.searchsorted(np.asarray(classes), y[keep])
        x = x.astype(np.float64) / 255.0
        if downsample:
            x = avg_pool(x, downsample)
        return x, y.astype(np.int64)

    xtr, ytr = prep(xtr, ytr)
    xva, yva = prep(xva, yva)
    meta = {
        "source": str(path),
        "channel_mean": xtr.mean(axis=(0, 2, 3)).tolist() if len(xtr) else [],
        "channel_std": xtr.std(axis=(0, 2, 3)).tolist() if len(xtr) else [],
        "classes": list(classes) if classes is not None else list(range(10)),
    }
    return Dataset("cifar10-binary", xtr, ytr, xva, yva, len(meta["classes"]), meta)


def make_dataset(spec: Mapping) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "two-moons":
        return two_moons(**spec)
    if kind == "tiny-images":
        return tiny_images(**spec)
    if kind == "cifar10-binary":
        path = spec.pop("path", None) or os.environ.get(DATA_DIR_ENV)
        if not path:
            raise DatasetFormatError(f"cifar10-binary needs a path or ${DATA_DIR_ENV}")
        return load_cifar10_binary(path, **spec)
    raise ValueError(f"unknown dataset kind {kind!r}")


def random_crop(x: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad each image by ``pad`` and crop back to size at a random offset."""
    n, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    off = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = np.empty_like(x)
    for k in range(n):
        i, j = off[k]
        out[k] = xp[k, :, i : i + h, j : j + w]
    return out


def augment_batch(x: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Random crop for images, identity for point data."""
    return random_crop(x, pad, rng) if x.ndim == 4 else x


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index arrays for one epoch; the permutation depends only on (seed, epoch)."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[lo : lo + batch_size] for lo in range(0, n, batch_size)]
