"""Adapters that turn (network, dataset) pairs into plain functions of a flat parameter vector."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .nn import HARD, NetworkSpec, evaluate, loss_and_grad

METRICS = ("train_loss", "train_acc", "val_loss", "val_acc")

MetricFn = Callable[[np.ndarray], Mapping[str, float]]
LossFn = Callable[[np.ndarray, int], tuple[float, np.ndarray]]


@dataclass
class NetworkEvaluator:
    """Full-split train/validation loss and accuracy of ``net`` at a parameter vector."""

    net: NetworkSpec
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    @classmethod
    def for_dataset(cls, net: NetworkSpec, data) -> "NetworkEvaluator":
        return cls(net, data.x_train, data.y_train, data.x_val, data.y_val)

    def __call__(self, w: np.ndarray) -> dict[str, float]:
        tl, ta = evaluate(self.net, w, self.x_train, self.y_train)
        vl, va = evaluate(self.net, w, self.x_val, self.y_val)
        return {"train_loss": tl, "train_acc": ta, "val_loss": vl, "val_acc": va}


@dataclass
class MinibatchLoss:
    """``(w, step) -> (loss, grad)`` over shuffled minibatches.

    Step ``k`` reads batch ``k mod n_batches`` of epoch ``k // n_batches``; each
    epoch has its own seeded permutation, so the sequence depends only on ``seed``.
    """

    net: NetworkSpec
    x: np.ndarray
    y: np.ndarray
    batch_size: int
    seed: int = 0
    loss_kind: object = HARD
    _perm_cache: dict = field(default_factory=dict, repr=False)

    @property
    def batches_per_epoch(self) -> int:
        return max(1, len(self.x) // self.batch_size)

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perm_cache:
            self._perm_cache.clear()
            self._perm_cache[epoch] = np.random.default_rng([self.seed, epoch]).permutation(len(self.x))
        return self._perm_cache[epoch]

    def __call__(self, w: np.ndarray, step: int) -> tuple[float, np.ndarray]:
        epoch, k = divmod(step, self.batches_per_epoch)
        idx = self._perm(epoch)[k * self.batch_size : (k + 1) * self.batch_size]
        return loss_and_grad(self.net, w, self.x[idx], self.y[idx], self.loss_kind)


@dataclass
class Profile:
    """Metrics sampled along a one-parameter path (curve ``t`` or segment ``lambda``)."""

    coord: str
    grid: np.ndarray
    metrics: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.metrics[name]

    def at(self, value: float) -> dict[str, float]:
        (i,) = np.flatnonzero(self.grid == value)
        return {k: float(v[i]) for k, v in self.metrics.items()}

    def rows(self) -> list[dict[str, float]]:
        names = list(self.metrics)
        return [
            {self.coord: float(g), **{n: float(self.metrics[n][i]) for n in names}}
            for i, g in enumerate(self.grid)
        ]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=[self.coord, *self.metrics], lineterminator="\n")
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(v) for k, v in row.items()})
        return path


def profile(coord: str, grid: np.ndarray, points, metric_fn: MetricFn) -> Profile:
    """Evaluate ``metric_fn`` at each parameter vector produced by ``points(g)``."""
    results = [metric_fn(points(g)) for g in grid]
    names = list(results[0])
    return Profile(coord, np.asarray(grid, dtype=float), {n: np.array([r[n] for r in results], dtype=float) for n in names})
