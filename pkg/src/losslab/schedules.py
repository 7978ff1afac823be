"""Learning-rate schedules as pure functions of (spec, epoch, iteration).

``iteration`` is the step index inside ``epoch``; ``iters_per_epoch`` turns the
pair into a fractional epoch for the cosine schedule and into a global step
count for warmup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping


@dataclass(frozen=True)
class Constant:
    lr: float
    kind = "constant"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass(frozen=True)
class StepDecay:
    """``lr0 / factor**k`` where k counts milestones already reached."""

    lr0: float
    factor: float
    milestones: tuple[int, ...] = ()
    kind = "step"

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.lr0 < 0 or self.factor <= 0:
            raise ValueError("need lr0 >= 0 and factor > 0")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")


@dataclass(frozen=True)
class LinearDecay:
    lr0: float
    lr_end: float
    total_epochs: float
    kind = "linear"

    def __post_init__(self):
        if self.lr0 < 0 or self.lr_end < 0 or self.total_epochs <= 0:
            raise ValueError("need non-negative rates and total_epochs > 0")


@dataclass(frozen=True)
class CosineRestarts:
    eta_min: float
    eta_max: float
    t0: float
    t_mult: float = 1.0
    kind = "cosine_restarts"

    def __post_init__(self):
        if not 0 <= self.eta_min <= self.eta_max:
            raise ValueError("need 0 <= eta_min <= eta_max")
        if self.t0 < 1 or self.t_mult < 1:
            raise ValueError("need t0 >= 1 and t_mult >= 1")

    def period(self, e: float) -> tuple[float, float]:
        """(start epoch of the period containing ``e``, period length)."""
        start, length = 0.0, float(self.t0)
        while e > start + length:
            start += length
            length *= self.t_mult
        return start, length


@dataclass(frozen=True)
class Warmup:
    """Linear ramp 0 -> ``peak`` over ``warmup_iters`` global steps, then ``tail``."""

    peak: float
    warmup_iters: int
    tail: "Schedule"
    kind = "warmup"

    def __post_init__(self):
        if self.peak < 0 or self.warmup_iters < 0:
            raise ValueError("need peak >= 0 and warmup_iters >= 0")


Schedule = Constant | StepDecay | LinearDecay | CosineRestarts | Warmup


def lr_at(spec: Schedule, epoch: int, iteration: int = 0, iters_per_epoch: int = 1) -> float:
    if epoch < 0 or iteration < 0:
        raise ValueError("epoch and iteration must be >= 0")
    if isinstance(spec, Constant):
        return spec.lr
    if isinstance(spec, StepDecay):
        k = sum(1 for m in spec.milestones if epoch >= m)
        return spec.lr0 / spec.factor**k
    if isinstance(spec, LinearDecay):
        frac = min((epoch + iteration / iters_per_epoch) / spec.total_epochs, 1.0)
        return spec.lr0 + (spec.lr_end - spec.lr0) * frac
    if isinstance(spec, CosineRestarts):
        e = epoch + iteration / iters_per_epoch
        start, length = spec.period(e)
        t_cur = e - start
        return spec.eta_min + 0.5 * (spec.eta_max - spec.eta_min) * (1 + math.cos(math.pi * t_cur / length))
    if isinstance(spec, Warmup):
        g = epoch * iters_per_epoch + iteration
        if g < spec.warmup_iters:
            return spec.peak * g / spec.warmup_iters
        return lr_at(spec.tail, epoch, iteration, iters_per_epoch)
    raise TypeError(f"not a schedule: {spec!r}")


def restart_epochs(spec: Schedule, total_epochs: int) -> list[float]:
    """Epochs at which a warm restart fires, strictly before ``total_epochs``."""
    if not isinstance(spec, CosineRestarts):
        raise TypeError("restart_epochs needs a cosine_restarts schedule")
    out = []
    boundary, length = float(spec.t0), float(spec.t0)
    while boundary < total_epochs:
        out.append(int(boundary) if boundary.is_integer() else boundary)
        length *= spec.t_mult
        boundary += length
    return out


def scale_lr_for_batch(base_lr: float, base_batch: int, new_batch: int) -> float:
    """Linear scaling rule."""
    if base_batch <= 0 or new_batch <= 0:
        raise ValueError("batch sizes must be positive")
    return base_lr * new_batch / base_batch


def lr_table(spec: Schedule, epochs: int, iters_per_epoch: int = 1) -> list[tuple[int, int, float]]:
    return [(e, i, lr_at(spec, e, i, iters_per_epoch)) for e in range(epochs) for i in range(iters_per_epoch)]


def to_dict(spec: Schedule) -> dict:
    d = {"kind": spec.kind}
    for k, v in spec.__dict__.items():
        if k == "tail":
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        d[k] = v
    return d


_KINDS = {c.kind: c for c in (Constant, StepDecay, LinearDecay, CosineRestarts, Warmup)}


def from_dict(d: Mapping) -> Schedule:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if "tail" in d:
        d["tail"] = from_dict(d["tail"])
    return _KINDS[kind](**d)


# Named presets at the original training scale.
PRESETS: dict[str, Schedule] = {
    "sgdr": CosineRestarts(eta_min=1e-6, eta_max=0.05, t0=10, t_mult=2),
    "step": StepDecay(0.05, 5, (60, 120, 160)),
    "step-60-150": StepDecay(0.05, 5, (60, 150)),
    "warmup-lb": Warmup(2.5, 200, StepDecay(2.5, 10, (60, 120, 150))),
    "lb-no-warmup": StepDecay(2.5, 10, (60, 120, 150)),
    "sb": StepDecay(0.05, 10, (60, 120, 150)),
}
