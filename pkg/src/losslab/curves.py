"""Mode connectivity with a single-bend polygonal chain.

The chain runs ``w_a -> theta -> w_b``::

    phi(t) = 2 (t theta + (0.5 - t) w_a)          0 <= t <= 0.5
    phi(t) = 2 ((t - 0.5) w_b + (1 - t) theta)    0.5 < t <= 1

Only ``theta`` is trained, by SGD on ``L(phi(t))`` with ``t ~ U[0, 1]`` drawn
fresh every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import LossFn, MetricFn, Profile, profile
from .nn import NonFiniteLossError, OptimizerState, optimizer_step
from .schedules import Constant, Schedule, lr_at


@dataclass
class CurveModel:
    w_a: np.ndarray
    w_b: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        if not (self.w_a.shape == self.w_b.shape == self.theta.shape and self.w_a.ndim == 1):
            raise ValueError("w_a, w_b and theta must be flat vectors of one length")


CurveEvalReport = Profile


def curve_point(curve: CurveModel, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t <= 0.5:
        return 2.0 * (t * curve.theta + (0.5 - t) * curve.w_a)
    return 2.0 * ((t - 0.5) * curve.w_b + (1.0 - t) * curve.theta)


def bend_weight(t: float) -> float:
    """d phi(t) / d theta (a scalar multiple of the identity)."""
    return 2.0 * t if t <= 0.5 else 2.0 * (1.0 - t)


def init_curve(w_a: np.ndarray, w_b: np.ndarray) -> CurveModel:
    w_a = np.array(w_a, dtype=np.float64)
    w_b = np.array(w_b, dtype=np.float64)
    return CurveModel(w_a, w_b, 0.5 * (w_a + w_b))


@dataclass
class CurveTrainResult:
    curve: CurveModel
    losses: list[float] = field(default_factory=list)
    ts: list[float] = field(default_factory=list)
    diverged: bool = False


def train_curve(
    curve: CurveModel,
    loss_fn: LossFn,
    iterations: int,
    seed: int = 0,
    lr: float | Schedule = 0.05,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> CurveTrainResult:
    """Train the bend point; endpoints are copied through untouched.

    ``loss_fn(w, step)`` returns the minibatch loss and its gradient at ``w``.
    ``lr`` may be a schedule, evaluated with the iteration index as its epoch.
    On a non-finite loss training stops and the last finite curve is returned
    with ``diverged=True``.
    """
    schedule = Constant(lr) if isinstance(lr, (int, float)) else lr
    rng = np.random.default_rng(seed)
    state = OptimizerState("sgd-momentum", curve.theta.size, momentum=momentum, weight_decay=weight_decay)
    theta = curve.theta.copy()
    result = CurveTrainResult(CurveModel(curve.w_a, curve.w_b, theta))
    for it in range(iterations):
        t = float(rng.uniform(0.0, 1.0))
        w = curve_point(CurveModel(curve.w_a, curve.w_b, theta), t)
        try:
            loss, grad = loss_fn(w, it)
        except NonFiniteLossError:
            result.diverged = True
            break
        new_theta = optimizer_step(state, theta, bend_weight(t) * grad, lr_at(schedule, it))
        if not np.all(np.isfinite(new_theta)):
            result.diverged = True
            break
        theta = new_theta
        result.losses.append(loss)
        result.ts.append(t)
        result.curve = CurveModel(curve.w_a, curve.w_b, theta)
    return result


def t_grid(n_points: int) -> np.ndarray:
    """Uniform grid on [0, 1] that always contains 0, 0.5 and 1."""
    if n_points < 3:
        raise ValueError("n_points must be >= 3")
    return np.union1d(np.linspace(0.0, 1.0, n_points), [0.5])


def evaluate_curve(curve: CurveModel, metric_fn: MetricFn, n_points: int = 25) -> CurveEvalReport:
    return profile("t", t_grid(n_points), lambda t: curve_point(curve, float(t)), metric_fn)


def expected_loss(curve: CurveModel, loss, n_points: int = 1001) -> float:
    """Trapezoid estimate of the curve objective E_t L(phi(t))."""
    ts = np.linspace(0.0, 1.0, n_points)
    vals = np.array([loss(curve_point(curve, float(t))) for t in ts])
    return float(np.trapezoid(vals, ts))


def max_interior_excess(report: Profile, metric: str = "train_loss") -> float:
    """How far the path's max exceeds the larger endpoint (negative if it never does)."""
    vals = report[metric]
    return float(vals.max() - max(vals[0], vals[-1])) if math.isfinite(vals.max()) else math.inf
