"""Loss-surface probes: straight segments, barriers, and planes through three parameter vectors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .evaluation import MetricFn, Profile, profile
from .nn import NonFiniteLossError

SegmentReport = Profile

DEFAULT_SEGMENT_POINTS = 25


class DegeneratePlaneError(ValueError):
    """The three generators are (numerically) collinear."""


def segment_point(w_m: np.ndarray, w_n: np.ndarray, lam: float) -> np.ndarray:
    """``lam * w_m + (1 - lam) * w_n``; lam=0 is ``w_n`` and lam=1 is ``w_m``."""
    return lam * w_m + (1.0 - lam) * w_n


def segment_eval(
    w_m: np.ndarray, w_n: np.ndarray, metric_fn: MetricFn, n_points: int = DEFAULT_SEGMENT_POINTS
) -> SegmentReport:
    if n_points < 3:
        raise ValueError("n_points must be >= 3")
    grid = np.linspace(0.0, 1.0, n_points)
    return profile("lambda", grid, lambda lam: segment_point(w_m, w_n, float(lam)), metric_fn)


@dataclass(frozen=True)
class Barrier:
    has_barrier: bool
    height: float
    location: float


def barrier_check(report: Profile, metric: str = "train_loss") -> Barrier:
    """Largest excess of an interior grid value over the larger endpoint value.

    Only grid nodes are inspected, so ``height`` is a lower bound on the true
    barrier of the underlying continuous path.
    """
    vals = np.asarray(report[metric], dtype=float)
    if vals.size < 3:
        raise ValueError("barrier check needs at least 3 grid points")
    interior = vals[1:-1]
    k = int(np.argmax(interior))
    excess = float(interior[k] - max(vals[0], vals[-1]))
    if excess > 0:
        return Barrier(True, excess, float(report.grid[k + 1]))
    return Barrier(False, 0.0, float(report.grid[k + 1]))


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal frame of the plane through ``w_a``, ``w_b`` and ``theta``.

    Plane coordinates are Euclidean lengths along ``e_u`` (towards ``w_b``) and
    ``e_v`` (the part of ``theta - w_a`` orthogonal to ``e_u``), origin ``w_a``.
    """

    w_a: np.ndarray
    w_b: np.ndarray
    theta: np.ndarray
    e_u: np.ndarray
    e_v: np.ndarray
    u_norm: float
    v_norm: float
    theta_u: float  # theta's coordinate along e_u

    @property
    def generator_coords(self) -> dict[str, tuple[float, float]]:
        return {"w_a": (0.0, 0.0), "w_b": (self.u_norm, 0.0), "theta": (self.theta_u, self.v_norm)}

    def barycentric(self, x: float, y: float) -> tuple[float, float, float]:
        """Affine weights over (w_a, w_b, theta) of the plane point at (x, y)."""
        l3 = y / self.v_norm
        l2 = (x - l3 * self.theta_u) / self.u_norm
        return 1.0 - l2 - l3, l2, l3

    def point(self, x: float, y: float) -> np.ndarray:
        """Plane point as an affine combination of the generators.

        Generator coordinates reproduce the generators bit-for-bit.
        """
        l1, l2, l3 = self.barycentric(x, y)
        return l1 * self.w_a + l2 * self.w_b + l3 * self.theta


def plane_basis(w_a: np.ndarray, w_b: np.ndarray, theta: np.ndarray, rtol: float = 1e-10) -> PlaneBasis:
    w_a, w_b, theta = (np.asarray(v, dtype=np.float64) for v in (w_a, w_b, theta))
    u = w_b - w_a
    u_norm = float(np.linalg.norm(u))
    if u_norm == 0.0:
        raise DegeneratePlaneError("w_a and w_b coincide")
    e_u = u / u_norm
    d = theta - w_a
    theta_u = float(d @ e_u)
    v = d - theta_u * e_u
    v = v - (v @ e_u) * e_u  # second Gram-Schmidt pass
    v_norm = float(np.linalg.norm(v))
    if v_norm <= rtol * max(float(np.linalg.norm(d)), u_norm):
        raise DegeneratePlaneError("theta lies on the line through w_a and w_b")
    return PlaneBasis(w_a, w_b, theta, e_u, v / v_norm, u_norm, v_norm, theta_u)


@dataclass(frozen=True)
class ProjectionResult:
    coeffs: np.ndarray  # weights over (w_a, w_b, theta)
    point: np.ndarray
    residual_norm: float
    xy: tuple[float, float]


def project_to_plane(basis: PlaneBasis, w: np.ndarray, affine: bool = True) -> ProjectionResult:
    """Closest point to ``w`` on the plane.

    ``affine=True`` uses the affine plane through the three generators (weights
    sum to 1). ``affine=False`` solves the unconstrained least squares over the
    linear span of the three vectors instead.
    """
    w = np.asarray(w, dtype=np.float64)
    if affine:
        d = w - basis.w_a
        x, y = float(d @ basis.e_u), float(d @ basis.e_v)
        coeffs = np.array(basis.barycentric(x, y))
        point = basis.w_a + x * basis.e_u + y * basis.e_v
    else:
        m = np.stack([basis.w_a, basis.w_b, basis.theta], axis=1)
        coeffs = np.linalg.lstsq(m, w, rcond=None)[0]
        point = m @ coeffs
        d = point - basis.w_a
        x, y = float(d @ basis.e_u), float(d @ basis.e_v)
    return ProjectionResult(coeffs, point, float(np.linalg.norm(w - point)), (x, y))


@dataclass
class LossGrid:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # shape (len(ys), len(xs)); nan where overflow
    overflow: np.ndarray
    metric: str
    generators: dict[str, tuple[float, float]] = field(default_factory=dict)
    iterates: list[tuple[str, float, float, float]] = field(default_factory=list)  # (label, x, y, residual)

    def log_values(self) -> np.ndarray:
        return np.log10(self.values + 1e-12)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["x", "y", self.metric])
            for j, y in enumerate(self.ys):
                for i, x in enumerate(self.xs):
                    w.writerow([repr(float(x)), repr(float(y)), "overflow" if self.overflow[j, i] else repr(float(self.values[j, i]))])
        return path

    def iterates_to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "x", "y", "residual"])
            for label, x, y, r in self.iterates:
                w.writerow([label, repr(x), repr(y), repr(r)])
        return path


def default_bounds(basis: PlaneBasis, margin: float = 0.25) -> tuple[float, float, float, float]:
    xs = [0.0, basis.u_norm, basis.theta_u]
    ys = [0.0, basis.v_norm]
    wx = (max(xs) - min(xs)) * margin
    wy = (max(ys) - min(ys)) * margin
    return min(xs) - wx, max(xs) + wx, min(ys) - wy, max(ys) + wy


def grid_eval(
    basis: PlaneBasis,
    metric: Callable[[np.ndarray], float],
    bounds: tuple[float, float, float, float] | None = None,
    resolution: tuple[int, int] | int = 21,
    iterates: dict | None = None,
    metric_name: str = "value",
) -> LossGrid:
    """Evaluate ``metric`` at every node of a regular grid over the plane.

    Nodes whose metric is non-finite (or raises :class:`NonFiniteLossError`)
    are flagged in ``overflow``. ``iterates`` maps labels to parameter vectors
    to be projected onto the plane and attached to the grid.
    """
    nx, ny = (resolution, resolution) if isinstance(resolution, int) else resolution
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be >= 2 per axis")
    x0, x1, y0, y1 = bounds if bounds is not None else default_bounds(basis)
    xs, ys = np.linspace(x0, x1, nx), np.linspace(y0, y1, ny)
    values = np.full((ny, nx), np.nan)
    overflow = np.zeros((ny, nx), dtype=bool)
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            try:
                v = float(metric(basis.point(float(x), float(y))))
            except NonFiniteLossError:
                v = math.nan
            if math.isfinite(v):
                values[j, i] = v
            else:
                overflow[j, i] = True
    grid = LossGrid(xs, ys, values, overflow, metric_name, basis.generator_coords)
    for label, w in (iterates or {}).items():
        p = project_to_plane(basis, w)
        grid.iterates.append((str(label), p.xy[0], p.xy[1], p.residual_norm))
    return grid
