"""SVCCA representational similarity.

Activation matrices are ``neurons x datapoints``. Similarity between two layers
is the mean canonical correlation after each side is reduced by SVD to the
directions carrying 99% of its (squared singular value) energy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .nn import NetworkSpec, forward, layer_label, representation_layers

CLAMP_RTOL = 1e-10


class RankDeficiencyWarning(RuntimeWarning):
    pass


class NoVarianceError(ValueError):
    """Activations are constant across the probe set."""


@dataclass(frozen=True)
class CCAResult:
    correlations: np.ndarray  # non-increasing, in [0, 1]
    dims: tuple[int, int]

    @property
    def mean(self) -> float:
        return float(self.correlations.mean())


@dataclass
class SimilarityHeatmap:
    matrix: np.ndarray  # [i, j] = similarity(layer i of A, layer j of B)
    labels_a: list[str]
    labels_b: list[str]
    layers_a: list[int] = field(default_factory=list)
    layers_b: list[int] = field(default_factory=list)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()


def center(mat: np.ndarray) -> np.ndarray:
    return mat - mat.mean(axis=1, keepdims=True)


def collect_activations(net: NetworkSpec, params: np.ndarray, probe: np.ndarray, layer: int) -> np.ndarray:
    """Output of ``layer`` on every probe point as a ``neurons x datapoints`` matrix.

    Feature maps are flattened channel-major (channel, row, col).
    """
    if not 0 <= layer < len(net.layers):
        raise IndexError(f"layer index {layer} out of range for {len(net.layers)} layers")
    _, acts = forward(net, params, probe, capture=[layer])
    a = acts[layer]
    return a.reshape(a.shape[0], -1).T


def _energy_rank(s: np.ndarray, fraction: float) -> int:
    energy = s**2
    cum = np.cumsum(energy) / energy.sum()
    return int(np.searchsorted(cum, fraction - 1e-12) + 1)


def svd_reduce(mat: np.ndarray, variance_fraction: float = 0.99) -> np.ndarray:
    """Project centered rows onto the fewest top singular directions whose energy share reaches ``variance_fraction``."""
    if not 0 < variance_fraction <= 1:
        raise ValueError("variance_fraction must lie in (0, 1]")
    mat = center(np.asarray(mat))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise NoVarianceError("activation matrix has no variance to preserve")
    k = _energy_rank(s, variance_fraction)
    return u[:, :k].conj().T @ mat


def _inv_sqrt(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    evals, evecs = np.linalg.eigh(cov)
    floor = CLAMP_RTOL * max(float(np.trace(cov).real), np.finfo(float).tiny)
    clamped = bool((evals < floor).any())
    evals = np.maximum(evals, floor)
    return (evecs / np.sqrt(evals)) @ evecs.conj().T, clamped


def cca(a: np.ndarray, b: np.ndarray) -> CCAResult:
    """Canonical correlations between the row spaces of ``a`` and ``b``.

    Rows are centered, each side is whitened with its inverse covariance square
    root, and the correlations are the singular values of the whitened
    cross-covariance. Complex input (DFT coefficients) is supported.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"need two matrices with equal column counts, got {a.shape} and {b.shape}")
    m = a.shape[1]
    a, b = center(a), center(b)
    saa = a @ a.conj().T / (m - 1)
    sbb = b @ b.conj().T / (m - 1)
    sab = a @ b.conj().T / (m - 1)
    wa, ca = _inv_sqrt(saa)
    wb, cb = _inv_sqrt(sbb)
    if ca or cb:
        warnings.warn("covariance is rank deficient; small eigenvalues were clamped", RankDeficiencyWarning, stacklevel=2)
    rho = np.linalg.svd(wa @ sab @ wb, compute_uv=False)
    c = min(a.shape[0], b.shape[0])
    rho = np.clip(np.sort(rho[:c])[::-1], 0.0, 1.0)
    return CCAResult(rho, (a.shape[0], b.shape[0]))


def svcca(a: np.ndarray, b: np.ndarray, variance_fraction: float = 0.99) -> CCAResult:
    return cca(svd_reduce(a, variance_fraction), svd_reduce(b, variance_fraction))


def dft_preprocess(acts: np.ndarray) -> np.ndarray:
    """2-D DFT over the spatial axes of ``channels x H x W x datapoints`` activations.

    Returns complex coefficients of the same shape (orthonormal scaling, so
    total energy is preserved). ``out[:, u, v, :]`` is the channel matrix for
    spatial frequency (u, v).
    """
    acts = np.asarray(acts)
    if acts.ndim != 4:
        raise ValueError(f"expected channels x H x W x datapoints, got shape {acts.shape}")
    return np.fft.fft2(acts, axes=(1, 2), norm="ortho")


def dft_svcca(acts_a: np.ndarray, acts_b: np.ndarray, variance_fraction: float = 0.99) -> float:
    """Mean SVCCA similarity over spatial frequencies; frequencies with no energy on either side are skipped."""
    fa, fb = dft_preprocess(acts_a), dft_preprocess(acts_b)
    if fa.shape[1:3] != fb.shape[1:3]:
        raise ValueError(f"spatial sizes differ: {fa.shape[1:3]} vs {fb.shape[1:3]}")
    scores = []
    for u in range(fa.shape[1]):
        for v in range(fa.shape[2]):
            ma, mb = center(fa[:, u, v, :]), center(fb[:, u, v, :])
            if not (np.abs(ma).max() > 0 and np.abs(mb).max() > 0):
                continue
            scores.append(svcca(ma, mb, variance_fraction).mean)
    if not scores:
        raise NoVarianceError("no spatial frequency carries variance on both sides")
    return float(np.mean(scores))


def _layer_acts(net: NetworkSpec, params: np.ndarray, probe: np.ndarray, layers: list[int]) -> dict[int, np.ndarray]:
    _, acts = forward(net, params, probe, capture=layers)
    return acts


def layer_similarity(a: np.ndarray, b: np.ndarray, variance_fraction: float = 0.99, conv_mode: str = "dft") -> float:
    """SVCCA similarity of two captured activation tensors (datapoints first).

    Two feature maps with equal spatial size go through the DFT path when
    ``conv_mode == "dft"``; everything else is flattened to neurons x datapoints.
    """
    if conv_mode == "dft" and a.ndim == 4 and b.ndim == 4 and a.shape[2:] == b.shape[2:]:
        return dft_svcca(a.transpose(1, 2, 3, 0), b.transpose(1, 2, 3, 0), variance_fraction)
    ma = a.reshape(a.shape[0], -1).T
    mb = b.reshape(b.shape[0], -1).T
    return svcca(ma, mb, variance_fraction).mean


def layer_heatmap(
    net_a: NetworkSpec,
    params_a: np.ndarray,
    net_b: NetworkSpec,
    params_b: np.ndarray,
    probe: np.ndarray,
    layers_a: list[int] | None = None,
    layers_b: list[int] | None = None,
    variance_fraction: float = 0.99,
    conv_mode: str = "dft",
) -> SimilarityHeatmap:
    layers_a = representation_layers(net_a) if layers_a is None else list(layers_a)
    layers_b = representation_layers(net_b) if layers_b is None else list(layers_b)
    acts_a = _layer_acts(net_a, params_a, probe, layers_a)
    acts_b = _layer_acts(net_b, params_b, probe, layers_b)
    mat = np.zeros((len(layers_a), len(layers_b)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        for i, la in enumerate(layers_a):
            for j, lb in enumerate(layers_b):
                mat[i, j] = _safe_similarity(acts_a[la], acts_b[lb], variance_fraction, conv_mode)
    return SimilarityHeatmap(
        mat,
        [layer_label(net_a, l) for l in layers_a],
        [layer_label(net_b, l) for l in layers_b],
        layers_a,
        layers_b,
    )


def _safe_similarity(a, b, variance_fraction, conv_mode) -> float:
    # a dead layer (all-constant output) carries no representation
    try:
        return layer_similarity(a, b, variance_fraction, conv_mode)
    except NoVarianceError:
        return 0.0


def difference_heatmap(h1: SimilarityHeatmap, h2: SimilarityHeatmap) -> SimilarityHeatmap:
    """Cellwise ``|h1 - h2|``."""
    if h1.matrix.shape != h2.matrix.shape:
        raise ValueError("heatmaps must share a shape")
    return SimilarityHeatmap(np.abs(h1.matrix - h2.matrix), h1.labels_a, h1.labels_b, h1.layers_a, h1.layers_b)

