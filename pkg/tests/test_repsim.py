import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_cca
from losslab.nn import Dense, NetworkSpec, SoftmaxOutput, forward, flatten, init_params
from losslab.harness.networks import shallow_cnn
from losslab.repsim import (
    NoVarianceError,
    RankDeficiencyWarning,
    cca,
    collect_activations,
    dft_preprocess,
    dft_svcca,
    difference_heatmap,
    layer_heatmap,
    svcca,
    svd_reduce,
)


def spectrum_matrix(singular_values, m, rng):
    """Centered ``n x m`` matrix with exactly the given singular values."""
    n = len(singular_values)
    u = np.linalg.qr(rng.normal(size=(n, n)))[0]
    raw = rng.normal(size=(m, n))
    raw -= raw.mean(axis=0)
    v = np.linalg.qr(raw)[0]
    return u @ np.diag(singular_values) @ v.T


class TestSVD:
    def test_derived_spectrum_keeps_one(self, rng):
        mat = spectrum_matrix([10.0, 1.0, 0.01], 50, rng)
        assert svd_reduce(mat).shape == (1, 50)
        # 100 / 101.0001 = 0.990098... clears 0.99
        assert 100 / 101.0001 > 0.99

    def test_equal_spectrum(self, rng):
        for n in (5, 10, 100, 150):
            mat = spectrum_matrix(np.ones(n), 3 * n, rng)
            assert svd_reduce(mat).shape[0] == math.ceil(0.99 * n)

    def test_reconstruction_error(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(2, 20))
            mat = rng.normal(size=(n, 60)) * rng.uniform(0.01, 5, size=(n, 1))
            mat -= mat.mean(axis=1, keepdims=True)
            u, _, _ = np.linalg.svd(mat, full_matrices=False)
            k = svd_reduce(mat).shape[0]
            recon = u[:, :k] @ (u[:, :k].T @ mat)
            err2 = np.linalg.norm(mat - recon) ** 2
            assert err2 <= 0.01 * np.linalg.norm(mat) ** 2
            if k > 1:  # minimal prefix
                recon = u[:, : k - 1] @ (u[:, : k - 1].T @ mat)
                assert np.linalg.norm(mat - recon) ** 2 > 0.01 * np.linalg.norm(mat) ** 2 - 1e-12

    def test_zero_matrix(self):
        with pytest.raises(NoVarianceError):
            svd_reduce(np.ones((3, 10)))


class TestCCA:
    def test_oracle_agreement(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            na, nb = rng.integers(2, 21, size=2)
            m = 50 * max(na, nb) + int(rng.integers(0, 100))
            a = rng.normal(size=(na, m))
            b = rng.normal(size=(nb, m)) + rng.uniform(0, 2) * rng.normal(size=(nb, na)) @ a
            np.testing.assert_allclose(cca(a, b).correlations, brute_force_cca(a, b), rtol=0, atol=1e-6)

    def test_independent_gaussians_are_small(self, rng):
        a, b = rng.normal(size=(2, 10, 2000))
        rho = cca(a, b).correlations
        assert rho.max() < 0.2
        np.testing.assert_allclose(rho, brute_force_cca(a, b), atol=1e-6)

    def test_self_similarity(self, rng):
        a = rng.normal(size=(8, 500))
        res = cca(a, a)
        assert abs(res.mean - 1.0) <= 1e-9

    def test_invertible_map_and_permutation(self, rng):
        a = rng.normal(size=(6, 400))
        b = rng.normal(size=(5, 400)) + rng.normal(size=(5, 6)) @ a
        base = cca(a, b).correlations
        q = rng.normal(size=(6, 6)) + 3 * np.eye(6)
        np.testing.assert_allclose(cca(q @ a, b).correlations, base, atol=1e-9)
        np.testing.assert_allclose(cca(a, b[rng.permutation(5)]).correlations, base, atol=1e-9)
        np.testing.assert_allclose(cca(b, a).correlations, base, atol=1e-9)
        scale = rng.uniform(0.1, 10, size=(6, 1))
        np.testing.assert_allclose(cca(scale * a + 4.0, b).correlations, base, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))
    def test_sorted_and_bounded(self, na, nb, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(na, 50 * max(na, nb)))
        b = rng.normal(size=(nb, a.shape[1])) + rng.normal(size=(nb, na)) @ a
        rho = cca(a, b).correlations
        assert rho.size == min(na, nb)
        assert np.all(np.diff(rho) <= 0) and rho.min() >= 0 and rho.max() <= 1

    def test_rank_deficient_warns(self, rng):
        a = rng.normal(size=(3, 200))
        a = np.vstack([a, a[0] + a[1]])
        with pytest.warns(RankDeficiencyWarning):
            res = cca(a, rng.normal(size=(2, 200)))
        assert np.isfinite(res.correlations).all()

    def test_column_mismatch(self, rng):
        with pytest.raises(ValueError):
            cca(rng.normal(size=(2, 10)), rng.normal(size=(2, 11)))

    def test_complex_input(self, rng):
        a = rng.normal(size=(3, 300)) + 1j * rng.normal(size=(3, 300))
        assert abs(cca(a, (2 - 1j) * a).mean - 1) <= 1e-9


class TestDFT:
    def test_parseval(self, rng):
        x = rng.normal(size=(3, 5, 4, 7))
        f = dft_preprocess(x)
        assert abs((np.abs(f) ** 2).sum() - (x**2).sum()) <= 1e-9 * (x**2).sum()

    def test_constant_maps_live_in_dc(self, rng):
        x = np.broadcast_to(rng.normal(size=(3, 1, 1, 6)), (3, 4, 4, 6))
        f = dft_preprocess(x)
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        assert np.abs(f[:, mask, :]).max() < 1e-12

    def test_one_by_one_matches_plain(self, rng):
        a = rng.normal(size=(4, 1, 1, 300))
        b = rng.normal(size=(3, 1, 1, 300)) + 0.5 * a[:3]
        plain = svcca(a[:, 0, 0, :], b[:, 0, 0, :]).mean
        assert dft_svcca(a, b) == pytest.approx(plain, abs=1e-12)

    def test_rejects_non_4d(self, rng):
        with pytest.raises(ValueError):
            dft_preprocess(rng.normal(size=(3, 4, 5)))


class TestActivations:
    def test_identity_layer(self, rng):
        net = NetworkSpec((4,), (Dense(4, 4), SoftmaxOutput()))
        w = flatten({(0, "weight"): np.eye(4), (0, "bias"): np.zeros(4)}, net.layout())
        x = rng.normal(size=(9, 4))
        np.testing.assert_array_equal(collect_activations(net, w, x, 0), x.T)

    def test_matches_forward_capture(self, rng):
        net = shallow_cnn()
        w = init_params(net, 0)
        x = rng.normal(size=(5, 3, 16, 16))
        _, acts = forward(net, w, x, capture=[2])
        got = collect_activations(net, w, x, 2)
        assert got.tobytes() == acts[2].reshape(5, -1).T.tobytes()

    def test_bad_layer(self, rng):
        net = shallow_cnn()
        with pytest.raises(IndexError):
            collect_activations(net, init_params(net, 0), rng.normal(size=(2, 3, 16, 16)), 40)


class TestHeatmap:
    def test_same_checkpoint_diagonal_is_one(self, rng):
        net = shallow_cnn()
        w = init_params(net, 0)
        probe = rng.normal(size=(200, 3, 16, 16))
        h = layer_heatmap(net, w, net, w, probe)
        np.testing.assert_allclose(h.diagonal(), 1.0, atol=1e-6)
        assert h.matrix.min() >= 0 and h.matrix.max() <= 1 + 1e-12
        assert h.labels_a[0].startswith("2:")

    def test_difference(self, rng):
        net = shallow_cnn()
        probe = rng.normal(size=(100, 3, 16, 16))
        w0, w1 = init_params(net, 0), init_params(net, 1)
        h1 = layer_heatmap(net, w0, net, w0, probe)
        h2 = layer_heatmap(net, w0, net, w1, probe)
        d = difference_heatmap(h1, h2)
        np.testing.assert_allclose(d.matrix, np.abs(h1.matrix - h2.matrix))
        assert d.matrix.min() >= 0 and d.matrix.max() <= 1
