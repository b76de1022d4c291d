import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkanct import autodiff as ad
from gkanct.autodiff import Tensor
from gkanct.errors import ConfigurationError, DimensionError
from gkanct.gkan import (
    KanEdgeParams,
    RbfGrid,
    gauss_rbf_map,
    kan_block,
    kan_layer,
    kan_phi,
    rbf_basis,
)


class TestRbfGrid:
    def test_centers_symmetric_and_increasing(self):
        g = RbfGrid(c=8, r=1.0)
        assert np.all(np.diff(g.centers) > 0)
        np.testing.assert_allclose(g.centers, -g.centers[::-1])
        assert g.spacing == pytest.approx(2.0 / 7.0)
        assert g.sigma == pytest.approx(g.spacing)

    def test_invalid_grids(self):
        with pytest.raises(ConfigurationError):
            RbfGrid(c=1)
        with pytest.raises(ConfigurationError):
            RbfGrid(r=0.0)
        with pytest.raises(ConfigurationError):
            RbfGrid(sigma=-1.0)


class TestRbfBasis:
    def test_unit_at_center(self):
        g = RbfGrid(c=5, r=2.0, sigma=1.0)
        for j, mu in enumerate(g.centers):
            assert rbf_basis(mu, g)[j] == pytest.approx(1.0, abs=1e-15)

    def test_even_around_center(self):
        g = RbfGrid(c=5, r=2.0, sigma=1.0)
        for t in (0.1, 0.7, 2.3):
            plus = rbf_basis(g.centers[2] + t, g)[2]
            minus = rbf_basis(g.centers[2] - t, g)[2]
            assert plus == pytest.approx(minus, rel=1e-14)

    def test_against_high_precision_oracle(self):
        from mpmath import mp, mpf, exp as mpexp

        mp.dps = 50
        g = RbfGrid(c=5, r=2.0, sigma=1.0)
        x = 0.3
        got = rbf_basis(x, g)
        for j, mu in enumerate(g.centers):
            ref = float(mpexp(-((mpf(x) - mpf(mu)) ** 2) / mpf(1.0)))
            assert got[j] == pytest.approx(ref, abs=1e-12)

    @given(st.floats(-3.0, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_values_in_unit_interval(self, x):
        g = RbfGrid()
        vals = rbf_basis(x, g)
        assert np.all(vals > 0.0) and np.all(vals <= 1.0)
        on_center = np.any(np.abs(x - g.centers) < 1e-15)
        assert (vals.max() == 1.0) == on_center


def _edge(rng, grid):
    return KanEdgeParams(
        w1=Tensor(rng.standard_normal(())),
        w2=Tensor(rng.standard_normal(())),
        wj=Tensor(rng.standard_normal(grid.c)),
    )


class TestKanPhi:
    def test_silu_only_when_rbf_disabled(self):
        g = RbfGrid()
        rng = np.random.default_rng(0)
        for x in (-2.0, 0.0, 0.5, 3.0):
            edge = _edge(rng, g)
            edge.w2 = Tensor(np.asarray(0.0))
            out = kan_phi(Tensor(np.asarray(x)), edge, g)
            expected = float(edge.w1.data) * (x / (1 + np.exp(-x)))
            assert float(out.data) == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_symmetric_grid_equal_weights(self):
        g = RbfGrid(c=6, r=1.0, sigma=0.5)
        w = 0.7
        edge = KanEdgeParams(
            w1=Tensor(np.asarray(0.0)),
            w2=Tensor(np.asarray(1.3)),
            wj=Tensor(np.full(6, w)),
        )
        out = float(kan_phi(Tensor(np.asarray(0.0)), edge, g).data)
        expected = 1.3 * w * np.sum(np.exp(-(g.centers**2) / g.sigma**2))
        assert out == pytest.approx(expected, rel=1e-12)

    def test_matches_formula_oracle(self):
        g = RbfGrid()
        rng = np.random.default_rng(9)
        for _ in range(10):
            edge = _edge(rng, g)
            x = rng.standard_normal()
            out = float(kan_phi(Tensor(np.asarray(x)), edge, g).data)
            silu = x / (1 + np.exp(-x))
            bf = float(edge.wj.data @ np.exp(-((x - g.centers) ** 2) / g.sigma**2))
            ref = float(edge.w1.data) * silu + float(edge.w2.data) * bf
            assert out == pytest.approx(ref, rel=1e-6)


class TestKanLayer:
    def test_single_edge_reduces_to_phi(self):
        g = RbfGrid()
        rng = np.random.default_rng(4)
        edge = _edge(rng, g)
        x = rng.standard_normal()
        phi = float(kan_phi(Tensor(np.asarray(x)), edge, g).data)
        layer = kan_layer(
            Tensor(np.array([x])),
            Tensor(edge.w1.data.reshape(1, 1)),
            Tensor(edge.w2.data.reshape(1, 1)),
            Tensor(edge.wj.data.reshape(1, 1, g.c)),
            g,
        )
        assert float(layer.data[0]) == pytest.approx(phi, rel=1e-12)

    def test_zero_weights_zero_output(self):
        g = RbfGrid()
        out = kan_layer(
            Tensor(np.random.default_rng(0).standard_normal(3)),
            Tensor(np.zeros((2, 3))),
            Tensor(np.zeros((2, 3))),
            Tensor(np.zeros((2, 3, g.c))),
            g,
        )
        np.testing.assert_array_equal(out.data, 0.0)

    def test_matches_double_loop_oracle(self):
        g = RbfGrid()
        rng = np.random.default_rng(13)
        x = rng.standard_normal(3)
        w1 = rng.standard_normal((2, 3))
        w2 = rng.standard_normal((2, 3))
        wj = rng.standard_normal((2, 3, g.c))
        out = kan_layer(Tensor(x), Tensor(w1), Tensor(w2), Tensor(wj), g).data
        ref = np.zeros(2)
        for k in range(2):
            for i in range(3):
                silu = x[i] / (1 + np.exp(-x[i]))
                bf = sum(
                    wj[k, i, j] * np.exp(-((x[i] - g.centers[j]) ** 2) / g.sigma**2)
                    for j in range(g.c)
                )
                ref[k] += w1[k, i] * silu + w2[k, i] * bf
        np.testing.assert_allclose(out, ref, rtol=1e-6)

    def test_silu_only_layer_cross_check(self):
        # RBF path disabled, w1 = 1 on all edges: row sums of SiLU responses
        g = RbfGrid()
        rng = np.random.default_rng(21)
        x = rng.standard_normal(5)
        out = kan_layer(
            Tensor(x),
            Tensor(np.ones((3, 5))),
            Tensor(np.zeros((3, 5))),
            Tensor(np.zeros((3, 5, g.c))),
            g,
        ).data
        expected = np.full(3, float(ad.silu(Tensor(x)).data.sum()))
        np.testing.assert_allclose(out, expected, rtol=1e-12)


class TestGaussRbfMap:
    def test_constant_input_constant_output(self):
        g = RbfGrid()
        rng = np.random.default_rng(2)
        F = Tensor(np.full((2, 4, 4), 0.37))
        W = Tensor(rng.standard_normal((3, 2 * g.c)))
        out = gauss_rbf_map(F, W, g).data
        for ch in out:
            np.testing.assert_allclose(ch, ch[0, 0], rtol=1e-12)

    def test_zero_weights(self):
        g = RbfGrid()
        out = gauss_rbf_map(
            Tensor(np.random.default_rng(0).random((2, 4, 4))),
            Tensor(np.zeros((3, 2 * g.c))),
            g,
        )
        np.testing.assert_array_equal(out.data, 0.0)

    def test_matches_per_pixel_oracle(self):
        g = RbfGrid(c=4, r=1.0)
        rng = np.random.default_rng(31)
        F = rng.standard_normal((2, 4, 4))
        W = rng.standard_normal((3, 2 * 4))
        out = gauss_rbf_map(Tensor(F), Tensor(W), g).data
        ref = np.zeros((3, 4, 4))
        for y in range(4):
            for x in range(4):
                expanded = np.concatenate([rbf_basis(F[i, y, x], g) for i in range(2)])
                ref[:, y, x] = W @ expanded
        np.testing.assert_allclose(out, ref, rtol=1e-6)

    def test_commutes_with_pixel_permutation(self):
        g = RbfGrid()
        rng = np.random.default_rng(8)
        F = rng.standard_normal((2, 4, 4))
        W = Tensor(rng.standard_normal((2, 2 * g.c)))
        perm = rng.permutation(16)
        out_then_perm = gauss_rbf_map(Tensor(F), W, g).data.reshape(2, 16)[:, perm]
        Fp = F.reshape(2, 16)[:, perm].reshape(2, 4, 4)
        perm_then_out = gauss_rbf_map(Tensor(Fp), W, g).data.reshape(2, 16)
        np.testing.assert_allclose(out_then_perm, perm_then_out, rtol=1e-12)

    def test_shape_mismatch(self):
        g = RbfGrid()
        with pytest.raises(DimensionError):
            gauss_rbf_map(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((3, 7))), g)


class TestKanBlock:
    def test_rbf_path_ablation(self):
        g = RbfGrid()
        rng = np.random.default_rng(3)
        F = Tensor(rng.standard_normal((2, 6, 6)))
        k = Tensor(rng.standard_normal((3, 2, 3, 3)))
        out = kan_block(F, k, Tensor(np.zeros((3, 2 * g.c))), g).data
        ref = ad.conv2d(ad.silu(F), k, stride=1, pad=1).data
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_conv_path_ablation(self):
        g = RbfGrid()
        rng = np.random.default_rng(4)
        F = Tensor(rng.standard_normal((2, 6, 6)))
        W = Tensor(rng.standard_normal((3, 2 * g.c)))
        out = kan_block(F, Tensor(np.zeros((3, 2, 3, 3))), W, g).data
        np.testing.assert_allclose(out, gauss_rbf_map(F, W, g).data, rtol=1e-12)

    def test_sum_of_paths(self):
        g = RbfGrid()
        rng = np.random.default_rng(5)
        F = Tensor(rng.standard_normal((2, 6, 6)))
        k = Tensor(rng.standard_normal((3, 2, 3, 3)))
        W = Tensor(rng.standard_normal((3, 2 * g.c)))
        out = kan_block(F, k, W, g).data
        ref = ad.conv2d(ad.silu(F), k, 1, 1).data + gauss_rbf_map(F, W, g).data
        np.testing.assert_allclose(out, ref, rtol=1e-6)


class TestGkanGradients:
    def test_gauss_rbf_map_gradients(self):
        g = RbfGrid()
        rng = np.random.default_rng(6)
        F = Tensor(rng.standard_normal((2, 4, 4)))
        W = Tensor(rng.standard_normal((3, 2 * g.c)))
        assert ad.grad_check(lambda F, W: gauss_rbf_map(F, W, g), [F, W]) < 1e-5

    def test_kan_block_gradients(self):
        g = RbfGrid()
        rng = np.random.default_rng(7)
        F = Tensor(rng.standard_normal((2, 4, 4)))
        k = Tensor(rng.standard_normal((2, 2, 3, 3)))
        W = Tensor(rng.standard_normal((2, 2 * g.c)))
        err = ad.grad_check(lambda F, k, W: kan_block(F, k, W, g), [F, k, W])
        assert err < 1e-4

    def test_kan_layer_gradients(self):
        g = RbfGrid()
        rng = np.random.default_rng(8)
        args = [
            Tensor(rng.standard_normal(3)),
            Tensor(rng.standard_normal((2, 3))),
            Tensor(rng.standard_normal((2, 3))),
            Tensor(rng.standard_normal((2, 3, g.c))),
        ]
        err = ad.grad_check(lambda x, w1, w2, wj: kan_layer(x, w1, w2, wj, g), args)
        assert err < 1e-5
