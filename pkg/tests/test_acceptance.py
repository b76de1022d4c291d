"""End-to-end acceptance suite.

Eight numbered criteria covering gradient correctness, oracle
equivalence, Compton cross-section validation, FDK sanity, physics
consistency of the synthesized data, the scaled training experiment
with its classical baseline comparison, bitwise determinism of that
experiment, and checkpoint round-tripping. Each test prints one
pass/fail line, echoed in the terminal summary.
"""

import time

import numpy as np
import pytest
from scipy.integrate import quad

from gkanct import autodiff as ad
from gkanct import physics, recon
from gkanct.autodiff import Tensor
from gkanct.experiment import metrics_fingerprint, run_experiment
from gkanct.geometry import ConeBeamGeometry, ReconGrid
from gkanct.gkan import RbfGrid, gauss_rbf_map, kan_block, kan_layer, rbf_basis
from gkanct.io import load_run_config, geometry_from_config
from gkanct.metrics import rmse
from gkanct.net import GKanUNetModel, UNetConfig, build, forward
from gkanct.train import Checkpoint, TrainConfig, loss


@pytest.fixture(scope="session")
def experiment_runs():
    """The scaled experiment executed twice with identical seeds."""
    first = run_experiment(None)
    second = run_experiment(None)
    return first, second


# -- criterion 1: gradient correctness ---------------------------------------


def test_criterion_1_gradient_correctness(criterion_report):
    t0 = time.time()
    grid = RbfGrid()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        checks = [
            (lambda x, k: ad.conv2d(x, k, 1, 1),
             [Tensor(rng.standard_normal((2, 5, 5))),
              Tensor(rng.standard_normal((2, 2, 3, 3)))]),
            (ad.silu, [Tensor(rng.standard_normal(16))]),
            (ad.downsample_avg2x, [Tensor(rng.standard_normal((2, 4, 4)))]),
            (ad.upsample_bilinear2x, [Tensor(rng.standard_normal((2, 4, 4)))]),
            (lambda x, w1, w2, wj: kan_layer(x, w1, w2, wj, grid),
             [Tensor(rng.standard_normal(3)),
              Tensor(rng.standard_normal((2, 3))),
              Tensor(rng.standard_normal((2, 3))),
              Tensor(rng.standard_normal((2, 3, grid.c)))]),
            (lambda F, W: gauss_rbf_map(F, W, grid),
             [Tensor(rng.standard_normal((2, 4, 4))),
              Tensor(rng.standard_normal((3, 2 * grid.c)))]),
            (lambda F, k, W: kan_block(F, k, W, grid),
             [Tensor(rng.standard_normal((2, 4, 4))),
              Tensor(rng.standard_normal((2, 2, 3, 3))),
              Tensor(rng.standard_normal((2, 2 * grid.c)))]),
        ]
        for fn, args in checks:
            worst = max(worst, ad.grad_check(fn, args, eps=1e-5, seed=seed))

        cfg = UNetConfig(depth=2, channels=(3, 4), input_size=8)
        model = build(cfg, seed=seed).astype(np.float64)
        names = list(model.params)
        xin = rng.random((1, 8, 8))
        worst = max(worst, ad.grad_check(
            lambda *ps: forward(GKanUNetModel(cfg, dict(zip(names, ps))), Tensor(xin)),
            [model.params[n] for n in names], eps=1e-5, seed=seed,
        ))
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 120.0
    assert criterion_report(1, "gradient correctness", ok), (worst, elapsed)


# -- criterion 2: oracle equivalence ------------------------------------------


def _conv_oracle(x, k, stride, pad):
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for co in range(c_out):
        for ci in range(c_in):
            for oy in range(ho):
                for ox in range(wo):
                    for iy in range(kh):
                        for ix in range(kw):
                            out[co, oy, ox] += (
                                xp[ci, oy * stride + iy, ox * stride + ix]
                                * k[co, ci, iy, ix]
                            )
    return out


def test_criterion_2_oracle_equivalence(criterion_report):
    t0 = time.time()
    grid = RbfGrid(c=4, r=1.0)
    ok = True
    for case in range(50):
        rng = np.random.default_rng(1000 + case)

        c_in, c_out = rng.integers(1, 4, size=2)
        h, w = rng.integers(3, 7, size=2)
        x = rng.standard_normal((c_in, h, w))
        k = rng.standard_normal((c_out, c_in, 3, 3))
        got = ad.conv2d(Tensor(x), Tensor(k), 1, 1).data
        ok &= np.allclose(got, _conv_oracle(x, k, 1, 1), rtol=1e-6, atol=1e-9)

        d_in, d_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        xv = rng.standard_normal(d_in)
        w1 = rng.standard_normal((d_out, d_in))
        w2 = rng.standard_normal((d_out, d_in))
        wj = rng.standard_normal((d_out, d_in, grid.c))
        got = kan_layer(Tensor(xv), Tensor(w1), Tensor(w2), Tensor(wj), grid).data
        ref = np.zeros(d_out)
        for kk in range(d_out):
            for i in range(d_in):
                silu = xv[i] / (1 + np.exp(-xv[i]))
                bf = sum(wj[kk, i, j] * np.exp(-((xv[i] - grid.centers[j]) ** 2)
                                               / grid.sigma**2) for j in range(grid.c))
                ref[kk] += w1[kk, i] * silu + w2[kk, i] * bf
        ok &= np.allclose(got, ref, rtol=1e-6, atol=1e-9)

        F = rng.standard_normal((c_in, 3, 3))
        W = rng.standard_normal((c_out, c_in * grid.c))
        got = gauss_rbf_map(Tensor(F), Tensor(W), grid).data
        ref = np.zeros((c_out, 3, 3))
        for y in range(3):
            for xc in range(3):
                expanded = np.concatenate(
                    [rbf_basis(F[i, y, xc], grid) for i in range(c_in)])
                ref[:, y, xc] = W @ expanded
        ok &= np.allclose(got, ref, rtol=1e-6, atol=1e-9)

        pred = rng.standard_normal((1, h, w))
        tgt = rng.standard_normal((1, h, w))
        mse_ref = sum((pred[0, i, j] - tgt[0, i, j]) ** 2
                      for i in range(h) for j in range(w)) / (h * w)
        l1_ref = sum(abs(pred[0, i, j] - tgt[0, i, j])
                     for i in range(h) for j in range(w)) / (h * w)
        ok &= np.isclose(float(loss(Tensor(pred), tgt, "mse").data), mse_ref, rtol=1e-6)
        ok &= np.isclose(float(loss(Tensor(pred), tgt, "l1").data), l1_ref, rtol=1e-6)
        ok &= np.isclose(rmse(pred, tgt), np.sqrt(mse_ref), rtol=1e-6)
    elapsed = time.time() - t0
    ok = ok and elapsed < 120.0
    assert criterion_report(2, "oracle equivalence", ok), elapsed


# -- criterion 3: Compton cross-section ---------------------------------------


def test_criterion_3_compton_cross_section(criterion_report):
    t0 = time.time()

    def quadrature(eps):
        def integrand(theta):
            ratio = 1.0 / (1.0 + eps * (1.0 - np.cos(theta)))
            dcs = 0.5 * physics.R_E**2 * ratio**2 * (1.0 / ratio + ratio
                                                     - np.sin(theta) ** 2)
            return dcs * 2.0 * np.pi * np.sin(theta)

        return quad(integrand, 0.0, np.pi, limit=200)[0]

    ok = True
    for eps in (0.05, 0.2348, 0.5, 1.0):
        ok &= abs(physics.klein_nishina_sigma(eps) / quadrature(eps) - 1.0) < 1e-3
    thomson = 8.0 * np.pi * physics.R_E**2 / 3.0
    ok &= abs(physics.klein_nishina_sigma(1e-4) / thomson - 1.0) < 1e-3
    elapsed = time.time() - t0
    ok = ok and elapsed < 10.0
    assert criterion_report(3, "Compton cross-section", ok), elapsed


# -- criterion 4: FDK sanity ---------------------------------------------------


def test_criterion_4_fdk_sanity(criterion_report):
    t0 = time.time()
    cfg = load_run_config(None)
    geometry = geometry_from_config(cfg)

    n, vs, mu_water = 64, 1.4, 0.0205
    idx = (np.arange(n) - (n - 1) / 2.0) * vs
    zz, yy, xx = np.meshgrid(idx, idx, idx, indexing="ij")
    inside = xx**2 + yy**2 <= 30.0**2
    phantom = physics.Phantom(
        labels=np.where(inside, physics.LABEL_SOFT, 0).astype(np.uint8),
        density=np.where(inside, 1.0, 0.0),
        mu=np.where(inside, mu_water, 0.0),
        voxel_size=vs,
    )
    I_p = physics.forward_project(phantom, geometry)
    g = recon.log_transform(I_p, geometry.flux)
    grid = ReconGrid(dims=(n, n, n), voxel_size=vs)
    vol = recon.fdk_reconstruct(g, grid)

    c = n // 2
    roi = vol.data[c - 2 : c + 2, c - 4 : c + 4, c - 4 : c + 4]
    hu = recon.mu_to_hu(vol, mu_water).data[c - 2 : c + 2, c - 4 : c + 4, c - 4 : c + 4]
    ok = abs(roi.mean() / mu_water - 1.0) < 0.03
    ok &= abs(hu.mean()) <= 30.0

    small = ReconGrid(dims=(16, 16, 8), voxel_size=vs)
    v1 = recon.fdk_reconstruct(g, small).data
    v2 = recon.fdk_reconstruct(g.copy_with(3.0 * g.data), small).data
    scale = np.abs(v1).max()
    ok &= np.abs(v2 - 3.0 * v1).max() < 1e-5 * scale

    elapsed = time.time() - t0
    ok = ok and elapsed < 300.0
    assert criterion_report(4, "FDK sanity", ok), elapsed


# -- criterion 5: physics consistency ------------------------------------------


def test_criterion_5_physics_consistency(criterion_report):
    from gkanct.cli import simulate_phantom

    cfg = load_run_config(None)
    geometry = geometry_from_config(cfg)
    seed = int(cfg["seed"])
    ph_cfg = cfg["phantom"]
    n_total = int(ph_cfg["count_train"]) + int(ph_cfg["count_validation"])
    phantoms = [
        physics.make_head_phantom(seed + i, dims=tuple(ph_cfg["dims"]),
                                  voxel_mm=ph_cfg["voxel_mm"])
        for i in range(n_total)
    ]

    # shared amplitude calibrated on the first phantom, as in the experiment
    params0 = physics.ScatterModelParams(
        sigma_mm=cfg["scatter"]["sigma_mm"], amplitude=0.0,
        exponent=cfg["scatter"]["exponent"],
        tail_sigma_mm=cfg["scatter"]["tail_sigma_mm"],
        tail_weight=cfg["scatter"]["tail_weight"],
    )
    I_p0 = physics.forward_project(phantoms[0], geometry)
    amp = physics.calibrate_scatter_amplitude(
        I_p0, geometry.flux, params0, target_peak_spr=cfg["scatter"]["target_peak_spr"])
    cfg = {**cfg, "scatter": {**cfg["scatter"], "amplitude": amp}}

    ok = True
    peaks = []
    for ph in phantoms:
        I_p, I_s, I_m = simulate_phantom(ph, cfg)
        # additive decomposition holds bitwise (noise disabled by default)
        ok &= np.array_equal(I_m.data, I_p.data + I_s.data)
        peaks.append(physics.spr(I_s, I_p)[0])

        # scatter is low-frequency: spectral energy above 1/4 Nyquist < 5 %
        spec = np.abs(np.fft.fft2(I_s.data)) ** 2
        fy = np.fft.fftfreq(I_s.data.shape[1])
        fx = np.fft.fftfreq(I_s.data.shape[2])
        rad = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
        high = spec[:, rad > 0.125].sum()  # 1/4 of the 0.5 cycles/px Nyquist
        ok &= high < 0.05 * spec.sum()

    ok &= 0.8 <= max(peaks) <= 1.5
    assert criterion_report(5, "physics consistency", ok), peaks


# -- criterion 6: scaled end-to-end experiment ---------------------------------


def test_criterion_6_scaled_experiment(criterion_report, experiment_runs):
    res, _ = experiment_runs
    unc = res["roi"]["uncorrected"]["error"]
    cor = res["roi"]["corrected"]["error"]
    rmse_model = np.array(res["scatter_rmse_model"])
    rmse_sks = np.array(res["scatter_rmse_sks"])
    psnr_gain = res["volume_psnr_corrected"] - res["volume_psnr_uncorrected"]

    a = abs(unc) >= 100.0
    b = abs(cor) <= 0.15 * abs(unc)
    c = bool(np.all(rmse_model < rmse_sks))
    d = psnr_gain >= 10.0
    ok = a and b and c and d
    criterion_report(6, "scaled end-to-end experiment", ok)
    assert ok, {
        "roi_error_uncorrected_hu": unc,
        "roi_error_corrected_hu": cor,
        "views_model_beats_sks": int((rmse_model < rmse_sks).sum()),
        "n_views": len(rmse_model),
        "volume_psnr_gain_db": psnr_gain,
    }


# -- criterion 7: determinism ---------------------------------------------------


def test_criterion_7_determinism(criterion_report, experiment_runs):
    first, second = experiment_runs
    fp1 = metrics_fingerprint(first)
    fp2 = metrics_fingerprint(second)
    ok = fp1 == fp2  # exact float equality, including the full loss curve
    assert criterion_report(7, "determinism", ok)


# -- criterion 8: checkpoint round-trip -----------------------------------------


def test_criterion_8_checkpoint_round_trip(criterion_report, tmp_path):
    t0 = time.time()
    cfg = load_run_config(None)
    net_cfg = UNetConfig.from_dict(cfg["network"])
    model = build(net_cfg, seed=99)
    Checkpoint(model=model, train_config=TrainConfig(), iteration=0).save(tmp_path / "ck")
    loaded = Checkpoint.load(tmp_path / "ck")

    rng = np.random.default_rng(99)
    S = net_cfg.input_size
    ok = True
    for _ in range(100):
        x = rng.random((1, S, S), dtype=np.float32)
        a = forward(model, Tensor(x)).data
        b = forward(loaded.model, Tensor(x)).data
        ok &= np.array_equal(a, b)
    elapsed = time.time() - t0
    ok = ok and elapsed < 30.0
    assert criterion_report(8, "checkpoint round-trip", ok), elapsed
