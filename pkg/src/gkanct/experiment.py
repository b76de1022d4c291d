"""End-to-end desk-scale experiment.

Generates a set of head phantoms, simulates scatter-contaminated
projections, trains the Gaussian-KAN U-Net, fits the classical
kernel-superposition baseline, corrects the held-out phantom, and
reconstructs reference / uncorrected / corrected volumes with an ROI and
image-quality comparison. Everything is deterministic per config seed.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import binary_erosion

from . import physics, recon, train as training
from .cli import simulate_phantom
from .errors import ConfigurationError
from .geometry import ProjectionStack, ReconGrid
from .io import DEFAULT_CONFIG, geometry_from_config, load_run_config
from .metrics import HU_DATA_RANGE, RoiSpec, psnr, rmse, roi_stats
from .net import UNetConfig, build


def pick_soft_tissue_roi(phantom: physics.Phantom, radius_voxels: float) -> RoiSpec:
    """Largest-margin soft-tissue disk in the central axial slice."""
    nz = phantom.labels.shape[0]
    slice_index = nz // 2
    soft = phantom.labels[slice_index] == physics.LABEL_SOFT
    r = int(np.ceil(radius_voxels))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    disk = (xx**2 + yy**2) <= radius_voxels**2
    fits = binary_erosion(soft, structure=disk)
    if not fits.any():
        raise ConfigurationError("no soft-tissue region large enough for the ROI")
    ny, nx = soft.shape
    ys, xs = np.nonzero(fits)
    d2 = (ys - ny / 2.0) ** 2 + (xs - nx / 2.0) ** 2
    i = int(np.argmin(d2))
    return RoiSpec(slice_index=slice_index, center_x=float(xs[i]),
                   center_y=float(ys[i]), radius=float(radius_voxels))


def _reconstruct_hu(stack: ProjectionStack, cfg: dict) -> np.ndarray:
    rc = cfg["recon"]
    grid = ReconGrid(dims=tuple(rc["dims"]), voxel_size=rc["voxel_mm"])
    g = recon.log_transform(stack, stack.geometry.flux)
    vol = recon.fdk_reconstruct(g, grid)
    return recon.mu_to_hu(vol, rc["mu_water"]).data


def run_experiment(cfg: dict | None = None, log_every: int = 0) -> dict:
    """Full pipeline; returns a result record with all metrics.

    Keys: ``loss_history``, ``scatter_rmse_model`` / ``scatter_rmse_sks``
    (per validation view), ``roi`` (reference/uncorrected/corrected mean,
    std, error), ``volume_psnr_uncorrected`` / ``volume_psnr_corrected``,
    and the fitted baseline parameters.
    """
    if cfg is None:
        cfg = load_run_config(None)
    seed = int(cfg["seed"])
    geometry = geometry_from_config(cfg)
    ph_cfg = cfg["phantom"]
    n_train = int(ph_cfg["count_train"])
    n_val = int(ph_cfg["count_validation"])
    if n_val != 1:
        raise ConfigurationError("experiment: exactly one validation phantom expected")

    table = physics.load_material_table(ph_cfg["material_table"])
    phantoms = [
        physics.make_head_phantom(seed + i, dims=tuple(ph_cfg["dims"]),
                                  voxel_mm=ph_cfg["voxel_mm"], material_table=table)
        for i in range(n_train + n_val)
    ]

    # one shared scatter amplitude, calibrated on the first training phantom
    cfg = {**cfg, "scatter": dict(cfg["scatter"])}
    if cfg["scatter"]["amplitude"] is None:
        I_p0 = physics.forward_project(phantoms[0], geometry)
        cfg["scatter"]["amplitude"] = physics.calibrate_scatter_amplitude(
            I_p0, geometry.flux,
            physics.ScatterModelParams(
                sigma_mm=cfg["scatter"]["sigma_mm"],
                amplitude=0.0,
                exponent=cfg["scatter"]["exponent"],
                tail_sigma_mm=cfg["scatter"]["tail_sigma_mm"],
                tail_weight=cfg["scatter"]["tail_weight"],
            ),
            target_peak_spr=cfg["scatter"]["target_peak_spr"],
        )

    datasets = [simulate_phantom(ph, cfg, noise_seed=seed + 1000 + i)
                for i, ph in enumerate(phantoms)]

    net_cfg = UNetConfig.from_dict(cfg["network"])
    pairs = []
    for pid in range(n_train):
        _, I_s, I_m = datasets[pid]
        pairs.extend(training.make_pairs(I_m, I_s, geometry.flux,
                                         net_cfg.input_size, phantom_id=pid))
    tc_dict = dict(cfg["train"])
    tc_dict["seed"] = seed
    tcfg = training.TrainConfig(**tc_dict)
    model = build(net_cfg, seed=seed)
    ckpt = training.train(model, pairs, tcfg, log_every=log_every)

    # classical baseline fitted on the same training projections
    train_m = ProjectionStack.__new__(ProjectionStack)
    train_m.data = np.concatenate([datasets[i][2].data for i in range(n_train)], axis=0)
    train_m.geometry = geometry
    train_s = ProjectionStack.__new__(ProjectionStack)
    train_s.data = np.concatenate([datasets[i][1].data for i in range(n_train)], axis=0)
    train_s.geometry = geometry
    sks_sigma, sks_a, sks_k = training.fit_sks_baseline(
        train_m, train_s, geometry.flux, view_stride=4
    )

    # held-out phantom
    val_phantom = phantoms[n_train]
    I_p, I_s, I_m = datasets[n_train]
    I_p_hat, I_s_hat = training.correct(I_m, geometry.flux, ckpt.model,
                                        denoise_window=cfg["recon"]["denoise_window"])
    I_s_sks = training.sks_baseline(I_m, geometry.flux, sks_sigma, sks_a, sks_k)

    n_views = geometry.n_views
    rmse_model = [rmse(I_s_hat.data[i], I_s.data[i]) for i in range(n_views)]
    rmse_sks = [rmse(I_s_sks.data[i], I_s.data[i]) for i in range(n_views)]

    hu_ref = _reconstruct_hu(I_p, cfg)
    hu_unc = _reconstruct_hu(I_m, cfg)
    hu_cor = _reconstruct_hu(I_p_hat, cfg)

    roi = pick_soft_tissue_roi(val_phantom, cfg["eval"]["roi_radius_voxels"])
    ref_mean, ref_std, _ = roi_stats(hu_ref, roi, 0.0)
    unc_mean, unc_std, unc_err = roi_stats(hu_unc, roi, ref_mean)
    cor_mean, cor_std, cor_err = roi_stats(hu_cor, roi, ref_mean)

    hu_range = float(cfg["eval"].get("hu_data_range", HU_DATA_RANGE))
    return {
        "config": cfg,
        "loss_history": ckpt.loss_history,
        "checkpoint": ckpt,
        "sks_params": {"sigma_mm": sks_sigma, "amplitude": sks_a, "exponent": sks_k},
        "scatter_rmse_model": rmse_model,
        "scatter_rmse_sks": rmse_sks,
        "roi": {
            "spec": roi,
            "reference": {"mean": ref_mean, "std": ref_std},
            "uncorrected": {"mean": unc_mean, "std": unc_std, "error": unc_err},
            "corrected": {"mean": cor_mean, "std": cor_std, "error": cor_err},
        },
        "volume_psnr_uncorrected": psnr(hu_unc, hu_ref, hu_range),
        "volume_psnr_corrected": psnr(hu_cor, hu_ref, hu_range),
        "volumes_hu": {"reference": hu_ref, "uncorrected": hu_unc, "corrected": hu_cor},
    }


def metrics_fingerprint(result: dict) -> dict:
    """Scalar summary used for bitwise determinism comparisons."""
    return {
        "loss_history": list(result["loss_history"]),
        "scatter_rmse_model": list(result["scatter_rmse_model"]),
        "scatter_rmse_sks": list(result["scatter_rmse_sks"]),
        "roi_uncorrected_error": result["roi"]["uncorrected"]["error"],
        "roi_corrected_error": result["roi"]["corrected"]["error"],
        "volume_psnr_uncorrected": result["volume_psnr_uncorrected"],
        "volume_psnr_corrected": result["volume_psnr_corrected"],
    }
