"""Command-line surface tying the pipeline together.

Subcommands: phantom, simulate, fit-sks, train, correct, reconstruct,
evaluate. Every command is a pure function of (config, inputs, seed).
Exit codes: 0 success, 2 configuration error, 3 data error, 4
numeric/training error; failures emit a machine-readable JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as gio
from . import physics, recon, train as training
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    DomainError,
    GkanctError,
    NumericError,
    TrainingError,
)
from .geometry import ProjectionStack, ReconGrid
from .metrics import HU_DATA_RANGE, RoiSpec, evaluate_report, format_report_text
from .net import UNetConfig, build
from .physics import Phantom, ScatterModelParams


def _configure_threads(args) -> None:
    threads = os.environ.get("GKAN_THREADS") or getattr(args, "threads", None)
    if threads:
        import numba

        numba.set_num_threads(int(threads))


def _unet_config(cfg: dict) -> UNetConfig:
    return UNetConfig.from_dict(cfg["network"])


def cmd_phantom(args) -> int:
    cfg = gio.load_run_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    ph_cfg = cfg["phantom"]
    table = physics.load_material_table(ph_cfg["material_table"])
    phantom = physics.make_head_phantom(
        seed, dims=tuple(ph_cfg["dims"]), voxel_mm=ph_cfg["voxel_mm"],
        material_table=table,
    )
    extra = {"voxel_mm": phantom.voxel_size, "energy_keV": phantom.energy_keV, "seed": seed}
    gio.write_tensor(f"{args.out}_mu", phantom.mu, "volume", "mm^-1", extra=extra)
    gio.write_tensor(f"{args.out}_labels", phantom.labels.astype(np.float32),
                     "volume", "label", extra=extra)
    return 0


def _load_phantom(base) -> Phantom:
    mu, sidecar = gio.read_tensor(f"{base}_mu", expect_kind="volume")
    labels_path = Path(f"{base}_labels.json")
    if labels_path.exists():
        labels, _ = gio.read_tensor(f"{base}_labels", expect_kind="volume")
        labels = labels.astype(np.uint8)
    else:
        # derive labels from attenuation: air / soft tissue / bone
        labels = np.full(mu.shape, physics.LABEL_SOFT, dtype=np.uint8)
        labels[mu == 0] = physics.LABEL_AIR
        labels[mu > 0.04] = physics.LABEL_BONE
    density = np.where(labels == physics.LABEL_BONE, 1.9,
                       np.where(labels == physics.LABEL_SOFT, 1.0, 0.0012))
    return Phantom(labels=labels, density=density, mu=mu,
                   voxel_size=float(sidecar.get("voxel_mm", 1.0)),
                   energy_keV=float(sidecar.get("energy_keV", 60.0)))


def _scatter_params(cfg: dict, amplitude: float) -> ScatterModelParams:
    s = cfg["scatter"]
    return ScatterModelParams(
        sigma_mm=s["sigma_mm"], amplitude=amplitude, exponent=s["exponent"],
        tail_sigma_mm=s["tail_sigma_mm"], tail_weight=s["tail_weight"],
    )


def simulate_phantom(phantom: Phantom, cfg: dict, noise_seed: int | None = None):
    """Project one phantom and synthesize its scatter.

    Returns (I_p, I_s, I_m); I_m = I_p + I_s exactly unless Poisson noise
    is enabled in the config.
    """
    geometry = gio.geometry_from_config(cfg)
    I_p = physics.forward_project(phantom, geometry)
    amplitude = cfg["scatter"]["amplitude"]
    if amplitude is None:
        amplitude = physics.calibrate_scatter_amplitude(
            I_p, geometry.flux, _scatter_params(cfg, 0.0),
            target_peak_spr=cfg["scatter"]["target_peak_spr"],
        )
    I_s = physics.synthesize_scatter(I_p, geometry.flux, _scatter_params(cfg, amplitude))
    I_m = I_p.copy_with(I_p.data + I_s.data)
    if cfg["scatter"]["poisson_noise"]:
        I_m = physics.add_poisson_noise(I_m, cfg["seed"] if noise_seed is None else noise_seed)
    return I_p, I_s, I_m


def cmd_simulate(args) -> int:
    cfg = gio.load_run_config(args.config)
    phantom = _load_phantom(args.phantom)
    I_p, I_s, I_m = simulate_phantom(phantom, cfg, noise_seed=args.seed)
    out = Path(args.out_dir)
    geom = I_p.geometry
    gio.write_tensor(out / "ip", I_p.data, "projections", "photons", geometry=geom)
    gio.write_tensor(out / "is", I_s.data, "scatter", "photons", geometry=geom)
    gio.write_tensor(out / "im", I_m.data, "projections", "photons", geometry=geom)
    return 0


def _find_datasets(data_dir) -> list:
    """Directories holding im/is tensor pairs (the dir itself or children)."""
    data_dir = Path(data_dir)
    found = []
    candidates = [data_dir] + sorted(p for p in data_dir.iterdir() if p.is_dir())
    for d in candidates:
        if (d / "im.json").exists() and (d / "is.json").exists():
            found.append(d)
    if not found:
        raise DataError(f"no im/is tensor pairs found under {data_dir}")
    return found


def cmd_train(args) -> int:
    cfg = gio.load_run_config(args.config)
    net_cfg = _unet_config(cfg)
    pairs = []
    for pid, d in enumerate(_find_datasets(args.data_dir)):
        I_m = gio.read_projection_stack(d / "im")
        I_s = gio.read_projection_stack(d / "is")
        pairs.extend(training.make_pairs(
            I_m, I_s, I_m.geometry.flux, net_cfg.input_size, phantom_id=pid
        ))
    tc_dict = dict(cfg["train"])
    tc_dict["seed"] = cfg["seed"]
    tcfg = training.TrainConfig(**tc_dict)
    model = build(net_cfg, seed=cfg["seed"])
    ckpt = training.train(model, pairs, tcfg, log_every=args.log_every)
    ckpt.save(args.out_checkpoint)
    return 0


def cmd_fit_sks(args) -> int:
    cfg = gio.load_run_config(args.config)
    datasets = _find_datasets(args.data_dir)
    ims, iss = [], []
    geom = None
    for d in datasets:
        I_m = gio.read_projection_stack(d / "im")
        I_s = gio.read_projection_stack(d / "is")
        ims.append(I_m.data)
        iss.append(I_s.data)
        geom = I_m.geometry
    merged_m = ProjectionStack.__new__(ProjectionStack)
    merged_m.data = np.concatenate(ims, axis=0)
    merged_m.geometry = geom
    merged_s = ProjectionStack.__new__(ProjectionStack)
    merged_s.data = np.concatenate(iss, axis=0)
    merged_s.geometry = geom
    sigma, amplitude, exponent = training.fit_sks_baseline(
        merged_m, merged_s, geom.flux, view_stride=args.view_stride
    )
    with open(args.out, "w") as f:
        json.dump({"sigma_mm": sigma, "amplitude": amplitude, "exponent": exponent}, f)
    return 0


def cmd_correct(args) -> int:
    cfg = gio.load_run_config(args.config)
    if args.baseline == "sks" and not args.sks_params:
        raise ConfigurationError("--baseline=sks requires --sks-params")
    if args.baseline is None and not args.checkpoint:
        raise ConfigurationError("correct: need --checkpoint or --baseline")
    I_m = gio.read_projection_stack(args.projections)
    flux = I_m.geometry.flux
    if args.baseline == "sks":
        with open(args.sks_params) as f:
            p = json.load(f)
        I_s_hat = training.sks_baseline(I_m, flux, p["sigma_mm"], p["amplitude"], p["exponent"])
        residual = I_m.copy_with(I_m.data - I_s_hat.data)
        I_p_hat = recon.median_denoise(residual, cfg["recon"]["denoise_window"])
        I_p_hat = I_m.copy_with(np.maximum(I_p_hat.data, recon.LOG_FLOOR_RATIO * flux))
    else:
        ckpt = training.Checkpoint.load(args.checkpoint)
        I_p_hat, I_s_hat = training.correct(
            I_m, flux, ckpt.model, denoise_window=cfg["recon"]["denoise_window"]
        )
    gio.write_tensor(f"{args.out}_is", I_s_hat.data, "scatter", "photons",
                     geometry=I_m.geometry)
    gio.write_tensor(f"{args.out}_ip", I_p_hat.data, "projections", "photons",
                     geometry=I_m.geometry)
    return 0


def cmd_reconstruct(args) -> int:
    cfg = gio.load_run_config(args.config)
    stack = gio.read_projection_stack(args.projections)
    rc = cfg["recon"]
    grid = ReconGrid(dims=tuple(rc["dims"]), voxel_size=rc["voxel_mm"])
    g = recon.log_transform(stack, stack.geometry.flux)
    vol = recon.fdk_reconstruct(g, grid)
    gio.write_tensor(args.out_volume, vol.data, "volume", "mm^-1",
                     extra={"voxel_mm": vol.voxel_size})
    if args.hu:
        hu = recon.mu_to_hu(vol, rc["mu_water"])
        gio.write_tensor(f"{args.out_volume}_hu", hu.data, "volume", "HU",
                         extra={"voxel_mm": vol.voxel_size})
    return 0


def _write_pgm(path, img: np.ndarray) -> None:
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = ((img - lo) * scale).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode())
        f.write(pix.tobytes())


def cmd_evaluate(args) -> int:
    cfg = gio.load_run_config(args.config)
    pred, pred_side = gio.read_tensor(args.pred)
    ref, ref_side = gio.read_tensor(args.ref)
    if pred.shape != ref.shape:
        raise DataError(f"evaluate: shapes {pred.shape} vs {ref.shape}")
    rois, ref_means = [], []
    if args.rois:
        with open(args.rois) as f:
            for row in json.load(f):
                rois.append(RoiSpec(
                    slice_index=int(row["slice"]),
                    center_x=float(row["center_x"]),
                    center_y=float(row["center_y"]),
                    radius=float(row["radius"]),
                ))
                ref_means.append(float(row.get("reference_mean", 0.0)))
    data_range = None
    if pred_side.get("units") == "HU":
        data_range = cfg["eval"]["hu_data_range"]
    report = evaluate_report(pred, ref, data_range=data_range, rois=rois,
                             roi_reference_means=ref_means)
    with open(args.out_report, "w") as f:
        json.dump(report, f, indent=1)
    print(format_report_text(report))
    if args.preview:
        out = Path(args.preview)
        out.mkdir(parents=True, exist_ok=True)
        mid = pred.shape[0] // 2
        _write_pgm(out / "pred.pgm", pred[mid])
        _write_pgm(out / "ref.pgm", ref[mid])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkanct",
                                     description="Gaussian-KAN CBCT scatter correction pipeline")
    parser.add_argument("--config", default=None, help="run configuration JSON")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (env GKAN_THREADS overrides)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a head phantom")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output base path")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="project a phantom and synthesize scatter")
    p.add_argument("--phantom", required=True, help="phantom base path")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="noise seed override")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-sks", help="fit the classical baseline on a dataset")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="output parameter JSON")
    p.add_argument("--view-stride", type=int, default=4)
    p.set_defaults(func=cmd_fit_sks)

    p = sub.add_parser("train", help="train the scatter estimation network")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", help="scatter-correct a projection stack")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--projections", required=True)
    p.add_argument("--out", required=True, help="output base prefix")
    p.add_argument("--baseline", choices=["sks"], default=None)
    p.add_argument("--sks-params", default=None)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("reconstruct", help="FDK reconstruction")
    p.add_argument("--projections", required=True)
    p.add_argument("--out-volume", required=True)
    p.add_argument("--hu", action="store_true", help="also write an HU volume")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="quantitative comparison report")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--rois", default=None, help="ROI list JSON")
    p.add_argument("--out-report", required=True)
    p.add_argument("--preview", default=None, help="directory for PGM previews")
    p.set_defaults(func=cmd_evaluate)
    return parser


_EXIT_CODES = (
    ((ConfigurationError,), 2),
    ((DataError, DimensionError, DomainError), 3),
    ((NumericError, TrainingError), 4),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _configure_threads(args)
        return args.func(args)
    except GkanctError as exc:
        code = 4
        for classes, c in _EXIT_CODES:
            if isinstance(exc, classes):
                code = c
                break
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
