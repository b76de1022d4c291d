"""Image-quality metrics and ROI evaluation.

PSNR / SSIM / RMSE are computed per view (or per axial slice for
volumes) and aggregated as mean +/- population standard deviation. ROI
statistics report mean, std and the error against a reference mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigurationError, DimensionError

HU_DATA_RANGE = 2000.0  # fixed window for PSNR on HU volumes


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"rmse: shapes {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    """10*log10(range^2 / MSE); +inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ConfigurationError("psnr: data_range must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float,
         window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM with a Gaussian window over the valid region."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < window_size:
        raise DimensionError(f"ssim: images must be 2-D and >= {window_size} per side")
    win = _gaussian_window(window_size, sigma)

    def filt(img):
        return fftconvolve(img, win, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class RoiSpec:
    """Circular ROI in one axial slice: center in (x, y) voxels, radius in voxels."""

    slice_index: int
    center_x: float
    center_y: float
    radius: float

    def mask(self, slice_shape) -> np.ndarray:
        ny, nx = slice_shape
        if not (self.radius > 0
                and self.center_x - self.radius >= -0.5
                and self.center_y - self.radius >= -0.5
                and self.center_x + self.radius <= nx - 0.5
                and self.center_y + self.radius <= ny - 0.5):
            raise ConfigurationError("roi: disk not fully inside the slice")
        yy, xx = np.mgrid[0:ny, 0:nx]
        return (xx - self.center_x) ** 2 + (yy - self.center_y) ** 2 <= self.radius**2


def roi_stats(vol_hu: np.ndarray, roi: RoiSpec, reference_mean: float) -> tuple:
    """(mean, population std, mean - reference_mean) over the ROI disk."""
    vol_hu = np.asarray(vol_hu, dtype=np.float64)
    if not (0 <= roi.slice_index < vol_hu.shape[0]):
        raise ConfigurationError("roi: slice index outside volume")
    sl = vol_hu[roi.slice_index]
    mask = roi.mask(sl.shape)
    vals = sl[mask]
    mean = float(vals.mean())
    std = float(vals.std())  # population convention (ddof=0)
    return mean, std, mean - reference_mean


def evaluate_report(pred: np.ndarray, ref: np.ndarray, data_range: float | None = None,
                    rois=(), roi_volume: np.ndarray | None = None,
                    roi_reference_means=None) -> dict:
    """Per-view PSNR/SSIM/RMSE with mean +/- std aggregates and an ROI table.

    ``pred`` and ``ref`` are [n, h, w] stacks (projection views or axial
    slices). ``data_range`` defaults to the reference maximum. ROI rows
    are computed on ``roi_volume`` (defaults to ``pred``).
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 3:
        raise DimensionError("evaluate_report: need aligned [n,h,w] stacks")
    if data_range is None:
        data_range = float(ref.max())
        if data_range <= 0:
            data_range = 1.0

    per_view = []
    for i in range(pred.shape[0]):
        per_view.append({
            "index": i,
            "psnr": psnr(pred[i], ref[i], data_range),
            "ssim": ssim(pred[i], ref[i], data_range),
            "rmse": rmse(pred[i], ref[i]),
        })

    def agg(key):
        vals = np.array([row[key] for row in per_view])
        finite = vals[np.isfinite(vals)]
        if finite.size == 0:
            return {"mean": float("inf"), "std": 0.0}
        return {"mean": float(finite.mean()), "std": float(finite.std())}

    report = {
        "data_range": data_range,
        "per_view": per_view,
        "aggregates": {k: agg(k) for k in ("psnr", "ssim", "rmse")},
        "roi": [],
    }
    vol = roi_volume if roi_volume is not None else pred
    refs = roi_reference_means or [0.0] * len(rois)
    for roi, ref_mean in zip(rois, refs):
        mean, std, err = roi_stats(vol, roi, ref_mean)
        report["roi"].append({
            "slice": roi.slice_index,
            "center_x": roi.center_x,
            "center_y": roi.center_y,
            "radius": roi.radius,
            "mean": mean,
            "std": std,
            "reference_mean": ref_mean,
            "error": err,
        })
    return report


def format_report_text(report: dict) -> str:
    """Aligned-text rendering of an evaluation report."""
    lines = []
    lines.append(f"{'view':>5} {'PSNR(dB)':>10} {'SSIM':>8} {'RMSE':>12}")
    for row in report["per_view"]:
        lines.append(
            f"{row['index']:>5d} {row['psnr']:>10.3f} {row['ssim']:>8.4f} {row['rmse']:>12.5f}"
        )
    a = report["aggregates"]
    lines.append(
        f"{'mean':>5} {a['psnr']['mean']:>10.3f} {a['ssim']['mean']:>8.4f} "
        f"{a['rmse']['mean']:>12.5f}"
    )
    lines.append(
        f"{'std':>5} {a['psnr']['std']:>10.3f} {a['ssim']['std']:>8.4f} "
        f"{a['rmse']['std']:>12.5f}"
    )
    if report["roi"]:
        lines.append("")
        lines.append(f"{'slice':>5} {'mean(HU)':>10} {'std':>8} {'error':>10}")
        for row in report["roi"]:
            lines.append(
                f"{row['slice']:>5d} {row['mean']:>10.3f} {row['std']:>8.3f} "
                f"{row['error']:>10.3f}"
            )
    return "\n".join(lines)
