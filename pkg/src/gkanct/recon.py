"""Projection post-processing and FDK cone-beam reconstruction.

The reconstruction chain is: cosine weighting on a virtual detector at
the isocenter, per-row Ram-Lak filtering in the frequency domain (built
from the band-limited spatial kernel, so the filter is zero-phase), and
voxel-driven backprojection with bilinear detector interpolation.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter

from .errors import ConfigurationError
from .geometry import ConeBeamGeometry, ProjectionStack, ReconGrid, Volume

LOG_FLOOR_RATIO = 1e-3  # intensity floor relative to I_0 before the log


def log_transform(I: ProjectionStack, I_0: float) -> ProjectionStack:
    """Line integrals g = -ln(I / I_0), floored and truncated.

    Intensities below 1e-3 * I_0 are floored; ratios above 1 (possible
    under scatter and noise) are truncated to 1 so g stays non-negative.
    """
    if I_0 <= 0:
        raise ConfigurationError("log_transform: I_0 must be positive")
    ratio = np.clip(I.data / I_0, LOG_FLOOR_RATIO, 1.0)
    return I.copy_with(-np.log(ratio))


def median_denoise(I: ProjectionStack, window: int) -> ProjectionStack:
    """Per-view 2-D median filter with edge replication; window 1 is identity."""
    if window < 1 or window % 2 == 0:
        raise ConfigurationError("median_denoise: window must be odd and >= 1")
    if window == 1:
        return I.copy_with(I.data.copy())
    out = np.empty_like(I.data)
    for i in range(I.data.shape[0]):
        out[i] = median_filter(I.data[i], size=window, mode="nearest")
    return I.copy_with(out)


def ramp_kernel(n: int, spacing: float) -> np.ndarray:
    """Band-limited Ram-Lak spatial kernel of length n (n even).

    h[0] = 1/(4 d^2), h[m] = -1/(pi m d)^2 for odd m, 0 for even m,
    wrapped for the FFT.
    """
    h = np.zeros(n)
    h[0] = 1.0 / (4.0 * spacing**2)
    m = np.arange(1, n // 2 + 1)
    odd = m[m % 2 == 1]
    vals = -1.0 / (np.pi * odd * spacing) ** 2
    h[odd] = vals
    h[-odd] = vals
    return h


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def ramp_filter_rows(rows: np.ndarray, spacing: float) -> np.ndarray:
    """Apply the Ram-Lak filter along the last axis of ``rows``."""
    n = rows.shape[-1]
    nfft = _next_pow2(2 * n)
    H = np.fft.rfft(ramp_kernel(nfft, spacing))
    # the symmetric kernel has a real spectrum: zero-phase filtering
    spec = np.fft.rfft(rows, n=nfft, axis=-1) * H.real
    filt = np.fft.irfft(spec, n=nfft, axis=-1)[..., :n]
    return filt * spacing


def _check_coverage(geometry: ConeBeamGeometry) -> None:
    angles = geometry.angles
    if len(angles) < 2:
        raise ConfigurationError("fdk: need multiple views for reconstruction")
    step = np.median(np.diff(angles))
    span = angles[-1] - angles[0] + step
    if span < 2 * np.pi - 1e-6:
        raise ConfigurationError("fdk: insufficient angular coverage (need full scan)")


def fdk_reconstruct(g: ProjectionStack, grid: ReconGrid,
                    geometry: ConeBeamGeometry | None = None) -> Volume:
    """FDK reconstruction of line integrals to attenuation (mm^-1)."""
    geo = geometry or g.geometry
    _check_coverage(geo)

    mag = geo.sid / geo.sdd
    du = geo.pitch * mag  # virtual detector pitch at the isocenter
    nu, nv = geo.nu, geo.nv
    u = (np.arange(nu) - (nu - 1) / 2.0) * du
    v = (np.arange(nv) - (nv - 1) / 2.0) * du

    nx, ny, nz = grid.dims
    vs = grid.voxel_size
    ox, oy, oz = grid.origin
    x = (np.arange(nx) - (nx - 1) / 2.0) * vs + ox
    y = (np.arange(ny) - (ny - 1) / 2.0) * vs + oy
    z = (np.arange(nz) - (nz - 1) / 2.0) * vs + oz

    # field-of-view check on the axis extents; cube corners may fall outside
    # the detector and simply receive no contribution
    r_max = max(np.abs(x).max(), np.abs(y).max())
    if geo.sid - r_max <= 0 or geo.sid * r_max / (geo.sid - r_max) > (nu / 2.0) * du + du:
        raise ConfigurationError("fdk: reconstruction grid outside the field of view")

    cos_w = geo.sid / np.sqrt(geo.sid**2 + u[None, :] ** 2 + v[:, None] ** 2)

    xx = x[None, :]  # broadcast over (y, x) planes
    yy = y[:, None]
    zz = z

    vol = np.zeros((nz, ny, nx))
    step = 2.0 * np.pi / len(geo.angles)
    for a, beta in enumerate(geo.angles):
        filt = ramp_filter_rows(g.data[a] * cos_w, du)
        cb, sb = np.cos(beta), np.sin(beta)
        t = geo.sid - (xx * cb + yy * sb)  # source-to-voxel distance along the ray
        up = geo.sid * (-xx * sb + yy * cb) / t  # virtual detector u of each voxel
        w2 = (geo.sid / t) ** 2
        ui = up / du + (nu - 1) / 2.0
        ui0 = np.clip(np.floor(ui).astype(int), 0, nu - 2)
        fu = np.clip(ui - ui0, 0.0, 1.0)
        valid_u = (ui >= 0) & (ui <= nu - 1)
        for iz in range(nz):
            vp = geo.sid * zz[iz] / t
            vi = vp / du + (nv - 1) / 2.0
            vi0 = np.clip(np.floor(vi).astype(int), 0, nv - 2)
            fv = np.clip(vi - vi0, 0.0, 1.0)
            valid = valid_u & (vi >= 0) & (vi <= nv - 1)
            interp = (
                (1 - fv) * ((1 - fu) * filt[vi0, ui0] + fu * filt[vi0, ui0 + 1])
                + fv * ((1 - fu) * filt[vi0 + 1, ui0] + fu * filt[vi0 + 1, ui0 + 1])
            )
            vol[iz] += np.where(valid, w2 * interp, 0.0)
    vol *= step / 2.0  # full-scan redundancy factor
    return Volume(data=vol, voxel_size=vs, origin=grid.origin, units="mm^-1")


def mu_to_hu(vol: Volume, mu_water: float) -> Volume:
    """HU = 1000 * (mu - mu_water) / mu_water."""
    if mu_water <= 0:
        raise ConfigurationError("mu_to_hu: mu_water must be positive")
    hu = 1000.0 * (vol.data - mu_water) / mu_water
    return Volume(data=hu, voxel_size=vol.voxel_size, origin=vol.origin, units="HU")
