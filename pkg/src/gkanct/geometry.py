"""Core data carriers: cone-beam geometry, projection stacks, volumes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass
class ConeBeamGeometry:
    """Circular cone-beam scan geometry.

    The source rotates in the z=0 plane at radius ``sid`` from the
    isocenter; the flat detector sits ``sdd`` from the source,
    perpendicular to the central ray, with ``nu`` columns (in-plane axis)
    and ``nv`` rows (rotation axis).
    """

    sid: float  # source-isocenter distance, mm
    sdd: float  # source-detector distance, mm
    nu: int
    nv: int
    pitch: float  # detector pixel pitch, mm
    angles: np.ndarray  # view angles, radians, strictly increasing in [0, 2*pi)
    flux: float = 1e5  # flat-field photons per pixel

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if not (self.sdd > self.sid > 0):
            raise ConfigurationError("geometry: require sdd > sid > 0")
        if self.pitch <= 0:
            raise ConfigurationError("geometry: pitch must be positive")
        if self.nu < 1 or self.nv < 1:
            raise ConfigurationError("geometry: detector dims must be positive")
        if self.angles.ndim != 1 or len(self.angles) < 1:
            raise ConfigurationError("geometry: need at least one view angle")
        if np.any(np.diff(self.angles) <= 0):
            raise ConfigurationError("geometry: angles must be strictly increasing")
        if self.angles[0] < 0 or self.angles[-1] >= 2 * np.pi:
            raise ConfigurationError("geometry: angles must lie in [0, 2*pi)")
        if self.flux <= 0:
            raise ConfigurationError("geometry: flux must be positive")

    @property
    def n_views(self) -> int:
        return len(self.angles)

    def to_dict(self) -> dict:
        return {
            "sid": self.sid,
            "sdd": self.sdd,
            "nu": self.nu,
            "nv": self.nv,
            "pitch": self.pitch,
            "angles": self.angles.tolist(),
            "flux": self.flux,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConeBeamGeometry":
        return cls(
            sid=float(d["sid"]),
            sdd=float(d["sdd"]),
            nu=int(d["nu"]),
            nv=int(d["nv"]),
            pitch=float(d["pitch"]),
            angles=np.asarray(d["angles"], dtype=np.float64),
            flux=float(d.get("flux", 1e5)),
        )


@dataclass
class ProjectionStack:
    """Stack of 2-D detector images indexed by view angle."""

    data: np.ndarray  # [n_views, nv, nu]
    geometry: ConeBeamGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (self.geometry.n_views, self.geometry.nv, self.geometry.nu)
        if self.data.shape != expected:
            raise DimensionError(
                f"projection stack shape {self.data.shape} != geometry {expected}"
            )

    def copy_with(self, data: np.ndarray) -> "ProjectionStack":
        return ProjectionStack(data=data, geometry=self.geometry)


@dataclass
class ReconGrid:
    """Reconstruction voxel grid centered on the isocenter plus an offset."""

    dims: tuple  # (nx, ny, nz)
    voxel_size: float  # mm, isotropic
    origin: tuple = (0.0, 0.0, 0.0)  # mm offset of the grid center

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in self.dims):
            raise ConfigurationError("recon grid: dims must be positive")
        if self.voxel_size <= 0:
            raise ConfigurationError("recon grid: voxel size must be positive")
        self.origin = tuple(float(o) for o in self.origin)


@dataclass
class Volume:
    """3-D voxel grid of attenuation coefficients (mm^-1) or HU values."""

    data: np.ndarray  # [nz, ny, nx]
    voxel_size: float
    origin: tuple = (0.0, 0.0, 0.0)
    units: str = "mm^-1"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DimensionError("volume must be 3-D [nz, ny, nx]")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D image (align_corners disabled).

    For an exact factor-2 reduction this coincides with 2x2 block
    averaging, so training-time pooling and inference-time resampling
    agree on the default sizes.
    """
    h, w = img.shape
    if (out_h, out_w) == (h, w):
        return img.copy()
    return _resize_matrix(out_h, h) @ img @ _resize_matrix(out_w, w).T


_resize_cache: dict = {}


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    key = (n_out, n_in)
    mat = _resize_cache.get(key)
    if mat is not None:
        return mat
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    if n_out < n_in:
        # area-style antialiased reduction: average source cells overlapping
        # each output cell (equals bilinear for integer factors)
        edges = np.arange(n_out + 1) * scale
        for i in range(n_out):
            lo, hi = edges[i], edges[i + 1]
            j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
            for j in range(j0, min(j1, n_in)):
                overlap = min(hi, j + 1) - max(lo, j)
                if overlap > 0:
                    mat[i, j] = overlap / (hi - lo)
    else:
        src = (np.arange(n_out) + 0.5) * scale - 0.5
        i0 = np.clip(np.floor(src).astype(int), 0, n_in - 1)
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        frac = np.clip(src - np.floor(src), 0.0, 1.0)
        frac[src < 0] = 0.0
        frac[src > n_in - 1] = 0.0
        rows = np.arange(n_out)
        mat[rows, i0] += 1.0 - frac
        mat[rows, i1] += frac
    _resize_cache[key] = mat
    return mat
