"""Gaussian-RBF Kolmogorov-Arnold layers.

The learnable unit is an edge function
``phi(x) = w1 * SiLU(x) + w2 * sum_j wj * exp(-(x - mu_j)^2 / sigma^2)``
on a fixed grid of Gaussian centers. ``kan_layer`` applies a full matrix
of such edges to a vector; ``gauss_rbf_map`` is the image-map variant that
treats every pixel's channel vector as the input of a shared linear map
over the RBF-expanded channels; ``kan_block`` is the two-path feature
block ``Conv(SiLU(F)) + GaussRBF(F)``.

The exponent uses sigma^2 (not 2*sigma^2); sigma's value absorbs the
difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _make
from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class RbfGrid:
    """Fixed grid of Gaussian centers: ``c`` evenly spaced points on [-r, r]."""

    c: int = 8
    r: float = 1.0
    sigma: float = field(default=None)  # defaults to the center spacing

    def __post_init__(self):
        if self.c < 2:
            raise ConfigurationError("RbfGrid: need at least 2 centers")
        if self.r <= 0:
            raise ConfigurationError("RbfGrid: half-range r must be positive")
        if self.sigma is None:
            object.__setattr__(self, "sigma", 2.0 * self.r / (self.c - 1))
        if self.sigma <= 0:
            raise ConfigurationError("RbfGrid: sigma must be positive")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(-self.r, self.r, self.c)

    @property
    def spacing(self) -> float:
        return 2.0 * self.r / (self.c - 1)


def rbf_basis(x: float, grid: RbfGrid) -> np.ndarray:
    """Length-c vector with component j = exp(-(x - mu_j)^2 / sigma^2)."""
    d = np.asarray(x, dtype=np.float64) - grid.centers
    return np.exp(-(d * d) / (grid.sigma**2))


@dataclass
class KanEdgeParams:
    """Learnable weights of a single KAN edge."""

    w1: Tensor  # SiLU-path scalar
    w2: Tensor  # RBF-path scalar
    wj: Tensor  # length-c RBF weights


def kan_phi(x: Tensor, edge: KanEdgeParams, grid: RbfGrid) -> Tensor:
    """Scalar edge function; gradients flow to x, w1, w2 and wj."""
    if x.data.shape != () or edge.w1.data.shape != () or edge.w2.data.shape != ():
        raise DimensionError("kan_phi: x, w1, w2 must be scalars")
    if edge.wj.data.shape != (grid.c,):
        raise DimensionError("kan_phi: wj must have length c")
    xv = x.data
    s = 1.0 / (1.0 + np.exp(-xv))
    si = xv * s
    d = xv - grid.centers.astype(xv.dtype)
    basis = np.exp(-(d * d) / grid.sigma**2)
    bf = edge.wj.data @ basis
    out = edge.w1.data * si + edge.w2.data * bf

    def bwd(g):
        dbasis_dx = basis * (-2.0 * d / grid.sigma**2)
        dx = g * (edge.w1.data * (s * (1.0 + xv * (1.0 - s)))
                  + edge.w2.data * (edge.wj.data @ dbasis_dx))
        return (dx, g * si, g * bf, g * edge.w2.data * basis)

    return _make(np.asarray(out), (x, edge.w1, edge.w2, edge.wj), bwd, "kan_phi")


def kan_layer(x: Tensor, w1: Tensor, w2: Tensor, wj: Tensor, grid: RbfGrid) -> Tensor:
    """Full KAN layer: output k = sum_i phi_{i,k}(x_i).

    Shapes: x [d_in], w1 and w2 [d_out, d_in], wj [d_out, d_in, c].
    """
    d_in = x.data.shape[0]
    if x.data.ndim != 1:
        raise DimensionError("kan_layer: x must be a vector")
    if w1.data.ndim != 2 or w1.data.shape[1] != d_in or w1.data.shape != w2.data.shape:
        raise DimensionError("kan_layer: w1/w2 must be [d_out, d_in]")
    if wj.data.shape != (*w1.data.shape, grid.c):
        raise DimensionError("kan_layer: wj must be [d_out, d_in, c]")

    xv = x.data
    s = 1.0 / (1.0 + np.exp(-xv))
    si = xv * s  # [d_in]
    d = xv[:, None] - grid.centers.astype(xv.dtype)[None, :]
    basis = np.exp(-(d * d) / grid.sigma**2)  # [d_in, c]
    bf = np.einsum("kic,ic->ki", wj.data, basis)  # [d_out, d_in]
    out = w1.data @ si + (w2.data * bf).sum(axis=1)

    def bwd(g):
        # g: [d_out]
        dbasis_dx = basis * (-2.0 * d / grid.sigma**2)  # [d_in, c]
        silu_grad = s * (1.0 + xv * (1.0 - s))
        dx = (g @ w1.data) * silu_grad
        dx += np.einsum("k,ki,kic,ic->i", g, w2.data, wj.data, dbasis_dx)
        dw1 = np.outer(g, si)
        dw2 = g[:, None] * bf
        dwj = (g[:, None] * w2.data)[:, :, None] * basis[None, :, :]
        return (dx, dw1, dw2, dwj)

    return _make(out, (x, w1, w2, wj), bwd, "kan_layer")


def gauss_rbf_map(F: Tensor, weights: Tensor, grid: RbfGrid) -> Tensor:
    """Pixelwise RBF channel expansion followed by a shared linear map.

    F: [c_in, h, w]; weights: [c_out, c_in * c]. At each pixel the channel
    vector is expanded to c_in*c Gaussian responses and projected to c_out
    outputs; the weight matrix is shared across all pixels.
    """
    if F.data.ndim != 3:
        raise DimensionError("gauss_rbf_map: F must be [c_in, h, w]")
    c_in, h, w = F.data.shape
    c = grid.c
    if weights.data.ndim != 2 or weights.data.shape[1] != c_in * c:
        raise DimensionError(
            f"gauss_rbf_map: weights must be [c_out, {c_in * c}], got {weights.data.shape}"
        )
    c_out = weights.data.shape[0]

    mu = grid.centers.astype(F.data.dtype)
    d = F.data[:, None, :, :] - mu[None, :, None, None]  # [c_in, c, h, w]
    basis = np.exp(-(d * d) / grid.sigma**2)
    bmat = basis.reshape(c_in * c, h * w)
    out = (weights.data @ bmat).reshape(c_out, h, w)

    def bwd(g):
        gmat = g.reshape(c_out, h * w)
        dw = gmat @ bmat.T
        dbasis = basis * (-2.0 * d / grid.sigma**2)
        wr = weights.data.reshape(c_out, c_in, c)
        dF = np.einsum("oyx,oic,icyx->iyx", g.reshape(c_out, h, w), wr, dbasis, optimize=True)
        return (np.ascontiguousarray(dF), dw)

    return _make(np.ascontiguousarray(out), (F, weights), bwd, "gauss_rbf_map")


def kan_block(F: Tensor, conv_kernel: Tensor, rbf_weights: Tensor, grid: RbfGrid) -> Tensor:
    """Two-path KAN feature block: Conv(SiLU(F)) + GaussRBF(F), same padding."""
    kh = conv_kernel.data.shape[2]
    kw = conv_kernel.data.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError("kan_block: conv kernel spatial size must be odd")
    p1 = ad.conv2d(ad.silu(F), conv_kernel, stride=1, pad=(kh - 1) // 2)
    p2 = gauss_rbf_map(F, rbf_weights, grid)
    return ad.add(p1, p2)
