"""U-shaped encoder-decoder built from Gaussian-KAN blocks.

The network maps a normalized projection (values in [0,1]) at a fixed
working resolution to a scatter-fraction map (estimate of I_s / I_m) at
the same resolution. A final logistic squashing keeps the fraction in
(0,1), which guarantees a positive corrected primary signal. Arbitrary
detector sizes are handled by resampling outside the network
(``infer_native``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .geometry import ProjectionStack, bilinear_resize
from .gkan import RbfGrid, kan_block


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    channels: tuple = (16, 32, 64, 128)
    input_size: int = 128
    conv_size: int = 3
    grid: RbfGrid = field(default_factory=RbfGrid)

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError("unet: depth must be >= 1")
        if len(self.channels) != self.depth:
            raise ConfigurationError("unet: channels length must equal depth")
        if self.input_size % (2 ** (self.depth - 1)) != 0:
            raise ConfigurationError(
                "unet: input_size must be divisible by 2^(depth-1)"
            )
        if self.conv_size % 2 == 0:
            raise ConfigurationError("unet: conv size must be odd")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "channels": list(self.channels),
            "input_size": self.input_size,
            "conv_size": self.conv_size,
            "grid": {"c": self.grid.c, "r": self.grid.r, "sigma": self.grid.sigma},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        g = d.get("grid", {})
        return cls(
            depth=int(d.get("depth", 4)),
            channels=tuple(d.get("channels", (16, 32, 64, 128))),
            input_size=int(d.get("input_size", 128)),
            conv_size=int(d.get("conv_size", 3)),
            grid=RbfGrid(
                c=int(g.get("c", 8)),
                r=float(g.get("r", 1.0)),
                sigma=g.get("sigma"),
            ),
        )


class GKanUNetModel:
    """Parameter container; forward logic lives in :func:`forward`."""

    def __init__(self, config: UNetConfig, params: dict):
        self.config = config
        self.params = params  # name -> Tensor, insertion-ordered

    def named_parameters(self):
        return list(self.params.items())

    def parameter_count(self) -> int:
        return sum(int(np.prod(t.data.shape)) for t in self.params.values())

    def astype(self, dtype) -> "GKanUNetModel":
        cast = {
            name: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
            for name, t in self.params.items()
        }
        return GKanUNetModel(self.config, cast)


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build(config: UNetConfig, seed: int) -> GKanUNetModel:
    """Deterministic parameter initialization from a seed.

    Conv kernels get fan-in-scaled uniform init; RBF weight matrices get a
    10x smaller scale so each block starts close to a plain convolution
    block.
    """
    rng = np.random.default_rng(seed)
    k = config.conv_size
    c = config.grid.c
    ch = config.channels
    params: dict = {}

    def add_block(prefix: str, c_in: int, c_out: int):
        params[f"{prefix}.conv"] = Tensor(
            _uniform(rng, (c_out, c_in, k, k), 1.0 / np.sqrt(c_in * k * k)),
            requires_grad=True,
        )
        params[f"{prefix}.rbf"] = Tensor(
            _uniform(rng, (c_out, c_in * c), 0.1 / np.sqrt(c_in * c)),
            requires_grad=True,
        )

    prev = 1
    for lvl in range(config.depth):
        add_block(f"enc{lvl}", prev, ch[lvl])
        prev = ch[lvl]
    for lvl in range(config.depth - 2, -1, -1):
        cat = ch[lvl] + ch[lvl + 1]
        params[f"dec{lvl}.adapter"] = Tensor(
            _uniform(rng, (ch[lvl], cat, 1, 1), 1.0 / np.sqrt(cat)),
            requires_grad=True,
        )
        add_block(f"dec{lvl}", ch[lvl], ch[lvl])
    params["head.conv"] = Tensor(
        _uniform(rng, (1, ch[0], 1, 1), 1.0 / np.sqrt(ch[0])), requires_grad=True
    )
    params["head.bias"] = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
    return GKanUNetModel(config, params)


def expected_parameter_count(config: UNetConfig) -> int:
    """Closed-form parameter count; independent check of :func:`build`."""
    k, c, ch = config.conv_size, config.grid.c, config.channels
    total = 0
    prev = 1
    for lvl in range(config.depth):
        total += ch[lvl] * prev * k * k + ch[lvl] * prev * c
        prev = ch[lvl]
    for lvl in range(config.depth - 1):
        cat = ch[lvl] + ch[lvl + 1]
        total += ch[lvl] * cat  # 1x1 adapter
        total += ch[lvl] * ch[lvl] * k * k + ch[lvl] * ch[lvl] * c
    total += ch[0] + 1  # head conv + bias
    return total


def forward(model: GKanUNetModel, x: Tensor) -> Tensor:
    """Normalized projection [1,S,S] -> scatter-fraction map [1,S,S]."""
    cfg = model.config
    S = cfg.input_size
    if x.data.shape != (1, S, S):
        raise DimensionError(f"forward: expected input [1,{S},{S}], got {x.data.shape}")
    p = model.params
    grid = cfg.grid

    skips = []
    h = x
    for lvl in range(cfg.depth):
        h = kan_block(h, p[f"enc{lvl}.conv"], p[f"enc{lvl}.rbf"], grid)
        if lvl < cfg.depth - 1:
            skips.append(h)
            h = ad.downsample_avg2x(h)
    for lvl in range(cfg.depth - 2, -1, -1):
        h = ad.upsample_bilinear2x(h)
        h = ad.concat_channels(skips[lvl], h)
        h = ad.conv2d(h, p[f"dec{lvl}.adapter"], stride=1, pad=0)
        h = kan_block(h, p[f"dec{lvl}.conv"], p[f"dec{lvl}.rbf"], grid)
    h = ad.conv2d(h, p["head.conv"], stride=1, pad=0)
    h = ad.add_channel_bias(h, p["head.bias"])
    return ad.logistic(h)


def infer_native(model: GKanUNetModel, I_m: ProjectionStack, I_0: float) -> ProjectionStack:
    """Scatter estimate in photon units at native detector resolution.

    Per view: clamp(I_m/I_0, 0, 1) -> resample to the network resolution
    -> forward -> resample back -> multiply by I_m. The squashed network
    output keeps the estimate strictly below I_m pointwise.
    """
    if I_0 <= 0:
        raise ConfigurationError("infer_native: I_0 must be positive")
    S = model.config.input_size
    nv, nu = I_m.geometry.nv, I_m.geometry.nu
    out = np.empty_like(I_m.data)
    dtype = next(iter(model.params.values())).data.dtype
    for i in range(I_m.data.shape[0]):
        ratio = np.clip(I_m.data[i] / I_0, 0.0, 1.0)
        net_in = bilinear_resize(ratio, S, S).astype(dtype)
        frac = forward(model, Tensor(net_in[None])).data[0]
        frac_native = bilinear_resize(frac.astype(np.float64), nv, nu)
        out[i] = frac_native * I_m.data[i]
    return I_m.copy_with(out)
