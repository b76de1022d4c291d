"""Training loop, projection-domain correction, and the SKS baseline.

The network learns the scatter fraction I_s/I_m from the normalized
projection I_m/I_0 (truncated at 1). Optimization is Adam with decoupled
weight decay and a single halving of the learning rate at a fixed
iteration. The classical baseline estimates scatter by convolving a
single Gaussian kernel with an amplitude-scaled source term; its
parameters are fitted by coordinate search on the training set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DataError, DimensionError, TrainingError
from .geometry import ProjectionStack, bilinear_resize
from .net import GKanUNetModel, UNetConfig, build, forward, infer_native
from .physics import point_scatter_kernel
from .recon import LOG_FLOOR_RATIO, median_denoise


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_iteration: int = 3000
    lr_decay_repeat: int | None = None  # None: single step decay
    epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    loss_kind: str = "mse"  # "mse" or "l1"

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("train: rates must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("train: betas must lie in [0,1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("train: batch >= 1 and epochs >= 0 required")
        if self.loss_kind not in ("mse", "l1"):
            raise ConfigurationError("train: loss must be 'mse' or 'l1'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainingPair:
    """One view at network resolution: input I_m/I_0 (clamped), target I_s/I_m."""

    input: np.ndarray
    target: np.ndarray
    view_index: int = -1
    phantom_id: int = -1


def make_pairs(I_m: ProjectionStack, I_s: ProjectionStack, I_0: float,
               network_size: int, phantom_id: int = -1) -> list[TrainingPair]:
    """Build per-view training pairs, downsampled by local averaging."""
    if I_m.data.shape != I_s.data.shape:
        raise DimensionError("make_pairs: misaligned projection stacks")
    if np.any(I_m.data <= 0):
        raise DimensionError("make_pairs: I_m must be positive")
    pairs = []
    for i in range(I_m.data.shape[0]):
        inp = np.clip(I_m.data[i] / I_0, 0.0, 1.0)
        tgt = I_s.data[i] / I_m.data[i]
        pairs.append(TrainingPair(
            input=bilinear_resize(inp, network_size, network_size).astype(np.float32),
            target=bilinear_resize(tgt, network_size, network_size).astype(np.float32),
            view_index=i,
            phantom_id=phantom_id,
        ))
    return pairs


def loss(pred: Tensor, target: np.ndarray, kind: str = "mse") -> Tensor:
    """Per-view objective: pixel-mean squared (or absolute) error."""
    if kind == "mse":
        return ad.mse_loss(pred, target)
    if kind == "l1":
        return ad.l1_loss(pred, target)
    raise ConfigurationError(f"loss: unknown kind {kind!r}")


class AdamW:
    """Adam with decoupled weight decay over named parameter tensors."""

    def __init__(self, params: dict, config: TrainConfig):
        self.params = params
        self.cfg = config
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def current_lr(self) -> float:
        lr = self.cfg.learning_rate
        if self.cfg.lr_decay_repeat:
            n = self.t // self.cfg.lr_decay_repeat
            lr *= self.cfg.lr_decay_factor**n
        elif self.t >= self.cfg.lr_decay_iteration:
            lr *= self.cfg.lr_decay_factor
        return lr

    def step(self) -> None:
        self.t += 1
        lr = self.current_lr()
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= lr * (mhat / (np.sqrt(vhat) + eps) + self.cfg.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


@dataclass
class Checkpoint:
    """Trained model plus optimizer state and the loss history."""

    model: GKanUNetModel
    train_config: TrainConfig
    iteration: int
    loss_history: list = field(default_factory=list)
    opt_m: dict = field(default_factory=dict)
    opt_v: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        """Manifest JSON + one raw little-endian f32 blob per parameter group."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for name, p in self.model.params.items():
            fname = name.replace(".", "_") + ".f32"
            p.data.astype("<f4").tofile(directory / fname)
            entry = {"name": name, "shape": list(p.data.shape), "file": fname}
            for state, tag in ((self.opt_m, "m"), (self.opt_v, "v")):
                if name in state:
                    sfile = f"{tag}_{fname}"
                    state[name].astype("<f4").tofile(directory / sfile)
                    entry[f"opt_{tag}"] = sfile
            entries.append(entry)
        manifest = {
            "schema_version": 1,
            "unet_config": self.model.config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "iteration": self.iteration,
            "loss_history": [float(x) for x in self.loss_history],
            "params": entries,
        }
        with open(directory / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=1)

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        try:
            with open(directory / "manifest.json") as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"checkpoint: cannot read manifest: {exc}") from exc
        if manifest.get("schema_version") != 1:
            raise DataError("checkpoint: unsupported schema version")
        config = UNetConfig.from_dict(manifest["unet_config"])
        params = {}
        opt_m, opt_v = {}, {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            blob = np.fromfile(directory / entry["file"], dtype="<f4")
            if blob.size != int(np.prod(shape)):
                raise DataError(f"checkpoint: blob size mismatch for {entry['name']}")
            params[entry["name"]] = Tensor(blob.reshape(shape), requires_grad=True)
            for tag, store in (("m", opt_m), ("v", opt_v)):
                key = f"opt_{tag}"
                if key in entry:
                    store[entry["name"]] = np.fromfile(
                        directory / entry[key], dtype="<f4"
                    ).reshape(shape).astype(np.float32)
        return cls(
            model=GKanUNetModel(config, params),
            train_config=TrainConfig.from_dict(manifest["train_config"]),
            iteration=int(manifest["iteration"]),
            loss_history=list(manifest.get("loss_history", [])),
            opt_m=opt_m,
            opt_v=opt_v,
        )


def train(model: GKanUNetModel, pairs: list, config: TrainConfig,
          log_every: int = 0) -> Checkpoint:
    """Optimize the model in place; returns the final checkpoint."""
    if not pairs:
        raise ConfigurationError("train: empty pair list")
    S = model.config.input_size
    for pair in pairs:
        if pair.input.shape != (S, S):
            raise DimensionError("train: pair resolution != network input size")

    opt = AdamW(model.params, config)
    rng = np.random.default_rng(config.seed)
    history = []
    iteration = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        for idx in order:
            pair = pairs[idx]
            opt.zero_grad()
            pred = forward(model, Tensor(pair.input[None]))
            lv = loss(pred, pair.target[None], config.loss_kind)
            val = float(lv.data)
            if not np.isfinite(val):
                raise TrainingError(
                    f"training diverged at iteration {iteration}", iteration=iteration
                )
            lv.backward()
            opt.step()
            history.append(val)
            iteration += 1
            if log_every and iteration % log_every == 0:
                recent = history[-log_every:]
                print(f"iter {iteration:6d}  epoch {epoch:3d}  loss {np.mean(recent):.3e}")
    return Checkpoint(
        model=model,
        train_config=config,
        iteration=iteration,
        loss_history=history,
        opt_m=opt.m,
        opt_v=opt.v,
    )


def correct(I_m: ProjectionStack, I_0: float, model: GKanUNetModel,
            denoise_window: int = 3) -> tuple:
    """Scatter-corrected primaries: denoise(I_m - I_s_hat), floored.

    Returns (I_p_hat, I_s_hat).
    """
    I_s_hat = infer_native(model, I_m, I_0)
    residual = I_m.copy_with(I_m.data - I_s_hat.data)
    I_p_hat = median_denoise(residual, denoise_window)
    floor = LOG_FLOOR_RATIO * I_0
    return I_m.copy_with(np.maximum(I_p_hat.data, floor)), I_s_hat


def sks_baseline(I_m: ProjectionStack, I_0: float, sigma_mm: float,
                 amplitude: float, exponent: float) -> ProjectionStack:
    """Single-Gaussian kernel superposition scatter estimate.

    Source term uses the measured (scatter-contaminated) projection, which
    is all the classical method has access to.
    """
    if sigma_mm <= 0 or amplitude < 0 or exponent < 0:
        raise ConfigurationError("sks_baseline: invalid parameters")
    pitch = I_m.geometry.pitch
    radius = int(np.ceil(3.5 * sigma_mm / pitch))
    kernel = point_scatter_kernel(sigma_mm, pitch, radius)
    p = -np.log(np.clip(I_m.data / I_0, LOG_FLOOR_RATIO, 1.0))
    source = amplitude * I_m.data * p**exponent
    out = np.empty_like(I_m.data)
    for i in range(I_m.data.shape[0]):
        out[i] = fftconvolve(source[i], kernel, mode="same")
    np.maximum(out, 0.0, out=out)
    return I_m.copy_with(out)


def fit_sks_baseline(I_m: ProjectionStack, I_s: ProjectionStack, I_0: float,
                     sigmas=None, exponents=None, n_rounds: int = 2,
                     view_stride: int = 1) -> tuple:
    """Coordinate search over (sigma, k) with closed-form amplitude.

    The scatter estimate is linear in the amplitude, so for each (sigma,
    k) the MSE-optimal amplitude is a projection coefficient. Returns
    (sigma_mm, amplitude, exponent).
    """
    pitch = I_m.geometry.pitch
    det_mm = I_m.geometry.nu * pitch
    if sigmas is None:
        sigmas = np.geomspace(0.05 * det_mm, 0.6 * det_mm, 9)
    if exponents is None:
        exponents = np.linspace(0.5, 3.0, 11)
    data_m = I_m.data[::view_stride]
    data_s = I_s.data[::view_stride]

    def score(sigma, k):
        est = sks_baseline_raw(data_m, I_0, pitch, sigma, 1.0, k)
        denom = float((est * est).sum())
        if denom == 0:
            return np.inf, 0.0
        a = float((est * data_s).sum()) / denom
        a = max(a, 0.0)
        mse = float(((a * est - data_s) ** 2).mean())
        return mse, a

    sigma = float(sigmas[len(sigmas) // 2])
    k = float(exponents[len(exponents) // 2])
    best_a = 0.0
    for _ in range(n_rounds):
        scores = [score(s, k) for s in sigmas]
        i = int(np.argmin([m for m, _ in scores]))
        sigma, best_a = float(sigmas[i]), scores[i][1]
        scores = [score(sigma, kk) for kk in exponents]
        i = int(np.argmin([m for m, _ in scores]))
        k, best_a = float(exponents[i]), scores[i][1]
    return sigma, best_a, k


def sks_baseline_raw(data_m: np.ndarray, I_0: float, pitch: float,
                     sigma_mm: float, amplitude: float, exponent: float) -> np.ndarray:
    """Array-level SKS estimate used by the fitter."""
    radius = int(np.ceil(3.5 * sigma_mm / pitch))
    kernel = point_scatter_kernel(sigma_mm, pitch, radius)
    p = -np.log(np.clip(data_m / I_0, LOG_FLOOR_RATIO, 1.0))
    source = amplitude * data_m * p**exponent
    out = np.empty_like(data_m)
    for i in range(data_m.shape[0]):
        out[i] = fftconvolve(source[i], kernel, mode="same")
    np.maximum(out, 0.0, out=out)
    return out
