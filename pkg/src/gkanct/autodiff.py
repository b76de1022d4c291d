"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Only the operations needed by the Gaussian-KAN U-Net are provided: 2-D
convolution, SiLU / logistic activations, 2x average-pool downsampling,
2x bilinear upsampling, elementwise add/scale, channel concatenation, a
per-channel bias add, and an MSE loss. Each forward records a backward
closure on a tape; ``Tensor.backward()`` walks the tape in reverse
topological order and accumulates gradients.

Training runs in float32; gradient checks should be run in float64
(finite differences are unreliable in single precision).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError

# When True, every forward pass asserts that its output is finite.
_debug_checks = False


def set_debug_checks(flag: bool) -> None:
    global _debug_checks
    _debug_checks = bool(flag)


def _check_finite(arr: np.ndarray, op_name: str) -> None:
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in output of {op_name}")


class Tensor:
    """N-dimensional array with an optional gradient buffer.

    ``data`` is a contiguous row-major float array. ``grad`` is allocated
    lazily during ``backward`` and always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, grad_output=None) -> None:
        """Reverse-mode sweep seeded with ``grad_output`` (default: ones)."""
        if grad_output is None:
            grad_output = np.ones_like(self.data)
        else:
            grad_output = np.asarray(grad_output, dtype=self.data.dtype)
            if grad_output.shape != self.data.shape:
                raise DimensionError("seed gradient shape mismatch")

        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)

        grads = {id(self): grad_output}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
            if node._backward_fn is None:
                continue
            parent_grads = node._backward_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg
                else:
                    acc += pg

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents, backward_fn, op_name: str) -> Tensor:
    _check_finite(data, op_name)
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} vs {b.data.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"sub: shapes {a.data.shape} vs {b.data.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    if s == 1.0:
        # exactness contract: scale by 1 is the identity on the data
        return _make(a.data.copy(), (a,), lambda g: (g,), "scale")
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack [c1,h,w] and [c2,h,w] into [c1+c2,h,w]."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[1:] != b.data.shape[1:]:
        raise DimensionError(
            f"concat_channels: spatial dims {a.data.shape} vs {b.data.shape}"
        )
    c1 = a.data.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return _make(out, (a, b), lambda g: (g[:c1], g[c1:]), "concat_channels")


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias [c] to a feature map [c,h,w]."""
    if x.data.ndim != 3 or bias.data.shape != (x.data.shape[0],):
        raise DimensionError("add_channel_bias: bias must be length-c vector")
    out = x.data + bias.data[:, None, None]
    return _make(out, (x, bias), lambda g: (g, g.sum(axis=(1, 2))), "add_channel_bias")


# ---------------------------------------------------------------------------
# activations


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s

    def bwd(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return _make(y, (x,), bwd, "silu")


def logistic(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), bwd, "logistic")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Padded input [c,hp,wp] -> column matrix [c*kh*kw, ho*wo]."""
    c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(c * kh * kw, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of [c_in,h,w] with [c_out,c_in,kh,kw], zero padding."""
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError("conv2d: expected [c,h,w] input and [co,ci,kh,kw] kernel")
    c_in, h, w = x.data.shape
    c_out, ci_k, kh, kw = kernel.data.shape
    if ci_k != c_in:
        raise DimensionError(f"conv2d: input channels {c_in} vs kernel {ci_k}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError("conv2d: kernel spatial size must be odd")
    if pad < 0 or stride < 1:
        raise DimensionError("conv2d: pad must be >= 0, stride >= 1")
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise DimensionError("conv2d: output size is not integral")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw, stride)
    kmat = kernel.data.reshape(c_out, c_in * kh * kw)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = (kmat @ cols).reshape(c_out, ho, wo)

    def bwd(g):
        gmat = g.reshape(c_out, ho * wo)
        gk = (gmat @ cols.T).reshape(kernel.data.shape)
        dcols = (kmat.T @ gmat).reshape(c_in, kh, kw, ho, wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
        if pad:
            dx = dxp[:, pad:-pad, pad:-pad]
        else:
            dx = dxp
        return (np.ascontiguousarray(dx), gk)

    return _make(out, (x, kernel), bwd, "conv2d")


# ---------------------------------------------------------------------------
# resampling


def downsample_avg2x(x: Tensor) -> Tensor:
    """2x2 mean pooling on [c,h,w]; h and w must be even."""
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"downsample_avg2x: odd spatial dims {h}x{w}")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def bwd(g):
        gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        return (gx,)

    return _make(out, (x,), bwd, "downsample_avg2x")


_upsample_cache: dict = {}


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """[2n, n] bilinear interpolation matrix, align_corners disabled."""
    key = (n, np.dtype(dtype).str)
    mat = _upsample_cache.get(key)
    if mat is not None:
        return mat
    mat = np.zeros((2 * n, n), dtype=dtype)
    src = (np.arange(2 * n, dtype=np.float64) + 0.5) / 2.0 - 0.5
    i0 = np.clip(np.floor(src).astype(int), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    frac = np.clip(src - np.floor(src), 0.0, 1.0)
    frac[src < 0] = 0.0
    frac[src > n - 1] = 0.0
    rows = np.arange(2 * n)
    mat[rows, i0] += (1.0 - frac).astype(dtype)
    mat[rows, i1] += frac.astype(dtype)
    _upsample_cache[key] = mat
    return mat


def upsample_bilinear2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling of [c,h,w] (separable, align_corners disabled)."""
    c, h, w = x.data.shape
    uh = _upsample_matrix(h, x.data.dtype)
    uw = _upsample_matrix(w, x.data.dtype)
    out = np.einsum("ph,chw,qw->cpq", uh, x.data, uw, optimize=True)

    def bwd(g):
        gx = np.einsum("ph,cpq,qw->chw", uh, g, uw, optimize=True)
        return (np.ascontiguousarray(gx),)

    return _make(np.ascontiguousarray(out), (x,), bwd, "upsample_bilinear2x")


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target array."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise DimensionError(f"mse_loss: shapes {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    out = np.asarray((diff * diff).sum() / n)

    def bwd(g):
        return (g * (2.0 / n) * diff,)

    return _make(out, (pred,), bwd, "mse_loss")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error against a constant target array."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise DimensionError(f"l1_loss: shapes {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    out = np.asarray(np.abs(diff).sum() / n)

    def bwd(g):
        return (g * np.sign(diff) / n,)

    return _make(out, (pred,), bwd, "l1_loss")


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar projection sum(x * weights); used to scalarize outputs."""
    weights = np.asarray(weights, dtype=x.data.dtype)
    if weights.shape != x.data.shape:
        raise DimensionError("weighted_sum: weight shape mismatch")
    out = np.asarray((x.data * weights).sum())

    def bwd(g):
        return (g * weights,)

    return _make(out, (x,), bwd, "weighted_sum")


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, inputs, eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given Tensors to an output Tensor; the output is
    scalarized by a fixed random linear functional so that errors cannot
    cancel. Inputs must be float64. Error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError("grad_check: eps outside [1e-6, 1e-3]")
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise NumericError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.zero_grad()

    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    weights = rng.standard_normal(out.data.shape)
    loss = weighted_sum(out, weights)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("grad_check: non-finite forward value")
    loss.backward()

    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    if any(not np.all(np.isfinite(a)) for a in analytic):
        raise NumericError("grad_check: non-finite analytic gradient")

    def scalar_loss():
        probes = [Tensor(t.data) for t in inputs]
        return float((fn(*probes).data * weights).sum())

    max_err = 0.0
    for idx, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        aflat = analytic[idx].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar_loss()
            flat[i] = orig - eps
            fm = scalar_loss()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
