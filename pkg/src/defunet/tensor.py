"""Dense 4-D tensors and the forward numeric primitives built on them.

Every feature map in the engine is a contiguous numpy array in
(batch, channel, height, width) layout.  The functions here are pure:
they never mutate their inputs, and finite inputs produce finite outputs
(assertable via :func:`set_debug_checks`).  The engine-wide default dtype
is float32; gradient-check harnesses switch to float64 with
:func:`precision`.

Convolution ships two interchangeable code paths: a GEMM-per-kernel-tap
fast path (the default) and a plain nested-loop reference path.  Both
accumulate kernel taps in the same fixed order; within a run they are
deterministic, and they agree to float64 round-off.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

__all__ = [
    "ShapeError",
    "ConvSpec",
    "tensor",
    "zeros",
    "ones",
    "default_dtype",
    "set_default_dtype",
    "precision",
    "set_debug_checks",
    "require_nchw",
    "conv2d",
    "maxpool2d",
    "avgpool2d",
    "upsample_nearest2x",
    "batchnorm",
    "leaky_relu",
    "sigmoid",
    "add",
    "concat_channels",
]

_AXIS_NAMES = ("batch (axis 0)", "channel (axis 1)", "height (axis 2)", "width (axis 3)")


class ShapeError(ValueError):
    """A tensor dimension does not satisfy an operation's contract."""


_DEFAULT_DTYPE = np.dtype(np.float32)
_DEBUG_CHECKS = False


def default_dtype() -> np.dtype:
    """Dtype used for newly created tensors and parameters."""
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt


@contextmanager
def precision(dtype):
    """Temporarily switch the engine default dtype (e.g. ``precision('float64')``)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_debug_checks(enabled: bool) -> None:
    """Toggle finite-output assertions on every primitive (off by default)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if _DEBUG_CHECKS and not np.isfinite(out).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    return out


def require_nchw(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate that *x* is a non-degenerate 4-D (N, C, H, W) array."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W); got {x.ndim}-D with shape {x.shape}")
    for axis, extent in enumerate(x.shape):
        if extent < 1:
            raise ShapeError(f"{name} has empty {_AXIS_NAMES[axis]}: shape {x.shape}")
    return x


def _require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                raise ShapeError(
                    f"{op}: operands disagree on {_AXIS_NAMES[axis]}: {da} vs {db} "
                    f"(shapes {a.shape} and {b.shape})"
                )
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ in rank")


def tensor(data, dtype=None) -> np.ndarray:
    """Build a contiguous 4-D tensor in the engine dtype."""
    arr = np.ascontiguousarray(data, dtype=np.dtype(dtype) if dtype else _DEFAULT_DTYPE)
    return require_nchw(arr)


def zeros(shape, dtype=None) -> np.ndarray:
    return tensor(np.zeros(shape), dtype=dtype)


def ones(shape, dtype=None) -> np.ndarray:
    return tensor(np.ones(shape), dtype=dtype)


# --------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 2-D convolution.

    ``padding`` is ``"same"`` (zero-pad so the output spatial size is
    ``ceil(input / stride)``, any odd padding going bottom/right) or
    ``"valid"`` (no padding).  ``dilation`` spaces kernel taps apart, so a
    kernel of size k at rate d covers ``(d - 1) * (k - 1) + k`` pixels.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    padding: str = "same"

    def __post_init__(self):
        for field, minimum in (("in_channels", 1), ("out_channels", 1)):
            if getattr(self, field) < minimum:
                raise ValueError(f"ConvSpec.{field} must be >= {minimum}")
        for field in ("kernel", "stride", "dilation"):
            pair = getattr(self, field)
            if len(pair) != 2 or any(int(v) < 1 for v in pair):
                raise ValueError(f"ConvSpec.{field} must be a pair of integers >= 1, got {pair}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"ConvSpec.padding must be 'same' or 'valid', got {self.padding!r}")

    def effective_kernel(self) -> tuple[int, int]:
        """Spatial extent actually covered by the (possibly dilated) kernel."""
        return tuple(
            (d - 1) * (k - 1) + k for k, d in zip(self.kernel, self.dilation)
        )

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ek_h, ek_w = self.effective_kernel()
        sh, sw = self.stride
        if self.padding == "same":
            return -(-h // sh), -(-w // sw)
        if h < ek_h or w < ek_w:
            raise ShapeError(
                f"valid convolution needs input of at least {ek_h}x{ek_w} "
                f"(effective kernel), got {h}x{w}"
            )
        return (h - ek_h) // sh + 1, (w - ek_w) // sw + 1

    def pad_amounts(self, h: int, w: int) -> tuple[tuple[int, int], tuple[int, int]]:
        if self.padding == "valid":
            return (0, 0), (0, 0)
        oh, ow = self.output_hw(h, w)
        ek_h, ek_w = self.effective_kernel()
        total_h = max((oh - 1) * self.stride[0] + ek_h - h, 0)
        total_w = max((ow - 1) * self.stride[1] + ek_w - w, 0)
        return (total_h // 2, total_h - total_h // 2), (total_w // 2, total_w - total_w // 2)


def _pad_input(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    (pt, pb), (pl, pr) = spec.pad_amounts(x.shape[2], x.shape[3])
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _validate_conv_args(x, weight, bias, spec):
    require_nchw(x, "input")
    require_nchw(weight, "weight")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"conv2d: input {_AXIS_NAMES[1]} is {x.shape[1]}, spec expects {spec.in_channels}"
        )
    expected = (spec.out_channels, spec.in_channels) + tuple(spec.kernel)
    if weight.shape != expected:
        raise ShapeError(f"conv2d: weight shape {weight.shape} does not match spec {expected}")
    bias = np.asarray(bias)
    if bias.shape != (spec.out_channels,):
        raise ShapeError(
            f"conv2d: bias must have shape ({spec.out_channels},), got {bias.shape}"
        )
    return bias


def _conv2d_gemm(xp, weight, bias, spec, oh, ow):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = spec.kernel
    sh, sw = spec.stride
    dh, dw = spec.dilation
    out_c = spec.out_channels
    # (inC, kh, kw, outC) so each tap is a ready GEMM operand
    w_taps = np.ascontiguousarray(weight.transpose(1, 2, 3, 0))
    acc = np.empty((n * oh * ow, out_c), dtype=xp.dtype)
    acc[:] = bias
    for a in range(kh):
        for b in range(kw):
            patch = xp[:, :, a * dh : a * dh + sh * oh : sh, b * dw : b * dw + sw * ow : sw]
            flat = patch.transpose(0, 2, 3, 1).reshape(n * oh * ow, c)
            acc += flat @ w_taps[:, a, b, :]
    return np.ascontiguousarray(acc.reshape(n, oh, ow, out_c).transpose(0, 3, 1, 2))


def _conv2d_direct(xp, weight, bias, spec, oh, ow):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = spec.kernel
    sh, sw = spec.stride
    dh, dw = spec.dilation
    out = np.empty((n, spec.out_channels, oh, ow), dtype=xp.dtype)
    for i in range(n):
        for o in range(spec.out_channels):
            for y in range(oh):
                for x_ in range(ow):
                    total = bias[o]
                    for a in range(kh):
                        for b in range(kw):
                            row = y * sh + a * dh
                            col = x_ * sw + b * dw
                            for ch in range(c):
                                total = total + xp[i, ch, row, col] * weight[o, ch, a, b]
                    out[i, o, y, x_] = total
    return out


def conv2d(x, weight, bias, spec: ConvSpec, method: str = "gemm") -> np.ndarray:
    """Strided, dilated 2-D cross-correlation plus bias.

    ``method`` selects the GEMM-per-tap fast path (default) or the
    nested-loop reference path; both produce equal results.
    """
    bias = _validate_conv_args(x, weight, bias, spec)
    oh, ow = spec.output_hw(x.shape[2], x.shape[3])
    xp = _pad_input(x, spec)
    if method == "gemm":
        out = _conv2d_gemm(xp, weight, bias, spec, oh, ow)
    elif method == "direct":
        out = _conv2d_direct(xp, weight, bias, spec, oh, ow)
    else:
        raise ValueError(f"unknown conv2d method {method!r}")
    return _check_finite(out, "conv2d")


def conv2d_grad_input(grad_out, weight, spec: ConvSpec, input_shape) -> np.ndarray:
    """Gradient of conv2d w.r.t. its input (scatter of tap contributions)."""
    n, c, h, w = input_shape
    kh, kw = spec.kernel
    sh, sw = spec.stride
    dh, dw = spec.dilation
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    (pt, pb), (pl, pr) = spec.pad_amounts(h, w)
    # Channels-last accumulator so each tap update touches contiguous rows;
    # contiguous tap matrices keep the products on the BLAS path.
    grad_pad = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=grad_out.dtype)
    go_flat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, spec.out_channels)
    w_taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
    for a in range(kh):
        for b in range(kw):
            # (n*oh*ow, outC) @ (outC, inC) -> contribution of this tap
            contrib = go_flat @ w_taps[a, b]
            grad_pad[:, a * dh : a * dh + sh * oh : sh, b * dw : b * dw + sw * ow : sw, :] += (
                contrib.reshape(n, oh, ow, c)
            )
    clipped = grad_pad[:, pt : pt + h, pl : pl + w, :]
    return np.ascontiguousarray(clipped.transpose(0, 3, 1, 2))


def conv2d_grad_weight(grad_out, x, spec: ConvSpec) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. weight and bias."""
    kh, kw = spec.kernel
    sh, sw = spec.stride
    dh, dw = spec.dilation
    n = x.shape[0]
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    xp = _pad_input(x, spec)
    go_flat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, spec.out_channels)
    grad_w = np.empty((spec.out_channels, spec.in_channels, kh, kw), dtype=grad_out.dtype)
    for a in range(kh):
        for b in range(kw):
            patch = xp[:, :, a * dh : a * dh + sh * oh : sh, b * dw : b * dw + sw * ow : sw]
            flat = patch.transpose(0, 2, 3, 1).reshape(n * oh * ow, spec.in_channels)
            grad_w[:, :, a, b] = go_flat.T @ flat
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_w, grad_b


# --------------------------------------------------------------------------
# pooling and resampling


def maxpool2d(x, k: int = 2, s: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """2x2/2 max pooling; also returns the winning in-window index (0..3).

    Ties go to the first position in row-major window scan order, which is
    where the backward pass routes the gradient.
    """
    if (k, s) != (2, 2):
        raise ValueError("maxpool2d supports kernel 2, stride 2 only")
    require_nchw(x, "input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(
            f"maxpool2d needs even height/width, got {_AXIS_NAMES[2]}={h}, {_AXIS_NAMES[3]}={w}"
        )
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return _check_finite(np.ascontiguousarray(out), "maxpool2d"), idx.astype(np.uint8)


def maxpool2d_grad(grad_out, idx) -> np.ndarray:
    n, c, oh, ow = grad_out.shape
    scatter = np.zeros((n, c, oh, ow, 4), dtype=grad_out.dtype)
    np.put_along_axis(scatter, idx[..., None].astype(np.int64), grad_out[..., None], axis=-1)
    scatter = scatter.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(scatter.reshape(n, c, oh * 2, ow * 2))


def _avgpool_spec(channels: int, k: int, s: int, padding: str) -> ConvSpec:
    return ConvSpec(channels, channels, kernel=(k, k), stride=(s, s), padding=padding)


def avgpool2d(x, k: int = 3, s: int = 2, padding: str = "same") -> np.ndarray:
    """Average pooling; border windows divide by the full k*k (count-include-pad)."""
    require_nchw(x, "input")
    spec = _avgpool_spec(x.shape[1], k, s, padding)
    oh, ow = spec.output_hw(x.shape[2], x.shape[3])
    xp = _pad_input(x, spec)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    out = windows[:, :, :oh, :ow].sum(axis=(-2, -1)) / np.array(k * k, dtype=x.dtype)
    return _check_finite(np.ascontiguousarray(out), "avgpool2d")


def avgpool2d_grad(grad_out, input_shape, k: int = 3, s: int = 2, padding: str = "same"):
    n, c, h, w = input_shape
    spec = _avgpool_spec(c, k, s, padding)
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    (pt, pb), (pl, pr) = spec.pad_amounts(h, w)
    grad_pad = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=grad_out.dtype)
    share = grad_out / np.array(k * k, dtype=grad_out.dtype)
    for a in range(k):
        for b in range(k):
            grad_pad[:, :, a : a + s * oh : s, b : b + s * ow : s] += share
    return grad_pad[:, :, pt : pt + h, pl : pl + w]


def upsample_nearest2x(x) -> np.ndarray:
    """Replicate every element into a 2x2 block."""
    require_nchw(x, "input")
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_nearest2x_grad(grad_out) -> np.ndarray:
    n, c, h2, w2 = grad_out.shape
    return grad_out.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


# --------------------------------------------------------------------------
# normalization and activations


class BatchNormResult:
    """Forward output plus everything the caller may need afterwards."""

    __slots__ = ("out", "mean", "var", "inv_std", "xhat", "running_mean", "running_var")

    def __init__(self, out, mean, var, inv_std, xhat, running_mean, running_var):
        self.out = out
        self.mean = mean
        self.var = var
        self.inv_std = inv_std
        self.xhat = xhat
        self.running_mean = running_mean
        self.running_var = running_var


def batchnorm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> BatchNormResult:
    """Per-channel batch normalization over the (N, H, W) axes.

    Train mode normalizes with current batch statistics and returns updated
    running statistics (exponential average, unbiased variance); eval mode
    normalizes with the running statistics unchanged.
    """
    require_nchw(x, "input")
    c = x.shape[1]
    for name, vec in (("gamma", gamma), ("beta", beta),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if np.asarray(vec).shape != (c,):
            raise ShapeError(
                f"batchnorm: {name} must have shape ({c},) to match the {_AXIS_NAMES[1]}, "
                f"got {np.asarray(vec).shape}"
            )
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        new_rm = (1.0 - momentum) * running_mean + momentum * mean
        new_rv = (1.0 - momentum) * running_var + momentum * unbiased
    else:
        mean, var = running_mean, running_var
        new_rm, new_rv = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    _check_finite(out, "batchnorm")
    return BatchNormResult(out, mean, var, inv_std, xhat, new_rm, new_rv)


def batchnorm_grad(grad_out, result: BatchNormResult, gamma, train: bool):
    """Gradients w.r.t. (x, gamma, beta); train mode differentiates the batch stats."""
    grad_gamma = (grad_out * result.xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    inv = result.inv_std[None, :, None, None]
    if not train:
        return gxhat * inv, grad_gamma, grad_beta
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    mean_g = gxhat.mean(axis=(0, 2, 3))[None, :, None, None]
    mean_gx = (gxhat * result.xhat).mean(axis=(0, 2, 3))[None, :, None, None]
    grad_x = inv * (gxhat - mean_g - result.xhat * mean_gx)
    del m
    return grad_x, grad_gamma, grad_beta


def leaky_relu(x, alpha: float = 0.01) -> np.ndarray:
    x = np.asarray(x)
    return np.where(x > 0, x, np.asarray(alpha, dtype=x.dtype) * x)


def leaky_relu_grad(grad_out, x, alpha: float = 0.01) -> np.ndarray:
    one = np.asarray(1.0, dtype=grad_out.dtype)
    return grad_out * np.where(x > 0, one, np.asarray(alpha, dtype=grad_out.dtype))


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function (no overflow for large |x|)."""
    x = np.asarray(x)
    return expit(x).astype(x.dtype, copy=False)


def add(a, b) -> np.ndarray:
    """Elementwise sum of two identically shaped tensors (no broadcasting).

    The strict shape check is deliberate: it is the guard that catches
    mis-wired encoder fusion paths.
    """
    a, b = np.asarray(a), np.asarray(b)
    _require_same_shape(a, b, "add")
    return a + b


def concat_channels(parts) -> np.ndarray:
    """Concatenate tensors along the channel axis, preserving part order."""
    parts = [require_nchw(p, f"part {i}") for i, p in enumerate(parts)]
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    first = parts[0]
    for i, p in enumerate(parts[1:], start=1):
        for axis in (0, 2, 3):
            if p.shape[axis] != first.shape[axis]:
                raise ShapeError(
                    f"concat_channels: part {i} disagrees on {_AXIS_NAMES[axis]}: "
                    f"{p.shape[axis]} vs {first.shape[axis]}"
                )
    return np.concatenate(parts, axis=1)
