"""Differentiable operators used by the generator, discriminator and losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from latentfp.errors import ShapeError
from latentfp.nn.tensor import DTYPE, Tensor, record_kink


@dataclass
class ConvParams:
    """Kernel ``(out_ch, in_ch, k, k)`` and optional bias ``(out_ch,)``."""

    kernel: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        k = self.kernel.shape
        if len(k) != 4 or k[2] != k[3] or k[2] not in (1, 3):
            raise ShapeError(f"kernel must be (out, in, k, k) with k in {{1, 3}}, got {k}")
        if self.bias is not None and self.bias.shape != (k[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match kernel {k}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be positive and padding non-negative")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.kernel] if self.bias is None else [self.kernel, self.bias]


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray = None  # type: ignore[assignment]
    running_var: np.ndarray = None  # type: ignore[assignment]
    epsilon: float = 1e-5
    momentum: float = 0.1
    training: bool = True

    def __post_init__(self):
        c = self.gamma.shape[0]
        if self.beta.shape != (c,):
            raise ShapeError(f"gamma {self.gamma.shape} and beta {self.beta.shape} differ")
        if self.running_mean is None:
            self.running_mean = np.zeros(c, dtype=DTYPE)
        if self.running_var is None:
            self.running_var = np.ones(c, dtype=DTYPE)
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.gamma, self.beta]


_TINY = np.finfo(DTYPE).tiny
_ONE_BELOW = np.nextafter(1.0, 0.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _need_rank4(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 tensor, got shape {x.shape}")


# ---------------------------------------------------------------- convolution

def _im2col(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Columns laid out as (B, C, k*k, out_h, out_w)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k * k, out_h, out_w), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j] = xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    return cols


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    _need_rank4(x, "conv2d")
    w = params.kernel
    out_ch, in_ch, k, _ = w.shape
    b, c, h, wd = x.shape
    if c != in_ch:
        raise ShapeError(f"conv2d: input shape {x.shape} does not match kernel shape {w.shape}")
    s, p = params.stride, params.padding
    out_h = (h + 2 * p - k) // s + 1
    out_w = (wd + 2 * p - k) // s + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape} with padding {p}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if k == 1 and s == 1:
        cols = xp.reshape(b, c, h * wd)
    else:
        cols = _im2col(xp, k, s, out_h, out_w).reshape(b, c * k * k, out_h * out_w)
    w2 = w.data.reshape(out_ch, c * k * k)
    out = np.matmul(w2, cols)
    if params.bias is not None:
        out += params.bias.data[None, :, None]
    out = out.reshape(b, out_ch, out_h, out_w)
    bias = params.bias

    def _back(g):
        g3 = g.reshape(b, out_ch, out_h * out_w)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gb = g3.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3)
            if k == 1 and s == 1:
                gx = gcols.reshape(x.shape)
            else:
                gcols = gcols.reshape(b, c, k * k, out_h, out_w)
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + s * out_h:s, j:j + s * out_w:s] += gcols[:, :, i * k + j]
                gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out, parents, _back)


# --------------------------------------------------------------- batch norm

def batch_norm(x: Tensor, params: BatchNormParams) -> Tensor:
    _need_rank4(x, "batch_norm")
    b, c, h, wd = x.shape
    if c != params.channels:
        raise ShapeError(f"batch_norm: input shape {x.shape} has {c} channels, params have {params.channels}")
    gamma, beta = params.gamma, params.beta
    if params.training:
        n = b * h * wd
        if n < 2:
            raise ShapeError(f"batch_norm: batch statistics undefined for input shape {x.shape}")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = (centered ** 2).mean(axis=(0, 2, 3))
        m = params.momentum
        params.running_mean = (1 - m) * params.running_mean + m * mean
        params.running_var = (1 - m) * params.running_var + m * var * (n / (n - 1))
    else:
        n = b * h * wd
        mean, var = params.running_mean, params.running_var
        centered = x.data - mean[None, :, None, None]
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = centered * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    training = params.training

    def _back(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                mean_g = gxhat.mean(axis=(0, 2, 3))[None, :, None, None]
                mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
                gx = (gxhat - mean_g - xhat * mean_gx) * inv_std[None, :, None, None]
            else:
                gx = gxhat * inv_std[None, :, None, None]
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), _back)


# --------------------------------------------------------------- activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    record_kink(mask)
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    record_kink(pos)
    factor = np.where(pos, 1.0, slope)
    return Tensor._from_op(x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # keep the open interval even where float64 rounds to 0 or 1
    out = np.clip(out, _TINY, _ONE_BELOW)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


# ------------------------------------------------------------ resampling ops

def max_pool2(x: Tensor) -> Tensor:
    _need_rank4(x, "max_pool2")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {x.shape}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    record_kink(arg.astype(np.uint8))
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def _back(g):
        gw = np.zeros((b, c, h // 2, w // 2, 4), dtype=DTYPE)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        return (gw.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w),)

    return Tensor._from_op(out, (x,), _back)


def upsample2(x: Tensor) -> Tensor:
    _need_rank4(x, "upsample2")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),))


def global_avg_pool(x: Tensor) -> Tensor:
    _need_rank4(x, "global_avg_pool")
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return Tensor._from_op(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def concat_channels(tensors: list[Tensor]) -> Tensor:
    shapes = {(t.shape[0],) + t.shape[2:] for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"concat_channels: incompatible shapes {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)
    return Tensor._from_op(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=1)))


# --------------------------------------------------------------- elementwise

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor._from_op(a.data * factor, (a,), lambda g: (g * factor,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    record_kink(sign.astype(np.int8))
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * sign,))


def sum_(a: Tensor) -> Tensor:
    """Sum of all elements as a (1, 1, 1, 1) scalar."""
    shape = a.shape
    out = np.array(a.data.sum(), dtype=DTYPE).reshape(1, 1, 1, 1)
    return Tensor._from_op(out, (a,), lambda g: (np.full(shape, g.reshape(-1)[0]),))


def mean(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.size)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    return mean(abs_(sub(pred, target)))


def bce_loss(prob: Tensor, target: float, eps: float = 1e-12) -> Tensor:
    """Mean binary cross-entropy of probabilities against a constant label."""
    p = np.clip(prob.data, eps, 1.0 - eps)
    inside = (prob.data > eps) & (prob.data < 1.0 - eps)
    n = prob.size
    val = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)).sum() / n
    out = np.array(val, dtype=DTYPE).reshape(1, 1, 1, 1)

    def _back(g):
        dp = (-(target / p) + (1.0 - target) / (1.0 - p)) / n
        return (g.reshape(-1)[0] * dp * inside,)

    return Tensor._from_op(out, (prob,), _back)
