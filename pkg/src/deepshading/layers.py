"""Layer primitives with explicit forward and backward passes.

All functions take ``(C, H, W)`` tensors or ``(N, C, H, W)`` batches and
preserve the input dtype, so the same code runs in float32 for training
and float64 for gradient checks.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_LEAKY_SLOPE = 0.01


@dataclass
class ConvParams:
    """Weights ``(out, in // groups, k, k)`` and bias ``(out,)`` of a grouped convolution."""

    weights: np.ndarray
    bias: np.ndarray
    groups: int = 1

    def __post_init__(self):
        o, _, kh, kw = self.weights.shape
        if kh != kw or kh % 2 == 0:
            raise ValueError(f"kernel must be square with odd size, got {kh}x{kw}")
        if self.bias.shape != (o,):
            raise ValueError(f"bias shape {self.bias.shape} does not match {o} outputs")
        if self.groups < 1 or o % self.groups:
            raise ValueError(f"{o} output channels not divisible into {self.groups} groups")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[-1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a (C, H, W) or (N, C, H, W) array, got shape {x.shape}")


def _im2col(x, k, groups):
    """``(N, C, H, W)`` -> ``(N, groups, C/groups * k * k, H * W)`` with zero padding."""
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, groups, c // groups, h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(n, groups, (c // groups) * k * k, h * w)


def _col2im(cols, shape, k):
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(shape)
    p = k // 2
    cols = cols.reshape(n, c, k, k, h, w)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            xp[:, :, dy:dy + h, dx:dx + w] += cols[:, :, dy, dx]
    return xp[:, :, p:p + h, p:p + w]


def _check_conv(x, p: ConvParams):
    if x.shape[1] != p.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels, convolution expects "
            f"{p.in_channels} ({p.groups} groups of {p.weights.shape[1]})")


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """'Same' grouped convolution (cross-correlation) with zero padding."""
    xb, single = _batched(x)
    _check_conv(xb, p)
    n, _, h, w = xb.shape
    g = p.groups
    wg = p.weights.reshape(g, p.out_channels // g, -1).astype(xb.dtype, copy=False)
    out = np.matmul(wg, _im2col(xb, p.kernel_size, g))
    out = out.reshape(n, p.out_channels, h, w)
    out += p.bias.astype(xb.dtype, copy=False)[:, None, None]
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Return ``(grad_in, grad_weights, grad_bias)``; weight gradients are summed over the batch."""
    xb, single = _batched(x)
    gb, _ = _batched(grad_out)
    _check_conv(xb, p)
    n, _, h, w = xb.shape
    if gb.shape != (n, p.out_channels, h, w):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match forward output")
    g, k = p.groups, p.kernel_size
    go = gb.reshape(n, g, p.out_channels // g, h * w)
    cols = _im2col(xb, k, g)
    gw = np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    grad_weights = gw.reshape(p.weights.shape)
    grad_bias = go.sum(axis=(0, 3)).reshape(-1)
    wg = p.weights.reshape(g, p.out_channels // g, -1).astype(xb.dtype, copy=False)
    gcols = np.matmul(wg.transpose(0, 2, 1), go)
    grad_in = _col2im(gcols, xb.shape, k)
    return (grad_in[0] if single else grad_in), grad_weights, grad_bias


def leaky_relu(x: np.ndarray, slope: float = DEFAULT_LEAKY_SLOPE) -> np.ndarray:
    if slope < 0:
        raise ValueError("leaky slope must be non-negative")
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray,
                        slope: float = DEFAULT_LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, grad_out, grad_out * grad_out.dtype.type(slope))


def mean_pool_2x2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"2x2 mean pooling needs even dimensions, got {h}x{w}")
    blocks = x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2)
    return blocks.mean(axis=(-3, -1), dtype=x.dtype)


def mean_pool_2x2_backward(grad_out: np.ndarray) -> np.ndarray:
    g = grad_out * grad_out.dtype.type(0.25)
    return np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)


# Half-pixel aligned, edge-clamped: output 2m samples source m - 1/4,
# output 2m + 1 samples source m + 1/4.

def _up_axis(x, axis):
    x = np.moveaxis(x, axis, -1)
    prev = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    nxt = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), dtype=x.dtype)
    out[..., 0::2] = 0.75 * x + 0.25 * prev
    out[..., 1::2] = 0.75 * x + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _up_axis_transpose(g, axis):
    g = np.moveaxis(g, axis, -1)
    even, odd = g[..., 0::2], g[..., 1::2]
    out = 0.75 * (even + odd)
    out[..., :-1] += 0.25 * even[..., 1:]
    out[..., 0] += 0.25 * even[..., 0]
    out[..., 1:] += 0.25 * odd[..., :-1]
    out[..., -1] += 0.25 * odd[..., -1]
    return np.moveaxis(out, -1, axis)


def bilinear_up_2x(x: np.ndarray) -> np.ndarray:
    return _up_axis(_up_axis(x, -1), -2)


def bilinear_up_2x_backward(grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape[-1] % 2 or grad_out.shape[-2] % 2:
        raise ValueError("upsampling gradient must have even spatial size")
    return _up_axis_transpose(_up_axis_transpose(grad_out, -2), -1)
