"""Forward/backward pairs for the operators the 1-D U-Net uses.

Every tensor is laid out ``(batch, channels, length)``.  Forward functions
return ``(out, cache)``; backward functions take the upstream gradient and
that cache.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError

POOL = 4
# logits are clamped so the logistic output stays strictly inside (0, 1)
# even in float32
LOGIT_CLAMP = 15.0


def _im2col(x, width):
    pad = width // 2
    n, c, length = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = np.empty((n, c, width, length), dtype=x.dtype)
    for k in range(width):
        cols[:, :, k, :] = xp[:, :, k:k + length]
    return cols.reshape(n, c * width, length)


def conv1d_forward(x, w, b):
    """Same-padded cross-correlation with an odd kernel width."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects (batch, channels, length), got {x.shape}")
    c_out, c_in, width = w.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, kernel expects {c_in}")
    if width % 2 != 1:
        raise ShapeError("conv1d kernel width must be odd")
    cols = _im2col(x, width)
    out = np.matmul(w.reshape(c_out, c_in * width), cols)
    out += b[None, :, None]
    return out, (cols, w, x.shape)


def conv1d_backward(dout, cache):
    cols, w, x_shape = cache
    c_out, c_in, width = w.shape
    n, _, length = x_shape
    dw = np.tensordot(dout, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = dout.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(c_out, c_in * width).T, dout).reshape(n, c_in, width, length)
    pad = width // 2
    dxp = np.zeros((n, c_in, length + 2 * pad), dtype=dout.dtype)
    for k in range(width):
        dxp[:, :, k:k + length] += dcols[:, :, k, :]
    return dxp[:, :, pad:pad + length], dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, size=POOL):
    n, c, length = x.shape
    if length % size:
        raise ShapeError(f"maxpool: length {length} not divisible by {size}")
    windows = x.reshape(n, c, length // size, size)
    idx = windows.argmax(axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return out, (idx, x.shape)


def maxpool_backward(dout, cache, size=POOL):
    idx, shape = cache
    n, c, length = shape
    dx = np.zeros((n, c, length // size, size), dtype=dout.dtype)
    np.put_along_axis(dx, idx[..., None], dout[..., None], axis=3)
    return dx.reshape(shape)


def upsample_forward(x, size=POOL):
    return np.repeat(x, size, axis=2)


def upsample_backward(dout, size=POOL):
    n, c, length = dout.shape
    return dout.reshape(n, c, length // size, size).sum(axis=3)


def _check_rate(rate):
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")


def dropout_forward(x, rate, mode, rng):
    """Inverted dropout; identity outside training."""
    _check_rate(rate)
    if mode != "train" or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep * scale
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def gaussian_noise_forward(x, sigma, mode, rng):
    if mode != "train" or sigma == 0:
        return x
    return x + rng.normal(0.0, sigma, x.shape).astype(x.dtype)


def sigmoid_forward(z):
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    y = np.empty_like(zc)
    pos = zc >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-zc[pos]))
    ez = np.exp(zc[~pos])
    y[~pos] = ez / (1.0 + ez)
    return y, (y, np.abs(z) <= LOGIT_CLAMP)


def sigmoid_backward(dout, cache):
    y, inside = cache
    return dout * y * (1.0 - y) * inside


def mae_mse_loss(pred, target, w_mae=1.0, w_mse=1.0):
    """Weighted sum of mean absolute and mean squared error, with gradient.

    The absolute-value subgradient at zero is taken as 0.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    value = w_mae * np.mean(np.abs(diff)) + w_mse * np.mean(diff * diff)
    grad = (w_mae * np.sign(diff) + (2.0 * w_mse) * diff) / n
    return float(value), grad.astype(pred.dtype, copy=False)
