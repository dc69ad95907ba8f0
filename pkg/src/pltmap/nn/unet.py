"""1-D U-Net: 3-tap convolutions, pool/upsample by 4, skip concatenation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeError
from . import layers as L


@dataclass(frozen=True)
class Architecture:
    """Shape of the network.

    ``channels`` lists encoder widths from the finest level down; the
    decoder mirrors them.  The total downsampling is ``pool ** len(channels)``.
    """

    channels: tuple = (16, 32, 64, 64, 64)
    bottleneck: int = 128
    in_channels: int = 1
    kernel: int = 3
    pool: int = L.POOL
    dropout: float = 0.3
    noise_std: float = 0.2
    input_length: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.input_length % self.reduction:
            raise ShapeError(
                f"input length {self.input_length} not divisible by {self.reduction}"
            )

    @property
    def depth(self):
        return len(self.channels)

    @property
    def reduction(self):
        return self.pool ** len(self.channels)

    def receptive_field(self):
        """Input span (samples) seen by one output sample."""
        span = 1
        scale = 1
        for _ in self.channels:
            span += 2 * (self.kernel - 1) * scale
            span += (self.pool - 1) * scale
            scale *= self.pool
        span += 2 * (self.kernel - 1) * scale
        for _ in self.channels:
            scale //= self.pool
            span += 2 * (self.kernel - 1) * scale
        return span

    def to_json(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_json(cls, d):
        return cls(**d)


def param_specs(arch):
    """Ordered (name, shape) list; this order is the checkpoint layout."""
    k = arch.kernel
    specs = []
    c_prev = arch.in_channels
    for i, c in enumerate(arch.channels):
        specs += [(f"enc{i}.conv1.w", (c, c_prev, k)), (f"enc{i}.conv1.b", (c,)),
                  (f"enc{i}.conv2.w", (c, c, k)), (f"enc{i}.conv2.b", (c,))]
        c_prev = c
    cb = arch.bottleneck
    specs += [("mid.conv1.w", (cb, c_prev, k)), ("mid.conv1.b", (cb,)),
              ("mid.conv2.w", (cb, cb, k)), ("mid.conv2.b", (cb,))]
    c_below = cb
    for i in reversed(range(arch.depth)):
        c = arch.channels[i]
        specs += [(f"dec{i}.conv1.w", (c, c + c_below, k)), (f"dec{i}.conv1.b", (c,)),
                  (f"dec{i}.conv2.w", (c, c, k)), (f"dec{i}.conv2.b", (c,))]
        c_below = c
    specs += [("head.w", (1, c_below, 1)), ("head.b", (1,))]
    return specs


@dataclass
class UNetModel:
    arch: Architecture
    params: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, arch=None, seed=0, dtype=np.float32):
        """He-normal weights, zero biases."""
        arch = arch or Architecture()
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_specs(arch):
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = shape[1] * shape[2]
                std = np.sqrt(2.0 / fan_in) if not name.startswith("head") else np.sqrt(1.0 / fan_in)
                params[name] = (rng.standard_normal(shape) * std).astype(dtype)
        return cls(arch, params)

    def copy(self):
        return UNetModel(self.arch, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype):
        return UNetModel(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_parameters(self):
        return sum(v.size for v in self.params.values())


def _conv_relu(h, p, prefix, caches):
    z, c1 = L.conv1d_forward(h, p[prefix + ".w"], p[prefix + ".b"])
    a, m = L.relu_forward(z)
    caches[prefix] = (c1, m)
    return a


def _conv_relu_back(g, prefix, caches, grads):
    c1, m = caches[prefix]
    g = L.relu_backward(g, m)
    dx, dw, db = L.conv1d_backward(g, c1)
    grads[prefix + ".w"] = dw
    grads[prefix + ".b"] = db
    return dx


def forward(model, x, mode="infer", rng=None):
    """Run the network on ``x`` of shape (batch, 1, length) or (length,).

    Returns ``(y, cache)``; ``y`` has the input's leading shape and values
    strictly inside (0, 1).
    """
    arch = model.arch
    p = model.params
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, None, :]
    if x.ndim != 3 or x.shape[1] != arch.in_channels:
        raise ShapeError(f"input: expected (batch, {arch.in_channels}, length), got {x.shape}")
    if x.shape[2] % arch.reduction:
        raise ShapeError(f"input: length {x.shape[2]} not divisible by {arch.reduction}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng")
    x = x.astype(model.dtype, copy=False)
    caches = {}
    skips = []
    h = x
    for i in range(arch.depth):
        h = _conv_relu(h, p, f"enc{i}.conv1", caches)
        h = _conv_relu(h, p, f"enc{i}.conv2", caches)
        skips.append(h)
        h, caches[f"enc{i}.pool"] = L.maxpool_forward(h, arch.pool)
    h = _conv_relu(h, p, "mid.conv1", caches)
    h = _conv_relu(h, p, "mid.conv2", caches)
    h, caches["mid.dropout"] = L.dropout_forward(h, arch.dropout, mode, rng)
    if mode == "train" and arch.noise_std > 0:
        h = L.gaussian_noise_forward(h, arch.noise_std, mode, rng)
    for i in reversed(range(arch.depth)):
        up = L.upsample_forward(h, arch.pool)
        h = np.concatenate([skips[i], up], axis=1)
        caches[f"dec{i}.split"] = skips[i].shape[1]
        h = _conv_relu(h, p, f"dec{i}.conv1", caches)
        h = _conv_relu(h, p, f"dec{i}.conv2", caches)
    z, caches["head"] = L.conv1d_forward(h, p["head.w"], p["head.b"])
    y, caches["sigmoid"] = L.sigmoid_forward(z)
    if squeeze:
        y = y[0, 0]
    return y, caches


def backward(model, dy, caches):
    """Parameter gradients (and input gradient under key ``"input"``)."""
    arch = model.arch
    grads = {}
    if dy.ndim == 1:
        dy = dy[None, None, :]
    g = L.sigmoid_backward(dy, caches["sigmoid"])
    g, grads["head.w"], grads["head.b"] = L.conv1d_backward(g, caches["head"])
    skip_grads = [None] * arch.depth
    for i in range(arch.depth):
        g = _conv_relu_back(g, f"dec{i}.conv2", caches, grads)
        g = _conv_relu_back(g, f"dec{i}.conv1", caches, grads)
        split = caches[f"dec{i}.split"]
        skip_grads[i] = g[:, :split]
        g = L.upsample_backward(g[:, split:], arch.pool)
    g = L.dropout_backward(g, caches["mid.dropout"])
    g = _conv_relu_back(g, "mid.conv2", caches, grads)
    g = _conv_relu_back(g, "mid.conv1", caches, grads)
    for i in reversed(range(arch.depth)):
        g = L.maxpool_backward(g, caches[f"enc{i}.pool"], arch.pool)
        g = g + skip_grads[i]
        g = _conv_relu_back(g, f"enc{i}.conv2", caches, grads)
        g = _conv_relu_back(g, f"enc{i}.conv1", caches, grads)
    grads["input"] = g
    return grads


def predict(model, x, batch_size=16):
    """Inference-mode outputs for a stack of windows, shape (n, length)."""
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=model.dtype)
    for i in range(0, len(x), batch_size):
        y, _ = forward(model, x[i:i + batch_size, None, :], "infer")
        out[i:i + batch_size] = y[:, 0]
    return out
