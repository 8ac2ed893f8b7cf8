"""
ShadowMamba Desk v1.0 · Layers
Parameter containers over tensor_core ops. Feature maps are C x H x W;
a "Linear" on a map acts per pixel (a 1x1 convolution).
"""

import numpy as np

from errors import DataError, ShapeError
from tensor_core import (
    Tensor, parameter, matmul, add, reshape, gather, layer_norm, conv2d, conv2d_depthwise,
)


class Module:
    """Named-parameter tree built from instance attributes in definition order."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise DataError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DataError(f"parameter {name}: stored shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr.astype(p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ===================================================================
# BUILDING BLOCKS
# ===================================================================

class Linear(Module):
    """y = W x + b over the leading (channel) axis of a C x L or C x H x W tensor."""

    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float64):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = parameter(uniform(rng, (out_features, in_features), bound, dtype))
        self.bias = parameter(uniform(rng, (out_features,), bound, dtype)) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x):
        if x.shape[0] != self.in_features:
            raise ShapeError(f"Linear expects {self.in_features} channels, got {x.shape}")
        spatial = x.shape[1:]
        flat = reshape(x, (self.in_features, int(np.prod(spatial))))
        y = matmul(self.weight, flat)
        if self.bias is not None:
            y = add(y, reshape(self.bias, (self.out_features, 1)))
        return reshape(y, (self.out_features,) + tuple(spatial))


class DepthwiseConv(Module):
    """Per-channel k x k 'same' convolution plus bias."""

    def __init__(self, channels, rng, kernel_size=3, dtype=np.float64):
        bound = 1.0 / kernel_size
        self.weight = parameter(uniform(rng, (channels, kernel_size, kernel_size), bound, dtype))
        self.bias = parameter(uniform(rng, (channels,), bound, dtype))
        self.channels = channels

    def forward(self, x):
        y = conv2d_depthwise(x, self.weight)
        return add(y, reshape(self.bias, (self.channels, 1, 1)))


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, rng, kernel_size=3, stride=1, dtype=np.float64):
        bound = 1.0 / np.sqrt(in_channels * kernel_size * kernel_size)
        self.weight = parameter(
            uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), bound, dtype)
        )
        self.bias = parameter(uniform(rng, (out_channels,), bound, dtype))
        self.stride = stride

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride)


def pixel_shuffle_index(H, W):
    """
    Index into a (4 * H * W) row laid out as [k][p] (k = dy*2 + dx, p = y*W + x)
    producing the 2H x 2W interleaved map.
    """
    Y, X = np.mgrid[0:2 * H, 0:2 * W]
    k = (Y % 2) * 2 + X % 2
    p = (Y // 2) * W + X // 2
    return (k * H * W + p).ravel()


class ConvTranspose2x2(Module):
    """Stride-2, kernel-2 transposed convolution: every input pixel emits a 2x2 patch."""

    def __init__(self, in_channels, out_channels, rng, dtype=np.float64):
        bound = 1.0 / np.sqrt(in_channels * 4)
        # rows ordered (cout, dy, dx)
        self.weight = parameter(uniform(rng, (out_channels * 4, in_channels), bound, dtype))
        self.bias = parameter(uniform(rng, (out_channels,), bound, dtype))
        self.out_channels = out_channels

    def forward(self, x):
        Cin, H, W = x.shape
        Cout = self.out_channels
        y = matmul(self.weight, reshape(x, (Cin, H * W)))          # 4*Cout, HW
        y = gather(reshape(y, (Cout, 4 * H * W)), pixel_shuffle_index(H, W))
        y = add(y, reshape(self.bias, (Cout, 1)))
        return reshape(y, (Cout, 2 * H, 2 * W))


class LayerNorm(Module):
    """Normalise over channels at every pixel."""

    def __init__(self, channels, eps=1e-5, dtype=np.float64):
        self.gamma = parameter(np.ones(channels, dtype=dtype))
        self.beta = parameter(np.zeros(channels, dtype=dtype))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta, eps=self.eps, axis=0)


def zero_(*tensors):
    """Zero parameters in place (None entries are skipped)."""
    for t in tensors:
        if t is not None:
            t.data[...] = 0.0
