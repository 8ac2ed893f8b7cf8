"""
ShadowMamba Desk v1.0 · Tensor Core
Dense numpy-backed tensors, a per-thread computation tape and the handful of
differentiable ops the network is built from.
"""

import threading
from functools import lru_cache

import numpy as np
from scipy.special import expit

from errors import ShapeError, UsageError, ConfigError

_local = threading.local()


# ===================================================================
# TENSOR
# ===================================================================

class Tensor:
    """Dense array plus optional gradient. Shape lives on the numpy array."""

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def parameter(data, dtype=np.float64, name=None):
    """Trainable leaf tensor."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a)
    return a, b


# ===================================================================
# COMPUTATION TAPE
# ===================================================================

class TapeEntry:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class ComputationTape:
    """
    Ordered record of executed ops. Entries are appended as ops run, so every
    entry's inputs were produced earlier (or are leaves). One tape belongs to
    one thread; activate it with `with ComputationTape() as tape:`.
    """

    def __init__(self):
        self.entries = []

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def record(self, op, inputs, output, backward_fn):
        self.entries.append(TapeEntry(op, inputs, output, backward_fn))

    def backward(self, loss):
        """Reverse sweep; every entry is visited exactly once."""
        produced = {id(e.output) for e in self.entries}
        grads = {id(loss): np.ones_like(loss.data)}
        visited = 0

        for entry in reversed(self.entries):
            visited += 1
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            in_grads = entry.backward_fn(g)
            for inp, gi in zip(entry.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeError(
                        f"[TAPE] {entry.op}: gradient shape {gi.shape} != input shape {inp.shape}"
                    )
                if id(inp) in produced:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = gi if prev is None else prev + gi
                else:
                    inp.grad = np.array(gi, copy=True) if inp.grad is None else inp.grad + gi
        return visited


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording on this thread."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


def _track(op, inputs, out_data, backward_fn):
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out._tape = tape
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss):
    """Populate .grad on every tracked leaf that loss depends on."""
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise UsageError("loss was not produced on a computation tape")
    return loss._tape.backward(loss)


# ===================================================================
# ELEMENTWISE ARITHMETIC
# ===================================================================

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _track("add", (a, b), a.data + b.data, bw)


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _track("sub", (a, b), a.data - b.data, bw)


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _track("mul", (a, b), a.data * b.data, bw)


def hadamard(a, b):
    """Elementwise product of equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return mul(a, b)


def scale(x, c):
    c = float(c)

    def bw(g):
        return (g * c,)

    return _track("scale", (x,), x.data * c, bw)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _track("matmul", (a, b), a.data @ b.data, bw)


# ===================================================================
# POINTWISE NONLINEARITIES
# ===================================================================

def _silu(v):
    s = expit(v)
    return v * s, lambda y: s * (1.0 + v * (1.0 - s))


def _softplus(v):
    return np.logaddexp(0.0, v), lambda y: expit(v)


def _exp(v):
    return np.exp(v), lambda y: y


def _sqrt(v):
    return np.sqrt(v), lambda y: 0.5 / y


def _sigmoid(v):
    return expit(v), lambda y: y * (1.0 - y)


POINTWISE = {
    "silu": _silu,
    "softplus": _softplus,
    "exp": _exp,
    "sqrt": _sqrt,
    "sigmoid": _sigmoid,
}


def pointwise(x, f):
    """Apply a named elementwise function (silu, softplus, exp, sqrt, sigmoid)."""
    if f not in POINTWISE:
        raise ConfigError(f"unknown pointwise function {f!r}; expected one of {sorted(POINTWISE)}")
    y, deriv = POINTWISE[f](x.data)
    y = y.astype(x.dtype, copy=False)

    def bw(g):
        return (g * deriv(y),)

    return _track(f, (x,), y, bw)


def silu(x):
    return pointwise(x, "silu")


def softplus(x):
    return pointwise(x, "softplus")


def exp(x):
    return pointwise(x, "exp")


def sqrt(x):
    return pointwise(x, "sqrt")


# ===================================================================
# REDUCTIONS AND SHAPE OPS
# ===================================================================

def sum(x, axis=None, keepdims=False):  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return _track("sum", (x,), out, bw)


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _track("reshape", (x,), out, bw)


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _track("transpose", (x,), np.transpose(x.data, axes), bw)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}")
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _track("concat", tuple(tensors), out, bw)


def getitem(x, key):
    out = x.data[key]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[key] += g
        return (gx,)

    return _track("getitem", (x,), np.array(out, copy=True), bw)


def gather(x, index):
    """
    out[..., *i] = x[..., index[i]] along the last axis; index -1 yields 0.
    Covers padding, cropping, im2col, pixel shuffle and scan apply/unapply.
    Backward scatters (adds) the gradient back along the same index.
    """
    index = np.asarray(index, dtype=np.int64)
    S = x.shape[-1]
    if index.size and (index.max() >= S or index.min() < -1):
        raise ShapeError(f"gather: index range [{index.min()}, {index.max()}] outside last axis of size {S}")
    fill = index < 0
    safe = np.where(fill, 0, index)
    out = np.take(x.data, safe, axis=-1)
    has_fill = bool(fill.any())
    if has_fill:
        out[..., fill] = 0.0

    def bw(g):
        lead = x.shape[:-1]
        rows = int(np.prod(lead)) if lead else 1
        g2 = g.reshape(rows, -1)
        flat = safe.ravel()
        if has_fill:
            keep = ~fill.ravel()
            flat, g2 = flat[keep], g2[:, keep]
        gx = np.zeros((rows, S), dtype=x.dtype)
        if np.unique(flat).size == flat.size:
            gx[:, flat] = g2
        else:
            np.add.at(gx, (slice(None), flat), g2)
        return (gx.reshape(x.shape),)

    return _track("gather", (x,), out, bw)


# ===================================================================
# NORMALISATION
# ===================================================================

def layer_norm(x, gamma, beta, eps=1e-5, axis=-1):
    """Normalise over `axis` (the channel axis) at every position, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    axis = axis % x.ndim
    C = x.shape[axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm: gamma/beta need shape ({C},), got {gamma.shape}/{beta.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = C
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)

    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gam + bet
    other = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gxhat = g * gam
        gx = inv * (
            gxhat
            - gxhat.mean(axis=axis, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    return _track("layer_norm", (x, gamma, beta), out, bw)


# ===================================================================
# CONVOLUTIONS
# ===================================================================

def conv2d_depthwise(x, k):
    """
    Per-channel 'same' convolution (cross-correlation, zero padding).

    Args:
        x: Tensor [C, H, W]
        k: Tensor [C, kh, kw], kh and kw odd
    """
    C, H, W = x.shape
    if k.ndim != 3 or k.shape[0] != C:
        raise ShapeError(f"conv2d_depthwise: kernel {k.shape} does not match input {x.shape}")
    kh, kw = k.shape[1], k.shape[2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d_depthwise needs odd kernel sizes, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros_like(x.data)
    for dy in range(kh):
        for dx in range(kw):
            out += k.data[:, dy, dx, None, None] * xp[:, dy:dy + H, dx:dx + W]

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(k.data)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, dy:dy + H, dx:dx + W] += k.data[:, dy, dx, None, None] * g
                gk[:, dy, dx] = (g * xp[:, dy:dy + H, dx:dx + W]).sum(axis=(1, 2))
        return gxp[:, ph:ph + H, pw:pw + W], gk

    return _track("conv2d_depthwise", (x, k), out, bw)


@lru_cache(maxsize=256)
def conv_index(H, W, k, stride, pad):
    """
    im2col index over a flattened H*W map: shape (k*k, Ho*Wo), -1 where the
    footprint falls into zero padding.
    """
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    oy = np.arange(Ho) * stride - pad
    ox = np.arange(Wo) * stride - pad
    idx = np.empty((k * k, Ho * Wo), dtype=np.int64)
    for dy in range(k):
        for dx in range(k):
            yy = (oy + dy)[:, None]
            xx = (ox + dx)[None, :]
            valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            idx[dy * k + dx] = np.where(valid, yy * W + xx, -1).ravel()
    idx.setflags(write=False)
    return idx, Ho, Wo


def conv2d(x, w, b=None, stride=1, padding=None):
    """
    Dense 2D convolution composed from gather (im2col) and matmul.

    Args:
        x: Tensor [Cin, H, W]
        w: Tensor [Cout, Cin, k, k], k odd
        b: optional Tensor [Cout]
        stride: int
        padding: int, default k // 2
    """
    Cin, H, W = x.shape
    Cout, wc, k, k2 = w.shape
    if wc != Cin or k != k2:
        raise ShapeError(f"conv2d: weight {w.shape} does not match input {x.shape}")
    if k % 2 == 0:
        raise ConfigError(f"conv2d needs an odd kernel, got {k}")
    pad = k // 2 if padding is None else padding
    idx, Ho, Wo = conv_index(H, W, k, stride, pad)

    cols = gather(reshape(x, (Cin, H * W)), idx)               # Cin, k*k, P
    cols = reshape(cols, (Cin * k * k, Ho * Wo))
    out = matmul(reshape(w, (Cout, Cin * k * k)), cols)
    if b is not None:
        out = add(out, reshape(b, (Cout, 1)))
    return reshape(out, (Cout, Ho, Wo))
