"""Reverse-mode automatic differentiation over dense float64 arrays.

Primitives run eagerly on numpy and, when an active :class:`Tape` exists,
record a backward closure on it.  Evaluation outside a tape (decoding,
feature extraction) is plain numpy with no bookkeeping.
"""

from __future__ import annotations

import numpy as np

# Log-domain surrogate for -inf; keeps all arithmetic total.
LOG_ZERO = -1.0e30

_TAPES: list["Tape"] = []


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: shape mismatch " + " vs ".join(str(s) for s in self.shapes))


class Tensor:
    """Dense float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    def grad_array(self):
        """Gradient as an array; zeros when this tensor was never reached."""
        if self.grad is None:
            return np.zeros_like(self.values)
        return self.grad

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # small operator sugar; everything funnels into the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Creation order is topological by construction, so the backward sweep
    is a single reverse pass that visits every entry at most once.
    """

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, out, backward_fn):
        self._entries.append((out, backward_fn))

    def backward(self, loss):
        if loss.values.size != 1:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.values.shape}")
        loss.grad = np.ones_like(loss.values)
        for out, fn in reversed(self._entries):
            if out.grad is not None:
                fn(out.grad)


def backward(loss):
    """Backpropagate from a scalar loss through the innermost active tape."""
    if not _TAPES:
        raise RuntimeError("backward called with no active Tape")
    _TAPES[-1].backward(loss)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _record(out, inputs, backward_fn):
    out.requires_grad = any(t.requires_grad for t in inputs)
    if _TAPES and out.requires_grad:
        _TAPES[-1].record(out, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def constant(values):
    return Tensor(values, requires_grad=False)


def parameter(values):
    return Tensor(values, requires_grad=True)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.values + b.values)
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None

    def bw(g):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(g, b.values.shape))

    return _record(out, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.values * b.values)
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None

    def bw(g):
        _accum(a, _unbroadcast(g * b.values, a.values.shape))
        _accum(b, _unbroadcast(g * a.values, b.values.shape))

    return _record(out, (a, b), bw)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    out = Tensor(a.values @ b.values)

    def bw(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    return _record(out, (a, b), bw)


def tanh(a):
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.values))

    def bw(g):
        _accum(a, g * (1.0 - out.values ** 2))

    return _record(out, (a,), bw)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.values
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def bw(g):
        _accum(a, g * out.values * (1.0 - out.values))

    return _record(out, (a,), bw)


def exp(a):
    a = _as_tensor(a)
    out = Tensor(np.exp(a.values))

    def bw(g):
        _accum(a, g * out.values)

    return _record(out, (a,), bw)


def log(a):
    a = _as_tensor(a)
    out = Tensor(np.log(a.values))

    def bw(g):
        _accum(a, g / a.values)

    return _record(out, (a,), bw)


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis`; subtracts the running max."""
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    return _record(out, (a,), bw)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    m = a.values.max(axis=axis, keepdims=True)
    shifted = a.values - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)

    def bw(g):
        soft = np.exp(out.values)
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _record(out, (a,), bw)


def logsumexp(a, axis=-1, keepdims=False):
    a = _as_tensor(a)
    m = a.values.max(axis=axis, keepdims=True)
    s = np.exp(a.values - m).sum(axis=axis, keepdims=True)
    res = np.log(s) + m
    out = Tensor(res if keepdims else np.squeeze(res, axis=axis))

    def bw(g):
        soft = np.exp(a.values - m) / s
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, soft * gg)

    return _record(out, (a,), bw)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of empty sequence")
    try:
        out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    except ValueError:
        raise ShapeMismatchError("concat", *(t.shape for t in tensors)) from None
    sizes = [t.values.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + size)
            _accum(t, g[tuple(idx)])
            offset += size

    return _record(out, tuple(tensors), bw)


def narrow(a, axis, start, length):
    """Contiguous slice of `length` extents along `axis` starting at `start`."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.values.shape[axis]:
        raise ShapeMismatchError(f"narrow(axis={axis},start={start},len={length})", a.shape)
    idx = [slice(None)] * a.values.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.values[idx])

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[idx] = g
            _accum(a, full)

    return _record(out, (a,), bw)


def flip(a, axis=0):
    a = _as_tensor(a)
    out = Tensor(np.flip(a.values, axis=axis).copy())

    def bw(g):
        _accum(a, np.flip(g, axis=axis))

    return _record(out, (a,), bw)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.values.reshape(shape))

    def bw(g):
        _accum(a, g.reshape(a.values.shape))

    return _record(out, (a,), bw)


def gather_rows(a, indices):
    """Rows of a 2-D tensor selected by integer index (embedding lookup)."""
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeMismatchError("gather_rows", a.shape)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = Tensor(a.values[idx])

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _record(out, (a,), bw)


def conv1d(x, w, b=None, stride=1, padding=0):
    """1-D convolution along axis 0.

    x: (T, C_in); w: (k, C_in, C_out); returns ((T+2p-k)//stride+1, C_out).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.values.ndim != 2 or w.values.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError("conv1d", x.shape, w.shape)
    k = w.shape[0]
    xp = np.pad(x.values, ((padding, padding), (0, 0))) if padding else x.values
    t_out = (xp.shape[0] - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatchError(f"conv1d(k={k},stride={stride})", x.shape, w.shape)
    y = np.zeros((t_out, w.shape[2]))
    for j in range(k):
        y += xp[j : j + stride * t_out : stride] @ w.values[j]
    if b is not None:
        b = _as_tensor(b)
        y = y + b.values
    out = Tensor(y)

    def bw(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[j : j + stride * t_out : stride] += g @ w.values[j].T
            gx = gxp[padding : gxp.shape[0] - padding] if padding else gxp
            _accum(x, gx)
        if w.requires_grad:
            gw = np.zeros_like(w.values)
            for j in range(k):
                gw[j] = xp[j : j + stride * t_out : stride].T @ g
            _accum(w, gw)
        if b is not None:
            _accum(b, g.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, bw)


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.values.shape).copy())

    return _record(out, (a,), bw)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.values.mean(axis=axis, keepdims=keepdims))
    n = a.values.size if axis is None else a.values.shape[axis]

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.values.shape) / n)

    return _record(out, (a,), bw)


def reduce_max(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor(a.values.max(axis=axis, keepdims=keepdims))

    def bw(g):
        m = a.values.max(axis=axis, keepdims=True)
        mask = (a.values == m).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)  # ties split evenly
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(a, mask * gg)

    return _record(out, (a,), bw)


def uniform_init(rng, shape, fan_in):
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)
