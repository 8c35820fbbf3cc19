"""
Dense float tensors with reverse-mode automatic differentiation.

Every public op validates shapes on entry, computes its result with numpy and,
when gradients are enabled and an input requires them, records a backward rule.
Records carry a global sequence number; `backward` replays the records that
reach the loss in exact reverse recording order.

Leading batch dimensions broadcast the numpy way, so the same ops serve the
single-sequence (T x d) formulas and batched (B x T x d) training.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
import weakref

import numpy as np

from .errors import ContractError, DegenerateRowError, DimensionError

DEFAULT_DTYPE = np.float64

_seq = itertools.count()
_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation, decoding)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class _Record:
    __slots__ = ("seq", "inputs", "_output", "backward")

    def __init__(self, inputs, output, backward):
        self.seq = next(_seq)
        self.inputs = inputs
        self._output = weakref.ref(output)  # a strong ref would form a cycle
        self.backward = backward

    @property
    def output(self):
        return self._output()


class Tensor:
    """A numpy array plus an optional gradient buffer and graph link."""

    __slots__ = ("data", "requires_grad", "grad", "_record", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._record = None
        self.name = name

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, inputs, backward_fn):
    """Wrap `data` and record `backward_fn` if any input needs gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._record = None
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        out._record = _Record(inputs, out, backward_fn)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} are not compatible") from None


class GradTape:
    """Ordered view of the records that produced a tensor.

    Built on demand from the output: the records reachable from it, sorted by
    recording order. `backward` walks `reversed(tape.records)`.
    """

    def __init__(self, records):
        self.records = records

    @classmethod
    def from_output(cls, out):
        found = {}
        stack = [out._record] if out._record is not None else []
        while stack:
            rec = stack.pop()
            if rec.seq in found:
                continue
            found[rec.seq] = rec
            for t in rec.inputs:
                if t._record is not None and t._record.seq not in found:
                    stack.append(t._record)
        return cls([found[k] for k in sorted(found)])

    def __len__(self):
        return len(self.records)


def backward(loss):
    """Populate `.grad` of every tensor requiring gradients that reaches `loss`.

    Gradients accumulate: a leaf that already holds a gradient gets the new
    contribution added to it.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires gradients")
    tape = GradTape.from_output(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        out = rec.output
        g = pending.pop(id(out), None)
        if g is None:
            continue
        if out is not loss:
            out.grad = g
        grads = rec.backward(g)
        for t, gi in zip(rec.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t._record is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                pending[key] = gi if key not in pending else pending[key] + gi
    loss.grad = np.ones_like(loss.data)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), bw)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    # subgradient at exactly 0 is 0
    return _make(np.where(pos, a.data, 0.0).astype(a.dtype, copy=False), (a,), lambda g: (g * pos,))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


# ------------------------------------------------------------------- shaping


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None):
    """Permute axes; default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 dims, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take(a, index, axis=0):
    """Gather entries of `a` along `axis` with an integer index array."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < -a.shape[axis] or index.max() >= a.shape[axis]):
        raise IndexError(f"take: index out of range for axis of length {a.shape[axis]}")
    src = a.shape

    def bw(g):
        out = np.zeros(src, dtype=g.dtype)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        np.add.at(moved, index, gm)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    cuts = np.cumsum(sizes)[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -------------------------------------------------------------------- linear


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.ndim > 2 or b.ndim > 2:
        _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # shared weight: fold the leading axes into rows
        a2 = ad.reshape(-1, ad.shape[-1])

        def bw_shared(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make((a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],)), (a, b), bw_shared)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


# --------------------------------------------------------------- attention


def masked_softmax(logits, mask):
    """Row-normalize mask-weighted exponentials over the last axis.

    out[i, j] = M[i, j] exp(x[i, j] - m_i) / sum_k M[i, k] exp(x[i, k] - m_i)

    where m_i is the largest logit among entries with positive mask. The shift
    cancels in the ratio. Gradients flow to both the logits and the mask.
    """
    logits, mask = as_tensor(logits), as_tensor(mask)
    x, m = logits.data, mask.data.astype(logits.dtype, copy=False)
    full = _broadcast_shape(x.shape, m.shape, "masked_softmax")
    if full != x.shape:
        raise DimensionError(f"masked_softmax: mask {m.shape} does not broadcast onto logits {x.shape}")
    mb = np.broadcast_to(m, full)
    if np.any(m < 0):
        raise ValueError("masked_softmax: mask entries must be non-negative")
    rows = mb.sum(axis=-1)
    bad = np.argwhere(rows < 1e-9)
    if bad.size:
        raise DegenerateRowError(tuple(int(i) for i in bad[0]) if bad.shape[1] > 1 else int(bad[0, 0]))
    live = mb > 0
    shift = np.where(live, x, -np.inf).max(axis=-1, keepdims=True)
    e = np.exp(np.where(live, x - shift, -np.inf))
    z = (mb * e).sum(axis=-1, keepdims=True)
    ez = e / z
    p = mb * ez

    def bw(g):
        inner = g - (g * p).sum(axis=-1, keepdims=True)
        gx = p * inner if logits.requires_grad else None
        gm = _unbroadcast(ez * inner, m.shape) if mask.requires_grad else None
        return gx, gm

    return _make(p, (logits, mask), bw)


def softmax(logits):
    logits = as_tensor(logits)
    return masked_softmax(logits, np.ones((1,) * logits.ndim, dtype=logits.dtype))


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize each row of the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({d},)")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gg = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gb = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(xhat * gd + bias.data, (x, gain, bias), bw)


def embedding(table, ids):
    """Rows of `table` selected by integer `ids` (any shape)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    return take(table, ids, axis=0)


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate is 0 or rng is None."""
    x = as_tensor(x)
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy_label_smoothed(logits, targets, smoothing=0.0, weights=None):
    """Mean label-smoothed cross entropy over rows of a (N x V) logit matrix.

    The target distribution puts 1 - smoothing on the gold class and
    smoothing / (V - 1) on every other class. `weights` (0/1 per row) drops
    rows such as padding from both the sum and the mean.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be (N, V), got {logits.shape}")
    if not 0 <= smoothing < 1:
        raise ValueError("smoothing must lie in [0, 1)")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.intp).reshape(-1)
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy: {targets.shape[0]} targets for {n} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target out of range [0, {v})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(n)
    count = w.sum()
    if count <= 0:
        raise ContractError("cross_entropy: no rows carry weight")
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    q = np.full((n, v), smoothing / (v - 1) if v > 1 else 0.0, dtype=x.dtype)
    q[np.arange(n), targets] = 1.0 - smoothing if v > 1 else 1.0
    per_row = -(q * logp).sum(axis=-1)
    loss = np.asarray((per_row * w).sum() / count, dtype=x.dtype)

    def bw(g):
        p = np.exp(logp)
        return ((p - q) * (w / count)[:, None] * g,)

    return _make(loss, (logits,), bw)
