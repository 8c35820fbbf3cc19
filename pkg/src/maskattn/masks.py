"""
Mask providers for mask attention.

A mask kind describes how to build a T x T matrix with entries in [0, 1] that
gates the exponentiated attention scores before row normalization:

* `AllOnes`  - every token sees every token (plain self-attention)
* `Identity` - each token sees only itself (position-wise feed-forward)
* `Banded`   - tokens within distance b; `b=None` picks floor(sqrt(T) / 2)
* `Causal`   - key position s <= query position t
* `Dynamic`  - sigmoid(h_t . W + P[clip(t - s)] + U[head]), learned
* `Composite` - element-wise product of several kinds
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

DEFAULT_MAX_REL = 32


class MaskKind:
    """Base class for mask descriptions."""

    needs_hidden = False


@dataclass(frozen=True)
class AllOnes(MaskKind):
    pass


@dataclass(frozen=True)
class Identity(MaskKind):
    pass


@dataclass(frozen=True)
class Causal(MaskKind):
    pass


@dataclass(frozen=True)
class Banded(MaskKind):
    """Static band |t - s| <= b. With `b=None` the half-width follows the
    sequence length: b = floor(sqrt(L) / 2)."""

    b: int | None = None

    def __post_init__(self):
        if self.b is not None and self.b < 0:
            raise ConfigError(f"band half-width must be >= 0, got {self.b}")

    def width(self, length):
        if self.b is not None:
            return self.b
        return int(math.floor(math.sqrt(length) / 2))


@dataclass(frozen=True)
class Dynamic(MaskKind):
    needs_hidden = True


@dataclass(frozen=True)
class Composite(MaskKind):
    parts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ConfigError("Composite mask needs at least one part")

    @property
    def needs_hidden(self):
        return any(p.needs_hidden for p in self.parts)


@dataclass
class DynamicMaskParams:
    """Trainable pieces of the dynamic mask for one layer.

    proj:   (d, 1) maps the query hidden state to a scalar
    rel:    (2R + 1,) one scalar per clipped relative offset t - s in [-R, R]
    head:   (I,) one scalar per attention head
    """

    proj: Tensor
    rel: Tensor
    head: Tensor
    max_rel: int = field(default=DEFAULT_MAX_REL)

    @classmethod
    def zeros(cls, d, heads, max_rel=DEFAULT_MAX_REL):
        if max_rel < 0:
            raise ConfigError("max_rel must be >= 0")
        return cls(
            proj=Tensor(np.zeros((d, 1)), requires_grad=True),
            rel=Tensor(np.zeros(2 * max_rel + 1), requires_grad=True),
            head=Tensor(np.zeros(heads), requires_grad=True),
            max_rel=max_rel,
        )

    def named(self):
        return {"proj": self.proj, "rel": self.rel, "head": self.head}

    def set_offset(self, offset, value):
        """Set P[offset] for a relative offset in [-R, R]."""
        self.rel.data[int(offset) + self.max_rel] = value


def relative_index(t_len, s_len, max_rel):
    """Table index of clip(t - s, -R, R) for every (t, s)."""
    offs = np.arange(t_len)[:, None] - np.arange(s_len)[None, :]
    return np.clip(offs, -max_rel, max_rel) + max_rel


def band_indicator(t_len, b):
    offs = np.abs(np.arange(t_len)[:, None] - np.arange(t_len)[None, :])
    return (offs <= b).astype(float)


def padding_mask(key_valid):
    """(B, 1, T, T) mask hiding padded keys.

    Padded query rows keep their own diagonal entry so every row stays
    normalizable; those rows are dropped from losses and statistics.
    """
    key_valid = np.asarray(key_valid, dtype=bool)
    t_len = key_valid.shape[-1]
    m = key_valid[:, None, None, :] | np.eye(t_len, dtype=bool)[None, None]
    return m.astype(float)


def batch_mask(kind, t_len, hidden=None, params=None, lengths=None, heads=1):
    """Mask for a batch, broadcastable to (B, I, T, T).

    Static kinds give a constant tensor with singleton batch/head axes (except
    the length-dependent band, which varies over the batch). The dynamic kind
    returns a full (B, I, T, T) tensor wired into the autodiff graph.
    """
    if isinstance(kind, AllOnes):
        return Tensor(np.ones((1, 1, t_len, t_len)))
    if isinstance(kind, Identity):
        return Tensor(np.eye(t_len)[None, None])
    if isinstance(kind, Causal):
        return Tensor(np.tril(np.ones((t_len, t_len)))[None, None])
    if isinstance(kind, Banded):
        if kind.b is not None or lengths is None:
            return Tensor(band_indicator(t_len, kind.width(t_len))[None, None])
        bands = np.stack([band_indicator(t_len, kind.width(int(n))) for n in lengths])
        return Tensor(bands[:, None])
    if isinstance(kind, Dynamic):
        if params is None:
            raise ConfigError("dynamic mask needs DynamicMaskParams")
        if hidden is None:
            raise ConfigError("dynamic mask needs the layer's hidden states")
        hidden = T.as_tensor(hidden)
        if hidden.ndim == 2:
            hidden = T.reshape(hidden, (1,) + hidden.shape)
        b = hidden.shape[0]
        n_heads = params.head.shape[0]
        q = T.reshape(T.matmul(hidden, params.proj), (b, 1, t_len, 1))
        rel = T.reshape(T.take(params.rel, relative_index(t_len, t_len, params.max_rel)), (1, 1, t_len, t_len))
        head = T.reshape(params.head, (1, n_heads, 1, 1))
        return T.sigmoid(T.add(T.add(q, rel), head))
    if isinstance(kind, Composite):
        out = None
        for part in kind.parts:
            m = batch_mask(part, t_len, hidden, params, lengths, heads)
            out = m if out is None else T.mul(out, m)
        return out
    raise ConfigError(f"unknown mask kind {kind!r}")


def build_mask(kind, t_len, layer=0, head=0, hidden=None, params=None):
    """The T x T mask of one (layer, head).

    `params` is either a DynamicMaskParams or a sequence/mapping of them indexed
    by layer. `hidden` is the (T x d) input of that layer.
    """
    if params is not None and not isinstance(params, DynamicMaskParams):
        params = params[layer]
    if kind.needs_hidden and params is None:
        raise ConfigError("dynamic mask needs DynamicMaskParams")
    m = batch_mask(kind, t_len, hidden=hidden, params=params)
    h = min(head, m.shape[1] - 1)
    return T.reshape(T.take(T.take(m, 0, axis=0), h, axis=0), (t_len, t_len))


def mask_to_csv(mask):
    """Row-major CSV dump of a T x T mask."""
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in data:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def mask_from_csv(text):
    rows = [list(map(float, r)) for r in csv.reader(io.StringIO(text)) if r]
    return np.array(rows)


def mask_to_json(mask):
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return json.dumps({"shape": list(data.shape), "data": data.reshape(-1).tolist()})


def mask_from_json(text):
    obj = json.loads(text)
    return np.array(obj["data"], dtype=float).reshape(obj["shape"])
