"""
The mask attention layer.

One layer computes, for heads i = 1..I,

    A_i = masked_softmax(H Wq_i (H Wk_i)^T / sqrt(d_k), M_i) (H Wv_i)
    out = F([A_1, ..., A_I]) W_H

With an all-ones mask and identity F this is multi-head self-attention; with
the identity mask, ReLU and a single head of width d_f it is the position-wise
feed-forward network ReLU(H Wv) W_H. `ManLayer.forward` wraps the transform in
dropout, a residual connection and post layer norm.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .masks import AllOnes, Banded, Composite, Causal, Dynamic, DynamicMaskParams, Identity, MaskKind, batch_mask, padding_mask
from .tensor import Tensor

ACTIVATIONS = ("identity", "relu")


class ParamStore(OrderedDict):
    """Name -> Tensor registry, filled in construction order."""

    def __init__(self, rng=None, dtype=np.float64):
        super().__init__()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = dtype

    def add(self, name, value):
        if name in self:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value, dtype=self.dtype)
        t.requires_grad = True
        t.name = name
        self[name] = t
        return t

    def xavier(self, name, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(self.dtype))

    def constant(self, name, shape, value=0.0):
        return self.add(name, np.full(shape, value, dtype=self.dtype))

    def count(self):
        return sum(t.size for t in self.values())


@dataclass
class ManLayerConfig:
    """Shape and behavior of one mask attention sublayer.

    `d_v` is the per-head value width (defaults to `d_k`). `use_qk=False` skips
    the query/key projections; the scores are then constant and only the mask
    shapes the attention, as in the feed-forward configuration.
    """

    d: int
    d_k: int
    heads: int = 1
    d_v: int | None = None
    activation: str = "identity"
    mask: MaskKind = field(default_factory=AllOnes)
    use_qk: bool = True
    max_rel: int = 32

    def __post_init__(self):
        if self.d_v is None:
            self.d_v = self.d_k
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if min(self.d, self.d_k, self.heads, self.d_v) < 1:
            raise ConfigError("layer dimensions must be positive")
        if self.use_qk and self.heads > 1 and self.heads * self.d_k != self.d:
            raise ConfigError(f"heads * d_k must equal d ({self.heads} * {self.d_k} != {self.d})")
        if _base_kind(self.mask) is Identity and not self.use_qk and self.heads != 1:
            raise ConfigError("the feed-forward configuration uses a single head")

    @classmethod
    def san(cls, d, heads):
        return cls(d=d, d_k=d // heads, heads=heads)

    @classmethod
    def dman(cls, d, heads, max_rel=32):
        return cls(d=d, d_k=d // heads, heads=heads, mask=Dynamic(), max_rel=max_rel)

    @classmethod
    def sman(cls, d, heads, b=None):
        return cls(d=d, d_k=d // heads, heads=heads, mask=Banded(b))

    @classmethod
    def ffn(cls, d, inner=None):
        inner = 2 * d if inner is None else inner
        return cls(d=d, d_k=1, heads=1, d_v=inner, activation="relu", mask=Identity(), use_qk=False)


def _base_kind(kind):
    return type(kind)


def _contains_dynamic(kind):
    if isinstance(kind, Dynamic):
        return True
    if isinstance(kind, Composite):
        return any(_contains_dynamic(p) for p in kind.parts)
    return False


class ManLayer:
    """Multi-head mask attention sublayer with residual + post layer norm.

    Parameters live in the shared `store` under `prefix`:
    ``Wq, Wk`` (d x I d_k), ``Wv`` (d x I d_v), ``Wh`` (I d_v x d),
    ``ln.gain/ln.bias`` and, for dynamic masks, ``mask.proj/rel/head``.
    """

    def __init__(self, cfg, store, prefix, causal=False, label=None):
        self.cfg = cfg
        self.prefix = prefix
        self.causal = causal
        self.label = label
        d, h = cfg.d, cfg.heads
        if cfg.use_qk:
            self.wq = store.xavier(f"{prefix}.Wq", d, h * cfg.d_k)
            self.wk = store.xavier(f"{prefix}.Wk", d, h * cfg.d_k)
        else:
            self.wq = self.wk = None
        self.wv = store.xavier(f"{prefix}.Wv", d, h * cfg.d_v)
        self.wh = store.xavier(f"{prefix}.Wh", h * cfg.d_v, d)
        self.ln_gain = store.constant(f"{prefix}.ln.gain", (d,), 1.0)
        self.ln_bias = store.constant(f"{prefix}.ln.bias", (d,), 0.0)
        self.mask_params = None
        if _contains_dynamic(cfg.mask):
            mp = DynamicMaskParams.zeros(d, h, cfg.max_rel)
            for name, t in mp.named().items():
                store.add(f"{prefix}.mask.{name}", t)
            self.mask_params = mp
        self.last_attention = None

    @property
    def mask_kind(self):
        return Composite((Causal(), self.cfg.mask)) if self.causal else self.cfg.mask

    def masks(self, hidden, lengths=None):
        """Per-head masks for `hidden` (B x T x d), broadcastable to (B, I, T, T)."""
        return batch_mask(self.mask_kind, hidden.shape[-2], hidden=hidden, params=self.mask_params,
                          lengths=lengths, heads=self.cfg.heads)

    def transform(self, hidden, context=None, masks=None, key_valid=None, lengths=None, capture=False):
        """F([A_1..A_I]) W_H without residual or normalization.

        `context` supplies keys and values (encoder-decoder attention); its
        mask is all ones apart from padded keys. `masks` overrides the
        configured mask kind. `key_valid` is a (B x S) boolean array.
        """
        cfg = self.cfg
        hidden = T.as_tensor(hidden)
        squeeze = hidden.ndim == 2
        if squeeze:
            hidden = T.reshape(hidden, (1,) + hidden.shape)
            if context is not None and T.as_tensor(context).ndim == 2:
                context = T.reshape(T.as_tensor(context), (1,) + T.as_tensor(context).shape)
        if hidden.shape[-1] != cfg.d:
            raise DimensionError(f"layer expects width {cfg.d}, got {hidden.shape}")
        src = hidden if context is None else T.as_tensor(context)
        if src.shape[-1] != cfg.d:
            raise DimensionError(f"context width {src.shape[-1]} != {cfg.d}")
        b, t_len, s_len, h = hidden.shape[0], hidden.shape[1], src.shape[1], cfg.heads

        if cfg.use_qk:
            q = _split_heads(T.matmul(hidden, self.wq), h)
            k = _split_heads(T.matmul(src, self.wk), h)
            scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(cfg.d_k))
        else:
            scores = Tensor(np.zeros((1, 1, t_len, s_len), dtype=hidden.dtype))
            scores = T.add(scores, Tensor(np.zeros((b, h, 1, 1), dtype=hidden.dtype)))
        v = _split_heads(T.matmul(src, self.wv), h)

        if masks is None:
            if context is None:
                masks = self.masks(hidden, lengths)
            else:
                masks = Tensor(np.ones((1, 1, t_len, s_len), dtype=hidden.dtype))
        masks = T.as_tensor(masks)
        if key_valid is not None:
            if context is None:
                pad = padding_mask(key_valid)
            else:
                pad = np.asarray(key_valid, dtype=float)[:, None, None, :]
            masks = T.mul(masks, Tensor(pad.astype(hidden.dtype)))
        if masks.ndim == 2:
            masks = T.reshape(masks, (1, 1) + masks.shape)
        elif masks.ndim == 3:
            masks = T.reshape(masks, (1,) + masks.shape)

        probs = T.masked_softmax(scores, masks)
        if capture:
            self.last_attention = probs.data.copy()
        heads_out = T.matmul(probs, v)  # B, I, T, d_v
        cat = T.reshape(T.transpose(heads_out, (0, 2, 1, 3)), (b, t_len, h * cfg.d_v))
        if cfg.activation == "relu":
            cat = T.relu(cat)
        out = T.matmul(cat, self.wh)
        if squeeze:
            out = T.reshape(out, (t_len, cfg.d))
        return out

    def forward(self, hidden, context=None, key_valid=None, lengths=None, dropout=0.0, rng=None, capture=False):
        hidden = T.as_tensor(hidden)
        y = self.transform(hidden, context=context, key_valid=key_valid, lengths=lengths, capture=capture)
        y = T.dropout(y, dropout, rng)
        return T.layer_norm(T.add(hidden, y), self.ln_gain, self.ln_bias)

    __call__ = forward


def _split_heads(x, heads):
    b, t_len, width = x.shape
    return T.transpose(T.reshape(x, (b, t_len, heads, width // heads)), (0, 2, 1, 3))


def cross_attention_forward(dec_hidden, enc_hidden, layer, enc_valid=None):
    """Encoder-decoder attention transform: queries from the decoder, keys and
    values from the encoder, all-ones mask apart from padded source keys."""
    return layer.transform(dec_hidden, context=enc_hidden, key_valid=enc_valid)


def man_layer_forward(hidden, layer, masks=None):
    """The sublayer output with residual and post layer norm for explicit masks."""
    hidden = T.as_tensor(hidden)
    return T.layer_norm(T.add(hidden, layer.transform(hidden, masks=masks)), layer.ln_gain, layer.ln_bias)
