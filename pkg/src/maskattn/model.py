"""
Encoder-decoder model assembled from mask attention sublayers.

A block is an ordered list of sublayer kinds (DMAN, SAN, SMAN, FFN). Encoder
blocks apply them in order; decoder blocks compose every self-attention mask
with the causal mask and insert encoder-decoder attention right after the last
attention-type sublayer. The Transformer baseline is the SAN -> FFN block built
from the same layer class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import ManLayer, ManLayerConfig, ParamStore
from .errors import ConfigError, CorruptionError
from .kvfile import dump_kv, parse_kv
from .rng import stream
from .tensor import Tensor

PAD, BOS, EOS = 0, 1, 2
SUBLAYER_KINDS = ("DMAN", "SAN", "SMAN", "FFN")


@dataclass(frozen=True)
class Sublayer:
    kind: str
    band: int | None = None  # SMAN only; None means floor(sqrt(L) / 2)

    def __post_init__(self):
        if self.kind not in SUBLAYER_KINDS:
            raise ConfigError(f"unknown sublayer kind {self.kind!r}; expected one of {SUBLAYER_KINDS}")
        if self.band is not None and self.band < 0:
            raise ConfigError("SMAN band must be >= 0")

    def __str__(self):
        if self.kind == "SMAN":
            return "SMAN(sqrt)" if self.band is None else f"SMAN({self.band})"
        return self.kind


@dataclass(frozen=True)
class BlockOrdering:
    name: str
    sublayers: tuple

    def __post_init__(self):
        if not self.sublayers:
            raise ConfigError("a block needs at least one sublayer")

    @property
    def description(self):
        return "->".join(str(s) for s in self.sublayers)

    @classmethod
    def parse(cls, text):
        """A preset name (C1..C5, BASE, SMAN1, SMAN2) or an arrow chain such as
        ``DMAN->SAN->FFN`` / ``SMAN(4)->SAN->FFN``."""
        key = text.strip()
        if key.upper() in PRESETS:
            return PRESETS[key.upper()]
        if "->" not in key and key.upper() not in SUBLAYER_KINDS and not key.upper().startswith("SMAN("):
            raise ConfigError(f"unknown ordering {text!r}; valid presets: {', '.join(PRESETS)}")
        subs = []
        for part in key.split("->"):
            part = part.strip().upper()
            if part.startswith("SMAN(") and part.endswith(")"):
                arg = part[5:-1]
                subs.append(Sublayer("SMAN", None if arg == "SQRT" else int(arg)))
            else:
                subs.append(Sublayer(part))
        return cls(key, tuple(subs))


def _ordering(name, *kinds):
    return BlockOrdering(name, tuple(k if isinstance(k, Sublayer) else Sublayer(k) for k in kinds))


PRESETS = {
    "C1": _ordering("C1", "FFN", "SAN", "FFN"),
    "C2": _ordering("C2", "SAN", "SAN", "FFN"),
    "C3": _ordering("C3", "DMAN", "DMAN", "FFN"),
    "C4": _ordering("C4", "SAN", "DMAN", "FFN"),
    "C5": _ordering("C5", "DMAN", "SAN", "FFN"),
    "BASE": _ordering("BASE", "SAN", "FFN"),
    "SMAN1": _ordering("SMAN1", Sublayer("SMAN", None), "SAN", "FFN"),
    "SMAN2": _ordering("SMAN2", Sublayer("SMAN", 4), "SAN", "FFN"),
}


@dataclass
class ModelConfig:
    vocab_size: int = 32
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ordering: str = "C5"
    max_rel: int = 32
    dropout: float = 0.1
    max_len: int = 32
    ffn_mult: int = 2
    tie_embeddings: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "heads", "enc_layers", "dec_layers", "max_len", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_rel < 0:
            raise ConfigError("max_rel must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must leave room for PAD, BOS, EOS and one symbol")
        self.block  # validates the ordering name

    @property
    def block(self):
        return BlockOrdering.parse(self.ordering)

    @property
    def d_k(self):
        return self.d_model // self.heads

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self):
        return dump_kv(self.to_dict())

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_kv(text))

    @classmethod
    def from_dict(cls, raw):
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(getattr(cls, k), v) for k, v in raw.items()})


def _coerce(default, value):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r}") from None
    return value


def sinusoidal_positions(length, d):
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _sublayer_config(sub, cfg):
    d, h = cfg.d_model, cfg.heads
    if sub.kind == "SAN":
        return ManLayerConfig.san(d, h)
    if sub.kind == "DMAN":
        return ManLayerConfig.dman(d, h, cfg.max_rel)
    if sub.kind == "SMAN":
        return ManLayerConfig.sman(d, h, sub.band)
    return ManLayerConfig.ffn(d, cfg.ffn_mult * d)


def _labels(subs):
    """Display labels; repeated kinds in one block get a #n suffix."""
    seen, out = {}, []
    for s in subs:
        seen[s.kind] = seen.get(s.kind, 0) + 1
        out.append(s.kind if seen[s.kind] == 1 else f"{s.kind}#{seen[s.kind]}")
    return out


class Seq2SeqModel:
    """Token embedding + sinusoidal positions, encoder/decoder stacks of mask
    attention sublayers, and an output projection to vocabulary logits.

    All trainable tensors are in `self.params`, keyed by stable dotted names.
    """

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.params = ParamStore(stream(seed, "init"))
        p, d = self.params, cfg.d_model
        self.embed = p.add("embed", p.rng.normal(0.0, d ** -0.5, size=(cfg.vocab_size, d)))
        self.positions = sinusoidal_positions(cfg.max_len + 1, d)
        block = cfg.block.sublayers
        labels = _labels(block)

        self.encoder = []
        for l in range(cfg.enc_layers):
            self.encoder.append([
                ManLayer(_sublayer_config(s, cfg), p, f"enc.{l}.sub{j}", label=labels[j])
                for j, s in enumerate(block)
            ])

        attn_idx = [j for j, s in enumerate(block) if s.kind != "FFN"]
        cross_at = attn_idx[-1] + 1 if attn_idx else 0
        self.decoder = []
        for l in range(cfg.dec_layers):
            layers = []
            for j, s in enumerate(block):
                if j == cross_at:
                    layers.append(ManLayer(ManLayerConfig.san(d, cfg.heads), p, f"dec.{l}.cross", label="CROSS"))
                layers.append(ManLayer(_sublayer_config(s, cfg), p, f"dec.{l}.sub{j}", causal=True, label=labels[j]))
            if cross_at == len(block):
                layers.append(ManLayer(ManLayerConfig.san(d, cfg.heads), p, f"dec.{l}.cross", label="CROSS"))
            self.decoder.append(layers)

        if cfg.tie_embeddings:
            self.out_w = None
        else:
            self.out_w = p.xavier("out.W", d, cfg.vocab_size)
        self.out_b = p.constant("out.b", (cfg.vocab_size,), 0.0)

    # ------------------------------------------------------------ forward

    def _embed(self, ids):
        ids = np.asarray(ids)
        if ids.shape[-1] > self.cfg.max_len + 1:
            raise ConfigError(f"sequence length {ids.shape[-1]} exceeds max_len {self.cfg.max_len}")
        x = T.scale(T.embedding(self.embed, ids), math.sqrt(self.cfg.d_model))
        return T.add(x, Tensor(self.positions[: ids.shape[-1]]))

    def encode(self, src, src_valid=None, rng=None, capture=False):
        src = np.asarray(src)
        if src_valid is None:
            src_valid = src != PAD
        lengths = src_valid.sum(axis=-1)
        h = self._embed(src)
        drop = self.cfg.dropout if rng is not None else 0.0
        for block in self.encoder:
            for layer in block:
                h = layer(h, key_valid=src_valid, lengths=lengths, dropout=drop, rng=rng, capture=capture)
        return h, src_valid

    def decode(self, memory, src_valid, tgt_in, rng=None, capture=False):
        tgt_in = np.asarray(tgt_in)
        tgt_valid = tgt_in != PAD
        tgt_valid[:, 0] = True
        lengths = tgt_valid.sum(axis=-1)
        h = self._embed(tgt_in)
        drop = self.cfg.dropout if rng is not None else 0.0
        for block in self.decoder:
            for layer in block:
                if layer.label == "CROSS":
                    h = layer(h, context=memory, key_valid=src_valid, dropout=drop, rng=rng, capture=capture)
                else:
                    h = layer(h, key_valid=tgt_valid, lengths=lengths, dropout=drop, rng=rng, capture=capture)
        w = T.transpose(self.embed) if self.out_w is None else self.out_w
        return T.add(T.matmul(h, w), self.out_b)

    def forward_batch(self, src, tgt_in, rng=None, capture=False):
        """Logits (B x T x V) for padded id arrays src (B x S) and tgt_in (B x T).

        `rng` switches dropout on; leave it None for deterministic evaluation.
        """
        src, tgt_in = np.atleast_2d(src), np.atleast_2d(tgt_in)
        for arr in (src, tgt_in):
            if arr.size and (arr.min() < 0 or arr.max() >= self.cfg.vocab_size):
                raise IndexError(f"token id out of range [0, {self.cfg.vocab_size})")
        memory, src_valid = self.encode(src, rng=rng, capture=capture)
        return self.decode(memory, src_valid, tgt_in, rng=rng, capture=capture)

    def forward(self, src, tgt_prefix):
        """Next-token logits (T x V) for one source and one target prefix."""
        logits = self.forward_batch(np.asarray(src)[None], np.asarray(tgt_prefix)[None])
        return T.reshape(logits, logits.shape[1:])

    __call__ = forward

    # ------------------------------------------------------------- helpers

    def sublayers(self, stack="encoder"):
        """(layer index, ManLayer) pairs of one stack, in order."""
        blocks = self.encoder if stack == "encoder" else self.decoder
        return [(l, layer) for l, block in enumerate(blocks) for layer in block]

    def param_count(self):
        return self.params.count()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def greedy_decode_batch(model, src, max_len=None):
    """Greedy decoding for a padded batch; returns a list of token lists.

    Each step takes the argmax of the last position (numpy argmax, so ties go
    to the lowest id) and stops a row at EOS. EOS is not included.
    """
    src = np.atleast_2d(np.asarray(src))
    max_len = model.cfg.max_len if max_len is None else max_len
    b = src.shape[0]
    out = np.full((b, 1), BOS, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    with T.no_grad():
        memory, src_valid = model.encode(src)
        for _ in range(max_len):
            logits = model.decode(memory, src_valid, out)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1)
            nxt = np.where(done, PAD, nxt)
            out = np.concatenate([out, nxt[:, None]], axis=1)
            done |= nxt == EOS
            if done.all():
                break
    result = []
    for row in out[:, 1:]:
        toks = []
        for t in row:
            if t == EOS:
                break
            toks.append(int(t))
        result.append(toks[:max_len])
    return result


def greedy_decode(model, src, max_len=None):
    return greedy_decode_batch(model, np.asarray(src)[None], max_len)[0]


# ---------------------------------------------------------------- checkpoint

MANIFEST = "manifest.json"
BLOB = "params.bin"
CONFIG = "model.cfg"
FORMAT = "maskattn-checkpoint"


def save_checkpoint(model, path):
    """Write `path/manifest.json`, `path/params.bin` (little-endian float64,
    concatenated in registry order) and `path/model.cfg`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": "float64",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "version": 1, "byte_order": "little",
                "total_bytes": offset, "config": model.cfg.to_dict(), "params": entries}
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (path / CONFIG).write_text(model.cfg.to_text())
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as exc:
        raise CorruptionError(f"checkpoint file missing: {exc.filename}") from None
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"manifest is not valid JSON: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise CorruptionError(f"unexpected checkpoint format {manifest.get('format')!r}")
    if len(blob) != manifest.get("total_bytes"):
        raise CorruptionError(f"blob has {len(blob)} bytes, manifest expects {manifest.get('total_bytes')}")
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
    except (ConfigError, TypeError) as exc:
        raise CorruptionError(f"bad model config in manifest: {exc}") from None
    model = Seq2SeqModel(cfg)
    seen = set()
    for e in manifest["params"]:
        name = e["name"]
        if name not in model.params:
            raise CorruptionError(f"unknown parameter {name!r} in manifest")
        t = model.params[name]
        shape = tuple(e["shape"])
        if shape != t.shape or e.get("dtype") != "float64":
            raise CorruptionError(f"parameter {name!r}: manifest shape {shape} != model shape {t.shape}")
        start, n = e["offset"], e["nbytes"]
        if n != 8 * t.size or start < 0 or start + n > len(blob):
            raise CorruptionError(f"parameter {name!r}: byte range {start}+{n} outside blob")
        t.data[...] = np.frombuffer(blob, dtype="<f8", count=t.size, offset=start).reshape(shape)
        seen.add(name)
    missing = [n for n in model.params if n not in seen]
    if missing:
        raise CorruptionError(f"manifest lacks parameters: {', '.join(missing)}")
    return model
