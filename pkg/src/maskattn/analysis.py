"""
Attention capture and locality measurements.

`capture_attention` runs the encoder over a dataset and keeps, for every
sentence and self-attention sublayer, the head-averaged attention matrix
restricted to real tokens. `locality_statistic` is the windowed attention mass

    attn_s(w, l, kind) = 1/|D| sum_i 1/T_i sum_j sum_{|k - j| <= w} s_i[j, k]

Layers are numbered from 1 in this module, matching the reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import ManLayer, ManLayerConfig, ParamStore
from .errors import ContractError
from .masks import AllOnes, Identity, batch_mask
from .training.tasks import pad_batch


@dataclass
class AttnRecord:
    """Per-sentence attention matrices keyed by (layer, kind).

    `mean[i][(l, kind)]` is the T_i x T_i head average and `heads[i][(l, kind)]`
    the I x T_i x T_i per-head stack.
    """

    dataset_id: str = ""
    stack: str = "encoder"
    lengths: list = field(default_factory=list)
    mean: list = field(default_factory=list)
    heads: list = field(default_factory=list)

    def __len__(self):
        return len(self.lengths)

    def keys(self):
        return sorted(self.mean[0]) if self.mean else []

    @property
    def layers(self):
        return sorted({l for l, _ in self.keys()})

    @property
    def kinds(self):
        # capture order, which is block order
        seen = []
        for _, k in (self.mean[0] if self.mean else {}):
            if k not in seen:
                seen.append(k)
        return seen


def head_average(probs):
    """Mean over the head axis of an (I x T x T) stack."""
    return np.asarray(probs).mean(axis=0)


def capture_attention(model, dataset, dataset_id="", stack="encoder", batch_size=64):
    """Record head-averaged self-attention for each sentence of `dataset`.

    `dataset` holds source sequences, or (src, tgt) pairs. Only real tokens are
    kept; sources carry no end symbol, so nothing else needs excluding. For the
    decoder stack the teacher-forced input (BOS + target) is used.
    Encoder-decoder attention is not recorded.
    """
    items = [d if isinstance(d, tuple) else (np.asarray(d), np.asarray(d)) for d in dataset]
    rec = AttnRecord(dataset_id=dataset_id, stack=stack)
    for start in range(0, len(items), batch_size):
        chunk = items[start: start + batch_size]
        batch = pad_batch(chunk)
        with T.no_grad():
            if stack == "encoder":
                model.encode(batch.src, capture=True)
                lengths = [len(s) for s, _ in chunk]
            else:
                model.forward_batch(batch.src, batch.tgt_in, capture=True)
                lengths = [len(t) + 1 for _, t in chunk]
        layers = [(l, layer) for l, layer in model.sublayers(stack) if layer.label != "CROSS"]
        for b, n in enumerate(lengths):
            means, per_head = {}, {}
            for l, layer in layers:
                probs = layer.last_attention[b, :, :n, :n]
                key = (l + 1, layer.label)
                per_head[key] = probs.copy()
                means[key] = head_average(probs)
            rec.lengths.append(n)
            rec.mean.append(means)
            rec.heads.append(per_head)
    return rec


def _window_mass(mat, w):
    n = mat.shape[0]
    idx = np.arange(n)
    inside = np.abs(idx[:, None] - idx[None, :]) <= w
    return float((mat * inside).sum())


def locality_statistic(record, w, layer, kind):
    """Average attention mass within distance `w` of the query position."""
    if len(record) == 0:
        raise ContractError("locality_statistic needs a non-empty record")
    if w < 0:
        raise ContractError(f"window must be >= 0, got {w}")
    key = (layer, kind)
    if key not in record.mean[0]:
        raise ContractError(f"no attention recorded for layer {layer} kind {kind!r}; have {record.keys()}")
    total = 0.0
    for n, mats in zip(record.lengths, record.mean):
        total += _window_mass(mats[key], w) / n
    return total / len(record)


def per_head_locality(record, w, layer, kind):
    """The same statistic computed separately for each head."""
    key = (layer, kind)
    acc = None
    for n, stack in zip(record.lengths, record.heads):
        vals = np.array([_window_mass(h, w) / n for h in stack[key]])
        acc = vals if acc is None else acc + vals
    return acc / len(record)


@dataclass
class LocalityReport:
    rows: list  # (kind, w, layer, value) with value in [0, 1]
    dataset_size: int
    dataset_id: str = ""

    def value(self, kind, w, layer):
        for k, ww, l, v in self.rows:
            if (k, ww, l) == (kind, w, layer):
                return v
        raise KeyError((kind, w, layer))

    def to_csv(self):
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["kind", "w", "layer", "value_percent"])
        for kind, w, layer, v in self.rows:
            out.writerow([kind, w, layer, f"{100 * v:.2f}"])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "dataset_id": self.dataset_id,
            "dataset_size": self.dataset_size,
            "rows": [{"kind": k, "w": w, "layer": l, "value": v, "value_percent": round(100 * v, 2)}
                     for k, w, l, v in self.rows],
        }, indent=2) + "\n"


def locality_report(record, windows=(1, 2, 4), layers=None, kinds=None):
    """Grid of locality statistics, ordered by window, then kind, then layer.

    Default kinds are the recorded attention sublayers other than FFN.
    """
    layers = record.layers if layers is None else list(layers)
    kinds = [k for k in record.kinds if not k.startswith("FFN")] if kinds is None else list(kinds)
    rows = [(k, w, l, locality_statistic(record, w, l, k)) for w in windows for k in kinds for l in layers]
    return LocalityReport(rows, len(record), record.dataset_id)


def dump_attention(record, directory):
    """One row-major CSV per (sentence, layer, kind) under `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, mats in enumerate(record.mean):
        for (l, kind), mat in sorted(mats.items()):
            p = directory / f"sent{i:04d}_layer{l}_{kind.replace('#', '_')}.csv"
            np.savetxt(p, mat, delimiter=",", fmt="%.17g")
            paths.append(p)
    return paths


# ------------------------------------------------------------- degeneracy


@dataclass
class DegeneracyReport:
    draws: int
    san_max_dev: float
    ffn_max_dev: float
    tol: float
    failures: list = field(default_factory=list)  # (draw, which, deviation)

    @property
    def passed(self):
        return not self.failures


def _reference_san(h, wq, wk, wv, wh, heads):
    """Plain multi-head self-attention: concat_i softmax(Q_i K_i^T / sqrt(d_k)) V_i, then W_H."""
    d_k = wq.shape[1] // heads
    outs = []
    for i in range(heads):
        sl = slice(i * d_k, (i + 1) * d_k)
        q, k, v = h @ wq[:, sl], h @ wk[:, sl], h @ wv[:, sl]
        s = q @ k.T / math.sqrt(d_k)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        outs.append((s / s.sum(axis=1, keepdims=True)) @ v)
    return np.concatenate(outs, axis=1) @ wh


def _reference_ffn(h, w1, w2):
    return np.maximum(h @ w1, 0) @ w2


def verify_degeneracy(seed=0, draws=100, dtype=np.float64, tol=None, perturb=False):
    """Check MAN(all-ones, identity) == SAN and MAN(identity, relu, 1 head) == FFN
    on `draws` random weight draws; report the worst absolute deviations.

    `perturb=True` sets one off-diagonal mask entry to 0.999 in both checks,
    which must then be reported as failures.
    """
    tol = (1e-10 if np.dtype(dtype) == np.float64 else 1e-4) if tol is None else tol
    rng = np.random.default_rng(seed)
    san_dev = ffn_dev = 0.0
    failures = []
    for draw in range(draws):
        heads = int(rng.integers(1, 5))
        d_k = int(rng.integers(2, 9))
        d = heads * d_k
        t_len = int(rng.integers(2, 12))
        store = ParamStore(rng, dtype=dtype)
        san = ManLayer(ManLayerConfig(d=d, d_k=d_k, heads=heads, mask=AllOnes()), store, "san")
        ffn = ManLayer(ManLayerConfig.ffn(d), store, "ffn")
        h = rng.standard_normal((t_len, d)).astype(dtype)

        san_mask = batch_mask(AllOnes(), t_len).data.astype(dtype)
        ffn_mask = batch_mask(Identity(), t_len).data.astype(dtype)
        if perturb:
            san_mask = san_mask.copy()
            ffn_mask = ffn_mask.copy()
            san_mask[..., 0, t_len - 1] = 0.999
            ffn_mask[..., 0, t_len - 1] = 0.999

        with T.no_grad():
            got_san = san.transform(h, masks=san_mask).data
            got_ffn = ffn.transform(h, masks=ffn_mask).data
        want_san = _reference_san(h, san.wq.data, san.wk.data, san.wv.data, san.wh.data, heads)
        want_ffn = _reference_ffn(h, ffn.wv.data, ffn.wh.data)
        ds = float(np.max(np.abs(got_san - want_san)))
        df = float(np.max(np.abs(got_ffn - want_ffn)))
        san_dev, ffn_dev = max(san_dev, ds), max(ffn_dev, df)
        if ds > tol:
            failures.append((draw, "SAN", ds))
        if df > tol:
            failures.append((draw, "FFN", df))
    return DegeneracyReport(draws, san_dev, ffn_dev, tol, failures)


# ---------------------------------------------------------- distance bound


def distance_bound_check(a, b, c, w_q, w_k, slack=1e-12):
    """Both sides of ||aWq - cWk||^2 <= 3(||aWq - bWk||^2 + ||bWk - bWq||^2 + ||bWq - cWk||^2).

    The right side bounds the left for every input (it is ||x + y + z||^2 <=
    3(||x||^2 + ||y||^2 + ||z||^2)); `slack` is a relative allowance for
    rounding in the comparison.
    """
    a, b, c, w_q, w_k = (np.asarray(v.data if isinstance(v, T.Tensor) else v, dtype=float) for v in (a, b, c, w_q, w_k))
    x = a @ w_q - b @ w_k
    y = b @ w_k - b @ w_q
    z = b @ w_q - c @ w_k
    lhs = float(np.sum((a @ w_q - c @ w_k) ** 2))
    rhs = 3.0 * float(np.sum(x * x) + np.sum(y * y) + np.sum(z * z))
    return lhs, rhs, lhs <= rhs * (1.0 + slack)


def tightness_witness(v):
    """Inputs for which the three difference vectors coincide, so both sides are
    equal: a = 0, b = v, c = 3v with Wq = 2I and Wk = I."""
    v = np.asarray(v, dtype=float)
    eye = np.eye(v.shape[0])
    return np.zeros_like(v), v, 3.0 * v, 2.0 * eye, eye
