"""
Synthetic sequence-to-sequence tasks.

Token ids 0, 1, 2 are PAD, BOS and EOS; symbols use ids 3..V-1. Every sample
is a pure function of the task seed. A sequence belongs to the test split iff
a hash of its source tokens falls in the held-out bucket, so the two splits
never share a source sequence.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..model import BOS, EOS, PAD
from ..rng import stream

VARIANTS = ("copy", "reverse", "local")
RULES = ("sum", "max", "majority")
FIRST_SYMBOL = 3


@dataclass(frozen=True)
class SyntheticTask:
    """`local` maps position t to a function of the source window [t-b0, t+b0]
    (clipped at the sequence ends): `sum` modulo the symbol count, `max`, or
    `majority` (most frequent symbol, ties to the smallest)."""

    variant: str = "copy"
    vocab_size: int = 32
    min_len: int = 4
    max_len: int = 10
    seed: int = 0
    window: int = 2
    rule: str = "sum"
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"task variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.rule not in RULES:
            raise ConfigError(f"local rule must be one of {RULES}, got {self.rule!r}")
        if self.vocab_size <= FIRST_SYMBOL:
            raise ConfigError("vocab_size must exceed the 3 reserved ids")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")

    @property
    def n_symbols(self):
        return self.vocab_size - FIRST_SYMBOL

    def target(self, src):
        src = np.asarray(src)
        if self.variant == "copy":
            return src.copy()
        if self.variant == "reverse":
            return src[::-1].copy()
        vals = src - FIRST_SYMBOL
        out = np.empty_like(src)
        for t in range(len(src)):
            win = vals[max(0, t - self.window): t + self.window + 1]
            if self.rule == "sum":
                v = int(win.sum()) % self.n_symbols
            elif self.rule == "max":
                v = int(win.max())
            else:
                counts = np.bincount(win, minlength=self.n_symbols)
                v = int(np.argmax(counts))
            out[t] = v + FIRST_SYMBOL
        return out

    def is_test(self, src):
        h = zlib.crc32(np.asarray(src, dtype=np.int64).tobytes())
        return (h % 1000) < int(round(self.test_fraction * 1000))

    def _draw(self, rng, want_test):
        while True:
            n = int(rng.integers(self.min_len, self.max_len + 1))
            src = rng.integers(FIRST_SYMBOL, self.vocab_size, size=n)
            if self.is_test(src) == want_test:
                return src

    def samples(self, n, split="train", offset=0):
        """`n` (src, tgt) pairs from the named split's deterministic stream."""
        rng = stream(self.seed, f"task/{split}/{offset}")
        want = split == "test"
        out = []
        for _ in range(n):
            src = self._draw(rng, want)
            out.append((src, self.target(src)))
        return out

    def batches(self, batch_size, data_seed=None):
        """Endless stream of padded training batches."""
        rng = stream(self.seed if data_seed is None else data_seed, "data")
        while True:
            pairs = []
            for _ in range(batch_size):
                src = self._draw(rng, False)
                pairs.append((src, self.target(src)))
            yield pad_batch(pairs)


@dataclass
class Batch:
    src: np.ndarray      # B x S
    tgt_in: np.ndarray   # B x (T+1), BOS + target
    tgt_out: np.ndarray  # B x (T+1), target + EOS
    pairs: list

    @property
    def weights(self):
        return (self.tgt_out != PAD).astype(float)


def pad_batch(pairs):
    b = len(pairs)
    s_len = max(len(s) for s, _ in pairs)
    t_len = max(len(t) for _, t in pairs) + 1
    src = np.full((b, s_len), PAD, dtype=np.int64)
    tgt_in = np.full((b, t_len), PAD, dtype=np.int64)
    tgt_out = np.full((b, t_len), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(pairs):
        src[i, : len(s)] = s
        tgt_in[i, 0] = BOS
        tgt_in[i, 1: len(t) + 1] = t
        tgt_out[i, : len(t)] = t
        tgt_out[i, len(t)] = EOS
    return Batch(src, tgt_in, tgt_out, pairs)
