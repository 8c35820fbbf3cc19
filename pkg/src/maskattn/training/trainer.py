"""Seeded training loop and held-out evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..errors import DivergenceError
from ..model import EOS, greedy_decode_batch, save_checkpoint
from ..rng import stream
from .optim import Adam, LrSchedule, clip_grad_norm
from .tasks import pad_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup: int = 100
    smoothing: float = 0.1
    clip_norm: float | None = 1.0
    eval_size: int = 256
    eval_batch: int = 128

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")


@dataclass
class TrainingReport:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    token_accuracy: float = float("nan")
    exact_match: float = float("nan")
    teacher_forced_accuracy: float = float("nan")
    eval_size: int = 0
    param_count: int = 0
    checkpoint: str | None = None

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "grad_norm", "lr"])
        for row in zip(self.steps, self.losses, self.grad_norms, self.lrs):
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()

    def summary(self):
        return {
            "steps": len(self.steps),
            "final_loss": self.losses[-1] if self.losses else None,
            "token_accuracy": self.token_accuracy,
            "exact_match": self.exact_match,
            "teacher_forced_accuracy": self.teacher_forced_accuracy,
            "eval_size": self.eval_size,
            "param_count": self.param_count,
            "checkpoint": self.checkpoint,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def batch_loss(model, batch, smoothing, rng=None):
    logits = model.forward_batch(batch.src, batch.tgt_in, rng=rng)
    v = logits.shape[-1]
    flat = T.reshape(logits, (-1, v))
    loss = T.cross_entropy_label_smoothed(flat, batch.tgt_out.reshape(-1), smoothing,
                                          weights=batch.weights.reshape(-1))
    return loss, logits


def evaluate(model, pairs, batch_size=128):
    """Greedy-decode every source and score against its reference.

    Token accuracy compares the decoded sequence (plus EOS) to the reference
    (plus EOS) position by position over the reference length. Exact match
    needs the whole decoded sequence to equal the reference.
    """
    correct = total = exact = tf_correct = tf_total = 0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i: i + batch_size]
        batch = pad_batch(chunk)
        max_len = batch.tgt_out.shape[1]
        decoded = greedy_decode_batch(model, batch.src, max_len=max_len)
        for (src, ref), hyp in zip(chunk, decoded):
            ref_e = list(ref) + [EOS]
            hyp_e = list(hyp) + [EOS]
            correct += sum(1 for j, r in enumerate(ref_e) if j < len(hyp_e) and hyp_e[j] == r)
            total += len(ref_e)
            exact += int(list(hyp) == list(ref))
        with T.no_grad():
            logits = model.forward_batch(batch.src, batch.tgt_in)
        pred = np.argmax(logits.data, axis=-1)
        w = batch.tgt_out != 0
        tf_correct += int(((pred == batch.tgt_out) & w).sum())
        tf_total += int(w.sum())
    return correct / total, exact / len(pairs), tf_correct / tf_total


def train(model, task, config=None, seed=0, checkpoint_dir=None, log_every=0):
    """Train `model` on `task` and evaluate on the task's held-out split.

    Randomness: batches come from the ``data`` stream and dropout from the
    ``dropout`` stream of `seed`; the model's own init stream was consumed at
    construction. Raises DivergenceError naming the step on a non-finite loss.
    """
    cfg = config or TrainConfig()
    sched = LrSchedule(cfg.peak_lr, cfg.warmup)
    opt = Adam(model.params)
    drop_rng = stream(seed, "dropout")
    data = task.batches(cfg.batch_size, data_seed=seed)
    report = TrainingReport(param_count=model.param_count())

    for step in range(1, cfg.steps + 1):
        batch = next(data)
        loss, _ = batch_loss(model, batch, cfg.smoothing, rng=drop_rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        model.zero_grad()
        T.backward(loss)
        norm = clip_grad_norm(model.params, cfg.clip_norm)
        if not math.isfinite(norm):
            raise DivergenceError(step, norm)
        lr = sched(step)
        opt.step(lr)
        report.steps.append(step)
        report.losses.append(value)
        report.grad_norms.append(norm)
        report.lrs.append(lr)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f |g| %.3f lr %.2e", step, value, norm, lr)

    model.zero_grad()
    test = task.samples(cfg.eval_size, "test")
    report.token_accuracy, report.exact_match, report.teacher_forced_accuracy = evaluate(model, test, cfg.eval_batch)
    report.eval_size = len(test)
    if checkpoint_dir is not None:
        report.checkpoint = str(save_checkpoint(model, checkpoint_dir))
    return report
