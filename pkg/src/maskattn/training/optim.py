"""Adam, the inverse square-root warmup schedule and global-norm clipping."""

import math

import numpy as np


class LrSchedule:
    """lr(t) = peak * min(t / W, sqrt(W / t)) for steps t >= 1."""

    def __init__(self, peak=1e-3, warmup=100):
        if peak <= 0 or warmup < 1:
            raise ValueError("peak must be positive and warmup >= 1")
        self.peak = peak
        self.warmup = warmup

    def __call__(self, step):
        if step < 1:
            raise ValueError("schedule steps start at 1")
        return self.peak * min(step / self.warmup, math.sqrt(self.warmup / step))


class Adam:
    """Adam with bias correction over a name -> Tensor mapping."""

    def __init__(self, params, betas=(0.9, 0.98), eps=1e-9):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, lr):
        self.step_count += 1
        b1, b2, t = self.beta1, self.beta2, self.step_count
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def global_grad_norm(params):
    return math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params.values() if t.grad is not None))


def clip_grad_norm(params, max_norm):
    """Rescale all gradients in place so their joint L2 norm is at most `max_norm`.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if max_norm is not None and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for t in params.values():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm
