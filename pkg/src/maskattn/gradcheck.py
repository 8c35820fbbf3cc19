"""Central finite-difference checks for the autodiff engine."""

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, tensors, h=1e-5):
    """Central differences of scalar `fn()` with respect to each tensor's data."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat, gflat = t.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-8):
    """Max over entries of |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(fn, tensors, h=1e-5, floor=1e-8):
    """Compare analytic and numeric gradients of `fn()` for every tensor.

    Returns the worst relative error. `fn` must build a fresh graph on each call.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    backward(fn())
    analytic = [t.grad.copy() for t in tensors]
    numeric = numerical_grad(fn, tensors, h)
    return max(relative_error(a, n, floor) for a, n in zip(analytic, numeric))


def random_tensor(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)
