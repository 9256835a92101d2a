"""Central finite-difference oracle for tape gradients."""

import numpy as np

from .tape import Tape, backward


def _scalar(out):
    v = out.value if hasattr(out, "value") else np.asarray(out)
    return float(np.sum(v))


def analytic_gradient(fn, point):
    tape = Tape()
    x = tape.leaf(point)
    out = fn(x)
    if not hasattr(out, "tape"):
        return np.zeros_like(x.value)
    return backward(tape, out)[x]


def numeric_gradient(fn, point, h=1e-5):
    point = np.array(point, dtype=float)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = _scalar(fn(point.copy()))
        flat[i] = orig - h
        down = _scalar(fn(point.copy()))
        flat[i] = orig
        g[i] = (up - down) / (2.0 * h)
    return grad


def finite_diff_check(fn, point, h=1e-5):
    """Max over coordinates of |analytic - central| / (|analytic| + 1e-12).

    ``fn`` maps one array argument (a tape leaf, or a plain array during the
    numeric pass) to a scalar.
    """
    a = analytic_gradient(fn, point)
    n = numeric_gradient(fn, point, h)
    err = np.abs(a - n) / (np.abs(a) + 1e-12)
    return float(np.max(err)) if err.size else 0.0
