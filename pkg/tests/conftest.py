"""Shared test helpers: an independent finite-difference oracle and error metrics.

The helpers here deliberately know nothing about the package's backward
implementations; they probe scalar loss functions by perturbing inputs.
"""

import numpy as np
import pytest


def central_diff(f, x, eps=1e-5):
    """Central finite differences of scalar f at array x, entry by entry.

    Returns an array of f's partial derivatives with the same shape as x.
    f must not mutate x.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_err(analytic, numeric, floor=1e-8):
    """Max elementwise relative error, floored so near-zero pairs don't blow up."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
