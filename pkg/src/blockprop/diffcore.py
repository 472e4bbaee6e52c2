"""Dense float64 numeric kernel: forward ops and exact analytic backward passes.

Everything operates on plain ``numpy.ndarray`` with dtype float64, rank 1 or 2.
There is no tape: every differentiable op has a hand-written companion
``<op>_backward`` that accumulates vector-Jacobian products into caller-owned
gradient buffers with ``+=`` semantics, so running a backward twice without
zeroing doubles the gradient. ``backward_of`` maps a forward op to its
companion.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class StateError(RuntimeError):
    """A backward pass was invoked without its saved forward context."""


def _require_saved(*arrays):
    if any(a is None for a in arrays):
        raise StateError("backward called without saved forward context")


def matvec(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product w @ v for w of shape (m, n) and v of shape (n,)."""
    if w.ndim != 2 or v.ndim != 1 or w.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec shapes do not conform: {w.shape} x {v.shape}")
    return w @ v


def matvec_backward(g, w, v, dw, dv):
    """Accumulate dw += outer(g, v) and dv += w.T @ g."""
    _require_saved(w, v)
    dw += np.outer(g, v)
    dv += w.T @ g


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, branch-split so exp never sees a positive argument."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(g, y, dx):
    """dx += g * y * (1 - y), with y the saved forward output."""
    _require_saved(y)
    dx += g * y * (1.0 - y)


def tanh_(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(g, y, dx):
    """dx += g * (1 - y**2), with y the saved forward output."""
    _require_saved(y)
    dx += g * (1.0 - y * y)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shapes differ: {a.shape} vs {b.shape}")
    return a * b


def hadamard_backward(g, a, b, da, db):
    """Product rule: da += g*b, db += g*a."""
    _require_saved(a, b)
    da += g * b
    db += g * a


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return a + b


def add_backward(g, da, db):
    da += g
    db += g


def softmax_xent(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(logits) against a class index.

    Returns (loss, dloss/dlogits). Uses max-subtraction; the gradient is
    softmax(logits) - onehot(target) and is returned fresh (not accumulated).
    """
    if logits.ndim != 1:
        raise ShapeError(f"softmax_xent expects a vector, got shape {logits.shape}")
    v = logits.shape[0]
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range for {v} classes")
    z = logits - np.max(logits)
    ez = np.exp(z)
    total = ez.sum()
    loss = float(np.log(total) - z[target])
    dlogits = ez / total
    dlogits[target] -= 1.0
    return loss, dlogits


_BACKWARD = {
    matvec: matvec_backward,
    sigmoid: sigmoid_backward,
    tanh_: tanh_backward,
    hadamard: hadamard_backward,
    add: add_backward,
}


def backward_of(op):
    """The analytic backward companion of a forward op."""
    try:
        return _BACKWARD[op]
    except KeyError:
        raise ValueError(f"no registered backward for {getattr(op, '__name__', op)!r}") from None
