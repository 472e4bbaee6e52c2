"""Parameter-update rules over named tensor dicts.

Plain gradient descent is used wherever updates must match hand algebra
exactly; Adagrad is the training default. Both update in place and are
deterministic functions of (tensors, grads, state).
"""

import numpy as np

from .diffcore import ShapeError

ADAGRAD_EPS = 1e-8


def _check_shapes(tensors, grads):
    for name, t in tensors.items():
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"missing gradient for tensor {name!r}")
        if g.shape != t.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor {name!r} "
                f"shape {t.shape}")


def sgd_step(tensors, grads, lr):
    """p <- p - lr * g, in place."""
    _check_shapes(tensors, grads)
    for name, t in tensors.items():
        t -= lr * grads[name]


class AdagradState:
    """Per-tensor accumulator of squared gradients.

    Accumulators start at zero and only grow, so per-coordinate step
    magnitudes never exceed lr and shrink under repeated gradients.
    """

    def __init__(self, tensors, eps=ADAGRAD_EPS):
        self.acc = {name: np.zeros_like(t) for name, t in tensors.items()}
        self.eps = eps


def adagrad_step(tensors, grads, state, lr):
    """acc += g^2; p <- p - lr * g / (sqrt(acc) + eps), in place."""
    _check_shapes(tensors, grads)
    _check_shapes(tensors, state.acc)
    for name, t in tensors.items():
        g = grads[name]
        a = state.acc[name]
        a += g * g
        t -= lr * g / (np.sqrt(a) + state.eps)
