"""Truncated backpropagation through time.

The stream is cut into consecutive windows of K transitions. A window of K
transitions spans K+1 tokens; consecutive windows share one token (the last
target of one window is the first input of the next), so the transitions
tile the stream without overlap. The hidden state carried between windows
is a constant: no gradient crosses a window boundary.
"""

from dataclasses import dataclass

import numpy as np

from . import model as m
from .config import ConfigError, Regime
from .evalmod import evaluate
from .optim import AdagradState, adagrad_step, sgd_step


@dataclass
class BpttConfig:
    k: int
    lr: float
    epochs: int
    regime: Regime = Regime.MINIBATCH
    optimizer: str = "adagrad"

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"window size must be >= 1, got {self.k}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adagrad", "sgd"):
            raise ConfigError(f"optimizer must be 'adagrad' or 'sgd', "
                              f"got {self.optimizer!r}")
        if not isinstance(self.regime, Regime):
            raise ConfigError(f"unknown regime {self.regime!r}")


def iter_windows(ids, k):
    """Yield (K+1)-token slices covering consecutive K-transition windows.

    The final window may be shorter; it is yielded as long as it still has
    at least one transition (two tokens), else dropped.
    """
    ids = np.asarray(ids)
    n = int(ids.size)
    for t in range(0, n - 1, k):
        yield ids[t: t + k + 1]


def bptt_window_grad(params, window_tokens, h_carry, grads=None):
    """Loss, parameter gradients and outgoing carry for one window.

    The carry enters as a constant, so no gradient reaches earlier windows.
    """
    res = m.seq_forward_backward(params, window_tokens, h_carry,
                                 treat_h_init_as_constant=True, grads=grads)
    return res.loss, res.h_last


def train_bptt(params, train_stream, config, valid_stream=None, log=None):
    """Windowed training over one long stream; returns per-epoch metrics.

    Minibatch regime takes one optimizer step per window, carrying the
    hidden state across the step; batch regime accumulates gradients over
    all windows and steps once per epoch. Each epoch starts a fresh pass
    with h = 0.
    """
    config.validate()
    ids = train_stream.ids if hasattr(train_stream, "ids") else np.asarray(train_stream)
    if ids.size < 2:
        raise ConfigError("training stream needs at least 2 tokens")
    state = AdagradState(params.tensors) if config.optimizer == "adagrad" else None

    def step(grads):
        if state is not None:
            adagrad_step(params.tensors, grads, state, config.lr)
        else:
            sgd_step(params.tensors, grads, config.lr)

    n_transitions = int(ids.size) - 1
    history = []
    for epoch in range(config.epochs):
        h_carry = np.zeros(params.d_h)
        total_loss = 0.0
        if config.regime is Regime.BATCH:
            params.zero_grads()
        for window in iter_windows(ids, config.k):
            if config.regime is Regime.MINIBATCH:
                params.zero_grads()
            loss, h_carry = bptt_window_grad(params, window, h_carry,
                                             grads=params.grads)
            total_loss += loss
            if config.regime is Regime.MINIBATCH:
                step(params.grads)
        if config.regime is Regime.BATCH:
            step(params.grads)
        record = {
            "epoch": epoch,
            "train_loss": float(total_loss),
            "train_nll": float(total_loss / n_transitions),
        }
        if valid_stream is not None:
            record["valid_ppl"] = evaluate(params, valid_stream).ppl
        history.append(record)
        if log is not None:
            log(record)
    return history
