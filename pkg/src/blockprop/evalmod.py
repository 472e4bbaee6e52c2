"""Frozen-parameter evaluation: perplexity via the plain recurrence.

No truncation, no free variables: one sequential forward pass from h = 0
over the whole stream, scoring each next token. Also provides the add-one
smoothed unigram baseline used as the desk-scale success gate.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import model as m


@dataclass
class EvalResult:
    n_transitions: int
    nll: float          # mean negative log-likelihood, nats per transition
    ppl: float          # exp(nll)


def evaluate(params, stream):
    """Score every next-token transition of the stream, starting from h = 0."""
    ids = stream.ids if hasattr(stream, "ids") else np.asarray(stream)
    n = int(ids.size)
    if n < 2:
        raise ValueError(f"need at least 2 tokens to evaluate, got {n}")
    h = np.zeros(params.d_h)
    total = 0.0
    for i in range(n - 1):
        h, _ = m.cell_forward(params, int(ids[i]), h)
        step, _ = dc.softmax_xent(m.predict(params, h), int(ids[i + 1]))
        total += step
    nll = total / (n - 1)
    return EvalResult(n - 1, nll, float(np.exp(nll)))


def unigram_ppl(train_stream, eval_stream, vocab_size):
    """Add-one smoothed unigram baseline.

    Probabilities come from train-stream counts, p(w) = (c_w + 1)/(N + V),
    and are scored on every token of the eval stream.
    """
    train_ids = train_stream.ids if hasattr(train_stream, "ids") else np.asarray(train_stream)
    eval_ids = eval_stream.ids if hasattr(eval_stream, "ids") else np.asarray(eval_stream)
    if eval_ids.size == 0:
        raise ValueError("nothing to score")
    counts = np.bincount(train_ids, minlength=vocab_size).astype(np.float64)
    logp = np.log(counts + 1.0) - np.log(train_ids.size + vocab_size)
    nll = -float(logp[eval_ids].mean())
    return float(np.exp(nll))
