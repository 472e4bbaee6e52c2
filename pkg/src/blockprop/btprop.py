"""Blocked target propagation.

The stream is cut into blocks of B transitions. Each block b owns one free
hidden variable: the state at its end. Inside a block the usual recurrence
runs from the previous block's free variable (a constant h = 0 for block
0), per-step prediction losses are summed over the unrolled states, and a
single boundary penalty (lam/2)||h_b - hhat_b + u_b||^2 ties the block's
final unrolled state hhat_b to its free variable h_b. With B = 1 every
time step owns a free variable and the construction degenerates to a
penalty at each step.

The augmented objective is minimized by alternating descent: H-steps on
the free variables, theta-steps on the parameters, then (under the
schedules that use duals) one dual ascent step. Gradients are computed
block by block into private buffers and reduced in block-index order, so
sequential and thread-parallel execution produce bit-identical results.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import model as m
from .config import ConfigError, Regime, Schedule
from .evalmod import evaluate
from .optim import AdagradState, adagrad_step, sgd_step


@dataclass(frozen=True)
class Block:
    index: int
    start: int            # token index of the block's first input
    tokens: np.ndarray    # inputs plus final target; len = transitions + 1


@dataclass
class BlockPlan:
    b: int
    blocks: list

    @property
    def n_blocks(self):
        return len(self.blocks)


def make_plan(ids, b):
    """Cut a stream into blocks of b transitions.

    Block k covers transitions [k*b, (k+1)*b); its token slice overlaps the
    next block by one token, like the window slicing in bptt. A final
    partial block is kept if it has at least one transition.
    """
    if b < 1:
        raise ConfigError(f"block size must be >= 1, got {b}")
    ids = np.asarray(ids)
    blocks = [Block(i, t, ids[t: t + b + 1])
              for i, t in enumerate(range(0, int(ids.size) - 1, b))]
    return BlockPlan(b, blocks)


class BlockResult(NamedTuple):
    pred_loss: float
    penalty: float
    dh_in: np.ndarray
    dh_next: np.ndarray
    h_hat: np.ndarray


def block_forward_backward(params, tokens, h_in, h_next, u, lam,
                           grads=None, want_param_grads=True):
    """One block's loss and gradients.

    Unrolls the recurrence from h_in (a constant here; its gradient is
    returned for the caller to route to the owning free variable), sums
    the per-step prediction losses, and adds the boundary penalty
    (lam/2)||h_next - h_hat + u||^2 on the final unrolled state h_hat.
    Parameter gradients accumulate into `grads`. The penalty reaches theta
    only through h_hat; its gradient on h_next is exactly
    lam*(h_next - h_hat + u).
    """
    loss, ctxs, dls, h_hat = m.unroll_forward(params, tokens, h_in)
    r = h_next - h_hat + u
    scaled = lam * r
    penalty = 0.5 * float(scaled @ r)
    dh_in = m.unroll_backward(params, ctxs, dls, -scaled, grads,
                              want_param_grads)
    return BlockResult(loss, penalty, dh_in, scaled, h_hat)


def chained_boundaries(params, blocks, h0):
    """Forward predictions with state carried across blocks.

    Returns the predicted state at each block end plus the total
    prediction loss. This is the plain recurrence: the values a fresh
    hidden store is initialized to.
    """
    states = np.empty((len(blocks), params.d_h))
    h = h0
    total = 0.0
    for i, blk in enumerate(blocks):
        loss, h = m.seq_loss(params, blk.tokens, h)
        states[i] = h
        total += loss
    return states, total


def predicted_boundaries(params, blocks, hidden, h0):
    """Each block's final unrolled state, seeded from the free variables."""
    out = np.empty_like(hidden)
    for i, blk in enumerate(blocks):
        seed = h0 if i == 0 else hidden[i - 1]
        _, out[i] = m.seq_loss(params, blk.tokens, seed)
    return out


def plan_objective(params, blocks, hidden, duals, lam, h0):
    """(prediction loss, penalty) of the augmented objective, forward only."""
    pred = 0.0
    penalty = 0.0
    for i, blk in enumerate(blocks):
        seed = h0 if i == 0 else hidden[i - 1]
        loss, h_hat = m.seq_loss(params, blk.tokens, seed)
        r = hidden[i] - h_hat + duals[i]
        pred += loss
        penalty += 0.5 * lam * float(r @ r)
    return pred, penalty


class PassResult(NamedTuple):
    pred_loss: float
    penalty: float
    dhidden: np.ndarray


def plan_pass(params, blocks, hidden, duals, lam, h0, *, threads=1,
              want_theta=True, theta_grads=None):
    """Full gradient pass over the given blocks.

    Every block is an independent work unit writing into private buffers;
    partial results are reduced in block-index order afterwards, so the
    reduction is identical whether the units ran sequentially or on a
    thread pool. Free variable i receives gradient from its own penalty
    (block i) and from seeding block i+1's unroll. Parameter gradients
    accumulate into theta_grads (params.grads by default) when want_theta.
    """
    if want_theta and theta_grads is None:
        theta_grads = params.grads

    def work(i):
        blk = blocks[i]
        seed = h0 if i == 0 else hidden[i - 1]
        g = params.new_grad_buffers() if want_theta else None
        res = block_forward_backward(params, blk.tokens, seed, hidden[i],
                                     duals[i], lam, grads=g,
                                     want_param_grads=want_theta)
        return res, g

    n = len(blocks)
    dhidden = np.zeros_like(hidden)
    pred = 0.0
    penalty = 0.0

    def reduce_in_order(indexed_results):
        nonlocal pred, penalty
        for i, (res, g) in indexed_results:
            pred += res.pred_loss
            penalty += res.penalty
            if want_theta:
                for name in theta_grads:
                    theta_grads[name] += g[name]
            if i > 0:
                dhidden[i - 1] += res.dh_in
            dhidden[i] += res.dh_next

    chunk = max(1, threads) * 4
    if threads <= 1:
        for lo in range(0, n, chunk):
            reduce_in_order((i, work(i)) for i in range(lo, min(lo + chunk, n)))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for lo in range(0, n, chunk):
                idx = range(lo, min(lo + chunk, n))
                reduce_in_order(zip(idx, pool.map(work, idx)))
    return PassResult(pred, penalty, dhidden)


@dataclass
class TPropConfig:
    b: int
    lam: float
    lr_theta: float
    lr_h: float = 0.0
    alpha_u: float = 0.0
    h_steps: int = 0
    theta_steps: int = 1
    schedule: Schedule = Schedule.ADMM
    regime: Regime = Regime.BATCH
    minibatch_blocks: int = 1
    epochs: int = 1
    theta_optimizer: str = "adagrad"
    h_optimizer: str = "sgd"
    h_reinit_each_epoch: bool = False
    threads: int = 1

    def validate(self):
        if self.b < 1:
            raise ConfigError(f"block size must be >= 1, got {self.b}")
        if self.lam < 0:
            raise ConfigError(f"penalty weight must be >= 0, got {self.lam}")
        for label, v in (("theta learning rate", self.lr_theta),
                         ("H learning rate", self.lr_h),
                         ("dual step size", self.alpha_u)):
            if v < 0:
                raise ConfigError(f"{label} must be >= 0, got {v}")
        for label, v in (("H-steps", self.h_steps),
                         ("theta-steps", self.theta_steps)):
            if v < 0:
                raise ConfigError(f"{label} must be >= 0, got {v}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.minibatch_blocks < 1:
            raise ConfigError(f"minibatch blocks must be >= 1, "
                              f"got {self.minibatch_blocks}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not isinstance(self.schedule, Schedule):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if not isinstance(self.regime, Regime):
            raise ConfigError(f"unknown regime {self.regime!r}")
        for label, v in (("theta optimizer", self.theta_optimizer),
                         ("H optimizer", self.h_optimizer)):
            if v not in ("adagrad", "sgd"):
                raise ConfigError(f"{label} must be 'adagrad' or 'sgd', "
                                  f"got {v!r}")


def h_step(params, blocks, hidden, duals, cfg, h0, *, h_state=None):
    """cfg.h_steps rounds of descent on the free variables, theta fixed.

    Plain gradient descent by default. If a round increases the objective
    it is retried once at half the step size and accepted either way; the
    number of such retries is returned. The Adagrad option applies its
    step directly with no retry (its effective step is already damped).
    """
    backtracks = 0
    for _ in range(cfg.h_steps):
        res = plan_pass(params, blocks, hidden, duals, cfg.lam, h0,
                        threads=cfg.threads, want_theta=False)
        if cfg.h_optimizer == "adagrad":
            adagrad_step({"hidden": hidden}, {"hidden": res.dhidden},
                         h_state, cfg.lr_h)
            continue
        before = res.pred_loss + res.penalty
        prev = hidden.copy()
        hidden -= cfg.lr_h * res.dhidden
        after = sum(plan_objective(params, blocks, hidden, duals, cfg.lam, h0))
        if after > before:
            hidden[...] = prev - 0.5 * cfg.lr_h * res.dhidden
            backtracks += 1
    return backtracks


def theta_step(params, blocks, hidden, duals, cfg, h0, *, theta_state=None):
    """cfg.theta_steps optimizer steps on theta, free variables fixed."""
    for _ in range(cfg.theta_steps):
        params.zero_grads()
        plan_pass(params, blocks, hidden, duals, cfg.lam, h0,
                  threads=cfg.threads, want_theta=True,
                  theta_grads=params.grads)
        if cfg.theta_optimizer == "adagrad":
            adagrad_step(params.tensors, params.grads, theta_state,
                         cfg.lr_theta)
        else:
            sgd_step(params.tensors, params.grads, cfg.lr_theta)


def dual_step(params, blocks, hidden, duals, cfg, h0):
    """Dual ascent u += alpha_u * lam * (h - hhat + u) at every boundary.

    Returns the plain residuals h - hhat (before the update) so callers
    can log them. The penalty's u-gradient carries the factor lam; a
    schedule without duals must never take this step.
    """
    if cfg.schedule is Schedule.PM:
        raise ConfigError("the penalty-method schedule has no dual step")
    h_hat = predicted_boundaries(params, blocks, hidden, h0)
    residual = hidden - h_hat
    duals += cfg.alpha_u * cfg.lam * (residual + duals)
    return residual


def _mean_residual_norm(residual):
    return float(np.mean(np.sqrt((residual * residual).sum(axis=1))))


def _alm_joint_step(params, blocks, hidden, duals, cfg, h0, theta_state):
    """Simultaneous descent on (hidden, theta): both gradients from one
    pass at the current point, then both updates. No retry logic."""
    rounds = max(cfg.h_steps, cfg.theta_steps)
    for r in range(rounds):
        params.zero_grads()
        res = plan_pass(params, blocks, hidden, duals, cfg.lam, h0,
                        threads=cfg.threads, want_theta=r < cfg.theta_steps,
                        theta_grads=params.grads)
        if r < cfg.h_steps:
            hidden -= cfg.lr_h * res.dhidden
        if r < cfg.theta_steps:
            if cfg.theta_optimizer == "adagrad":
                adagrad_step(params.tensors, params.grads, theta_state,
                             cfg.lr_theta)
            else:
                sgd_step(params.tensors, params.grads, cfg.lr_theta)


def _run_schedule(params, blocks, hidden, duals, cfg, h0, theta_state,
                  h_state):
    """One outer iteration on the given blocks. Returns (backtracks,
    plain residuals or None if the schedule never measured them)."""
    residual = None
    if cfg.schedule is Schedule.ALM:
        _alm_joint_step(params, blocks, hidden, duals, cfg, h0, theta_state)
        residual = dual_step(params, blocks, hidden, duals, cfg, h0)
        return 0, residual
    backtracks = h_step(params, blocks, hidden, duals, cfg, h0,
                        h_state=h_state)
    theta_step(params, blocks, hidden, duals, cfg, h0,
               theta_state=theta_state)
    if cfg.schedule is Schedule.ADMM:
        residual = dual_step(params, blocks, hidden, duals, cfg, h0)
    return backtracks, residual


def train_btprop(params, train_stream, cfg, valid_stream=None, log=None,
                 on_segment=None):
    """Train with blocked target propagation; returns per-epoch metrics.

    Batch regime: the plan covers the whole stream, the hidden store is
    initialized once to the forward predictions and persists across outer
    iterations (epochs), duals persist too; --h-reinit-each-epoch instead
    re-chains the hidden store from the current parameters each iteration
    (duals persist either way, they estimate the same constraints).

    Minibatch regime: contiguous segments of minibatch_blocks blocks are
    visited in order. Each segment's free variables are re-initialized to
    the current forward predictions and its duals to zero, the schedule
    runs on the segment, and the state carried to the next segment is the
    pre-update forward value, exactly like the bptt carry.

    on_segment(index, blocks, carry, hidden), if given, is called per
    minibatch segment after initialization and before any update; audit
    hooks use it to inspect the pre-update state.
    """
    cfg.validate()
    ids = train_stream.ids if hasattr(train_stream, "ids") else np.asarray(train_stream)
    if ids.size < 2:
        raise ConfigError("training stream needs at least 2 tokens")
    plan = make_plan(ids, cfg.b)
    n_transitions = int(ids.size) - 1
    h0 = np.zeros(params.d_h)
    theta_state = (AdagradState(params.tensors)
                   if cfg.theta_optimizer == "adagrad" else None)

    history = []

    def finish_epoch(epoch, record):
        if valid_stream is not None:
            record["valid_ppl"] = evaluate(params, valid_stream).ppl
        history.append(record)
        if log is not None:
            log(record)

    if cfg.regime is Regime.BATCH:
        hidden, _ = chained_boundaries(params, plan.blocks, h0)
        duals = np.zeros_like(hidden)
        h_state = (AdagradState({"hidden": hidden})
                   if cfg.h_optimizer == "adagrad" else None)
        for epoch in range(cfg.epochs):
            if cfg.h_reinit_each_epoch and epoch > 0:
                hidden[...], _ = chained_boundaries(params, plan.blocks, h0)
            pred, penalty = plan_objective(params, plan.blocks, hidden,
                                           duals, cfg.lam, h0)
            backtracks, residual = _run_schedule(
                params, plan.blocks, hidden, duals, cfg, h0, theta_state,
                h_state)
            if residual is None:
                residual = hidden - predicted_boundaries(params, plan.blocks,
                                                         hidden, h0)
            record = {
                "epoch": epoch,
                "train_loss": float(pred),
                "train_nll": float(pred / n_transitions),
                "penalty": float(penalty),
                "mean_residual": _mean_residual_norm(residual),
                "h_backtracks": backtracks,
            }
            finish_epoch(epoch, record)
        return history

    segments = [plan.blocks[i: i + cfg.minibatch_blocks]
                for i in range(0, plan.n_blocks, cfg.minibatch_blocks)]
    for epoch in range(cfg.epochs):
        carry = h0
        total_pred = 0.0
        backtracks = 0
        for seg_index, seg in enumerate(segments):
            hidden, pred_init = chained_boundaries(params, seg, carry)
            duals = np.zeros_like(hidden)
            next_carry = hidden[-1].copy()
            if on_segment is not None:
                on_segment(seg_index, seg, carry, hidden)
            h_state = (AdagradState({"hidden": hidden})
                       if cfg.h_optimizer == "adagrad" else None)
            bt, _ = _run_schedule(params, seg, hidden, duals, cfg, carry,
                                  theta_state, h_state)
            backtracks += bt
            total_pred += pred_init
            carry = next_carry
        record = {
            "epoch": epoch,
            "train_loss": float(total_pred),
            "train_nll": float(total_pred / n_transitions),
            "h_backtracks": backtracks,
        }
        finish_epoch(epoch, record)
    return history
