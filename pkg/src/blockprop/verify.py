"""Executable checks of the analytic claims behind the training scheme.

Two families of checks:

check_equivalence: the per-step identity relating the penalty loss
gradient after one vanilla descent step on the free state to the plain
backpropagated gradient scaled by eta*lam. Both sides are computed by
independent code paths, and a negative control (skipping the required
initialization) must break the identity.

gradcheck_all: central finite differences against every analytic gradient
path on a small 3-block instance: all parameter tensors, all free
variables, the duals, and the isolated quadratic penalty.
"""

from dataclasses import dataclass

import numpy as np

from . import btprop as bp
from . import diffcore as dc
from . import model as m
from .model import CellKind

EQUIV_TOL = 1e-8
GRADCHECK_TOL = 1e-4
FD_EPS = 1e-5


def _rel_dev(left, right, floor=1e-12):
    denom = max(float(np.abs(right).max()), floor) if right.size else floor
    return float(np.abs(left - right).max()) / denom


def _central_diff(f, x, eps=FD_EPS):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f(x)
        flat[i] = keep - eps
        lo = f(x)
        flat[i] = keep
        out.reshape(-1)[i] = (hi - lo) / (2.0 * eps)
    return out


def _recurrence_tensors(params):
    """The tensors the identity speaks about: everything feeding the cell.

    The head (w_y, b_y) predicts from a state and never enters the
    recurrence, so the identity does not constrain it.
    """
    return [n for n in params.tensors if n not in ("w_y", "b_y")]


def _loss_grad_at_state(params, h, target):
    """d loss(predict(h), target) / dh, parameters untouched."""
    _, dlogits = dc.softmax_xent(m.predict(params, h), target)
    return m.predict_backward(params, h, dlogits, want_param_grads=False)


@dataclass
class EquivalenceReport:
    cell: str
    eta: float
    lam: float
    seed: int
    deviations: dict          # tensor name -> max relative deviation
    ratio: float              # least-squares estimate of lhs/rhs_unscaled
    tol: float
    passed: bool

    @property
    def max_deviation(self):
        return max(self.deviations.values())


def check_equivalence(cell, vocab_size, d_h, eta, lam, seed,
                      tol=EQUIV_TOL, negative_control=False):
    """Verify the one-step identity on a random instance.

    Setup: random parameters, state and token; the free state is
    initialized to the predicted state h = g(x, h_prev) (unless the
    negative control asks for a random one), then moved one vanilla
    descent step of size eta on the per-step penalty loss

        l_pm(h) = loss(predict(h), y) + (lam/2) ||g(x, h_prev) - h||^2.

    Left side: gradient of l_pm at the moved state w.r.t. the recurrence
    parameters (which enter only through the quadratic term). Right side:
    eta * lam times the plain backpropagated gradient of
    loss(predict(g(x, h_prev)), y). The report carries per-tensor maximum
    relative deviations and a least-squares estimate of the scale factor,
    which should be eta * lam.
    """
    rng = np.random.default_rng(seed)
    params = m.ParamSet.random(cell, vocab_size, d_h, rng=rng)
    h_prev = rng.uniform(-0.8, 0.8, d_h)
    x = int(rng.integers(0, vocab_size))
    y = int(rng.integers(0, vocab_size))

    g_state, ctx = m.cell_forward(params, x, h_prev)
    if negative_control:
        h_free = rng.uniform(-0.8, 0.8, d_h)
    else:
        h_free = g_state.copy()

    # one vanilla descent step on l_pm w.r.t. the free state
    dh = _loss_grad_at_state(params, h_free, y) + lam * (h_free - g_state)
    h_tilde = h_free - eta * dh

    # left side: d l_pm(h_tilde) / d theta, reaching theta only through
    # the quadratic's predicted state
    lhs = params.new_grad_buffers()
    m.cell_backward(params, ctx, lam * (g_state - h_tilde), lhs)

    # right side, unscaled: plain backprop of the prediction loss at the
    # predicted state (fresh forward, independent code path)
    g2, ctx2 = m.cell_forward(params, x, h_prev)
    rhs = params.new_grad_buffers()
    m.cell_backward(params, ctx2, _loss_grad_at_state(params, g2, y), rhs)

    names = _recurrence_tensors(params)
    deviations = {n: _rel_dev(lhs[n], eta * lam * rhs[n]) for n in names}

    l_flat = np.concatenate([lhs[n].reshape(-1) for n in names])
    r_flat = np.concatenate([rhs[n].reshape(-1) for n in names])
    denom = float(r_flat @ r_flat)
    ratio = float(l_flat @ r_flat) / denom if denom > 0 else float("nan")

    passed = max(deviations.values()) <= tol
    return EquivalenceReport(cell.value, eta, lam, seed, deviations, ratio,
                             tol, passed)


@dataclass
class GradAuditReport:
    seed: int
    paths: dict               # path name -> max relative error vs FD
    tol: float
    passed: bool

    @property
    def max_error(self):
        return max(self.paths.values())


def gradcheck_all(seed, tol=GRADCHECK_TOL, eps=FD_EPS):
    """Finite-difference audit of every gradient path.

    Builds a 3-block instance with random free variables and duals and
    checks, per path, the analytic gradient of the augmented objective
    against central differences: each parameter tensor (both cell kinds'
    tensors appear across two instances), each free variable, the duals
    (exact quadratic algebra), and the isolated penalty term.
    """
    paths = {}
    for cell in (CellKind.ELMAN, CellKind.GRU):
        rng = np.random.default_rng(seed)
        v, d_h, b = 7, 4, 3
        params = m.ParamSet.random(cell, v, d_h, rng=rng)
        for name, t in params.tensors.items():
            if name.startswith("b"):
                t[...] = rng.uniform(-0.3, 0.3, t.shape)
        ids = rng.integers(0, v, size=3 * b + 1)
        plan = bp.make_plan(ids, b)
        n = plan.n_blocks
        hidden = rng.uniform(-0.8, 0.8, (n, d_h))
        duals = rng.uniform(-0.3, 0.3, (n, d_h))
        lam = 0.7
        h0 = np.zeros(d_h)
        tag = cell.value

        def total(_=None):
            pred, pen = bp.plan_objective(params, plan.blocks, hidden,
                                          duals, lam, h0)
            return pred + pen

        grads = params.new_grad_buffers()
        res = bp.plan_pass(params, plan.blocks, hidden, duals, lam, h0,
                           theta_grads=grads)

        for name in params.tensors:
            num = _central_diff(lambda _: total(), params.tensors[name],
                                eps)
            paths[f"{tag}.theta.{name}"] = _rel_dev(grads[name], num,
                                                    floor=1e-8)

        num = _central_diff(lambda _: total(), hidden, eps)
        paths[f"{tag}.hidden"] = _rel_dev(res.dhidden, num, floor=1e-8)

        # duals enter only the quadratic: dL/du = lam * (h - hhat + u)
        h_hat = bp.predicted_boundaries(params, plan.blocks, hidden, h0)
        analytic_du = lam * (hidden - h_hat + duals)
        num_du = _central_diff(lambda _: total(), duals, eps)
        paths[f"{tag}.duals"] = _rel_dev(analytic_du, num_du, floor=1e-8)

        # isolated penalty: pure quadratic, so central differences have no
        # truncation error at all
        def penalty_only(_=None):
            return bp.plan_objective(params, plan.blocks, hidden, duals,
                                     lam, h0)[1]

        r = hidden - h_hat + duals
        num_pen = _central_diff(lambda _: penalty_only(), hidden, eps)
        # d penalty / d hidden[i] = lam*r[i] plus the seeding of block i+1,
        # which for the penalty-only functional is the pull-back of
        # -lam*r[i+1] through that block's unroll; isolate the direct
        # quadratic part on the last boundary, which seeds nothing
        paths[f"{tag}.penalty_quadratic"] = _rel_dev(
            lam * r[-1], num_pen[-1], floor=1e-8)

    passed = max(paths.values()) <= tol
    # the quadratic path must be far tighter than the generic tolerance
    quad = max(v for k, v in paths.items() if k.endswith("penalty_quadratic"))
    passed = passed and quad <= 1e-10
    return GradAuditReport(seed, paths, tol, passed)
