"""Recurrent cells (Elman, GRU), the language-model head, and sequence passes.

A ParamSet holds every model tensor by name in one dict, with a parallel dict
of gradient buffers. Backward passes write into a grads dict with ``+=``
semantics so per-block partial gradients can be produced independently and
reduced in a fixed order.

Checkpoints are a versioned named-tensor container: a fixed header (magic,
format version, cell kind, bias flag, V, d_in, d_h) followed by one record per
tensor (name length, name, rank, dims, raw little-endian float64 data).
Round-trips are bit-exact.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import diffcore as dc

CHECKPOINT_MAGIC = b"BLKPROP1"
CHECKPOINT_VERSION = 1


class CellKind(str, enum.Enum):
    ELMAN = "elman"
    GRU = "gru"


def _cell_tensor_shapes(kind: CellKind, v: int, d_in: int, d_h: int, use_bias: bool):
    shapes = {"embedding": (v, d_in)}
    if kind is CellKind.ELMAN:
        shapes.update({"w_x": (d_h, d_in), "w_h": (d_h, d_h)})
        if use_bias:
            shapes["b"] = (d_h,)
    else:
        for g in ("z", "r", "c"):
            shapes[f"w_{g}"] = (d_h, d_in)
            shapes[f"u_{g}"] = (d_h, d_h)
            if use_bias:
                shapes[f"b_{g}"] = (d_h,)
    shapes["w_y"] = (v, d_h)
    if use_bias:
        shapes["b_y"] = (v,)
    return shapes


@dataclass
class ParamSet:
    """Named model tensors plus a parallel gradient collection."""

    kind: CellKind
    vocab_size: int
    d_in: int
    d_h: int
    use_bias: bool
    tensors: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = _cell_tensor_shapes(self.kind, self.vocab_size, self.d_in, self.d_h, self.use_bias)
        if set(expected) != set(self.tensors):
            raise dc.ShapeError(f"tensor names {sorted(self.tensors)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise dc.ShapeError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")
        if not self.grads:
            self.grads = self.new_grad_buffers()

    @classmethod
    def random(cls, kind: CellKind, vocab_size: int, d_h: int, *, d_in: int | None = None,
               use_bias: bool = True, rng: np.random.Generator | None = None) -> "ParamSet":
        """Uniform(-a, a) init with a = 1/sqrt(fan_in); biases start at zero."""
        if d_in is None:
            d_in = d_h
        for label, v in (("vocab_size", vocab_size), ("d_h", d_h), ("d_in", d_in)):
            if v < 1:
                raise ValueError(f"{label} must be >= 1, got {v}")
        if rng is None:
            rng = np.random.default_rng(0)
        tensors = {}
        for name, shape in _cell_tensor_shapes(kind, vocab_size, d_in, d_h, use_bias).items():
            if name.startswith("b"):
                tensors[name] = np.zeros(shape)
            else:
                fan_in = shape[-1]
                a = 1.0 / np.sqrt(fan_in)
                tensors[name] = rng.uniform(-a, a, shape)
        return cls(kind, vocab_size, d_in, d_h, use_bias, tensors)

    def new_grad_buffers(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamSet":
        return ParamSet(self.kind, self.vocab_size, self.d_in, self.d_h, self.use_bias,
                        {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class StepContext:
    """Saved activations from one forward step, consumed by cell_backward."""

    token: int
    h_prev: np.ndarray
    e: np.ndarray
    h: np.ndarray
    z: np.ndarray | None = None
    r: np.ndarray | None = None
    c: np.ndarray | None = None
    rh: np.ndarray | None = None


def cell_forward(params: ParamSet, token: int, h_prev: np.ndarray) -> tuple[np.ndarray, StepContext]:
    """One recurrence step h_t = g(x_t, h_prev); returns the new state and its context."""
    if not 0 <= token < params.vocab_size:
        raise IndexError(f"token {token} out of range for vocab {params.vocab_size}")
    t = params.tensors
    e = t["embedding"][token]
    if params.kind is CellKind.ELMAN:
        a = t["w_x"] @ e + t["w_h"] @ h_prev
        if params.use_bias:
            a = a + t["b"]
        h = dc.sigmoid(a)
        return h, StepContext(token, h_prev, e, h)
    az = t["w_z"] @ e + t["u_z"] @ h_prev
    ar = t["w_r"] @ e + t["u_r"] @ h_prev
    if params.use_bias:
        az = az + t["b_z"]
        ar = ar + t["b_r"]
    z = dc.sigmoid(az)
    r = dc.sigmoid(ar)
    rh = r * h_prev
    ac = t["w_c"] @ e + t["u_c"] @ rh
    if params.use_bias:
        ac = ac + t["b_c"]
    c = np.tanh(ac)
    h = (1.0 - z) * h_prev + z * c
    return h, StepContext(token, h_prev, e, h, z=z, r=r, c=c, rh=rh)


def cell_backward(params: ParamSet, ctx: StepContext, dh: np.ndarray,
                  grads: dict[str, np.ndarray] | None = None,
                  want_param_grads: bool = True) -> np.ndarray:
    """Backward through one recurrence step.

    Accumulates parameter gradients into `grads` (params.grads by default)
    unless want_param_grads is False, and returns dloss/dh_prev.
    """
    if grads is None:
        grads = params.grads
    t = params.tensors
    if params.kind is CellKind.ELMAN:
        da = dh * ctx.h * (1.0 - ctx.h)
        dh_prev = t["w_h"].T @ da
        if want_param_grads:
            grads["w_x"] += np.outer(da, ctx.e)
            grads["w_h"] += np.outer(da, ctx.h_prev)
            if params.use_bias:
                grads["b"] += da
            de = t["w_x"].T @ da
            grads["embedding"][ctx.token] += de
        return dh_prev

    z, r, c, rh = ctx.z, ctx.r, ctx.c, ctx.rh
    dz = dh * (c - ctx.h_prev)
    dc_ = dh * z
    dh_prev = dh * (1.0 - z)

    dac = dc_ * (1.0 - c * c)
    drh = t["u_c"].T @ dac
    dr = drh * ctx.h_prev
    dh_prev = dh_prev + drh * r

    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dh_prev = dh_prev + t["u_z"].T @ daz + t["u_r"].T @ dar

    if want_param_grads:
        grads["u_c"] += np.outer(dac, rh)
        grads["u_z"] += np.outer(daz, ctx.h_prev)
        grads["u_r"] += np.outer(dar, ctx.h_prev)
        grads["w_c"] += np.outer(dac, ctx.e)
        grads["w_z"] += np.outer(daz, ctx.e)
        grads["w_r"] += np.outer(dar, ctx.e)
        if params.use_bias:
            grads["b_c"] += dac
            grads["b_z"] += daz
            grads["b_r"] += dar
        de = t["w_c"].T @ dac + t["w_z"].T @ daz + t["w_r"].T @ dar
        grads["embedding"][ctx.token] += de
    return dh_prev


def predict(params: ParamSet, h: np.ndarray) -> np.ndarray:
    """Next-token logits for a hidden state (softmax is folded into the loss)."""
    logits = dc.matvec(params.tensors["w_y"], h)
    if params.use_bias:
        logits = logits + params.tensors["b_y"]
    return logits


def predict_backward(params: ParamSet, h: np.ndarray, dlogits: np.ndarray,
                     grads: dict[str, np.ndarray] | None = None,
                     want_param_grads: bool = True) -> np.ndarray:
    """Backward through the head; accumulates w_y/b_y grads, returns dloss/dh."""
    if grads is None:
        grads = params.grads
    if want_param_grads:
        grads["w_y"] += np.outer(dlogits, h)
        if params.use_bias:
            grads["b_y"] += dlogits
    return params.tensors["w_y"].T @ dlogits


class SeqResult(NamedTuple):
    loss: float
    dh_init: np.ndarray
    h_last: np.ndarray


def unroll_forward(params: ParamSet, tokens, h_init: np.ndarray):
    """Forward over all transitions of a token slice.

    Returns (loss, contexts, dlogits per step, h_last). tokens[i] is consumed
    at step i and tokens[i+1] is its prediction target.
    """
    if len(tokens) < 2:
        raise ValueError(f"need at least 2 tokens (one transition), got {len(tokens)}")
    h = h_init
    loss = 0.0
    ctxs = []
    dls = []
    for i in range(len(tokens) - 1):
        h, ctx = cell_forward(params, int(tokens[i]), h)
        logits = predict(params, h)
        step_loss, dlogits = dc.softmax_xent(logits, int(tokens[i + 1]))
        loss += step_loss
        ctxs.append(ctx)
        dls.append(dlogits)
    return loss, ctxs, dls, h


def unroll_backward(params: ParamSet, ctxs, dls, dh_last: np.ndarray | None,
                    grads: dict[str, np.ndarray] | None = None,
                    want_param_grads: bool = True) -> np.ndarray:
    """Backward over a forward unroll; dh_last is extra upstream at the final state."""
    d_h = params.d_h
    dh_next = np.zeros(d_h) if dh_last is None else dh_last.copy()
    for ctx, dlogits in zip(reversed(ctxs), reversed(dls)):
        dh = dh_next + predict_backward(params, ctx.h, dlogits, grads, want_param_grads)
        dh_next = cell_backward(params, ctx, dh, grads, want_param_grads)
    return dh_next


def seq_forward_backward(params: ParamSet, tokens, h_init: np.ndarray,
                         treat_h_init_as_constant: bool = True,
                         grads: dict[str, np.ndarray] | None = None,
                         want_param_grads: bool = True) -> SeqResult:
    """Summed next-token loss over a token slice, with full backward.

    Parameter gradients are accumulated into `grads` (params.grads by
    default). The gradient w.r.t. h_init is always computed and returned;
    treat_h_init_as_constant only documents whether the caller will use it.
    """
    loss, ctxs, dls, h_last = unroll_forward(params, tokens, h_init)
    dh_init = unroll_backward(params, ctxs, dls, None, grads, want_param_grads)
    return SeqResult(loss, dh_init, h_last)


def seq_loss(params: ParamSet, tokens, h_init: np.ndarray) -> tuple[float, np.ndarray]:
    """Forward-only summed loss; returns (loss, h_last)."""
    if len(tokens) < 2:
        raise ValueError(f"need at least 2 tokens (one transition), got {len(tokens)}")
    h = h_init
    loss = 0.0
    for i in range(len(tokens) - 1):
        h, _ = cell_forward(params, int(tokens[i]), h)
        step_loss, _ = dc.softmax_xent(predict(params, h), int(tokens[i + 1]))
        loss += step_loss
    return loss, h


def save_checkpoint(params: ParamSet, path):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IBBIII", CHECKPOINT_VERSION,
                            0 if params.kind is CellKind.ELMAN else 1,
                            1 if params.use_bias else 0,
                            params.vocab_size, params.d_in, params.d_h))
        f.write(struct.pack("<I", len(params.tensors)))
        for name, t in params.tensors.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamSet:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        header_size = struct.calcsize("<IBBIII")
        version, kind_code, bias_code, v, d_in, d_h = struct.unpack(
            "<IBBIII", f.read(header_size))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n_tensors,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
            tensors[name] = data.astype(np.float64, copy=True)
    kind = CellKind.ELMAN if kind_code == 0 else CellKind.GRU
    return ParamSet(kind, v, d_in, d_h, bool(bias_code), tensors)
