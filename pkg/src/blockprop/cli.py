"""Command-line front end and experiment orchestration.

Configuration precedence, lowest to highest: built-in defaults, a config
file of key=value lines (--config, '#' starts a comment), environment
variables (BLOCKPROP_<KEY>), command-line flags. Keys are the flag names
with underscores (the penalty weight's key is "lam", flag --lambda).

Every training run that writes metrics also writes a run manifest
(<metrics file>.manifest.json) before training starts: the resolved
config, seed, package version, start time and corpus checksum. The rerun
subcommand re-executes a manifest and must reproduce the metrics file
byte for byte.

Seed policy: the root --seed is split with numpy's SeedSequence.spawn;
child 0 initializes parameters, child 1 is reserved for data ordering,
children 2 and up seed sweep runs.

Metrics are JSONL, one object per epoch with a fixed key order. Wall
clock time is reported on stderr only, so a rerun's output is not
polluted by timing noise.
"""

import argparse
import csv
import hashlib
import importlib.resources
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import bptt as bptt_mod
from . import btprop as bp
from . import data as data_mod
from . import evalmod
from . import model as m
from . import optim
from . import verify as verify_mod
from .config import ConfigError, DEFAULT_GRID, Regime, Schedule, derive_seeds
from .model import CellKind

ENV_PREFIX = "BLOCKPROP_"
METRIC_KEYS = ("epoch", "train_loss", "train_nll", "penalty",
               "mean_residual", "h_backtracks", "valid_ppl")


# ------------------------------------------------------------ value casts


def _bool(raw):
    if isinstance(raw, bool):
        return raw
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _int(raw):
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _float(raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {raw!r}") from None


def _choice(*options):
    def cast(raw):
        val = str(raw).strip().lower()
        if val not in options:
            raise ConfigError(f"expected one of {options}, got {raw!r}")
        return val
    cast.__name__ = "choice"
    return cast


def _int_list(raw):
    if isinstance(raw, (list, tuple)):
        return tuple(int(x) for x in raw)
    parts = [p for p in str(raw).split(",") if p.strip()]
    if not parts:
        raise ConfigError("expected a comma-separated list of integers")
    return tuple(_int(p.strip()) for p in parts)


# argparse prints the caster's name in its invalid-value errors.
_bool.__name__ = "boolean"
_int.__name__ = "integer"
_float.__name__ = "number"
_int_list.__name__ = "integer list"


# -------------------------------------------------- config specifications
# key -> (default, caster). Keys double as config-file keys and, upper-
# cased with the BLOCKPROP_ prefix, as environment variable names.

_DATA_SPEC = {
    "corpus": (None, str),
    "mode": ("char", _choice("word", "char")),
    "vocab_max": (None, _int),
    "valid_frac": (0.05, _float),
}

_MODEL_SPEC = {
    "cell": ("gru", _choice("elman", "gru")),
    "d_h": (64, _int),
    "d_in": (None, _int),
}

TRAIN_BPTT_SPEC = {
    **_DATA_SPEC,
    **_MODEL_SPEC,
    "k": (10, _int),
    "lr": (0.1, _float),
    "optimizer": ("adagrad", _choice("adagrad", "sgd")),
    "regime": ("minibatch", _choice("batch", "minibatch")),
    "epochs": (5, _int),
    "seed": (0, _int),
    "metrics_out": (None, str),
    "checkpoint_out": (None, str),
}

TRAIN_BTPROP_SPEC = {
    **_DATA_SPEC,
    **_MODEL_SPEC,
    "b": (10, _int),
    "schedule": ("admm", _choice("pm", "alm", "admm")),
    "regime": ("minibatch", _choice("batch", "minibatch")),
    "minibatch_blocks": (2, _int),
    "lam": (0.01, _float),
    "alpha_u": (0.1, _float),
    "lr_h": (0.1, _float),
    "lr_theta": (0.1, _float),
    "h_steps": (1, _int),
    "theta_steps": (1, _int),
    "theta_optimizer": ("adagrad", _choice("adagrad", "sgd")),
    "h_optimizer": ("sgd", _choice("adagrad", "sgd")),
    "h_reinit_each_epoch": (False, _bool),
    "epochs": (5, _int),
    "threads": (1, _int),
    "seed": (0, _int),
    "metrics_out": (None, str),
    "checkpoint_out": (None, str),
}

EVAL_SPEC = {
    "checkpoint": (None, str),
    "vocab": (None, str),
    "corpus": (None, str),
}

VERIFY_GRADS_SPEC = {
    "seed": (0, _int),
    "n_seeds": (20, _int),
}

VERIFY_EQUIV_SPEC = {
    "cell": (None, _choice("elman", "gru")),
    "eta": (None, _float),
    "lam": (None, _float),
    "seed": (0, _int),
    "n_seeds": (10, _int),
}

SWEEP_SPEC = {
    **_DATA_SPEC,
    "cell": ("gru", _choice("elman", "gru")),
    "axis": ("hidden-sizes", _choice("hidden-sizes", "grid")),
    "hidden_sizes": ((16, 32, 64), _int_list),
    "d_h": (64, _int),
    "k": (10, _int),
    "b": (10, _int),
    "lam": (0.01, _float),
    "alpha_u": (0.1, _float),
    "lr": (0.1, _float),
    "lr_h": (0.1, _float),
    "lr_theta": (0.1, _float),
    "theta_steps": (1, _int),
    "minibatch_blocks": (2, _int),
    "epochs": (2, _int),
    "threads": (1, _int),
    "seed": (0, _int),
    "jobs": (1, _int),
    "limit": (None, _int),
    "out_dir": ("sweep_out", str),
}

ABLATE_SPEC = {
    **_DATA_SPEC,
    **_MODEL_SPEC,
    "b": (10, _int),
    "schedule": ("admm", _choice("pm", "alm", "admm")),
    "minibatch_blocks": (2, _int),
    "lam": (0.01, _float),
    "alpha_u": (0.1, _float),
    "lr_h": (0.1, _float),
    "lr_theta": (0.1, _float),
    "theta_steps": (1, _int),
    "epochs": (3, _int),
    "threads": (1, _int),
    "seed": (0, _int),
    "oracle_every": (50, _int),
    "out": (None, str),
}

BUILD_VOCAB_SPEC = {
    "corpus": (None, str),
    "mode": ("char", _choice("word", "char")),
    "vocab_max": (None, _int),
    "out": (None, str),
}

_FLAG_NAMES = {"lam": "--lambda", "k": "--K", "b": "--B"}


# ------------------------------------------------------------- resolution


def _parse_config_file(path, spec):
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in spec:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = spec[key][1](raw)
    return out


def resolve_config(args, spec):
    """Merge defaults, config file, environment and flags, in that order."""
    values = {key: default for key, (default, _) in spec.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(_parse_config_file(config_path, spec))
    for key, (_, cast) in spec.items():
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = cast(raw)
    for key in spec:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    return values


def _add_spec_flags(sp, spec):
    sp.add_argument("--config", default=None, metavar="FILE",
                    help="key=value config file ('#' comments)")
    for key, (default, cast) in spec.items():
        flag = _FLAG_NAMES.get(key, "--" + key.replace("_", "-"))
        if cast is _bool:
            sp.add_argument(flag, dest=key, action="store_const", const=True,
                            default=None, help=f"(default {default})")
        else:
            sp.add_argument(flag, dest=key, type=cast, default=None,
                            metavar=key.upper(),
                            help=f"(default {default})")


# ----------------------------------------------------------- corpus / io


def _load_corpus(path):
    """Returns (text, sha256 hex, label). None means the bundled corpus."""
    if path is None:
        res = importlib.resources.files("blockprop") / "assets" / "desk_corpus.txt"
        raw = res.read_bytes()
        label = "bundled:desk_corpus.txt"
    else:
        with open(path, "rb") as f:
            raw = f.read()
        label = path
    return raw.decode("utf-8"), hashlib.sha256(raw).hexdigest(), label


def metrics_line(record):
    unknown = set(record) - set(METRIC_KEYS)
    if unknown:
        raise ValueError(f"metrics record has unknown keys {sorted(unknown)}")
    return json.dumps({k: record[k] for k in METRIC_KEYS if k in record})


class MetricsEmitter:
    """Streams metrics records to a JSONL file and a stderr progress line.

    Wall clock time goes to stderr only: the file must be byte-identical
    across reruns of the same manifest.
    """

    def __init__(self, path, tag):
        self.file = open(path, "w", encoding="utf-8") if path else None
        self.tag = tag
        self.t0 = time.time()

    def __call__(self, record):
        if self.file is not None:
            self.file.write(metrics_line(record) + "\n")
            self.file.flush()
        parts = [f"[{self.tag}] epoch {record['epoch']}"]
        if "train_nll" in record:
            parts.append(f"train_nll {record['train_nll']:.4f}")
        if "valid_ppl" in record:
            parts.append(f"valid_ppl {record['valid_ppl']:.3f}")
        if "mean_residual" in record:
            parts.append(f"residual {record['mean_residual']:.3e}")
        parts.append(f"wall {time.time() - self.t0:.1f}s")
        print("  ".join(parts), file=sys.stderr)

    def close(self):
        if self.file is not None:
            self.file.close()


def _write_manifest(command, cfg, corpus_sha):
    path = cfg["metrics_out"] + ".manifest.json"
    manifest = {
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in cfg.items()},
        "seed": cfg.get("seed"),
        "version": __version__,
        "start_time": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "corpus_sha256": corpus_sha,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _prepare_data(cfg):
    text, sha, _ = _load_corpus(cfg["corpus"])
    vocab = data_mod.build_vocab(text, cfg["mode"], cfg["vocab_max"])
    stream = data_mod.encode(text, vocab)
    train, valid = data_mod.split_stream(stream, cfg["valid_frac"])
    return vocab, train, valid, sha


def _init_params(cfg, vocab_size):
    init_seed = derive_seeds(cfg["seed"], 2)[0]
    return m.ParamSet.random(CellKind(cfg["cell"]), vocab_size, cfg["d_h"],
                             d_in=cfg["d_in"],
                             rng=np.random.default_rng(init_seed))


def _save_checkpoint(cfg, params, vocab):
    if cfg.get("checkpoint_out"):
        m.save_checkpoint(params, cfg["checkpoint_out"])
        vocab.save(cfg["checkpoint_out"] + ".vocab.json")


# ------------------------------------------------------------- commands


def run_train_bptt(cfg):
    vocab, train, valid, sha = _prepare_data(cfg)
    if cfg["metrics_out"]:
        _write_manifest("train-bptt", cfg, sha)
    params = _init_params(cfg, vocab.size)
    bcfg = bptt_mod.BpttConfig(k=cfg["k"], lr=cfg["lr"], epochs=cfg["epochs"],
                               regime=Regime(cfg["regime"]),
                               optimizer=cfg["optimizer"])
    emit = MetricsEmitter(cfg["metrics_out"], "train-bptt")
    try:
        bptt_mod.train_bptt(params, train, bcfg, valid_stream=valid, log=emit)
    finally:
        emit.close()
    _save_checkpoint(cfg, params, vocab)
    return 0


def _tprop_config(cfg):
    return bp.TPropConfig(
        b=cfg["b"], lam=cfg["lam"], alpha_u=cfg["alpha_u"],
        lr_h=cfg["lr_h"], lr_theta=cfg["lr_theta"],
        h_steps=cfg["h_steps"], theta_steps=cfg["theta_steps"],
        schedule=Schedule(cfg["schedule"]), regime=Regime(cfg["regime"]),
        minibatch_blocks=cfg["minibatch_blocks"], epochs=cfg["epochs"],
        theta_optimizer=cfg["theta_optimizer"],
        h_optimizer=cfg["h_optimizer"],
        h_reinit_each_epoch=cfg["h_reinit_each_epoch"],
        threads=cfg["threads"])


def run_train_btprop(cfg):
    vocab, train, valid, sha = _prepare_data(cfg)
    if cfg["metrics_out"]:
        _write_manifest("train-btprop", cfg, sha)
    params = _init_params(cfg, vocab.size)
    emit = MetricsEmitter(cfg["metrics_out"], "train-btprop")
    try:
        bp.train_btprop(params, train, _tprop_config(cfg),
                        valid_stream=valid, log=emit)
    finally:
        emit.close()
    _save_checkpoint(cfg, params, vocab)
    return 0


def run_eval(cfg):
    if not cfg["checkpoint"]:
        raise ConfigError("eval requires --checkpoint")
    params = m.load_checkpoint(cfg["checkpoint"])
    vocab_path = cfg["vocab"] or cfg["checkpoint"] + ".vocab.json"
    vocab = data_mod.Vocab.load(vocab_path)
    if vocab.size != params.vocab_size:
        raise ConfigError(
            f"vocabulary size {vocab.size} does not match checkpoint "
            f"vocabulary size {params.vocab_size}")
    text, _, _ = _load_corpus(cfg["corpus"])
    stream = data_mod.encode(text, vocab, role="valid")
    res = evalmod.evaluate(params, stream)
    print(json.dumps({"n_transitions": res.n_transitions, "nll": res.nll,
                      "ppl": res.ppl}))
    return 0


def run_verify_grads(cfg):
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["n_seeds"]))
    worst = {}
    for seed in seeds:
        rep = verify_mod.gradcheck_all(seed)
        for path, err in rep.paths.items():
            worst[path] = max(worst.get(path, 0.0), err)
    passed = (max(worst.values()) <= verify_mod.GRADCHECK_TOL
              and max(v for k, v in worst.items()
                      if k.endswith("penalty_quadratic")) <= 1e-10)
    print(json.dumps({
        "tool": "verify-grads",
        "n_seeds": len(seeds),
        "fd_eps": verify_mod.FD_EPS,
        "tol": verify_mod.GRADCHECK_TOL,
        "worst_by_path": {k: worst[k] for k in sorted(worst)},
        "passed": passed,
    }, indent=2))
    return 0 if passed else 1


def run_verify_equivalence(cfg):
    cells = ([CellKind(cfg["cell"])] if cfg["cell"]
             else [CellKind.ELMAN, CellKind.GRU])
    etas = (cfg["eta"],) if cfg["eta"] is not None else DEFAULT_GRID["lr_h"]
    lams = (cfg["lam"],) if cfg["lam"] is not None else DEFAULT_GRID["lam"]
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["n_seeds"]))

    worst = 0.0
    ratio_err = 0.0
    all_passed = True
    for cell in cells:
        for eta in etas:
            for lam in lams:
                for seed in seeds:
                    rep = verify_mod.check_equivalence(cell, 7, 5, eta, lam,
                                                       seed)
                    worst = max(worst, rep.max_deviation)
                    all_passed = all_passed and rep.passed
                    if eta * lam > 0:
                        ratio_err = max(ratio_err,
                                        abs(rep.ratio - eta * lam)
                                        / (eta * lam))

    control_worst = min(
        verify_mod.check_equivalence(cell, 7, 5, 0.1, 0.1, seed,
                                     negative_control=True).max_deviation
        for cell in cells for seed in seeds)
    control_failed = control_worst > verify_mod.EQUIV_TOL

    passed = all_passed and control_failed
    print(json.dumps({
        "tool": "verify-equivalence",
        "cells": [c.value for c in cells],
        "etas": list(etas),
        "lambdas": list(lams),
        "n_seeds": len(seeds),
        "tol": verify_mod.EQUIV_TOL,
        "max_deviation": worst,
        "max_ratio_rel_error": ratio_err,
        "negative_control_min_deviation": control_worst,
        "negative_control_failed": control_failed,
        "passed": passed,
    }, indent=2))
    return 0 if passed else 1


# ---------------------------------------------------------------- sweep


def sweep_tasks(cfg):
    """Enumerate sweep configurations in a deterministic order."""
    tasks = []
    if cfg["axis"] == "hidden-sizes":
        sizes = cfg["hidden_sizes"]
        if not sizes:
            raise ConfigError("hidden-size axis is empty")
        for d_h in sizes:
            tasks.append(("bptt", {"d_h": d_h, "k": cfg["k"],
                                   "lr": cfg["lr"]}))
            for h_steps in (2, 5):
                tasks.append((f"btprop-h{h_steps}",
                              {"d_h": d_h, "b": cfg["b"],
                               "h_steps": h_steps}))
    else:
        keys = list(DEFAULT_GRID)
        for combo in itertools.product(*(DEFAULT_GRID[k] for k in keys)):
            tasks.append(("btprop", dict(zip(keys, combo))))
    if cfg["limit"] is not None:
        tasks = tasks[: cfg["limit"]]
    return tasks


def _sweep_child(payload):
    index, label, command, child_cfg = payload
    try:
        if command == "train-bptt":
            run_train_bptt(child_cfg)
        else:
            run_train_btprop(child_cfg)
        last = None
        with open(child_cfg["metrics_out"], "r", encoding="utf-8") as f:
            for line in f:
                last = json.loads(line)
        ppl = last.get("valid_ppl") if last else None
        return {"index": index, "status": "ok", "final_valid_ppl": ppl}
    except Exception as exc:
        return {"index": index, "status": f"error: {exc}",
                "final_valid_ppl": None}


_SUMMARY_COLS = ("index", "label", "command", "d_h", "k", "b", "h_steps",
                 "theta_steps", "lam", "alpha_u", "lr", "lr_h", "lr_theta",
                 "seed", "status", "final_valid_ppl", "metrics_file")


def run_sweep(cfg):
    tasks = sweep_tasks(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    child_seeds = derive_seeds(cfg["seed"], 2 + len(tasks))[2:]

    payloads = []
    rows = []
    for i, (label, overrides) in enumerate(tasks):
        if label == "bptt":
            command = "train-bptt"
            child_cfg = {k: d for k, (d, _) in TRAIN_BPTT_SPEC.items()}
        else:
            command = "train-btprop"
            child_cfg = {k: d for k, (d, _) in TRAIN_BTPROP_SPEC.items()}
            child_cfg.update(
                b=cfg["b"], lam=cfg["lam"], alpha_u=cfg["alpha_u"],
                lr_h=cfg["lr_h"], lr_theta=cfg["lr_theta"],
                theta_steps=cfg["theta_steps"],
                minibatch_blocks=cfg["minibatch_blocks"])
        child_cfg.update(
            corpus=cfg["corpus"], mode=cfg["mode"],
            vocab_max=cfg["vocab_max"], valid_frac=cfg["valid_frac"],
            cell=cfg["cell"], d_h=cfg["d_h"], epochs=cfg["epochs"],
            threads=cfg["threads"], seed=child_seeds[i])
        child_cfg.update(overrides)
        metrics = os.path.join(cfg["out_dir"], f"run_{i:03d}_{label}.jsonl")
        child_cfg["metrics_out"] = metrics
        payloads.append((i, label, command, child_cfg))
        rows.append({
            "index": i, "label": label, "command": command,
            "d_h": child_cfg["d_h"], "k": child_cfg.get("k", ""),
            "b": child_cfg.get("b", ""),
            "h_steps": child_cfg.get("h_steps", ""),
            "theta_steps": child_cfg.get("theta_steps", ""),
            "lam": child_cfg.get("lam", ""),
            "alpha_u": child_cfg.get("alpha_u", ""),
            "lr": child_cfg.get("lr", ""),
            "lr_h": child_cfg.get("lr_h", ""),
            "lr_theta": child_cfg.get("lr_theta", ""),
            "seed": child_cfg["seed"], "metrics_file": metrics,
        })

    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_sweep_child, payloads))
    else:
        results = [_sweep_child(p) for p in payloads]

    for res in results:
        rows[res["index"]]["status"] = res["status"]
        rows[res["index"]]["final_valid_ppl"] = res["final_valid_ppl"]

    summary = os.path.join(cfg["out_dir"], "summary.csv")
    with open(summary, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_SUMMARY_COLS)
        writer.writeheader()
        writer.writerows(rows)
    n_failed = sum(1 for r in results if r["status"] != "ok")
    print(f"{len(tasks)} runs, {n_failed} failed, summary at {summary}")
    return 0 if n_failed == 0 else 1


# --------------------------------------------------------------- ablate


def _bptt_oracle_auditor(params, lam, every):
    """Per-segment audit: with H-steps=0 and lam=0 the pre-update theta
    gradient must match summed truncated-bptt window gradients."""
    if lam != 0.0:
        raise ConfigError("the oracle audit applies only to the lam=0 case")

    def audit(index, blocks, carry, hidden):
        if index % every:
            return
        duals = np.zeros_like(hidden)
        g_tp = params.new_grad_buffers()
        bp.plan_pass(params, blocks, hidden, duals, 0.0, carry,
                     theta_grads=g_tp)
        g_win = params.new_grad_buffers()
        h = carry
        for blk in blocks:
            _, h = bptt_mod.bptt_window_grad(params, blk.tokens, h,
                                             grads=g_win)
        for name in g_tp:
            gap = float(np.abs(g_tp[name] - g_win[name]).max())
            if gap > 1e-10:
                raise AssertionError(
                    f"segment {index}: gradient for {name} deviates from "
                    f"the window oracle by {gap:.3e}")

    return audit


ABLATE_CONDITIONS = (
    ("h-steps=1", dict()),
    ("h-steps=0", dict(h_steps=0)),
    ("h-steps=0,lambda=0", dict(h_steps=0, lam=0.0)),
)


def run_ablate(cfg):
    if cfg["oracle_every"] < 1:
        raise ConfigError("oracle_every must be at least 1")
    vocab, train, valid, _ = _prepare_data(cfg)
    rows = []
    for name, overrides in ABLATE_CONDITIONS:
        run_cfg = dict(cfg, h_steps=1, regime="minibatch",
                       theta_optimizer="adagrad", h_optimizer="sgd",
                       h_reinit_each_epoch=False)
        run_cfg.update(overrides)
        params = _init_params(run_cfg, vocab.size)
        on_segment = None
        if run_cfg["lam"] == 0.0 and run_cfg["h_steps"] == 0:
            on_segment = _bptt_oracle_auditor(params, run_cfg["lam"],
                                              cfg["oracle_every"])
        hist = bp.train_btprop(params, train, _tprop_config(run_cfg),
                               valid_stream=valid, on_segment=on_segment)
        ppl = hist[-1]["valid_ppl"]
        rows.append({"condition": name, "h_steps": run_cfg["h_steps"],
                     "lam": run_cfg["lam"], "valid_ppl": ppl})
        print(f"[ablate] {name}: valid_ppl {ppl:.4f}", file=sys.stderr)

    base = rows[0]["valid_ppl"]
    for row in rows:
        row["delta_ppl"] = row["valid_ppl"] - base

    cols = ("condition", "h_steps", "lam", "valid_ppl", "delta_ppl")
    widths = {c: max(len(c), *(len(f"{r[c]}") for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for row in rows:
        print("  ".join(f"{row[c]}".ljust(widths[c]) for c in cols))

    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
    return 0


def run_build_vocab(cfg):
    if not cfg["out"]:
        raise ConfigError("build-vocab requires --out")
    text, _, _ = _load_corpus(cfg["corpus"])
    vocab = data_mod.build_vocab(text, cfg["mode"], cfg["vocab_max"])
    vocab.save(cfg["out"])
    print(json.dumps({"mode": vocab.mode, "n_known": vocab.n_known,
                      "size": vocab.size, "out": cfg["out"]}))
    return 0


_RUNNERS = {
    "train-bptt": (TRAIN_BPTT_SPEC, run_train_bptt),
    "train-btprop": (TRAIN_BTPROP_SPEC, run_train_btprop),
    "eval": (EVAL_SPEC, run_eval),
    "verify-grads": (VERIFY_GRADS_SPEC, run_verify_grads),
    "verify-equivalence": (VERIFY_EQUIV_SPEC, run_verify_equivalence),
    "sweep": (SWEEP_SPEC, run_sweep),
    "ablate": (ABLATE_SPEC, run_ablate),
    "build-vocab": (BUILD_VOCAB_SPEC, run_build_vocab),
}


def run_rerun(args):
    with open(args.manifest, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    command = manifest["command"]
    if command not in _RUNNERS:
        raise ConfigError(f"manifest command {command!r} is not rerunnable")
    spec, runner = _RUNNERS[command]
    cfg = {key: default for key, (default, _) in spec.items()}
    for key, value in manifest["config"].items():
        if key not in spec:
            raise ConfigError(f"manifest config key {key!r} is unknown")
        cfg[key] = tuple(value) if isinstance(value, list) else value
    _, sha, _ = _load_corpus(cfg.get("corpus"))
    if sha != manifest["corpus_sha256"]:
        raise ConfigError("corpus checksum does not match the manifest")
    if args.metrics_out:
        cfg["metrics_out"] = args.metrics_out
    return runner(cfg)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blockprop",
        description="Small recurrent language models trained with "
                    "truncated backprop through time or blocked target "
                    "propagation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    descriptions = {
        "train-bptt": "windowed truncated-backprop training",
        "train-btprop": "blocked target propagation training",
        "eval": "frozen-parameter perplexity of a checkpoint on a corpus",
        "verify-grads": "finite-difference audit of every gradient path",
        "verify-equivalence": "one-step penalty/backprop identity check",
        "sweep": "hidden-size axis or full hyperparameter grid",
        "ablate": "H-steps/penalty ablation with a gradient oracle",
        "build-vocab": "construct and save a vocabulary file",
    }
    for name, (spec, _) in _RUNNERS.items():
        sp = sub.add_parser(name, help=descriptions[name])
        _add_spec_flags(sp, spec)

    sp = sub.add_parser("rerun", help="re-execute a run manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--metrics-out", default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rerun":
            return run_rerun(args)
        spec, runner = _RUNNERS[args.command]
        return runner(resolve_config(args, spec))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AssertionError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
