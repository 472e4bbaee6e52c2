"""Shared training enums, the default hyperparameter grid, and seed derivation."""

from __future__ import annotations

import enum

import numpy as np


class ConfigError(ValueError):
    """Inconsistent or invalid training configuration (CLI exit code 2)."""


class Regime(str, enum.Enum):
    BATCH = "batch"
    MINIBATCH = "minibatch"


class Schedule(str, enum.Enum):
    PM = "pm"
    ALM = "alm"
    ADMM = "admm"


# Default search grid for the alternating trainer. Cross product size:
# 3 * 3 * 3 * 3 * 1 * 3 = 243.
DEFAULT_GRID = {
    "lam": (1.0, 0.1, 0.01),
    "alpha_u": (1.0, 0.1, 0.01),
    "lr_h": (0.1, 0.01, 0.001),
    "lr_theta": (0.1, 0.01, 0.001),
    "theta_steps": (1,),
    "h_steps": (1, 2, 5),
}


def derive_seeds(root_seed: int, n: int) -> list[int]:
    """Split one root seed into n independent child seeds.

    Splitting rule: numpy SeedSequence(root).spawn(n); each child's seed is its
    generated 32-bit state word. Child 0 is used for parameter init, child 1 is
    reserved for data ordering, children 2+ for sweep runs.
    """
    children = np.random.SeedSequence(root_seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]
