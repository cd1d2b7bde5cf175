"""Training algorithms: Adam, cosine annealing, linearized Bregman, AdaBreg.

All optimizers act on name-keyed dicts of float64 parameter arrays, the
same dicts the models own, and mutate them in place. The Bregman family
keeps a dual variable per parameter; the primal is always the soft
threshold of the dual, which is what makes the iterates sparse. Gradients
keep flowing into the duals of inactive (zero) weights, so weights can
activate later in training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ._rng import STREAM_SPARSE_INIT, generator


class NonFiniteGradientError(ValueError):
    """A gradient contained NaN or Inf; the update would poison the run."""

    def __init__(self, param: str):
        super().__init__(f"non-finite gradient for parameter {param!r}")
        self.param = param


def _check_finite(grads: Mapping[str, np.ndarray]):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: Mapping[str, np.ndarray]) -> dict:
    """One bias-corrected Adam update on every parameter, in place."""
    _check_finite(grads)
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------

@dataclass
class CosineSchedule:
    lr_max: float
    lr_min: float = 0.0
    total_steps: int = 1


def cosine_lr(schedule: CosineSchedule, t: int) -> float:
    """lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2, clamped past T."""
    if t < 0:
        raise ValueError("schedule step must be nonnegative")
    if t >= schedule.total_steps:
        return schedule.lr_min
    frac = t / schedule.total_steps
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (
        1.0 + math.cos(math.pi * frac)
    )


# ---------------------------------------------------------------------------
# linearized Bregman / AdaBreg
# ---------------------------------------------------------------------------

def soft_threshold(u: np.ndarray, lam: float) -> np.ndarray:
    """Proximal map of lam * l1: sign(u) max(|u| - lam, 0)."""
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    return np.sign(u) * np.maximum(np.abs(u) - lam, 0.0)


@dataclass
class BregmanState:
    lam: float
    r0: float
    dual: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)  # lam, or 0.0 for dense params
    adam: AdamState = field(default_factory=AdamState)


def sparse_init(params: dict, r0: float, lam: float, seed: int,
                dense_names: Iterable[str] = ()) -> BregmanState:
    """Sparsify a freshly initialized parameter dict and build the dual state.

    A fraction r0 of each sparsifiable tensor keeps its init value (dual
    pushed past the threshold); the rest start exactly zero with duals
    drawn inside [-lam, lam] so they activate at varying gradient budgets.
    Parameters in `dense_names` bypass thresholding entirely (threshold 0).
    Mutates `params` so the primal matches the dual from step zero.
    """
    if not 0.0 < r0 <= 1.0:
        raise ValueError(f"initial nonzero fraction r0 must be in (0, 1], got {r0}")
    if lam <= 0:
        raise ValueError("lam must be positive")
    dense_names = set(dense_names)
    rng = generator(seed, STREAM_SPARSE_INIT)
    state = BregmanState(lam=lam, r0=r0)
    for name, value in params.items():
        if name in dense_names:
            state.dual[name] = value.copy()
            state.thresholds[name] = 0.0
            continue
        keep = rng.random(value.shape) < r0
        u = rng.uniform(-lam, lam, size=value.shape)
        boosted = np.sign(value) * (lam + np.abs(value))
        u[keep] = boosted[keep]
        state.dual[name] = u
        state.thresholds[name] = lam
        params[name][...] = soft_threshold(u, lam)
    return state


def _reproject(state: BregmanState, params: dict):
    for name, u in state.dual.items():
        params[name][...] = soft_threshold(u, state.thresholds[name])


def linbreg_step(state: BregmanState, params: dict,
                 grads: Mapping[str, np.ndarray], tau: float) -> dict:
    """Plain linearized Bregman: dual gradient step, then prox."""
    _check_finite(grads)
    for name, g in grads.items():
        state.dual[name] -= tau * g
    _reproject(state, params)
    return params


def adabreg_step(state: BregmanState, params: dict,
                 grads: Mapping[str, np.ndarray]) -> dict:
    """Bregman with an Adam-preconditioned dual update."""
    adam_step(state.adam, state.dual, grads)
    _reproject(state, params)
    return params


def bregman_nonzero_count(state: BregmanState) -> int:
    """Number of active weights: entries whose dual clears its threshold."""
    return sum(
        int((np.abs(u) > state.thresholds[name]).sum())
        for name, u in state.dual.items()
    )


def dense_count(params: Mapping[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


def nonzero_count(params: Mapping[str, np.ndarray]) -> int:
    return sum(int(np.count_nonzero(v)) for v in params.values())
