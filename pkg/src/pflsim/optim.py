"""Optimizers over named parameter dicts, plus update clipping.

All step functions are functional over ``{name: ndarray}`` parameter and
gradient dicts: they return the updated parameters and mutate only their own
state object.  The Shampoo step preconditions each weight matrix on both
sides with inverse fourth roots of accumulated gradient statistics
(``L += G G^T`` and ``R += G^T G`` every ``stat_interval`` iterations, with
the cached ``(L + ridge I)^(-1/4)`` factors refreshed every
``precond_interval`` iterations, identity until the first refresh) and clips
the preconditioned step element-wise before applying it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import ConfigError
from .nmath import inv_fourth_root

Params = Dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# Clipping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradClip:
    """Clipping mode: 'l2' rescales to norm <= value, 'element' clamps entries."""

    mode: str
    value: float

    def __post_init__(self):
        if self.mode not in ("l2", "element"):
            raise ConfigError(f"clip mode must be 'l2' or 'element', got {self.mode!r}")
        if not self.value > 0:
            raise ConfigError(f"clip value must be > 0, got {self.value}")


def l2_norm(update) -> float:
    if isinstance(update, dict):
        return math.sqrt(sum(float(np.sum(v * v)) for v in update.values()))
    return float(np.linalg.norm(np.asarray(update).ravel()))


# Norms within a few ulps of the limit count as compliant, which makes the
# clip an exact fixpoint: rescaling lands within one ulp of the limit, so a
# second application leaves the values bit-identical.
_CLIP_SLACK = 1.0 + 4.0 * np.finfo(np.float64).eps


def clip_l2(update, limit: float):
    """``x / max(1, |x|_2 / limit)``: norm capped, direction preserved."""
    norm = l2_norm(update)
    factor = 1.0 if norm <= limit * _CLIP_SLACK else limit / norm
    if isinstance(update, dict):
        return {k: v * factor for k, v in update.items()}
    return np.asarray(update) * factor


def clip_elementwise(update, limit: float):
    if isinstance(update, dict):
        return {k: np.clip(v, -limit, limit) for k, v in update.items()}
    return np.clip(np.asarray(update), -limit, limit)


def clip(update, grad_clip: GradClip):
    """Apply a GradClip to a parameter dict or array."""
    if grad_clip.mode == "l2":
        return clip_l2(update, grad_clip.value)
    return clip_elementwise(update, grad_clip.value)


# ---------------------------------------------------------------------------
# First-order steps
# ---------------------------------------------------------------------------


def sgd_step(params: Params, grads: Params, lr: float) -> Params:
    return {k: params[k] - lr * grads[k] for k in params}


@dataclass
class MomentumState:
    velocity: Params = field(default_factory=dict)


def momentum_step(
    state: MomentumState, params: Params, grads: Params, lr: float, beta: float = 0.9
) -> Params:
    """Heavy-ball momentum: v <- beta v + g; w <- w - lr v (beta=0 is SGD)."""
    out = {}
    for k in params:
        v = state.velocity.get(k)
        v = grads[k].copy() if v is None else beta * v + grads[k]
        state.velocity[k] = v
        out[k] = params[k] - lr * v
    return out


@dataclass
class AdamWState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adamw_step(
    state: AdamWState,
    params: Params,
    grads: Params,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> Params:
    """Bias-corrected AdamW with decoupled weight decay."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = {}
    for k in params:
        g = grads[k]
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[k] = m
        state.v[k] = v
        step = (m / c1) / (np.sqrt(v / c2) + eps)
        out[k] = params[k] - lr * (step + weight_decay * params[k])
    return out


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"  # sgd | momentum | adamw
    lr: float = 0.1
    momentum: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.kind not in ("sgd", "momentum", "adamw"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")


class Optimizer:
    """Stateful wrapper dispatching to the step functions above."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self._momentum = MomentumState()
        self._adamw = AdamWState()

    def step(self, params: Params, grads: Params) -> Params:
        cfg = self.config
        if cfg.kind == "sgd":
            return sgd_step(params, grads, cfg.lr)
        if cfg.kind == "momentum":
            return momentum_step(self._momentum, params, grads, cfg.lr, cfg.momentum)
        return adamw_step(
            self._adamw, params, grads, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay
        )


def make_optimizer(config: OptimizerConfig) -> Optimizer:
    return Optimizer(config)


# ---------------------------------------------------------------------------
# Shampoo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShampooConfig:
    ridge: float = 1e-4
    stat_interval: int = 10
    precond_interval: int = 100

    def __post_init__(self):
        if self.ridge <= 0:
            raise ConfigError("shampoo ridge must be > 0")
        if self.stat_interval < 1 or self.precond_interval < 1:
            raise ConfigError("shampoo intervals must be >= 1")


@dataclass
class _ShampooLayer:
    left: np.ndarray  # accumulated G G^T
    right: np.ndarray  # accumulated G^T G
    left_quarter: np.ndarray  # cached (left + ridge I)^(-1/4); identity until refresh
    right_quarter: np.ndarray


class ShampooState:
    """Per-matrix preconditioner statistics; create one per simulated client."""

    def __init__(self, config: ShampooConfig = ShampooConfig()):
        self.config = config
        self.layers: Dict[str, _ShampooLayer] = {}

    def _layer(self, name: str, shape: Tuple[int, int]) -> _ShampooLayer:
        st = self.layers.get(name)
        if st is None:
            d_out, d_in = shape
            st = _ShampooLayer(
                left=np.eye(d_out),
                right=np.eye(d_in),
                left_quarter=np.eye(d_out),
                right_quarter=np.eye(d_in),
            )
            self.layers[name] = st
        return st


def shampoo_step(
    state: ShampooState,
    params: Params,
    grads: Params,
    lr: float,
    clip_value: float,
    t: int,
) -> Params:
    """One preconditioned, element-wise-clipped descent step at iteration ``t``.

    ``t`` is 1-based; statistics accumulate when ``t % stat_interval == 0``
    and the cached inverse fourth roots refresh when
    ``t % precond_interval == 0``, so with fresh state (identity caches) and
    an infinite clip the step equals plain SGD.  Every applied delta entry is
    bounded by ``lr * clip_value``.
    """
    cfg = state.config
    out = {}
    for name in params:
        g = grads[name]
        if g.ndim != 2:
            raise ConfigError(f"shampoo needs matrix parameters, {name} has ndim={g.ndim}")
        st = state._layer(name, g.shape)
        if t % cfg.stat_interval == 0:
            st.left += g @ g.T
            st.right += g.T @ g
            st.left = (st.left + st.left.T) / 2.0
            st.right = (st.right + st.right.T) / 2.0
        if t % cfg.precond_interval == 0:
            st.left_quarter = inv_fourth_root(st.left, cfg.ridge)
            st.right_quarter = inv_fourth_root(st.right, cfg.ridge)
        step = st.left_quarter @ g @ st.right_quarter
        if math.isfinite(clip_value):
            step = np.clip(step, -clip_value, clip_value)
        out[name] = params[name] - lr * step
    return out
