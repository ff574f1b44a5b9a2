"""First-order optimizers over named parameter arrays.

Parameters and gradients are plain ``{name: ndarray}`` mappings; updates are
applied in place so tensors wrapping the arrays see the new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class OptimizerConfig:
    name: str = "sgd"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0


@dataclass
class OptimizerState:
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def slot(self, kind: str, name: str, like: np.ndarray) -> np.ndarray:
        table = self.slots.setdefault(kind, {})
        if name not in table:
            table[name] = np.zeros_like(like)
        return table[name]


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads)
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


def _apply(params: Mapping[str, np.ndarray], name: str, delta: np.ndarray) -> None:
    if not np.all(np.isfinite(delta)):
        raise FloatingPointError(f"non-finite update for parameter '{name}'")
    params[name] -= delta


def sgd_step(params, grads, config: OptimizerConfig, state: OptimizerState | None = None):
    for name, g in grads.items():
        _apply(params, name, config.lr * g)
    if state is not None:
        state.step += 1
    return params


def adagrad_step(params, grads, config: OptimizerConfig, state: OptimizerState):
    for name, g in grads.items():
        acc = state.slot("sum_sq", name, g)
        acc += g * g
        _apply(params, name, config.lr * g / (np.sqrt(acc) + config.eps))
    state.step += 1
    return params


def adam_step(params, grads, config: OptimizerConfig, state: OptimizerState):
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, g in grads.items():
        m = state.slot("m", name, g)
        v = state.slot("v", name, g)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        _apply(params, name, config.lr * m_hat / (np.sqrt(v_hat) + config.eps))
    return params


STEPS = {"sgd": sgd_step, "adagrad": adagrad_step, "adam": adam_step}


class Optimizer:
    """Clips gradients by global norm, then dispatches to the chosen rule."""

    def __init__(self, params: Mapping[str, np.ndarray], config: OptimizerConfig):
        if config.name not in STEPS:
            raise ValueError(f"unknown optimizer {config.name!r}; choose from {sorted(STEPS)}")
        self.params = params
        self.config = config
        self.state = OptimizerState()

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        if self.config.clip_norm is not None:
            grads = clip_by_global_norm(grads, self.config.clip_norm)
        STEPS[self.config.name](self.params, grads, self.config, self.state)
