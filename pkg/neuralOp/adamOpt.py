"""Adam with decoupled weight decay (AdamW) over a dict of numpy parameters.

Complex parameters are updated as pairs of independent reals, so their second
moments are kept per real and imaginary part.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .fourierOps import OperatorError

Params = Dict[str, np.ndarray]


@dataclass
class TrainState:
    """Optimiser state. Moment buffers mirror the parameter shapes (real views)."""

    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=OrderedDict)
    v: Params = field(default_factory=OrderedDict)


def _real_view(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    return x.view(np.float64) if np.iscomplexobj(x) else x.astype(np.float64, copy=False)


def init_train_state(params: Params, lr: float = 1e-3, weight_decay: float = 1e-4) -> TrainState:
    state = TrainState(lr=lr, weight_decay=weight_decay)
    for name, value in params.items():
        state.m[name] = np.zeros_like(_real_view(value))
        state.v[name] = np.zeros_like(_real_view(value))
    return state


def adam_step(params: Params, grads: Params, state: TrainState) -> Params:
    """One AdamW update. Returns new parameter arrays and advances `state` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OperatorError(f"non-finite gradient for {name} at step {state.step + 1}")
    if not state.m:
        fresh = init_train_state(params, state.lr, state.weight_decay)
        state.m, state.v = fresh.m, fresh.v

    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    updated = OrderedDict()
    for name, value in params.items():
        p = _real_view(value)
        g = _real_view(grads[name])
        if p.shape != g.shape or state.m[name].shape != p.shape:
            raise OperatorError(f"shape mismatch for {name}: {p.shape} vs {g.shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        step = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        new = p * (1.0 - state.lr * state.weight_decay) - state.lr * step
        updated[name] = new.view(np.complex128) if np.iscomplexobj(value) else new
    return updated
