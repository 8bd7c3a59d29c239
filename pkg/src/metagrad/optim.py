"""First-order optimizers over lists of numpy parameter arrays.

These drive the *outer* (meta) loop, where gradients are already plain
arrays.  Inner-loop adaptation steps live in :mod:`metagrad.maml` because
they must stay on the tape.  All steps are pure: inputs are never mutated,
new arrays come back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["sgd_step", "AdamState", "adam_init", "adam_step"]


def sgd_step(params, grads, lr: float):
    """Plain gradient descent: ``p - lr * g`` for each pair."""
    if len(params) != len(grads):
        raise ValueError(f"parameter/gradient count mismatch: {len(params)} vs {len(grads)}")
    return [p - lr * g for p, g in zip(params, grads)]


@dataclass(frozen=True)
class AdamState:
    """Per-parameter first/second moment estimates and the step counter."""

    m: list
    v: list
    t: int


def adam_init(params) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params],
                     t=0)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction; returns (new_params, new_state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lengths disagree")
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(m=new_m, v=new_v, t=t)
