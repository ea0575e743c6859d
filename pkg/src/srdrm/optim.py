"""Adam optimizer, functional style: steps map (params, grads, state) to
fresh (params, state) without touching the inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

__all__ = ["AdamState", "init_adam", "adam_step", "adam_step_all"]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_adam(params: dict[str, np.ndarray]) -> dict[str, AdamState]:
    return {k: AdamState(np.zeros_like(p), np.zeros_like(p)) for k, p in params.items()}


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected adaptive-moment update; returns (param', state')."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ContractViolation(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    b1, b2 = betas
    t = state.t + 1
    g = grad.astype(param.dtype, copy=False)
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new_param = param - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return new_param, AdamState(m=m, v=v, t=t)


def adam_step_all(params: dict, grads: dict, states: dict, lr: float,
                  betas=(0.9, 0.999), eps: float = 1e-8):
    """Apply adam_step to every named parameter; key sets must agree."""
    if set(params) != set(grads) or set(params) != set(states):
        raise ContractViolation(
            f"parameter/gradient/state name sets differ: "
            f"{sorted(set(params) ^ set(grads))} {sorted(set(params) ^ set(states))}"
        )
    new_params, new_states = {}, {}
    for k in params:
        new_params[k], new_states[k] = adam_step(params[k], grads[k], states[k],
                                                 lr, betas, eps)
    return new_params, new_states
