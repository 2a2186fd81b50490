"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def fresh(cls, like: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(like, dtype=np.float64), np.zeros_like(like, dtype=np.float64), **hyper)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One Adam update of ``param`` in place; returns (state, param)."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeMismatch(f"param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, param


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k in params:
            if k not in self.states:
                self.states[k] = AdamState.fresh(
                    params[k], beta1=self.beta1, beta2=self.beta2, eps=self.eps, lr=self.lr
                )
            adam_step(self.states[k], params[k], grads[k])
