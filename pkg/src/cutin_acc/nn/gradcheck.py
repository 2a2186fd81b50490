"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from ..errors import NonFiniteLoss


class Differentiable(Protocol):
    def parameters(self) -> dict[str, np.ndarray]: ...

    def loss(self, x, y) -> float: ...

    def loss_and_grads(self, x, y) -> tuple[float, dict[str, np.ndarray]]: ...


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor turns the measure absolute near zero."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(model: Differentiable, x, y, h: float = 1e-5) -> dict[str, np.ndarray]:
    out = {}
    for name, p in model.parameters().items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = model.loss(x, y)
            flat[i] = orig - h
            lm = model.loss(x, y)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteLoss(f"loss not finite while perturbing {name}[{i}]")
            gflat[i] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def gradient_check(model: Differentiable, x, y, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``floor`` bounds the denominator from below so that gradients that are
    zero on both sides compare by absolute difference.

    Raises:
        NonFiniteLoss: the loss is NaN or infinite at or around the parameters.
    """
    loss, grads = model.loss_and_grads(x, y)
    if not np.isfinite(loss):
        raise NonFiniteLoss("loss is not finite at the current parameters")
    analytic = {k: v.copy() for k, v in grads.items()}
    numeric = numeric_gradient(model, x, y, h)
    worst = 0.0
    for k, a in analytic.items():
        if a.size:
            worst = max(worst, float(relative_error(a, numeric[k], floor).max()))
    return worst
