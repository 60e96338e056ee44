"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, no_grad


def numeric_gradient(loss_fn: Callable[[], Tensor], x: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``x`` (in place perturbation)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor],
                    step: float = 1e-4) -> dict[str, float]:
    """Relative error between tape gradients and finite differences, per tensor."""
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    errors = {}
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[name] = relative_error(analytic, numeric_gradient(loss_fn, t, step))
    return errors
