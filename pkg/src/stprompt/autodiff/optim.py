"""Adam over a parameter store, honouring per-tensor frozen flags."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, state: AdamState, grads=None) -> None:
    """One Adam update of every trainable entry of ``params``.

    ``params`` is a ParameterStore (anything yielding ``(name, param)`` from
    ``items()`` where ``param`` has ``data``, ``grad`` and ``frozen``).
    ``grads`` optionally maps names to gradients; otherwise ``param.grad`` is
    used. Frozen parameters are skipped outright. A trainable parameter that
    received no gradient this step is left untouched.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.frozen:
            continue
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ContractError(f"adam: gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        if m is None or m.shape != p.data.shape:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def steps(self) -> int:
        return self.state.step

    def zero_grad(self) -> None:
        for _, p in self.params.items():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)
