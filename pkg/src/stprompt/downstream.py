"""Downstream predictors consuming prompt embeddings.

A downstream model registers its parameters in the shared store with owner
``downstream`` (frozen during prompt tuning) or ``dataset`` (trainable during
prompt tuning; re-drawn for each target when flagged ``reinit``) and maps
embeddings (B, R, F, d') to normalised forecasts (B, R, P, F).
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .params import ParameterStore, init_array
from .prompt import GraphInputs


class DownstreamModel(Protocol):
    def init_params(self, store: ParameterStore, rng: np.random.Generator) -> None: ...

    def forward(self, store: ParameterStore, embedding: Tensor, graph: GraphInputs) -> Tensor: ...


class GraphConvForecaster:
    """Residual graph-convolution blocks followed by a shared linear head.

    Each block computes ``relu(A_hat @ Z @ W + b) + Z`` per feature; the head
    maps every (region, feature) embedding of width d' to P future values.
    The head is tagged dataset-specific. No parameter depends on the region
    count.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def param_shapes(self):
        w, P = self.cfg.width, self.cfg.horizon
        shapes = {}
        for k in range(self.cfg.downstream_layers):
            shapes[f"downstream.block{k}.w"] = ((w, w), "uniform", "downstream")
            shapes[f"downstream.block{k}.b"] = ((w,), "zeros", "downstream")
        shapes["downstream.head.w"] = ((w, P), "uniform", "dataset")
        shapes["downstream.head.b"] = ((P,), "zeros", "dataset")
        return shapes

    def init_params(self, store: ParameterStore, rng: np.random.Generator) -> None:
        for name, (shape, scheme, owner) in self.param_shapes().items():
            store.create(name, shape, owner, rng, init=scheme)

    def forward(self, store: ParameterStore, embedding: Tensor, graph: GraphInputs) -> Tensor:
        z = ad.swapaxes(embedding, 1, 2)  # (B, F, R, d')
        for k in range(self.cfg.downstream_layers):
            msg = ad.matmul(ad.matmul(graph.propagation, z), store[f"downstream.block{k}.w"])
            z = ad.relu(msg + store[f"downstream.block{k}.b"]) + z
        out = ad.matmul(z, store["downstream.head.w"]) + store["downstream.head.b"]  # (B, F, R, P)
        return ad.transpose(out, (0, 2, 3, 1))

    __call__ = forward


def reinit_dataset_params(store: ParameterStore, rng: np.random.Generator, shapes=None) -> list[str]:
    """Draw fresh values for every dataset-specific parameter flagged ``reinit``.

    ``shapes`` optionally maps names to new shapes (per-region tensors change
    size with the target's region count).
    """
    shapes = shapes or {}
    names = []
    for name, p in store.items():
        if p.owner == "dataset" and p.reinit:
            store.replace(name, init_array(rng, tuple(shapes.get(name, p.shape)), p.init, p.dtype))
            names.append(name)
    return names
