"""Spatio-temporal prompt network.

Context distillation builds an initial embedding per (region, feature) from
three parts: a linear projection of the normalised input window, calendar
context (time of day, day of week) and a learned map of Laplacian eigenvector
coordinates. A stack of residual temporal (gated MLP) and spatial (graph
convolution) encoder layers then produces the prompt embedding of width
``d' = d + 2 d_t + d_r``.

Weight matrices act on row vectors: ``x @ W``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .errors import ConfigurationError, ContractError, DimensionError
from .graph import RoadGraph
from .params import ParameterStore

_ACT = {"sigmoid": ad.sigmoid, "relu": ad.relu, "tanh": ad.tanh}


@dataclass
class GraphInputs:
    """Per-dataset constants fed to the networks: spatial context C and propagation matrix."""

    context: Tensor
    propagation: Tensor

    @property
    def num_regions(self) -> int:
        return self.propagation.shape[0]


def graph_inputs(graph: RoadGraph, d_r: int, propagation: str = "sym_norm", dtype=None) -> GraphInputs:
    dtype = dtype or ad.get_default_dtype()
    return GraphInputs(
        Tensor(graph.spatial_context(d_r), dtype=dtype),
        Tensor(graph.propagation(propagation), dtype=dtype),
    )


def project_window(x_norm: Tensor, e0: Tensor) -> Tensor:
    """(B, R, H, F) normalised window -> (B, R, F, d): each length-H series times e0 (H x d)."""
    x_norm = ad.as_tensor(x_norm, e0)
    if x_norm.shape[-2] != e0.shape[0]:
        raise DimensionError(f"window length {x_norm.shape[-2]} does not match projection rows {e0.shape[0]}")
    return ad.matmul(ad.swapaxes(x_norm, -1, -2), e0)


def temporal_context(tod, dow, e1: Tensor, e2: Tensor) -> Tensor:
    """concat(tod * e1, dow * e2); ``tod``/``dow`` are fractions in [0, 1), scalar or shape (B,)."""
    tod = np.asarray(tod, dtype=e1.dtype)
    dow = np.asarray(dow, dtype=e2.dtype)
    for label, z in (("time-of-day", tod), ("day-of-week", dow)):
        if np.any(z < 0) or np.any(z >= 1):
            raise ContractError(f"{label} fraction outside [0, 1): {z}")
    return ad.concat([ad.mul(e1, tod[..., None]), ad.mul(e2, dow[..., None])], axis=-1)


def spatial_mlp(context: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    hidden = ad.relu(ad.matmul(context, w1) + b1)
    return ad.matmul(hidden, w2) + b2


def integrate_context(E: Tensor, M: Tensor, C_bar: Tensor, drop_temporal: bool = False,
                      drop_spatial: bool = False) -> Tensor:
    """Concatenate projection (B,R,F,d), calendar context (B,2d_t) and mapped spatial context (R,d_r)."""
    B, R, F, _ = E.shape
    if C_bar.shape[0] != R:
        raise ConfigurationError(f"graph has {C_bar.shape[0]} regions but the data has {R}")
    M_full = ad.broadcast_to(ad.reshape(M, (B, 1, 1, M.shape[-1])), (B, R, F, M.shape[-1]))
    C_full = ad.broadcast_to(ad.reshape(C_bar, (1, R, 1, C_bar.shape[-1])), (B, R, F, C_bar.shape[-1]))
    if drop_temporal:
        M_full = Tensor(np.zeros(M_full.shape, dtype=E.dtype))
    if drop_spatial:
        C_full = Tensor(np.zeros(C_full.shape, dtype=E.dtype))
    return ad.concat([E, M_full, C_full], axis=-1)


def temporal_encoder_layer(E_bar: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                           activation: str = "sigmoid") -> Tensor:
    gate = _ACT[activation](ad.matmul(E_bar, w1) + b1)
    return ad.matmul(gate, w2) + b2 + E_bar


def spatial_encoder_layer(H: Tensor, propagation: Tensor, w3: Tensor, activation: str = "relu") -> Tensor:
    """Per feature: act(A_hat @ H_f @ W3) + H_f, for H of shape (B, R, F, d')."""
    if propagation.shape[-1] != H.shape[1]:
        raise DimensionError(f"propagation matrix is {propagation.shape} but the embedding has {H.shape[1]} regions")
    Hf = ad.swapaxes(H, 1, 2)  # (B, F, R, d')
    msg = ad.matmul(ad.matmul(propagation, Hf), w3)
    return ad.swapaxes(_ACT[activation](msg) + Hf, 1, 2)


def batch_standardize(E: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise every embedding coordinate with statistics over all other axes."""
    axes = tuple(range(E.ndim - 1))
    centred = E - ad.mean(E, axes, keepdims=True)
    var = ad.mean(ad.square(centred), axes, keepdims=True)
    return centred / ad.sqrt(var + eps)


@dataclass
class PromptEmbedding:
    initial: Tensor
    temporal: list[Tensor] = field(default_factory=list)
    spatial: list[Tensor] = field(default_factory=list)
    output: Tensor | None = None


class PromptNetwork:
    """f_Prompt. Parameters live in a shared :class:`ParameterStore` under ``prompt.*``."""

    owner = "prompt"

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def param_shapes(self) -> dict[str, tuple[tuple[int, ...], str]]:
        c = self.cfg
        w = c.width
        shapes = {
            "prompt.e0": ((c.history, c.d), "uniform"),
            "prompt.e1": ((c.d_t,), "uniform"),
            "prompt.e2": ((c.d_t,), "uniform"),
            "prompt.mlp.w1": ((c.d_r, c.d_r), "uniform"),
            "prompt.mlp.b1": ((c.d_r,), "zeros"),
            "prompt.mlp.w2": ((c.d_r, c.d_r), "uniform"),
            "prompt.mlp.b2": ((c.d_r,), "zeros"),
        }
        for layer in range(c.layers):
            pre = f"prompt.layer{layer}"
            shapes[f"{pre}.temporal.w1"] = ((w, w), "uniform")
            shapes[f"{pre}.temporal.b1"] = ((w,), "zeros")
            shapes[f"{pre}.temporal.w2"] = ((w, w), "uniform")
            shapes[f"{pre}.temporal.b2"] = ((w,), "zeros")
            shapes[f"{pre}.spatial.w3"] = ((w, w), "uniform")
        return shapes

    def parameter_count(self) -> int:
        """H*d + 2*d_t + 2*d_r^2 + 2*d_r + L*(3*d'^2 + 2*d')."""
        c = self.cfg
        w = c.width
        return c.history * c.d + 2 * c.d_t + 2 * c.d_r ** 2 + 2 * c.d_r + c.layers * (3 * w * w + 2 * w)

    def init_params(self, store: ParameterStore, rng: np.random.Generator) -> None:
        for name, (shape, scheme) in self.param_shapes().items():
            store.create(name, shape, self.owner, rng, init=scheme)

    def forward(self, store: ParameterStore, x_norm, tod, dow, graph: GraphInputs,
                keep_intermediates: bool = False) -> PromptEmbedding:
        """Prompt embeddings (B, R, F, d') for a batch.

        ``x_norm`` is (B, R, H, F); ``tod``/``dow`` are the calendar fractions
        of the last input step, shape (B,).
        """
        c = self.cfg
        p = store
        x_norm = ad.as_tensor(x_norm, p["prompt.e0"])
        if x_norm.ndim == 3:
            x_norm = ad.reshape(x_norm, (1,) + x_norm.shape)
        E = project_window(x_norm, p["prompt.e0"])
        M = temporal_context(np.atleast_1d(tod), np.atleast_1d(dow), p["prompt.e1"], p["prompt.e2"])
        C_bar = spatial_mlp(graph.context, p["prompt.mlp.w1"], p["prompt.mlp.b1"],
                            p["prompt.mlp.w2"], p["prompt.mlp.b2"])
        h = integrate_context(E, M, C_bar, c.no_tc, c.no_sc)
        out = PromptEmbedding(initial=h)
        for layer in range(c.layers):
            pre = f"prompt.layer{layer}"
            if not c.no_te:
                h = temporal_encoder_layer(h, p[f"{pre}.temporal.w1"], p[f"{pre}.temporal.b1"],
                                           p[f"{pre}.temporal.w2"], p[f"{pre}.temporal.b2"],
                                           c.temporal_activation)
            if keep_intermediates:
                out.temporal.append(h)
            if not c.no_se:
                h = spatial_encoder_layer(h, graph.propagation, p[f"{pre}.spatial.w3"], c.spatial_activation)
            if keep_intermediates:
                out.spatial.append(h)
        if c.batchnorm:
            h = batch_standardize(h)
        out.output = h
        return out

    __call__ = forward
