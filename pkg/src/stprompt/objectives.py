"""Training losses and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.3
    lam: float = 1.0
    uniformity_sign: str = "separation"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be nonnegative, got {self.lam}")
        if self.uniformity_sign not in ("separation", "literal"):
            raise ConfigurationError(f"unknown uniformity sign mode {self.uniformity_sign!r}")


def regression_loss(y_true, y_pred: Tensor) -> Tensor:
    """Mean absolute error over every entry."""
    y_true = ad.as_tensor(y_true, y_pred)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"regression loss: target shape {y_true.shape} != prediction shape {y_pred.shape}")
    if y_pred.size == 0:
        raise ContractError("regression loss on empty tensors")
    return ad.mean(ad.tabs(y_pred - y_true))


def uniformity_loss(embedding: Tensor, tau: float = 0.3, sign: str = "separation") -> Tensor:
    """Denominator term of InfoNCE over regions, per feature.

    For embeddings of shape (R, F, d') or (B, R, F, d') this is the mean over
    batch, regions and features of ``log sum_{r' != r} exp(cos(e_r, e_r') / tau)``.
    Minimising it spreads the embeddings apart on the sphere. ``sign="literal"``
    negates the value. Zero vectors have cosine 0 with everything.
    """
    if embedding.ndim == 3:
        embedding = ad.reshape(embedding, (1,) + embedding.shape)
    if embedding.ndim != 4:
        raise ContractError(f"uniformity loss expects (B, R, F, d') embeddings, got {embedding.shape}")
    R = embedding.shape[1]
    if R < 2:
        raise ContractError("uniformity loss needs at least two regions")
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    unit = ad.l2_normalize(ad.swapaxes(embedding, 1, 2), axis=-1)  # (B, F, R, d')
    sim = ad.scale(ad.matmul(unit, ad.swapaxes(unit, -1, -2)), 1.0 / tau)  # (B, F, R, R)
    off = ~np.eye(R, dtype=bool)
    # constant shift per row for a stable log-sum-exp; it cancels exactly in value and gradient
    shift = np.max(np.where(off, sim.data, -np.inf), axis=-1, keepdims=True)
    weights = off.astype(sim.dtype)
    # self-pairs are zeroed before exp (no overflow at small tau) and masked after it
    shifted = ad.mul(sim - shift, weights)
    total = ad.tsum(ad.mul(ad.exp(shifted), weights), axis=-1, keepdims=True)
    value = ad.mean(ad.log(total) + shift)
    return -value if sign == "literal" else value


def combined_loss(regression: Tensor, uniformity: Tensor | None, lam: float) -> Tensor:
    if lam < 0:
        raise ConfigurationError(f"lambda must be nonnegative, got {lam}")
    if uniformity is None or lam == 0:
        return regression
    return regression + ad.scale(uniformity, lam)


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape: float | None  # fraction; None when every target is masked

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(y_true, y_pred, mape_epsilon: float = 1e-3) -> MetricReport:
    """MAE, RMSE and MAPE; MAPE skips entries with ``|y_true| <= mape_epsilon``."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"metrics: shapes {y_true.shape} and {y_pred.shape} differ")
    if y_true.size == 0:
        raise ContractError("metrics on empty arrays")
    err = y_pred - y_true
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err * err)))
    mask = np.abs(y_true) > mape_epsilon
    mape = float(np.mean(np.abs(err[mask] / y_true[mask]))) if mask.any() else None
    return MetricReport(mae, rmse, mape)


class MetricAccumulator:
    """Streaming MAE/RMSE/MAPE over evaluation batches."""

    def __init__(self, mape_epsilon: float = 1e-3):
        self.eps = mape_epsilon
        self.n = 0
        self.abs_sum = 0.0
        self.sq_sum = 0.0
        self.pct_sum = 0.0
        self.pct_n = 0

    def update(self, y_true, y_pred) -> None:
        y_true = np.asarray(y_true, dtype=np.float64)
        err = np.asarray(y_pred, dtype=np.float64) - y_true
        self.n += err.size
        self.abs_sum += float(np.abs(err).sum())
        self.sq_sum += float((err * err).sum())
        mask = np.abs(y_true) > self.eps
        self.pct_sum += float(np.abs(err[mask] / y_true[mask]).sum())
        self.pct_n += int(mask.sum())

    def report(self) -> MetricReport:
        if self.n == 0:
            raise ContractError("no evaluation data")
        return MetricReport(self.abs_sum / self.n, math.sqrt(self.sq_sum / self.n),
                            self.pct_sum / self.pct_n if self.pct_n else None)
