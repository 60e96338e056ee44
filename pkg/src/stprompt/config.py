"""Run configuration shared by the library and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError, UsageError

# (field, help text) for every tunable; the CLI builds its flags from this table.
FIELD_HELP = {
    "history": "input window length H (default 12)",
    "horizon": "forecast horizon P (default 12)",
    "d": "projection width d (default 32)",
    "d_t": "temporal context width d_t (default 32)",
    "d_r": "spatial context width d_r (default 32)",
    "layers": "stacked temporal+spatial encoder layers L (default 2)",
    "tau": "uniformity temperature (default 0.3)",
    "lam": "uniformity loss weight lambda (default 1.0)",
    "batch_size": "mini-batch size (default 64)",
    "lr": "Adam learning rate (default 1e-3)",
    "pretrain_epochs": "pre-training epochs (default 300)",
    "tune_epochs": "prompt-tuning epochs (default 20)",
    "max_epochs": "epoch cap for end_to_end / finetune_all (default 100)",
    "patience": "early-stopping patience for end_to_end / finetune_all (default 25)",
    "seed": "master random seed (default 0)",
    "propagation": "spatial propagation matrix: sym_norm or raw (default sym_norm)",
    "uniformity_sign": "separation or literal (default separation)",
    "temporal_activation": "gate activation in the temporal encoder (default sigmoid)",
    "spatial_activation": "activation in the spatial encoder (default relu)",
    "interleave": "pre-training dataset alternation: epoch or batch (default epoch)",
    "downstream_layers": "graph-convolution blocks in the built-in predictor (default 2)",
    "mape_epsilon": "entries with |y| <= this are excluded from MAPE (default 1e-3)",
    "no_tc": "ablation -TC: drop the temporal context",
    "no_sc": "ablation -SC: drop the spatial context",
    "no_te": "ablation -TE: skip the temporal encoder",
    "no_se": "ablation -SE: skip the spatial encoder",
    "no_uni": "ablation -Uni: no uniformity loss (lambda = 0)",
    "batchnorm": "ablation r/BN: batch standardisation of prompt embeddings instead of the uniformity loss",
}

ACTIVATIONS = ("sigmoid", "relu", "tanh")


@dataclass(frozen=True)
class RunConfig:
    history: int = 12
    horizon: int = 12
    d: int = 32
    d_t: int = 32
    d_r: int = 32
    layers: int = 2
    tau: float = 0.3
    lam: float = 1.0
    batch_size: int = 64
    lr: float = 1e-3
    pretrain_epochs: int = 300
    tune_epochs: int = 20
    max_epochs: int = 100
    patience: int = 25
    seed: int = 0
    propagation: str = "sym_norm"
    uniformity_sign: str = "separation"
    temporal_activation: str = "sigmoid"
    spatial_activation: str = "relu"
    interleave: str = "epoch"
    downstream_layers: int = 2
    mape_epsilon: float = 1e-3
    no_tc: bool = False
    no_sc: bool = False
    no_te: bool = False
    no_se: bool = False
    no_uni: bool = False
    batchnorm: bool = False

    def __post_init__(self):
        for name in ("history", "horizon", "d", "d_t", "d_r", "layers", "batch_size", "downstream_layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("pretrain_epochs", "tune_epochs", "max_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be nonnegative, got {self.lam}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.propagation not in ("sym_norm", "raw"):
            raise ConfigurationError(f"propagation must be sym_norm or raw, got {self.propagation!r}")
        if self.uniformity_sign not in ("separation", "literal"):
            raise ConfigurationError(f"uniformity_sign must be separation or literal, got {self.uniformity_sign!r}")
        for name in ("temporal_activation", "spatial_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigurationError(f"{name} must be one of {ACTIVATIONS}")
        if self.interleave not in ("epoch", "batch"):
            raise ConfigurationError(f"interleave must be epoch or batch, got {self.interleave!r}")
        if self.no_uni and self.batchnorm:
            raise UsageError("ablations -Uni and r/BN are mutually exclusive")

    @property
    def width(self) -> int:
        """Prompt embedding width d' = d + 2 d_t + d_r."""
        return self.d + 2 * self.d_t + self.d_r

    @property
    def uniformity_weight(self) -> float:
        """Effective lambda: zero under -Uni and r/BN."""
        return 0.0 if (self.no_uni or self.batchnorm) else self.lam

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def override(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
