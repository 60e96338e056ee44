"""Spatio-temporal prompt tuning for traffic forecasting on a numpy autodiff engine."""

from .config import RunConfig
from .data import ShiftSpec, SplitSpec, STDataset, gen_synthetic, load_dataset, save_dataset
from .errors import (ConfigurationError, ContractError, DegenerateDataError, DimensionError,
                     InsufficientDataError, LoadError, NumericalError, ParseError, SplitError,
                     STPromptError, UsageError)
from .graph import RoadGraph, eigendecompose, normalized_laplacian
from .objectives import MetricReport, metrics, regression_loss, uniformity_loss
from .prompt import PromptNetwork
from .training import Model, build_model, compare, evaluate, pretrain, prompt_tune

__version__ = "0.1.0"
