"""Pre-training, prompt tuning and the comparison protocols."""

from __future__ import annotations

import copy
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor, no_grad
from .config import RunConfig
from .data import PreparedData, SplitSpec, STDataset, WindowSet, prepare
from .downstream import DownstreamModel, GraphConvForecaster, reinit_dataset_params
from .errors import ConfigurationError, ContractError, NumericalError
from .objectives import MetricAccumulator, MetricReport, combined_loss, regression_loss, uniformity_loss
from .params import ParameterStore
from .prompt import GraphInputs, PromptNetwork, graph_inputs

logger = logging.getLogger(__name__)

PHASES = ("pretrain", "prompt_tune", "end_to_end", "finetune_all")
COMPARISON_MODES = ("zero_shot", "end_to_end", "finetune_all")


@dataclass
class Model:
    cfg: RunConfig
    store: ParameterStore
    prompt: PromptNetwork
    downstream: DownstreamModel

    def copy(self) -> "Model":
        return copy.deepcopy(self)


def build_model(cfg: RunConfig, seed: int | None = None, downstream: DownstreamModel | None = None) -> Model:
    """Fresh parameters for the prompt network and the downstream predictor."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParameterStore()
    prompt = PromptNetwork(cfg)
    prompt.init_params(store, rng)
    downstream = downstream or GraphConvForecaster(cfg)
    downstream.init_params(store, rng)
    return Model(cfg, store, prompt, downstream)


@dataclass
class Task:
    """A dataset prepared for training: fitted statistics, splits and graph constants."""

    data: PreparedData
    graph: GraphInputs

    @property
    def name(self) -> str:
        return self.data.dataset.name

    @property
    def mean(self) -> float:
        return self.data.dataset.mean

    @property
    def std(self) -> float:
        return self.data.dataset.std


def make_task(ds: STDataset, cfg: RunConfig, split: SplitSpec = SplitSpec()) -> Task:
    if ds.graph is None:
        raise ConfigurationError(f"dataset {ds.name!r} has no graph")
    prepared = prepare(ds, cfg.history, cfg.horizon, split)
    return Task(prepared, graph_inputs(ds.graph, cfg.d_r, cfg.propagation))


# -- forward passes ----------------------------------------------------------

def predict(model: Model, batch: WindowSet, task: Task) -> tuple[Tensor, Tensor]:
    """Raw-scale forecasts (B, R, P, F) and the prompt embeddings that produced them."""
    emb = model.prompt.forward(model.store, batch.inputs, batch.tod[:, -1], batch.dow[:, -1], task.graph).output
    y_norm = model.downstream.forward(model.store, emb, task.graph)
    return ad.scale(y_norm, task.std) + task.mean, emb


def batch_loss(model: Model, batch: WindowSet, task: Task) -> tuple[Tensor, float, float | None]:
    pred, emb = predict(model, batch, task)
    l_r = regression_loss(batch.targets, pred)
    lam = model.cfg.uniformity_weight
    l_uni = uniformity_loss(emb, model.cfg.tau, model.cfg.uniformity_sign) if lam > 0 else None
    total = combined_loss(l_r, l_uni, lam)
    return total, l_r.item(), (l_uni.item() if l_uni is not None else None)


def evaluate(model: Model, windows: WindowSet, task: Task, batch_size: int = 256) -> MetricReport:
    acc = MetricAccumulator(model.cfg.mape_epsilon)
    with no_grad():
        for batch in windows.batches(batch_size):
            pred, _ = predict(model, batch, task)
            acc.update(batch.targets, pred.data)
    return acc.report()


# -- training loop ---------------------------------------------------------------

@dataclass
class TrainSchedule:
    phase: str
    epochs: int
    batch_size: int = 64
    patience: int | None = None
    interleave: str = "epoch"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigurationError(f"unknown phase {self.phase!r}")

    @classmethod
    def for_phase(cls, phase: str, cfg: RunConfig, epochs: int | None = None) -> "TrainSchedule":
        if phase == "pretrain":
            return cls(phase, cfg.pretrain_epochs if epochs is None else epochs, cfg.batch_size, None, cfg.interleave)
        if phase == "prompt_tune":
            return cls(phase, cfg.tune_epochs if epochs is None else epochs, cfg.batch_size)
        return cls(phase, cfg.max_epochs if epochs is None else epochs, cfg.batch_size, cfg.patience)

    @staticmethod
    def rotation(epoch: int, n_datasets: int) -> int:
        """Dataset trained in ``epoch`` (0-based) under per-epoch alternation."""
        return epoch % n_datasets


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("inf")
    epochs_run: int = 0
    steps: int = 0


def _prefetch_threads() -> int:
    try:
        return max(0, int(os.environ.get("STPROMPT_THREADS", "0")))
    except ValueError:
        return 0


def _batches(windows: WindowSet, batch_size: int, rng: np.random.Generator) -> Iterable[WindowSet]:
    """Shuffled batches, optionally assembled one ahead on a worker thread."""
    it = windows.batches(batch_size, rng)
    threads = _prefetch_threads()
    if threads == 0:
        yield from it
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = pool.submit(next, it, None)
        while True:
            batch = pending.result()
            if batch is None:
                return
            pending = pool.submit(next, it, None)
            yield batch


def _log_line(sink, record: dict) -> None:
    if sink is None:
        return
    if callable(sink):
        sink(record)
    else:
        sink.write(json.dumps(record) + "\n")
        sink.flush()


def _train_steps(model: Model, opt: Adam, jobs: Iterable[tuple[WindowSet, Task]]) -> dict:
    totals = {"train_loss": 0.0, "regression": 0.0, "uniformity": 0.0}
    n = 0
    for batch, task in jobs:
        opt.zero_grad()
        try:
            loss, l_r, l_uni = batch_loss(model, batch, task)
        except NumericalError as exc:
            raise NumericalError(f"training diverged on dataset {task.name!r}: {exc}") from None
        loss.backward()
        opt.step()
        totals["train_loss"] += loss.item()
        totals["regression"] += l_r
        if l_uni is None:
            totals.pop("uniformity", None)
        else:
            totals["uniformity"] += l_uni
        n += 1
    return {k: v / max(n, 1) for k, v in totals.items()}


def fit(model: Model, tasks: Sequence[Task], schedule: TrainSchedule, log=None,
        rng: np.random.Generator | None = None) -> TrainResult:
    """Train the non-frozen parameters of ``model`` and restore the best-validation state.

    The selection score is the mean over ``tasks`` of validation MAE divided by
    each dataset's standard deviation (plain validation MAE ordering for one
    task). With ``schedule.patience`` set, training stops after that many
    epochs without improvement.
    """
    if not tasks:
        raise ContractError("fit needs at least one task")
    cfg = model.cfg
    rng = rng or np.random.default_rng(cfg.seed + 1)
    frozen = model.store.frozen_names()
    before = model.store.digests(frozen)
    opt = Adam(model.store, lr=cfg.lr)
    result = TrainResult()
    best_state = None
    since_best = 0
    for epoch in range(schedule.epochs):
        t0 = time.perf_counter()
        if schedule.interleave == "batch" and len(tasks) > 1:
            label = "+".join(t.name for t in tasks)
            iters = [iter(_batches(t.data.train, schedule.batch_size, rng)) for t in tasks]
            jobs = _interleave(iters, tasks)
        else:
            task = tasks[TrainSchedule.rotation(epoch, len(tasks))]
            label = task.name
            jobs = ((b, task) for b in _batches(task.data.train, schedule.batch_size, rng))
        stats = _train_steps(model, opt, jobs)
        reports = {t.name: evaluate(model, t.data.val, t) for t in tasks}
        score = float(np.mean([reports[t.name].mae / t.std for t in tasks]))
        shown = reports[label] if label in reports else reports[tasks[0].name]
        record = {"phase": schedule.phase, "epoch": epoch + 1, "dataset": label, **stats,
                  "val_mae": shown.mae, "val_rmse": shown.rmse, "val_mape": shown.mape,
                  "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
        if len(tasks) > 1:
            record["val_by_dataset"] = {k: r.mae for k, r in reports.items()}
        result.history.append(record)
        _log_line(log, record)
        result.epochs_run = epoch + 1
        if score < result.best_score:
            result.best_score = score
            result.best_epoch = epoch + 1
            best_state = {n: model.store[n].data.copy() for n in model.store.trainable()}
            since_best = 0
        else:
            since_best += 1
            if schedule.patience is not None and since_best >= schedule.patience:
                break
    if best_state is not None:
        model.store.restore(best_state)
    result.steps = opt.steps
    after = model.store.digests(frozen)
    changed = sorted(n for n in frozen if before[n] != after[n])
    if changed:
        raise ContractError(f"frozen parameters were modified during training: {changed}")
    return result


def _interleave(iters, tasks):
    active = list(zip(iters, tasks))
    while active:
        still = []
        for it, task in active:
            batch = next(it, None)
            if batch is not None:
                yield batch, task
                still.append((it, task))
        active = still


# -- phases ---------------------------------------------------------------------

@dataclass
class RunResult:
    mode: str
    report: MetricReport
    steps: int
    epochs_run: int
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    changed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mode": self.mode, **self.report.to_dict(), "steps": self.steps,
                "epochs_run": self.epochs_run, "best_epoch": self.best_epoch}


def pretrain(datasets: Sequence[STDataset], cfg: RunConfig, model: Model | None = None,
             epochs: int | None = None, log=None, split: SplitSpec = SplitSpec()) -> tuple[Model, TrainResult]:
    """Train every parameter on the pre-training datasets in round-robin order."""
    if not datasets:
        raise ContractError("pretrain needs at least one dataset")
    model = model or build_model(cfg)
    model.store.unfreeze_all()
    tasks = [make_task(ds, cfg, split) for ds in datasets]
    result = fit(model, tasks, TrainSchedule.for_phase("pretrain", cfg, epochs), log)
    return model, result


def prompt_tune(target: STDataset, model: Model, cfg: RunConfig | None = None, epochs: int | None = None,
                log=None, split: SplitSpec = SplitSpec()) -> tuple[Model, RunResult]:
    """Adapt a pre-trained model to ``target`` with the downstream model frozen.

    Only prompt-tagged and dataset-specific parameters are updated; dataset
    specific tensors flagged ``reinit`` are drawn afresh first. Test metrics are
    taken at the best-validation epoch.
    """
    cfg = cfg or model.cfg
    model = model.copy()
    model.cfg = cfg
    model.prompt.cfg = cfg
    model.downstream.cfg = cfg
    task = make_task(target, cfg, split)
    reinit_dataset_params(model.store, np.random.default_rng(cfg.seed + 2))
    model.store.set_trainable(("prompt", "dataset"))
    start = model.store.snapshot()
    result = fit(model, [task], TrainSchedule.for_phase("prompt_tune", cfg, epochs), log)
    report = evaluate(model, task.data.test, task)
    changed = [n for n, v in start.items() if not np.array_equal(v, model.store[n].data)]
    return model, RunResult("prompt_tune", report, result.steps, result.epochs_run, result.best_epoch,
                            result.history, changed)


def compare(mode: str, target: STDataset, cfg: RunConfig, model: Model | None = None,
            epochs: int | None = None, log=None, split: SplitSpec = SplitSpec()) -> tuple[Model, RunResult]:
    """Reference protocols: ``zero_shot`` (no updates), ``end_to_end`` (fresh
    model trained on the target only; any checkpoint is ignored) and
    ``finetune_all`` (every parameter of the checkpoint trained)."""
    if mode not in COMPARISON_MODES:
        raise ConfigurationError(f"unknown comparison mode {mode!r}; expected one of {COMPARISON_MODES}")
    task = make_task(target, cfg, split)
    if mode == "zero_shot":
        if model is None:
            raise ContractError("zero_shot needs a pre-trained model")
        return model, RunResult(mode, evaluate(model, task.data.test, task), 0, 0, 0)
    if mode == "end_to_end":
        model = build_model(cfg)
    else:
        if model is None:
            raise ContractError("finetune_all needs a pre-trained model")
        model = model.copy()
        model.cfg = model.prompt.cfg = model.downstream.cfg = cfg
    model.store.unfreeze_all()
    result = fit(model, [task], TrainSchedule.for_phase(mode, cfg, epochs), log)
    report = evaluate(model, task.data.test, task)
    return model, RunResult(mode, report, result.steps, result.epochs_run, result.best_epoch, result.history)
