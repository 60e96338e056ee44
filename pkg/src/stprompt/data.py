"""Spatio-temporal datasets: I/O, normalisation, windowing, splits, synthetic generation."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateDataError,
    InsufficientDataError,
    LoadError,
    ParseError,
    SplitError,
)
from .graph import RoadGraph, build_adjacency

DATASET_MAGIC = b"STDS"
DATASET_VERSION = 1


@dataclass
class STDataset:
    """Raw tensor ``X`` of shape (regions, time steps, features) plus calendar metadata.

    ``start_step`` is the offset of the first row from midnight of the day
    whose weekday is ``start_weekday`` (0 = Monday). ``mean``/``std`` are the
    scalar normalisation statistics; they stay ``None`` until fitted on a
    training partition.
    """

    name: str
    X: np.ndarray
    steps_per_day: int = 288
    start_weekday: int = 0
    start_step: int = 0
    mean: float | None = None
    std: float | None = None
    graph: RoadGraph | None = None

    def __post_init__(self):
        if self.X.ndim != 3:
            raise ContractError(f"dataset {self.name!r}: X must be (R, T, F), got shape {self.X.shape}")
        if self.steps_per_day < 1:
            raise ConfigurationError(f"steps_per_day must be >= 1, got {self.steps_per_day}")
        if not 0 <= self.start_weekday <= 6:
            raise ConfigurationError(f"start_weekday must be in 0..6, got {self.start_weekday}")
        if self.std is not None and not self.std > 0:
            raise DegenerateDataError(f"dataset {self.name!r}: standard deviation is {self.std}")
        if self.graph is not None and self.graph.num_regions != self.R:
            raise ConfigurationError(
                f"dataset {self.name!r} has {self.R} regions but its graph has {self.graph.num_regions}")

    @property
    def R(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def F(self) -> int:
        return self.X.shape[2]

    def global_steps(self, local) -> np.ndarray:
        return self.start_step + np.asarray(local)

    def time_of_day(self, local) -> np.ndarray:
        """Fraction of the day elapsed at each local step index, in [0, 1)."""
        return (self.global_steps(local) % self.steps_per_day) / self.steps_per_day

    def day_of_week(self, local) -> np.ndarray:
        """Weekday index divided by 7, in [0, 1)."""
        day = self.global_steps(local) // self.steps_per_day
        return ((self.start_weekday + day) % 7) / 7.0

    def fit_stats(self, t_end: int | None = None) -> "STDataset":
        """Copy with population mean/std computed from time steps ``[0, t_end)``."""
        part = self.X[:, : (self.T if t_end is None else t_end), :]
        mu = float(part.mean(dtype=np.float64))
        sigma = float(part.std(dtype=np.float64))
        if sigma == 0.0:
            raise DegenerateDataError(f"dataset {self.name!r} is constant on its training range; cannot normalise")
        return replace(self, mean=mu, std=sigma)


def zscore_normalize(x, mu: float, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise DegenerateDataError(f"cannot normalise with standard deviation {sigma}")
    return (np.asarray(x) - mu) / sigma


def denormalize(x, mu: float, sigma: float) -> np.ndarray:
    return np.asarray(x) * sigma + mu


def population_stats(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std())


# -- windows ---------------------------------------------------------------

@dataclass
class WindowSet:
    """Stacked windows: normalised inputs (N, R, H, F), raw targets (N, R, P, F),
    calendar fractions of each input step (N, H) and window start steps (N,)."""

    inputs: np.ndarray
    targets: np.ndarray
    tod: np.ndarray
    dow: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return self.inputs[index], self.targets[index], self.tod[index], self.dow[index]
        return self.subset(index)

    def subset(self, index) -> "WindowSet":
        return WindowSet(self.inputs[index], self.targets[index], self.tod[index], self.dow[index],
                         self.starts[index])

    @property
    def history(self) -> int:
        return self.inputs.shape[2]

    @property
    def horizon(self) -> int:
        return self.targets.shape[2]

    def batches(self, batch_size: int, rng: np.random.Generator | None = None) -> Iterator["WindowSet"]:
        """Consecutive batches; shuffled first when ``rng`` is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for lo in range(0, len(self), batch_size):
            yield self.subset(order[lo: lo + batch_size])


def window_count(T: int, H: int, P: int, stride: int = 1) -> int:
    if T < H + P:
        raise InsufficientDataError(f"need at least H+P={H + P} time steps for windowing, have {T}")
    return (T - H - P) // stride + 1


def make_windows(ds: STDataset, H: int, P: int, stride: int = 1) -> WindowSet:
    """All (input, target) windows: input steps [s, s+H), target steps [s+H, s+H+P)."""
    if ds.mean is None or ds.std is None:
        raise ContractError(f"dataset {ds.name!r} has no normalisation statistics; fit them on the training range")
    n = window_count(ds.T, H, P, stride)
    starts = np.arange(n) * stride
    x_norm = zscore_normalize(ds.X, ds.mean, ds.std).astype(ds.X.dtype, copy=False)
    idx_in = starts[:, None] + np.arange(H)[None, :]
    idx_out = starts[:, None] + H + np.arange(P)[None, :]
    inputs = np.ascontiguousarray(np.transpose(x_norm[:, idx_in, :], (1, 0, 2, 3)))
    targets = np.ascontiguousarray(np.transpose(ds.X[:, idx_out, :], (1, 0, 2, 3)))
    return WindowSet(inputs, targets, ds.time_of_day(idx_in), ds.day_of_week(idx_in), starts)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    chronological: bool = True
    strict: bool = False
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise SplitError(f"split ratios must be three positive numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise SplitError(f"split ratios must sum to 1, got {sum(self.ratios)}")

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_train = math.floor(self.ratios[0] * n + 1e-9)
        n_val = math.floor(self.ratios[1] * n + 1e-9)
        sizes = (n_train, n_val, n - n_train - n_val)
        if min(sizes) <= 0:
            raise SplitError(f"{n} windows split {self.ratios} leaves an empty partition: {sizes}")
        return sizes


def chrono_split(windows: WindowSet, spec: SplitSpec = SplitSpec()) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Contiguous train/val/test partitions (floor, floor, remainder).

    In strict mode, validation and test windows whose span touches the
    previous partition's time steps are dropped.
    """
    n = len(windows)
    if n == 0:
        raise SplitError("no windows to split")
    n_train, n_val, _ = spec.sizes(n)
    order = np.arange(n)
    if not spec.chronological:
        order = np.random.default_rng(spec.seed).permutation(n)
    parts = [order[:n_train], order[n_train: n_train + n_val], order[n_train + n_val:]]
    if spec.strict and spec.chronological:
        span = windows.history + windows.horizon
        for k in (1, 2):
            last_prev = windows.starts[parts[k - 1][-1]]
            parts[k] = parts[k][windows.starts[parts[k]] >= last_prev + span]
            if len(parts[k]) == 0:
                raise SplitError("strict split leaves an empty partition; use more data or non-strict mode")
    return tuple(windows.subset(p) for p in parts)


def training_range_end(n_train: int, H: int, P: int, stride: int = 1) -> int:
    """Exclusive end of the time steps touched by the first ``n_train`` windows."""
    return (n_train - 1) * stride + H + P


@dataclass
class PreparedData:
    dataset: STDataset
    train: WindowSet
    val: WindowSet
    test: WindowSet


def prepare(ds: STDataset, H: int, P: int, spec: SplitSpec = SplitSpec(), stride: int = 1) -> PreparedData:
    """Fit statistics on the training range only, then window and split."""
    n = window_count(ds.T, H, P, stride)
    n_train, _, _ = spec.sizes(n)
    if spec.chronological:
        fitted = ds.fit_stats(training_range_end(n_train, H, P, stride))
    else:
        fitted = ds.fit_stats()
    train, val, test = chrono_split(make_windows(fitted, H, P, stride), spec)
    return PreparedData(fitted, train, val, test)


# -- CSV ---------------------------------------------------------------------

def _descriptor(layout) -> dict:
    if isinstance(layout, (str, Path)):
        try:
            return json.loads(Path(layout).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"descriptor {layout} is not valid JSON: {exc}") from None
    return dict(layout)


def load_csv(path, layout, graph: RoadGraph | None = None) -> STDataset:
    """Read one row per time step with ``R*F`` region-major columns.

    ``layout`` is a dict (or path to a JSON file) with keys ``R``, ``F``,
    ``steps_per_day`` and optionally ``start_weekday``, ``start_step``,
    ``name`` and ``header`` (default true: first line holds column names).
    Row numbers in errors are 1-based file lines.
    """
    desc = _descriptor(layout)
    try:
        R, F = int(desc["R"]), int(desc["F"])
        spd = int(desc["steps_per_day"])
    except KeyError as exc:
        raise ParseError(f"descriptor is missing key {exc.args[0]!r}") from None
    if graph is not None and graph.num_regions != R:
        raise ParseError(f"descriptor declares R={R} but the graph has {graph.num_regions} regions")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and desc.get("header", True):
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != R * F:
                raise ParseError(f"expected {R * F} columns, found {len(row)}", row=lineno)
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", row=lineno, column=col) from None
            rows.append(values)
    if not rows:
        raise InsufficientDataError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), R, F)
    X = np.ascontiguousarray(np.transpose(arr, (1, 0, 2)))
    return STDataset(
        name=desc.get("name", Path(path).stem),
        X=X.astype(desc.get("dtype", "float32")),
        steps_per_day=spd,
        start_weekday=int(desc.get("start_weekday", 0)),
        start_step=int(desc.get("start_step", 0)),
        graph=graph,
    )


def write_csv(ds: STDataset, path, descriptor_path=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"r{r}_f{f}" for r in range(ds.R) for f in range(ds.F)])
        flat = np.transpose(ds.X, (1, 0, 2)).reshape(ds.T, ds.R * ds.F)
        for row in flat:
            writer.writerow([repr(float(v)) for v in row])
    if descriptor_path is not None:
        desc = {"name": ds.name, "R": ds.R, "F": ds.F, "steps_per_day": ds.steps_per_day,
                "start_weekday": ds.start_weekday, "start_step": ds.start_step, "dtype": str(ds.X.dtype)}
        Path(descriptor_path).write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")


# -- binary format -------------------------------------------------------------

def dataset_bytes(ds: STDataset) -> bytes:
    dtype = np.dtype(ds.X.dtype)
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"cannot serialise dtype {dtype}")
    header = {
        "name": ds.name,
        "shape": list(ds.X.shape),
        "dtype": dtype.name,
        "steps_per_day": ds.steps_per_day,
        "start_weekday": ds.start_weekday,
        "start_step": ds.start_step,
        "mean": ds.mean,
        "std": ds.std,
        "graph": ds.graph is not None,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [DATASET_MAGIC, bytes([DATASET_VERSION]), struct.pack("<I", len(head)), head,
             np.ascontiguousarray(ds.X, dtype=dtype.newbyteorder("<")).tobytes()]
    if ds.graph is not None:
        parts.append(np.ascontiguousarray(ds.graph.adjacency, dtype="<f8").tobytes())
    return b"".join(parts)


def save_dataset(ds: STDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def dataset_from_bytes(blob: bytes, source: str = "<bytes>") -> STDataset:
    if blob[:4] != DATASET_MAGIC:
        raise LoadError(f"{source}: bad magic {blob[:4]!r}, expected {DATASET_MAGIC!r}")
    if len(blob) < 9:
        raise LoadError(f"{source}: truncated header")
    if blob[4] != DATASET_VERSION:
        raise LoadError(f"{source}: unsupported dataset version {blob[4]} (expected {DATASET_VERSION})")
    (hlen,) = struct.unpack("<I", blob[5:9])
    try:
        header = json.loads(blob[9: 9 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise LoadError(f"{source}: corrupt or truncated header") from None
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    shape = tuple(header["shape"])
    offset = 9 + hlen
    nbytes = int(np.prod(shape)) * dtype.itemsize
    graph_bytes = shape[0] * shape[0] * 8 if header.get("graph") else 0
    if len(blob) != offset + nbytes + graph_bytes:
        raise LoadError(f"{source}: payload is {len(blob) - offset} bytes, expected {nbytes + graph_bytes}")
    X = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
    X = X.astype(dtype.newbyteorder("="))
    graph = None
    if graph_bytes:
        adj = np.frombuffer(blob, dtype="<f8", offset=offset + nbytes).reshape(shape[0], shape[0])
        graph = RoadGraph(adj.astype(np.float64))
    return STDataset(header["name"], X, header["steps_per_day"], header["start_weekday"],
                     header["start_step"], header["mean"], header["std"], graph)


def load_dataset(path) -> STDataset:
    return dataset_from_bytes(Path(path).read_bytes(), str(path))


# -- synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class ShiftSpec:
    """Knobs that move a synthetic dataset's distribution.

    ``amplitude`` scales the whole series (level, daily swing and noise),
    ``phase`` shifts the daily peak by a fraction of a day, ``noise`` is the
    Gaussian noise level relative to ``level``, ``weekly`` the weekend dip,
    ``diffusion`` the weight of the graph-diffused component and ``topology``
    one of ``geometric`` (k-nearest-neighbour Gaussian kernel), ``ring`` or
    ``grid``.
    """

    amplitude: float = 1.0
    phase: float = 0.0
    noise: float = 0.05
    weekly: float = 0.2
    diffusion: float = 0.3
    level: float = 100.0
    steps_per_day: int = 48
    start_weekday: int = 0
    topology: str = "geometric"
    neighbours: int = 3


def _connect_components(a: np.ndarray, d: np.ndarray, theta: float) -> np.ndarray:
    n = len(a)
    while True:
        label = -np.ones(n, dtype=int)
        comp = 0
        for s in range(n):
            if label[s] >= 0:
                continue
            stack = [s]
            label[s] = comp
            while stack:
                u = stack.pop()
                for w in np.flatnonzero(a[u] > 0):
                    if label[w] < 0:
                        label[w] = comp
                        stack.append(w)
            comp += 1
        if comp == 1:
            return a
        inside = label == 0
        sub = d[np.ix_(inside, ~inside)]
        i, j = np.unravel_index(np.argmin(sub), sub.shape)
        u, w = np.flatnonzero(inside)[i], np.flatnonzero(~inside)[j]
        a[u, w] = a[w, u] = np.exp(-(d[u, w] ** 2) / theta ** 2)


def synthetic_graph(rng: np.random.Generator, R: int, topology: str = "geometric", neighbours: int = 3) -> RoadGraph:
    if topology == "ring":
        a = np.zeros((R, R))
        if R > 1:
            idx = np.arange(R)
            a[idx, (idx + 1) % R] = 1.0
            a = np.maximum(a, a.T)
        return RoadGraph(a)
    if topology == "grid":
        cols = math.ceil(math.sqrt(R))
        a = np.zeros((R, R))
        for i in range(R):
            if (i + 1) % cols and i + 1 < R:
                a[i, i + 1] = a[i + 1, i] = 1.0
            if i + cols < R:
                a[i, i + cols] = a[i + cols, i] = 1.0
        return RoadGraph(a)
    if topology != "geometric":
        raise ConfigurationError(f"unknown topology {topology!r} (geometric|ring|grid)")
    coords = rng.uniform(0.0, 1.0, size=(R, 2))
    diff = coords[:, None, :] - coords[None, :, :]
    d = np.sqrt((diff * diff).sum(-1))
    if R == 1:
        return RoadGraph(np.zeros((1, 1)))
    k = min(neighbours, R - 1)
    nearest = np.argsort(d + np.diag(np.full(R, np.inf)), axis=1)[:, :k]
    theta = float(np.median(d[np.arange(R)[:, None], nearest]))
    full = build_adjacency(d, theta=theta)
    mask = np.zeros((R, R), dtype=bool)
    mask[np.arange(R)[:, None], nearest] = True
    a = np.where(mask | mask.T, full, 0.0)
    return RoadGraph(_connect_components(a, d, theta))


def gen_synthetic(seed: int, R: int, T: int, F: int = 1, shift: ShiftSpec = ShiftSpec(),
                  name: str | None = None, dtype=np.float32) -> STDataset:
    """Deterministic synthetic traffic-like dataset.

    For region r, feature f and step t (time-of-day fraction ``u_t``, weekday
    ``w_t``)::

        s[r,t,f] = b_r + a_r * (1 - weekly*[w_t >= 5]) * sin(2*pi*(u_t - phase - p_r - 0.1*f))
        X[r,t,f] = level * amplitude * ((1 - diffusion) * s + diffusion * (P s))[r,t,f]
                   + level * amplitude * noise * eps[r,t,f]

    with b_r ~ U(0.8, 1.2), a_r ~ U(0.3, 0.7), p_r ~ U(-0.05, 0.05),
    eps ~ N(0, 1) and P = D^-1 A the random-walk matrix of the generated graph.
    """
    if min(R, T, F) < 1:
        raise ContractError(f"R, T, F must be >= 1, got {(R, T, F)}")
    rng = np.random.default_rng(seed)
    graph = synthetic_graph(rng, R, shift.topology, shift.neighbours)
    base = rng.uniform(0.8, 1.2, size=R)
    swing = rng.uniform(0.3, 0.7, size=R)
    offset = rng.uniform(-0.05, 0.05, size=R)
    eps = rng.standard_normal(size=(R, T, F))

    steps = np.arange(T)
    tod = (steps % shift.steps_per_day) / shift.steps_per_day
    weekday = (shift.start_weekday + steps // shift.steps_per_day) % 7
    week = 1.0 - shift.weekly * (weekday >= 5)
    fshift = 0.1 * np.arange(F)
    angle = 2 * np.pi * (tod[None, :, None] - shift.phase - offset[:, None, None] - fshift[None, None, :])
    s = base[:, None, None] + swing[:, None, None] * week[None, :, None] * np.sin(angle)

    deg = graph.adjacency.sum(axis=1)
    walk = np.where(deg[:, None] > 0, graph.adjacency / np.where(deg > 0, deg, 1.0)[:, None], np.eye(R))
    mixed = (1.0 - shift.diffusion) * s + shift.diffusion * np.einsum("ij,jtf->itf", walk, s)
    scale = shift.level * shift.amplitude
    X = scale * mixed + scale * shift.noise * eps
    return STDataset(name or f"synthetic-{seed}", X.astype(dtype), shift.steps_per_day,
                     shift.start_weekday, 0, graph=graph)
