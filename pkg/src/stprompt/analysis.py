"""Embedding diagnostics and empirical complexity benchmarks."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ConfigurationError, ContractError, DegenerateDataError
from .graph import eigendecompose
from .objectives import uniformity_loss
from .prompt import spatial_encoder_layer, temporal_encoder_layer


# -- projection -------------------------------------------------------------

@dataclass
class PCAResult:
    scores: np.ndarray  # (N, 2)
    components: np.ndarray  # (d', 2)
    variance_ratio: np.ndarray  # (2,)


def pca2(embeddings) -> PCAResult:
    """Top-two principal component scores of row vectors, via the Jacobi eigensolver.

    Component signs follow the solver's canonical rule (largest-magnitude
    entry positive), so the result does not depend on row order.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ContractError(f"pca2 needs an (N >= 3, d' >= 2) matrix, got shape {x.shape}")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (x.shape[0] - 1)
    total = float(np.trace(cov))
    if not total > 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        raise DegenerateDataError("pca2: all samples are identical (rank-0 data)")
    values, vectors = eigendecompose(cov)
    top = np.argsort(-values, kind="stable")[:2]
    comps = vectors[:, top]
    return PCAResult(centred @ comps, comps, np.clip(values[top], 0.0, None) / total)


@dataclass
class ProjectionResult:
    points: np.ndarray  # (M, 2) on the unit circle
    kept: np.ndarray  # indices of the input rows that were kept
    dropped: int
    variance_ratio: np.ndarray | None = None


def unit_circle(points, variance_ratio=None) -> ProjectionResult:
    """Scale every nonzero 2-D point to unit length; exact zeros are dropped and counted."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    norms = np.linalg.norm(p, axis=1)
    keep = np.flatnonzero(norms > 0)
    return ProjectionResult(p[keep] / norms[keep, None], keep, int(len(p) - len(keep)), variance_ratio)


def project_embeddings(embeddings) -> ProjectionResult:
    """PCA to two dimensions followed by the unit-circle projection."""
    res = pca2(embeddings)
    return unit_circle(res.scores, res.variance_ratio)


# -- uniformity statistics ------------------------------------------------------

def _flatten(embeddings) -> np.ndarray:
    x = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings, dtype=np.float64)
    if x.ndim < 2:
        raise ContractError("embeddings must have a trailing feature axis")
    return x.reshape(-1, x.shape[-1])


def mean_pairwise_cosine(embeddings) -> float:
    x = _flatten(embeddings)
    n = len(x)
    if n < 2:
        raise ContractError("need at least two embeddings")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    gram = unit @ unit.T
    return float((gram.sum() - np.trace(gram)) / (n * (n - 1)))


def circular_variance(angles) -> float:
    """1 - |mean unit phasor|: 0 for identical angles, 1 for perfectly balanced ones."""
    a = np.asarray(angles, dtype=np.float64)
    return float(1.0 - np.hypot(np.cos(a).mean(), np.sin(a).mean()))


def wang_uniformity(embeddings, t: float = 2.0) -> float:
    """log mean over pairs of exp(-t * ||x - y||^2) on L2-normalised embeddings."""
    x = _flatten(embeddings)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    sq = np.sum(unit ** 2, axis=1)
    dist = np.clip(sq[:, None] + sq[None, :] - 2 * unit @ unit.T, 0.0, None)
    iu = np.triu_indices(len(x), k=1)
    vals = -t * dist[iu]
    m = vals.max()
    return float(m + np.log(np.mean(np.exp(vals - m))))


def uniformity_stats(embeddings) -> dict:
    """Mean pairwise cosine, circular variance of the projected angles and the
    pairwise Gaussian-potential uniformity metric. Lower cosine and lower
    metric mean a more uniform spread."""
    x = _flatten(embeddings)
    try:
        proj = project_embeddings(x)
        angles = np.arctan2(proj.points[:, 1], proj.points[:, 0])
        circ = circular_variance(angles) if len(angles) else 0.0
        ratio = proj.variance_ratio.tolist()
    except (DegenerateDataError, ContractError):
        circ, ratio = 0.0, None  # a single cluster point or too few samples
    return {
        "samples": int(len(x)),
        "mean_pairwise_cosine": mean_pairwise_cosine(x),
        "circular_variance": circ,
        "uniformity_metric": wang_uniformity(x),
        "variance_ratio": ratio,
    }


def write_projection_csv(proj: ProjectionResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in proj.points:
            w.writerow([repr(float(x)), repr(float(y))])


def write_stats_json(stats_: dict, path) -> None:
    Path(path).write_text(json.dumps(stats_, indent=2, sort_keys=True) + "\n")


# -- complexity benchmarks ------------------------------------------------------

COMPONENTS = ("temporal", "spatial", "uniformity")
VARIABLES = ("R", "E", "d", "F", "L")

# (sweep values, fixed sizes) placed where the dominant term governs the run time:
# wide d' sweeps outgrow the O(R d') elementwise work, small batches keep the R sweep in cache
DEFAULT_SWEEPS = {
    ("uniformity", "R"): ((64, 128, 256, 512, 1024), {}),
    ("temporal", "R"): ((256, 512, 1024, 2048, 4096), {"B": 1, "d": 64}),
    ("temporal", "d"): ((64, 128, 256, 512, 1024), {"B": 4, "R": 64}),
    ("spatial", "R"): ((64, 128, 256, 512, 1024), {}),
}
DEFAULT_FIXED = {"R": 256, "d": 64, "F": 1, "L": 1, "B": 4, "E": None}


@dataclass
class ScalingReport:
    component: str
    variable: str
    values: list[int]
    median_ms: list[float]
    repetitions: int
    inner_loops: list[int]
    slope: float
    half_width: float
    fixed: dict = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.median_ms, self.median_ms[1:]))

    def to_dict(self) -> dict:
        return {**asdict(self), "monotone": self.monotone}


def _random_graph(rng: np.random.Generator, R: int, edges: int | None) -> np.ndarray:
    """Symmetrically normalised propagation matrix of a random graph with ``edges`` undirected edges."""
    edges = edges if edges is not None else 4 * R
    a = np.zeros((R, R))
    i = rng.integers(0, R, size=edges)
    j = rng.integers(0, R, size=edges)
    a[i, j] = a[j, i] = 1.0
    np.fill_diagonal(a, 0.0)
    deg = a.sum(axis=1)
    s = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return s[:, None] * a * s[None, :]


def _workload(component: str, size: dict, rng: np.random.Generator) -> Callable[[], object]:
    """Forward pass of one encoder component for the given sizes, ready to time."""
    B, R, F, L, w = size["B"], size["R"], size["F"], size["L"], size["d"]
    dtype = ad.get_default_dtype()
    x = Tensor(rng.standard_normal((B, R, F, w)).astype(dtype))

    def mat(*shape):
        return Tensor((rng.standard_normal(shape) / np.sqrt(shape[0])).astype(dtype))

    if component == "temporal":
        layers = [(mat(w, w), mat(w), mat(w, w), mat(w)) for _ in range(L)]

        def run():
            h = x
            for w1, b1, w2, b2 in layers:
                h = temporal_encoder_layer(h, w1, b1, w2, b2)
            return h
    elif component == "spatial":
        prop = Tensor(_random_graph(rng, R, size.get("E")).astype(dtype))
        weights = [mat(w, w) for _ in range(L)]

        def run():
            h = x
            for w3 in weights:
                h = spatial_encoder_layer(h, prop, w3)
            return h
    elif component == "uniformity":
        def run():
            return uniformity_loss(x)
    else:
        raise ConfigurationError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    return run


def _time_point(run: Callable, repetitions: int, min_ms: float) -> tuple[float, int]:
    """Median per-call milliseconds, growing the inner loop until one
    repetition clearly exceeds the timer resolution."""
    resolution_ms = time.get_clock_info("perf_counter").resolution * 1000.0
    floor = max(min_ms, 100.0 * resolution_ms)
    inner = 1
    run()  # warm-up
    while True:
        t0 = time.perf_counter()
        for _ in range(inner):
            run()
        elapsed = (time.perf_counter() - t0) * 1000.0
        if elapsed >= floor or inner >= 1 << 16:
            break
        inner *= 2
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for _ in range(inner):
            run()
        samples.append((time.perf_counter() - t0) * 1000.0 / inner)
    return float(np.median(samples)), inner


def fit_loglog(values: Sequence[float], times: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Least-squares slope of log(time) on log(value) and its confidence half-width."""
    x = np.log(np.asarray(values, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    fit = stats.linregress(x, y)
    t_crit = stats.t.ppf(0.5 + confidence / 2.0, len(x) - 2)
    return float(fit.slope), float(t_crit * fit.stderr)


def bench_scaling(component: str, variable: str, values: Sequence[int] | None = None, *,
                  fixed: dict | None = None, repetitions: int = 10, min_ms: float = 2.0,
                  seed: int = 0) -> ScalingReport:
    """Time the forward pass of ``component`` over a geometric sweep of ``variable``.

    ``variable`` is one of R (regions), E (edges, spatial only), d (embedding
    width d'), F (features) or L (layers); the others stay at ``fixed``.
    Timing is pinned to one BLAS thread.
    """
    if component not in COMPONENTS:
        raise ConfigurationError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    if variable not in VARIABLES:
        raise ConfigurationError(f"unknown sweep variable {variable!r}; expected one of {VARIABLES}")
    if variable == "E" and component != "spatial":
        raise ConfigurationError("the edge count only affects the spatial component")
    default_values, default_fixed = DEFAULT_SWEEPS.get((component, variable), ((), {}))
    values = list(values or default_values)
    if len(values) < 5:
        raise ConfigurationError(f"a sweep needs at least 5 points, got {len(values)}")
    if repetitions < 10:
        raise ConfigurationError(f"at least 10 repetitions per point are required, got {repetitions}")
    base = {**DEFAULT_FIXED, **default_fixed, **(fixed or {})}
    rng = np.random.default_rng(seed)
    medians, inners = [], []
    with threadpool_limits(limits=1), no_grad():
        for v in values:
            size = {**base, variable: int(v)}
            ms, inner = _time_point(_workload(component, size, rng), repetitions, min_ms)
            medians.append(ms)
            inners.append(inner)
    slope, half = fit_loglog(values, medians)
    return ScalingReport(component, variable, [int(v) for v in values], medians, repetitions, inners,
                         slope, half, {k: v for k, v in base.items() if k != variable})


def write_scaling_csv(reports: Sequence[ScalingReport], path) -> None:
    """One ``point`` row per sweep value, then a ``slope`` footer row per report."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "component", "variable", "value", "median_ms"])
        for rep in reports:
            for v, ms in zip(rep.values, rep.median_ms):
                w.writerow(["point", rep.component, rep.variable, v, f"{ms:.6f}"])
            w.writerow(["slope", rep.component, rep.variable, f"{rep.slope:.6f}", f"{rep.half_width:.6f}"])
