"""Region graphs: adjacency, normalised Laplacian, eigenvectors, spatial context."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, NumericalError, ParseError

TRIVIAL_EIGENVALUE = 1e-8


def build_adjacency(distances=None, *, coords=None, theta: float = 1.0, kappa: float | None = None) -> np.ndarray:
    """Gaussian-kernel adjacency ``exp(-d^2 / theta^2)`` for pairs with ``d <= kappa``.

    Pass either a symmetric distance matrix or an ``(R, k)`` array of
    coordinates. ``kappa=None`` admits every pair. The diagonal is zero.
    """
    if (distances is None) == (coords is None):
        raise ContractError("build_adjacency: pass exactly one of distances or coords")
    if coords is not None:
        coords = np.asarray(coords, dtype=np.float64)
        diff = coords[:, None, :] - coords[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=-1))
    else:
        d = np.asarray(distances, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ContractError(f"distance matrix must be square, got shape {d.shape}")
        if np.any(d < 0):
            raise ContractError("distances must be nonnegative")
        if not np.allclose(d, d.T, rtol=0, atol=1e-9):
            raise ContractError("distance matrix is not symmetric")
    if theta <= 0:
        raise ContractError(f"kernel width theta must be positive, got {theta}")
    a = np.exp(-(d * d) / (theta * theta))
    if kappa is not None:
        a[d > kappa] = 0.0
    np.fill_diagonal(a, 0.0)
    return 0.5 * (a + a.T)


def _degree_scaling(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    out = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=out, where=deg > 0)
    return out


def _check_adjacency(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got shape {a.shape}")
    if np.any(a < 0):
        raise ContractError("adjacency has negative entries")
    if not np.allclose(a, a.T, rtol=0, atol=1e-9):
        raise ContractError("adjacency is not symmetric")
    return a


def normalized_laplacian(a) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get a zero scaling, hence a unit diagonal."""
    a = _check_adjacency(a)
    s = _degree_scaling(a)
    lap = np.eye(a.shape[0]) - s[:, None] * a * s[None, :]
    return 0.5 * (lap + lap.T)


def sym_normalized_adjacency(a) -> np.ndarray:
    a = _check_adjacency(a)
    s = _degree_scaling(a)
    return s[:, None] * a * s[None, :]


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method tournament on ``m`` (even) players: m-1 rounds of m/2 disjoint pairs."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array(players[: m // 2])
        q = np.array(players[m // 2:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def eigendecompose(mat, tol: float = 1e-10, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are scheduled in round-robin order so that each round consists of
    disjoint index pairs, which are applied together. Iterates until the
    off-diagonal Frobenius norm drops below ``tol * max(1, ||mat||_F)``.
    Eigenvalues come back ascending (stable sort, so ties keep input order)
    and each eigenvector column is signed so its largest-magnitude entry is
    positive.
    """
    a = np.array(mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"eigendecompose needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a)))
    if not np.allclose(a, a.T, rtol=0, atol=1e-9 * scale):
        raise ContractError("eigendecompose: matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * scale

    if n > 1:
        m = n + (n % 2)
        rounds = []
        for p, q in _round_robin(m):
            keep = q < n
            rounds.append((p[keep], q[keep]))
        for _sweep in range(max_sweeps + 1):
            off = float(np.linalg.norm(a - np.diag(np.diag(a))))
            if off < threshold:
                break
            if _sweep == max_sweeps:
                raise NumericalError(
                    f"Jacobi eigensolver did not converge in {max_sweeps} sweeps (off-diagonal norm {off:.3e})")
            for p, q in rounds:
                apq = a[p, q]
                active = np.abs(apq) > 1e-300
                if not np.any(active):
                    continue
                p, q, apq = p[active], q[active], apq[active]
                with np.errstate(over="ignore"):
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J and V <- V J, for all disjoint rotations in this round at once
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - s[:, None] * aq
                a[q, :] = s[:, None] * ap + c[:, None] * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[lead, np.arange(n)] < 0, -1.0, 1.0)
    return values, vectors * signs


def spatial_context(eigenvalues: np.ndarray, eigenvectors: np.ndarray, d_r: int) -> np.ndarray:
    """The ``d_r`` eigenvectors with the smallest nontrivial eigenvalues, as columns."""
    nontrivial = np.flatnonzero(eigenvalues >= TRIVIAL_EIGENVALUE)
    if d_r > len(nontrivial):
        raise ConfigurationError(
            f"graph has only {len(nontrivial)} nontrivial eigenvectors but d_r={d_r}; "
            f"use d_r <= {len(nontrivial)}")
    return eigenvectors[:, nontrivial[:d_r]]


@dataclass
class RoadGraph:
    adjacency: np.ndarray
    degree: np.ndarray = field(init=False)
    laplacian: np.ndarray = field(init=False)
    eigenvalues: np.ndarray = field(init=False)
    eigenvectors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.adjacency = np.array(_check_adjacency(self.adjacency))
        np.fill_diagonal(self.adjacency, 0.0)
        self.degree = self.adjacency.sum(axis=1)
        self.laplacian = normalized_laplacian(self.adjacency)
        self.eigenvalues, self.eigenvectors = eigendecompose(self.laplacian)
        self._propagation: dict[str, np.ndarray] = {}

    @property
    def num_regions(self) -> int:
        return self.adjacency.shape[0]

    R = num_regions

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    @property
    def num_components(self) -> int:
        return int(np.sum(self.eigenvalues < TRIVIAL_EIGENVALUE))

    def spatial_context(self, d_r: int) -> np.ndarray:
        return spatial_context(self.eigenvalues, self.eigenvectors, d_r)

    def propagation(self, mode: str = "sym_norm") -> np.ndarray:
        """Message-passing matrix: ``raw`` adjacency or ``sym_norm`` D^-1/2 A D^-1/2."""
        if mode not in self._propagation:
            if mode == "raw":
                self._propagation[mode] = self.adjacency.copy()
            elif mode == "sym_norm":
                self._propagation[mode] = sym_normalized_adjacency(self.adjacency)
            else:
                raise ConfigurationError(f"unknown propagation mode {mode!r} (raw|sym_norm)")
        return self._propagation[mode]

    def permuted(self, perm) -> "RoadGraph":
        perm = np.asarray(perm)
        return RoadGraph(self.adjacency[np.ix_(perm, perm)])


# -- graph files ------------------------------------------------------------

def write_edge_list(graph: RoadGraph, path) -> None:
    a = graph.adjacency
    rows, cols = np.nonzero(np.triu(a, k=1))
    with open(path, "w") as fh:
        fh.write(f"R={a.shape[0]}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {float(a[i, j])!r}\n")


def parse_edge_list(text: str) -> np.ndarray:
    lines = text.splitlines()
    try:
        n = int(lines[0].strip()[2:])
    except (IndexError, ValueError):
        raise ParseError("edge list header must read 'R=<n>'", row=0) from None
    a = np.zeros((n, n))
    for lineno, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 3:
            raise ParseError(f"expected 'src dst weight', got {line!r}", row=lineno)
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"malformed edge {line!r}", row=lineno) from None
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"edge ({i}, {j}) outside 0..{n - 1}", row=lineno)
        a[i, j] = a[j, i] = w
    np.fill_diagonal(a, 0.0)
    return a


def parse_distance_csv(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(io.StringIO(text)):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(c) for c in line.split(",")])
        except ValueError:
            raise ParseError("non-numeric distance", row=lineno) from None
    d = np.array(rows)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ParseError(f"distance matrix must be square, got {d.shape}")
    return d


def load_graph(path, theta: float | None = None, kappa: float | None = None) -> RoadGraph:
    """Read an edge list (first line ``R=<n>``) or a distance-matrix CSV.

    Distance matrices go through :func:`build_adjacency`; ``theta`` defaults to
    the standard deviation of the off-diagonal distances.
    """
    text = Path(path).read_text()
    if text.lstrip().startswith("R="):
        return RoadGraph(parse_edge_list(text.lstrip()))
    d = parse_distance_csv(text)
    if theta is None:
        off = d[~np.eye(len(d), dtype=bool)]
        theta = float(off.std()) if off.size and off.std() > 0 else 1.0
    return RoadGraph(build_adjacency(d, theta=theta, kappa=kappa))
