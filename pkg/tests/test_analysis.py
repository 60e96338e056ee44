import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stprompt.analysis import (
    bench_scaling,
    circular_variance,
    fit_loglog,
    mean_pairwise_cosine,
    pca2,
    unit_circle,
    uniformity_stats,
    wang_uniformity,
    write_scaling_csv,
)
from stprompt.errors import ConfigurationError, ContractError, DegenerateDataError


def test_planar_data_variance_sums_to_one():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.normal(size=(8, 2)))[0]
    x = rng.normal(size=(40, 2)) @ basis.T + 3.0
    res = pca2(x)
    assert res.variance_ratio.sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(res.scores.mean(axis=0), 0.0, atol=1e-9)


def test_standard_basis_pair_recovers_directions():
    x = np.array([[1, 0, 0], [0, 1, 0]] * 3 + [[2, 0, 0]], dtype=float)
    res = pca2(x)
    # oracle: the covariance eigenvectors from a dense solver
    centred = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(centred.T @ centred)
    for k in range(2):
        expected = vecs[:, -1 - k]
        assert abs(abs(res.components[:, k] @ expected) - 1.0) < 1e-9
    assert not res.components[2].any()


def test_pca_rejects_rank_zero_and_tiny_inputs():
    with pytest.raises(DegenerateDataError):
        pca2(np.ones((5, 3)))
    with pytest.raises(ContractError):
        pca2(np.ones((2, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_property_pca_row_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 5)) * np.array([5, 3, 1, 0.5, 0.1])
    perm = rng.permutation(12)
    a, b = pca2(x), pca2(x[perm])
    np.testing.assert_allclose(b.scores, a.scores[perm], atol=1e-9)


def test_unit_circle_examples():
    res = unit_circle([[3, 4], [0, 0], [-1, 0]])
    np.testing.assert_allclose(res.points, [[0.6, 0.8], [-1, 0]])
    assert res.dropped == 1 and res.kept.tolist() == [0, 2]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=20))
def test_property_unit_circle_idempotent_and_normalised(points):
    once = unit_circle(points)
    twice = unit_circle(once.points)
    np.testing.assert_allclose(twice.points, once.points, atol=1e-12)
    if len(once.points):
        np.testing.assert_allclose(np.linalg.norm(once.points, axis=1), 1.0, atol=1e-9)


def test_mean_pairwise_cosine_examples():
    assert mean_pairwise_cosine(np.tile([1.0, 2.0], (5, 1))) == pytest.approx(1.0)
    square = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    assert mean_pairwise_cosine(square) == pytest.approx(-1 / 3)


def test_circular_variance_extremes():
    assert circular_variance([0.3] * 5) == pytest.approx(0.0, abs=1e-12)
    assert circular_variance(np.linspace(0, 2 * np.pi, 8, endpoint=False)) == pytest.approx(1.0)


def test_wang_uniformity_matches_pair_loop():
    x = np.random.default_rng(1).normal(size=(6, 3))
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    pairs = [np.exp(-2 * np.sum((u[i] - u[j]) ** 2)) for i in range(6) for j in range(i + 1, 6)]
    assert wang_uniformity(x) == pytest.approx(np.log(np.mean(pairs)))


def test_uniformity_stats_fields_and_clusters():
    clustered = np.random.default_rng(2).normal(size=(50, 4)) * 0.01 + 1.0
    spread = np.random.default_rng(3).normal(size=(50, 4))
    a, b = uniformity_stats(clustered), uniformity_stats(spread)
    assert set(a) >= {"mean_pairwise_cosine", "circular_variance", "uniformity_metric"}
    assert b["mean_pairwise_cosine"] < a["mean_pairwise_cosine"]
    assert b["uniformity_metric"] < a["uniformity_metric"]
    same = uniformity_stats(np.ones((4, 3)))
    assert same["mean_pairwise_cosine"] == pytest.approx(1.0) and same["circular_variance"] == 0.0


def test_loglog_fit_recovers_exact_power():
    values = [8, 16, 32, 64, 128]
    slope, half = fit_loglog(values, [3.0 * v ** 1.5 for v in values])
    assert slope == pytest.approx(1.5) and half == pytest.approx(0.0, abs=1e-9)


def test_bench_contract_and_csv(tmp_path):
    rep = bench_scaling("spatial", "E", [16, 32, 64, 128, 256], fixed={"R": 32, "d": 8}, repetitions=10,
                        min_ms=0.2)
    assert len(rep.values) == len(rep.median_ms) == 5 and rep.repetitions == 10
    assert all(m > 0 for m in rep.median_ms)
    write_scaling_csv([rep], tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["record", "component", "variable", "value", "median_ms"]
    assert [r[0] for r in rows[1:]] == ["point"] * 5 + ["slope"]
    with pytest.raises(ConfigurationError):
        bench_scaling("temporal", "R", [1, 2, 3])
    with pytest.raises(ConfigurationError):
        bench_scaling("temporal", "R", [1, 2, 3, 4, 5], repetitions=3)
    with pytest.raises(ConfigurationError):
        bench_scaling("uniformity", "E")
