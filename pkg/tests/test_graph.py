import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stprompt.errors import ConfigurationError, ContractError, NumericalError, ParseError
from stprompt.graph import (
    RoadGraph,
    build_adjacency,
    eigendecompose,
    load_graph,
    normalized_laplacian,
    spatial_context,
    write_edge_list,
)

PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


def random_connected(rng, n, p=0.3):
    a = np.triu((rng.random((n, n)) < p) * rng.uniform(0.1, 1.0, (n, n)), 1)
    for i in range(1, n):  # spanning chain keeps it connected
        a[i - 1, i] = max(a[i - 1, i], rng.uniform(0.1, 1.0))
    return a + a.T


def test_kernel_weight_and_thresholding():
    d = np.array([[0.0, 0.0], [0.0, 0.0]])
    # coincident distinct nodes get weight exp(0) = 1
    np.testing.assert_allclose(build_adjacency(d, theta=1.0), [[0, 1], [1, 0]])
    far = np.array([[0.0, 5.0], [5.0, 0.0]])
    assert not build_adjacency(far, theta=1.0, kappa=1.0).any()
    line = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    a = build_adjacency(line, theta=1.0, kappa=1.0)
    np.testing.assert_allclose(a, PATH3 * np.exp(-1.0))


def test_asymmetric_or_negative_distances_rejected():
    with pytest.raises(ContractError):
        build_adjacency(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ContractError):
        build_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_adjacency_from_coordinates():
    a = build_adjacency(coords=np.array([[0.0, 0.0], [3.0, 4.0]]), theta=5.0)
    assert a[0, 1] == pytest.approx(np.exp(-1.0))


def test_laplacian_of_two_node_graph():
    lap = normalized_laplacian(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(lap, [[1, -1], [-1, 1]])
    vals, vecs = eigendecompose(lap)
    np.testing.assert_allclose(vals, [0, 2], atol=1e-12)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(vecs[:, 0], [s, s], atol=1e-12)
    assert abs(vecs[0, 1]) == pytest.approx(s) and vecs[0, 1] == -vecs[1, 1]


def test_isolated_node_row_is_identity():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    lap = normalized_laplacian(a)
    assert lap[2, 2] == 1.0 and not lap[2, :2].any()


def test_negative_adjacency_rejected():
    with pytest.raises(ContractError):
        normalized_laplacian(np.array([[0.0, -1.0], [-1.0, 0.0]]))


def test_path_graph_spectrum_matches_dense_oracle():
    lap = normalized_laplacian(PATH3)
    vals, _ = eigendecompose(lap)
    np.testing.assert_allclose(vals, [0, 1, 2], atol=1e-10)
    np.testing.assert_allclose(vals, np.linalg.eigh(lap)[0], atol=1e-10)


def test_identity_spectrum():
    vals, vecs = eigendecompose(np.eye(4))
    np.testing.assert_array_equal(vals, np.ones(4))
    assert sorted(np.argmax(np.abs(vecs), axis=0)) == [0, 1, 2, 3]
    np.testing.assert_array_equal(np.abs(vecs).sum(axis=0), np.ones(4))


def test_random_symmetric_reconstruction():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(8, 8))
    m = (m + m.T) / 2
    vals, vecs = eigendecompose(m)
    assert np.linalg.norm(vecs @ np.diag(vals) @ vecs.T - m) < 1e-8
    np.testing.assert_allclose(vals, np.linalg.eigh(m)[0], atol=1e-10)
    assert np.all(np.diff(vals) >= 0)


def test_sign_canonical_and_deterministic():
    rng = np.random.default_rng(1)
    lap = normalized_laplacian(random_connected(rng, 12))
    v1 = eigendecompose(lap)[1]
    v2 = eigendecompose(lap)[1]
    assert v1.tobytes() == v2.tobytes()
    idx = np.argmax(np.abs(v1), axis=0)
    assert np.all(v1[idx, np.arange(12)] > 0)


def test_non_convergence_is_numerical_error():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(10, 10))
    with pytest.raises(NumericalError):
        eigendecompose(m + m.T, max_sweeps=1)


def test_spatial_context_of_path_graph():
    g = RoadGraph(PATH3)
    c = g.spatial_context(1)
    np.testing.assert_allclose(c[:, 0], np.array([1, 0, -1]) / np.sqrt(2), atol=1e-10)


def test_spatial_context_selection_contract():
    g = RoadGraph(random_connected(np.random.default_rng(3), 10))
    c = g.spatial_context(4)
    assert c.shape == (10, 4)
    np.testing.assert_allclose(np.linalg.norm(c, axis=0), 1.0, atol=1e-10)
    assert g.eigenvalues[1] >= 1e-8


def test_two_components_limit_context_width():
    a = np.zeros((6, 6))
    a[:3, :3] = 1 - np.eye(3)
    a[3:, 3:] = 1 - np.eye(3)
    g = RoadGraph(a)
    assert g.num_components == 2
    assert np.sum(g.eigenvalues < 1e-8) == 2
    with pytest.raises(ConfigurationError, match="d_r"):
        g.spatial_context(5)
    assert g.spatial_context(4).shape == (6, 4)


def test_edge_count_counts_unordered_pairs():
    assert RoadGraph(PATH3).edge_count == 2


def test_roadgraph_does_not_alias_input():
    a = PATH3.copy()
    RoadGraph(a).adjacency[0, 1] = 7.0
    np.testing.assert_array_equal(a, PATH3)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 24), st.integers(0, 2 ** 31 - 1))
def test_property_laplacian_spectrum(n, seed):
    rng = np.random.default_rng(seed)
    g = RoadGraph(random_connected(rng, n))
    vals, vecs = g.eigenvalues, g.eigenvectors
    assert vals.min() >= -1e-8 and vals.max() <= 2 + 1e-8
    assert np.sum(vals < 1e-8) == 1
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-6)
    assert np.linalg.norm(vecs @ np.diag(vals) @ vecs.T - g.laplacian) < 1e-8
    deg = g.adjacency.sum(axis=1)
    expected = np.eye(n) - g.adjacency / np.sqrt(np.outer(deg, deg))
    np.testing.assert_allclose(g.laplacian, expected, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 14), st.integers(0, 2 ** 31 - 1))
def test_property_context_is_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    g = RoadGraph(random_connected(rng, n))
    if np.min(np.diff(g.eigenvalues)) < 1e-6:
        return  # repeated eigenvalues have no unique eigenvectors
    perm = rng.permutation(n)
    d_r = n - 1
    np.testing.assert_allclose(g.permuted(perm).spatial_context(d_r), g.spatial_context(d_r)[perm], atol=1e-8)


def test_edge_list_round_trip_and_distance_csv(tmp_path):
    g = RoadGraph(random_connected(np.random.default_rng(4), 7))
    write_edge_list(g, tmp_path / "g.txt")
    back = load_graph(tmp_path / "g.txt")
    np.testing.assert_allclose(back.adjacency, g.adjacency)

    dist = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    (tmp_path / "d.csv").write_text("\n".join(",".join(str(v) for v in row) for row in dist) + "\n")
    gd = load_graph(tmp_path / "d.csv", theta=1.0, kappa=1.0)
    np.testing.assert_allclose(gd.adjacency, PATH3 * np.exp(-1.0))

    (tmp_path / "bad.txt").write_text("R=3\n0 1 x\n")
    with pytest.raises(ParseError):
        load_graph(tmp_path / "bad.txt")
