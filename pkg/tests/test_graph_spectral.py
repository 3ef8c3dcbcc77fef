import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from specpool import graph_spectral as gs
from specpool.errors import ConfigurationError, InputError
from specpool.graph_spectral import RAW_DISTANCE, WeightScheme
from specpool.linalg import jacobi_eigh

PATH3 = np.array([[0.0, 1, 0], [1, 0, 1], [0, 1, 0]])


def graph_from_w(w):
    lap = gs.normalized_laplacian(w)
    vals, vecs = jacobi_eigh(lap)
    return gs.NeighborhoodGraph(w, w.sum(1), lap, vals, vecs)


class TestWeightScheme:
    def test_parse(self):
        assert WeightScheme.parse("gaussian") == WeightScheme()
        assert WeightScheme.parse("gaussian:0.5").sigma == 0.5
        assert WeightScheme.parse("raw_distance").kind == RAW_DISTANCE

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            WeightScheme.parse("cosine")
        with pytest.raises(ConfigurationError):
            WeightScheme(sigma=0.0)


class TestAdjacency:
    def test_raw_two_points(self):
        w = gs.adjacency([[0.0, 0, 0], [1, 0, 0]], WeightScheme(RAW_DISTANCE))
        assert_array_equal(w, [[0, 1], [1, 0]])

    def test_coincident_gaussian(self):
        w = gs.adjacency(np.ones((4, 3)))
        assert_array_equal(w, 1.0 - np.eye(4))

    def test_gaussian_per_entry_oracle(self, rng):
        x = rng.normal(size=(8, 3))
        d = [[math.dist(a, b) for b in x] for a in x]
        sigma = sum(d[i][j] for i in range(8) for j in range(8) if i != j) / 56
        ref = [[0.0 if i == j else math.exp(-d[i][j] ** 2 / sigma**2) for j in range(8)] for i in range(8)]
        assert_allclose(gs.adjacency(x), ref, rtol=0, atol=1e-12)

    def test_fixed_sigma(self, rng):
        x = rng.normal(size=(5, 2))
        w = gs.adjacency(x, WeightScheme(sigma=2.0))
        assert_allclose(w[0, 1], math.exp(-math.dist(x[0], x[1]) ** 2 / 4.0), rtol=1e-14)

    def test_symmetric_zero_diagonal(self, rng):
        for scheme in (WeightScheme(), WeightScheme(RAW_DISTANCE)):
            w = gs.adjacency(rng.normal(size=(10, 3)), scheme)
            assert_array_equal(w, w.T)
            assert_array_equal(np.diag(w), 0.0)
            assert np.all(w >= 0)


class TestLaplacian:
    def test_unit_degrees(self):
        assert_array_equal(gs.normalized_laplacian([[0.0, 1], [1, 0]]), [[1, -1], [-1, 1]])

    def test_isolated(self):
        assert_array_equal(gs.normalized_laplacian(np.zeros((3, 3))), np.eye(3))

    def test_isolated_vertex_row(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 2.0
        lap = gs.normalized_laplacian(w)
        assert_array_equal(lap[2], [0, 0, 1])
        assert_array_equal(lap[:, 2], [0, 0, 1])

    def test_triangle(self):
        w = 1.0 - np.eye(3)
        lap = gs.normalized_laplacian(w)
        assert_allclose(lap, np.eye(3) - w / 2, atol=1e-15)
        assert_allclose(jacobi_eigh(lap).eigenvalues, [0, 1.5, 1.5], atol=1e-12)


class TestBuildGraph:
    def test_singleton(self):
        g = gs.build_graph([[0.3, 0.1, 0.2]])
        assert_array_equal(g.basis, [[1.0]])
        assert_array_equal(g.eigenvalues, [1.0])

    def test_path_graph(self):
        assert_allclose(graph_from_w(PATH3).eigenvalues, [0, 1, 2], atol=1e-12)

    def test_range_32(self, rng):
        lam = gs.build_graph(rng.normal(size=(32, 3))).eigenvalues
        assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9

    def test_null_vector_parallel_to_sqrt_degree(self, rng):
        g = gs.build_graph(rng.normal(size=(16, 3)))
        assert abs(g.eigenvalues[0]) < 1e-9
        s = np.sqrt(g.degrees)
        cos = abs(g.basis[:, 0] @ s) / np.linalg.norm(s)
        assert cos > 1 - 1e-9

    def test_batch_matches_single(self, rng):
        x = rng.normal(size=(4, 8, 3))
        batch = gs.build_graphs(x)
        for i in range(4):
            assert_array_equal(batch[i].basis, gs.build_graph(x[i]).basis)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 3, 8, 16, 32]), st.booleans(), st.integers(0, 2**32 - 1))
def test_graph_invariants(k, raw, seed):
    x = np.random.default_rng(seed).normal(size=(k, 3))
    g = gs.build_graph(x, WeightScheme(RAW_DISTANCE) if raw else WeightScheme())
    assert g.eigenvalues.min() >= -1e-9 and g.eigenvalues.max() <= 2 + 1e-9
    assert np.abs(g.laplacian - (g.basis * g.eigenvalues) @ g.basis.T).max() < 1e-9
    assert np.abs(g.laplacian @ np.sqrt(g.degrees)).max() < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_spectral_range_arbitrary_weights(k, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 5, size=(k, k)) * (rng.random((k, k)) < 0.6)
    w = np.triu(w, 1)
    w = w + w.T
    lam = jacobi_eigh(gs.normalized_laplacian(w)).eigenvalues
    assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9


class TestFourier:
    def test_identity_basis(self, rng):
        x = rng.normal(size=(5, 2))
        assert_array_equal(gs.gft(np.eye(5), x), x)
        assert_array_equal(gs.igft(np.eye(5), x), x)

    def test_basis_column(self, rng):
        g = gs.build_graph(rng.normal(size=(8, 3)))
        assert_allclose(gs.gft(g.basis, g.basis[:, [3]])[:, 0], np.eye(8)[3], atol=1e-12)
        assert_allclose(gs.igft(g.basis, np.eye(8)[:, [3]]), g.basis[:, [3]], atol=0)

    def test_round_trip_and_parseval(self, rng):
        g = gs.build_graph(rng.normal(size=(16, 3)))
        x = rng.normal(size=(16, 5))
        xt = gs.gft(g.basis, x)
        assert np.abs(gs.igft(g.basis, xt) - x).max() < 1e-9
        assert abs(np.linalg.norm(xt) - np.linalg.norm(x)) < 1e-9

    def test_mismatch(self):
        with pytest.raises(ConfigurationError):
            gs.gft(np.eye(3), np.ones((4, 1)))
        with pytest.raises(ConfigurationError):
            gs.igft(np.eye(3), np.ones((4, 1)))


class TestFiedler:
    def test_path_order(self):
        g = graph_from_w(PATH3)
        r = 1 / np.sqrt(2)
        assert_allclose(g.basis[:, 1], [r, 0, -r], atol=1e-12)
        assert gs.fiedler_order(g).tolist() == [2, 1, 0]

    def test_two_clusters(self, rng):
        a = rng.normal(scale=0.1, size=(6, 3))
        b = rng.normal(scale=0.1, size=(6, 3)) + 5.0
        x = np.concatenate([a, b])
        perm = rng.permutation(12)
        order = gs.fiedler_order(gs.build_graph(x[perm]))
        side = perm[order] < 6
        assert len(set(side[:6])) == 1 and len(set(side[6:])) == 1
        assert side[0] != side[6]

    def test_complete_graph_deterministic(self):
        w = 1.0 - np.eye(6)
        assert_array_equal(gs.fiedler_order(graph_from_w(w)), gs.fiedler_order(graph_from_w(w)))

    def test_too_small(self):
        with pytest.raises(InputError):
            gs.fiedler_order(gs.build_graph([[0.0, 0.0]]))

    def test_spectral_coordinates_columns(self, rng):
        g = gs.build_graph(rng.normal(size=(8, 3)))
        assert_array_equal(gs.spectral_coordinates(g), g.basis[:, 1:4])
        assert gs.spectral_coordinates(gs.build_graph(rng.normal(size=(2, 3)))).shape == (2, 1)
