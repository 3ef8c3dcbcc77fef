import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from specpool import sampling
from specpool.errors import InputError
from specpool.oracles import brute_knn


def _brute_fps(points, m):
    """Greedy selection by exhaustive min-distance enumeration."""
    chosen = [min(range(len(points)), key=lambda i: tuple(points[i]))]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i in range(len(points)):
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


class TestFPS:
    def test_single_is_lexmin(self, rng):
        pts = rng.normal(size=(20, 3))
        assert sampling.fps(pts, 1).tolist() == [int(np.lexsort(pts.T[::-1])[0])]

    def test_square_corners(self):
        pts = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        assert sampling.fps(pts, 2).tolist() == [0, 3]

    def test_exhaustion_is_permutation(self, rng):
        pts = rng.normal(size=(15, 3))
        assert sorted(sampling.fps(pts, 15).tolist()) == list(range(15))

    def test_matches_brute_force(self, rng):
        pts = rng.normal(size=(40, 3))
        assert sampling.fps(pts, 10).tolist() == _brute_fps(pts, 10)

    def test_range_errors(self, rng):
        with pytest.raises(InputError):
            sampling.fps(rng.normal(size=(4, 3)), 5)
        with pytest.raises(InputError):
            sampling.fps(rng.normal(size=(4, 3)), 0)

    def test_beats_random_subsets(self, rng):
        def min_pair(p):
            d = np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1))
            return d[np.triu_indices(len(p), 1)].min()

        for _ in range(5):
            pts = rng.normal(size=(200, 3))
            sel = min_pair(pts[sampling.fps(pts, 16)])
            rand = [min_pair(pts[rng.choice(200, 16, replace=False)]) for _ in range(100)]
            assert sel >= max(rand)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**32 - 1))
def test_fps_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    m = int(rng.integers(1, n + 1))
    perm = rng.permutation(n)
    a = pts[sampling.fps(pts, m)]
    b = pts[perm][sampling.fps(pts[perm], m)]
    assert_array_equal(a, b)


class TestKNN:
    def test_exhaustion(self, rng):
        pts = rng.normal(size=(7, 2))
        assert sorted(sampling.knn(pts, 3, 7).tolist()) == list(range(7))

    def test_collinear(self):
        pts = np.array([[0.0], [1.0], [2.0], [3.0]])
        assert sampling.knn(pts, 0, 2).tolist() == [0, 1]

    def test_duplicates_first_by_index(self):
        pts = np.array([[5.0, 5], [0, 0], [1, 0], [0, 0], [0, 0]])
        assert sampling.knn(pts, 3, 4).tolist() == [1, 3, 4, 2]

    def test_ties_at_boundary(self):
        # four points at equal distance from the query; the lowest indices win
        pts = np.array([[0.0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]])
        assert sampling.knn(pts, 0, 3).tolist() == [0, 1, 2]

    def test_range(self, rng):
        with pytest.raises(InputError):
            sampling.knn(rng.normal(size=(3, 2)), 0, 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32 - 1), st.booleans())
def test_knn_matches_brute(n, seed, grid):
    rng = np.random.default_rng(seed)
    # integer grids produce many distance ties
    pts = rng.integers(0, 3, size=(n, 2)).astype(float) if grid else rng.normal(size=(n, 3))
    k = int(rng.integers(1, n + 1))
    q = int(rng.integers(0, n))
    assert sampling.knn(pts, q, k).tolist() == brute_knn(pts, q, k)


class TestGroup:
    def test_origin_centroid(self):
        pts = np.array([[0.0, 0, 0], [1, 2, 3], [0.5, 0, 0]])
        (nb,) = sampling.group(pts, None, [0], 3)
        assert_array_equal(nb.rel_coords, pts[nb.member_indices])
        assert nb.member_indices[0] == 0

    def test_translation_invariant(self, rng):
        pts = rng.normal(size=(50, 3))
        cents = sampling.fps(pts, 5)
        a = sampling.group(pts, None, cents, 8)
        b = sampling.group(pts + np.array([3.0, -1.0, 7.5]), None, cents, 8)
        for x, y in zip(a, b):
            assert_array_equal(x.member_indices, y.member_indices)
            assert_allclose(x.rel_coords, y.rel_coords, atol=1e-12)

    def test_members_match_sort_oracle(self, rng):
        pts = rng.normal(size=(60, 3))
        feats = rng.normal(size=(60, 2))
        cents = sampling.fps(pts, 6)
        for nb in sampling.group(pts, feats, cents, 10):
            assert nb.member_indices.tolist() == brute_knn(pts, nb.centroid_index, 10)
            assert nb.centroid_index in nb.member_indices
            assert_array_equal(nb.rel_coords[0], 0.0)
            assert_array_equal(nb.features, feats[nb.member_indices])

    def test_feature_row_mismatch(self, rng):
        with pytest.raises(InputError):
            sampling.group(rng.normal(size=(5, 3)), np.ones((4, 1)), [0], 2)
