import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from specpool import backend, linalg
from specpool.errors import ConfigurationError, InputError, NumericalError
from specpool.oracles import triple_loop_matmul

from conftest import sym_matrix


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(3, 4))
        assert_array_equal(linalg.matmul(np.eye(3), a), a)

    def test_column_selection(self):
        assert_array_equal(linalg.matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])

    def test_matches_triple_loop(self, rng):
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        assert_allclose(linalg.matmul(a, b), triple_loop_matmul(a, b), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestJacobiEigh:
    def test_identity(self):
        vals, vecs = linalg.jacobi_eigh(np.eye(4))
        assert_array_equal(vals, np.ones(4))
        assert_array_equal(vecs, np.eye(4))

    def test_two_by_two_hand_case(self):
        vals, vecs = linalg.jacobi_eigh(np.array([[1.0, -1.0], [-1.0, 1.0]]))
        assert_allclose(vals, [0.0, 2.0], atol=1e-15)
        r = 1 / np.sqrt(2)
        # (1,-1)/sqrt2 has a magnitude tie; the lowest index decides the sign
        assert_allclose(vecs, [[r, r], [r, -r]], atol=1e-15)

    def test_reconstruction_32(self, rng):
        a = sym_matrix(rng, 32)
        vals, u = linalg.jacobi_eigh(a)
        assert np.abs(a - (u * vals) @ u.T).max() < 1e-9 * max(1.0, linalg.inf_norm(a))
        assert np.abs(u.T @ u - np.eye(32)).max() < 1e-9

    def test_matches_lapack_eigenvalues(self, rng):
        a = sym_matrix(rng, 20)
        assert_allclose(linalg.jacobi_eigh(a).eigenvalues, np.linalg.eigvalsh(a), atol=1e-10)

    @pytest.mark.slow
    def test_128(self, rng):
        a = sym_matrix(rng, 128)
        vals, u = linalg.jacobi_eigh(a)
        assert np.abs(a - (u * vals) @ u.T).max() < 1e-9 * linalg.inf_norm(a)
        assert np.abs(u.T @ u - np.eye(128)).max() < 1e-9

    def test_eigen_equation(self, rng):
        a = sym_matrix(rng, 16, scale=50.0)
        vals, u = linalg.jacobi_eigh(a)
        assert np.abs(a @ u - u * vals).max() < 1e-8 * linalg.inf_norm(a)

    def test_non_square(self):
        with pytest.raises(InputError):
            linalg.jacobi_eigh(np.ones((2, 3)))

    def test_asymmetric(self):
        with pytest.raises(InputError):
            linalg.jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_tiny_asymmetry_symmetrized(self):
        a = np.array([[2.0, 1.0], [1.0 + 1e-12, 2.0]])
        vals, _ = linalg.jacobi_eigh(a)
        assert_allclose(vals, [1.0, 3.0], atol=1e-11)

    def test_nonconvergence_reports_residual(self, rng):
        def stuck(a, tol, max_sweeps):
            n, k, _ = a.shape
            off = np.full(n, 0.5)
            return np.diagonal(a, axis1=1, axis2=2).copy(), np.broadcast_to(np.eye(k), a.shape).copy(), \
                np.full(n, -1), off

        with pytest.raises(NumericalError, match="residual"):
            linalg.jacobi_eigh(sym_matrix(rng, 4), sweeps_fn=stuck)

    def test_deterministic_and_idempotent_signs(self, rng):
        a = sym_matrix(rng, 12)
        v1 = linalg.jacobi_eigh(a).eigenvectors
        v2 = linalg.jacobi_eigh(a).eigenvectors
        assert_array_equal(v1, v2)
        assert_array_equal(linalg.canonicalize_signs(v1), v1)

    def test_backends_bit_identical(self, rng):
        if "cython" not in backend.available():
            pytest.skip("extension not built")
        stack = np.stack([sym_matrix(rng, 16) for _ in range(50)])
        a = linalg.jacobi_eigh_batch(stack, backend.get("cython"))
        b = linalg.jacobi_eigh_batch(stack, backend.get("python"))
        assert_array_equal(a[0], b[0])
        assert_array_equal(a[1], b[1])


class TestCanonicalizeSigns:
    def test_flip_negative_lead(self):
        v = np.array([[0.1, 0.0], [-0.9, 1.0]])
        assert_array_equal(linalg.canonicalize_signs(v), [[-0.1, 0.0], [0.9, 1.0]])

    def test_tie_lowest_index(self):
        v = np.array([[-0.5], [0.5]])
        assert_array_equal(linalg.canonicalize_signs(v), [[0.5], [-0.5]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 24), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_eigh_invariants(k, seed, scale):
    a = sym_matrix(np.random.default_rng(seed), k, scale)
    vals, u = linalg.jacobi_eigh(a)
    assert np.all(np.diff(vals) >= 0)
    assert np.abs(u.T @ u - np.eye(k)).max() < 1e-9
    assert np.abs(a - (u * vals) @ u.T).max() < 1e-9 * max(1.0, linalg.inf_norm(a))
    lead = np.take_along_axis(u, np.argmax(np.abs(u), axis=0)[None], axis=0)
    assert np.all(lead >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_eigh_repeated_eigenvalues(k, seed):
    # rank-one update of a multiple of I: k-1 equal eigenvalues
    v = np.random.default_rng(seed).normal(size=k)
    a = 2.0 * np.eye(k) + np.outer(v, v)
    vals, u = linalg.jacobi_eigh(a)
    assert_allclose(vals[:-1], 2.0, atol=1e-10)
    assert_allclose(vals[-1], 2.0 + v @ v, rtol=1e-10)
    assert np.abs(a - (u * vals) @ u.T).max() < 1e-9 * linalg.inf_norm(a)
