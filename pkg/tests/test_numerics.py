import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctpt.errors import ArgumentError, ShapeError
from ctpt.numerics import RngStream, gaussian_matrix, matmul, softmax_rows


def naive_matmul(a, b):
    """Triple-loop oracle, independent of numpy's matmul path."""
    rows, inner, cols = a.shape[0], a.shape[1], b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_arithmetic(self):
        a = np.array([[1.0, 2.0]])
        b = np.array([[3.0], [4.0]])
        assert matmul(a, b).item() == pytest.approx(11.0)

    def test_matches_triple_loop_oracle(self):
        rng = RngStream(7)
        a = rng.normal(size=(8, 8))
        b = rng.normal(size=(8, 8))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_associativity(self):
        rng = RngStream(11)
        a, b, c = (rng.normal(size=(6, 6)) for _ in range(3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        rel = np.max(np.abs(left - right)) / max(np.max(np.abs(left)), 1.0)
        assert rel < 1e-9


class TestSoftmaxRows:
    def test_symmetry(self):
        out = softmax_rows(np.array([[0.0, 0.0, 0.0]]))
        assert np.allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_no_overflow_on_large_entries(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_direct_oracle(self):
        row = np.array([[1.0, 2.0, 3.0]])
        direct = np.exp(row) / np.exp(row).sum()
        assert np.max(np.abs(softmax_rows(row, scale=1.0) - direct)) < 1e-12

    def test_shift_invariance(self):
        rng = RngStream(3)
        m = rng.normal(size=(4, 5))
        shifted = m + rng.normal(size=(4, 1))
        assert np.allclose(softmax_rows(m), softmax_rows(shifted), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=2, max_size=6),
            min_size=1,
            max_size=4,
        ).filter(lambda rows: len({len(r) for r in rows}) == 1)
    )
    def test_rows_sum_to_one(self, rows):
        out = softmax_rows(np.array(rows))
        assert np.all(out >= 0)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9


class TestGaussianMatrix:
    def test_same_seed_identical(self):
        a = gaussian_matrix(RngStream(42), 5, 7, 0.5)
        b = gaussian_matrix(RngStream(42), 5, 7, 0.5)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = gaussian_matrix(RngStream(1), 5, 7, 0.5)
        b = gaussian_matrix(RngStream(2), 5, 7, 0.5)
        assert np.any(a != b)

    def test_moments(self):
        m = gaussian_matrix(RngStream(9), 200, 640, 0.02)
        n = m.size
        assert abs(m.mean()) < 3 * 0.02 / np.sqrt(n)
        assert abs(m.std() - 0.02) / 0.02 < 0.05

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ArgumentError):
            gaussian_matrix(RngStream(0), 2, 2, 0.0)


class TestRngStream:
    def test_deterministic_sequence(self):
        a = RngStream(123)
        b = RngStream(123)
        assert np.array_equal(a.normal(size=10), b.normal(size=10))
        assert np.array_equal(a.integers(0, 100, size=5), b.integers(0, 100, size=5))

    def test_children_are_independent_and_stable(self):
        root = RngStream(5)
        c1 = root.child("alpha")
        c2 = root.child("beta")
        assert c1.seed != c2.seed
        assert root.child("alpha").seed == c1.seed
        # Deriving children consumes no draws from the parent.
        assert root.position == 0

    def test_position_counts_draws(self):
        s = RngStream(0)
        s.normal(size=(3, 4))
        s.uniform(size=5)
        assert s.position == 17
