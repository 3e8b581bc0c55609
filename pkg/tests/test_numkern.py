import numpy as np
import pytest

from utils import numkern as nk
from utils.errors import DimensionError, UsageError


class TestMatmul:
    def test_hand_example(self):
        out = nk.matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]])
        np.testing.assert_array_equal(out, [[19, 22], [43, 50]])

    def test_identity(self, rng):
        a = rng.normal(size=(5, 5))
        np.testing.assert_array_equal(nk.matmul(a, np.eye(5)), a)

    def test_matches_triple_loop(self, rng):
        for _ in range(10):
            a = rng.normal(size=(4, 3))
            b = rng.normal(size=(3, 5))
            expected = np.zeros((4, 5))
            for i in range(4):
                for j in range(5):
                    for k in range(3):
                        expected[i, j] += a[i, k] * b[k, j]
            np.testing.assert_allclose(nk.matmul(a, b), expected, atol=1e-12)

    def test_associative(self, rng):
        for _ in range(10):
            a, b, c = rng.normal(size=(4, 6)), rng.normal(size=(6, 3)), rng.normal(size=(3, 5))
            left = nk.matmul(nk.matmul(a, b), c)
            right = nk.matmul(a, nk.matmul(b, c))
            np.testing.assert_allclose(left, right, rtol=0, atol=1e-9)

    def test_batched(self, rng):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 2))
        np.testing.assert_allclose(nk.matmul(a, b)[1], a[1] @ b, atol=1e-14)

    def test_mismatch_raises(self):
        with pytest.raises(DimensionError):
            nk.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ValueError):
            nk.matmul(np.ones(3), np.ones((3, 1)))


class TestRowSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(nk.row_softmax([[0.0, 0.0, 0.0]]), [[1 / 3] * 3], atol=1e-15)

    def test_large_logits_are_stable(self):
        out = nk.row_softmax([[1000.0, 0.0]])
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out, [[1.0, 0.0]])

    def test_rows_sum_to_one(self, rng):
        out = nk.row_softmax(rng.normal(scale=20, size=(50, 17)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out >= 0)

    def test_shift_invariance(self, rng):
        m = rng.normal(size=(6, 6))
        shifts = rng.normal(size=(6, 1)) * 100
        np.testing.assert_allclose(nk.row_softmax(m + shifts), nk.row_softmax(m), atol=1e-12)

    def test_matches_extended_precision(self, rng):
        m = rng.normal(scale=5, size=(8, 8))
        wide = m.astype(np.longdouble)
        e = np.exp(wide - wide.max(axis=1, keepdims=True))
        expected = (e / e.sum(axis=1, keepdims=True)).astype(np.float64)
        np.testing.assert_allclose(nk.row_softmax(m), expected, atol=1e-12)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        np.testing.assert_array_equal(nk.layer_norm_rows([[3.0, 3.0, 3.0]]), [[0.0, 0.0, 0.0]])

    def test_two_entry_row(self):
        np.testing.assert_allclose(nk.layer_norm_rows([[0.0, 2.0]]), [[-1.0, 1.0]], atol=1e-5)

    def test_zero_mean_unit_variance(self, rng):
        m = rng.normal(scale=10, size=(30, 12)) + rng.normal(size=(30, 1)) * 50
        out = nk.layer_norm_rows(m)
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-6)

    def test_affine_invariance(self, rng):
        m = rng.normal(scale=30, size=(10, 9))
        for a, b in [(1.0, 7.0), (3.5, -2.0), (5.0, 0.25)]:
            np.testing.assert_allclose(nk.layer_norm_rows(a * m + b), nk.layer_norm_rows(m), atol=1e-6)

    def test_empty_row_raises(self):
        with pytest.raises(DimensionError):
            nk.layer_norm_rows(np.ones((3, 0)))


class TestActivations:
    def test_elu_values(self):
        out = nk.elu([-1.0, 0.0, 2.0], alpha=1.0)
        np.testing.assert_allclose(out, [np.exp(-1) - 1, 0.0, 2.0], atol=1e-15)

    def test_elu_large_inputs_stay_finite(self):
        assert np.all(np.isfinite(nk.elu([-1e4, 1e4])))

    def test_leaky_relu_values(self):
        np.testing.assert_allclose(nk.leaky_relu([-2.0, 0.0, 3.0], 0.2), [-0.4, 0.0, 3.0])

    def test_sigmoid_symmetry(self, rng):
        x = rng.uniform(-50, 50, 1000)
        np.testing.assert_allclose(nk.sigmoid(x) + nk.sigmoid(-x), 1.0, atol=1e-12)


class TestBackwardRules:
    """Each backward rule against central differences of a weighted sum."""

    def _check(self, forward, backward_of, x, rng):
        w = rng.normal(size=x.shape)
        numeric = nk.numerical_gradient(lambda: float(np.sum(w * forward(x))), x)
        analytic = backward_of(x, w)
        assert nk.relative_error(analytic, numeric) < 1e-6

    def test_softmax(self, rng):
        x = rng.normal(size=(4, 5))
        self._check(nk.row_softmax, lambda x, w: nk.softmax_rows_backward(nk.row_softmax(x), w), x, rng)

    def test_layer_norm(self, rng):
        x = rng.normal(size=(3, 6))
        self._check(nk.layer_norm_rows, nk.layer_norm_rows_backward, x, rng)

    def test_elu(self, rng):
        x = rng.normal(size=(5, 5))
        x[np.abs(x) < 1e-2] = 0.5
        self._check(nk.elu, nk.elu_backward, x, rng)

    def test_leaky_relu(self, rng):
        x = rng.normal(size=(5, 5))
        x[np.abs(x) < 1e-2] = 0.5
        self._check(nk.leaky_relu, nk.leaky_relu_backward, x, rng)

    def test_sum_of_softmax_has_zero_gradient(self, rng):
        p = nk.row_softmax(rng.normal(size=(4, 7)))
        np.testing.assert_allclose(nk.softmax_rows_backward(p, np.ones_like(p)), 0.0, atol=1e-15)

    def test_mse_one_by_one(self):
        pred, truth = 0.7, 0.2
        x = np.array([[pred]])
        numeric = nk.numerical_gradient(lambda: float((x[0, 0] - truth) ** 2), x)
        np.testing.assert_allclose(numeric, [[2 * (pred - truth)]], atol=1e-8)


class TestRecords:
    def test_missing_intermediate_raises(self):
        rec = nk.ForwardRecord("layer")
        rec.put("x", 1)
        assert "x" in rec
        assert rec.names() == ["x"]
        with pytest.raises(UsageError, match="'h' was not recorded"):
            rec.get("h")

    def test_backward_without_rule_raises(self):
        with pytest.raises(UsageError):
            nk.backward(nk.ForwardRecord("layer"), np.ones(2))

    def test_backward_dispatches_to_rule(self):
        rec = nk.ForwardRecord("layer", backward_fn=lambda r, up: up * 2)
        np.testing.assert_array_equal(nk.backward(rec, np.ones(2)), [2.0, 2.0])

    def test_gradset_accumulates(self):
        grads = nk.GradSet.like({"w": np.zeros((2, 2))})
        grads.add("w", np.ones((2, 2)))
        grads.add("w", np.ones((2, 2)))
        np.testing.assert_array_equal(grads["w"], 2 * np.ones((2, 2)))
        assert grads.first_non_finite() is None

    def test_gradset_rejects_bad_shape_and_name(self):
        grads = nk.GradSet({"w": (2, 2)})
        with pytest.raises(DimensionError):
            grads.add("w", np.ones(3))
        with pytest.raises(UsageError):
            grads.add("v", np.ones((2, 2)))
        grads.add("w", np.full((2, 2), np.nan))
        assert grads.first_non_finite() == "w"


def test_relative_error_of_equal_arrays_is_zero():
    assert nk.relative_error(np.ones(3), np.ones(3)) == 0.0
