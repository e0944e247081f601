import numpy as np
import pytest

from hmnet import tensor as T
from hmnet.tensor import AutodiffError, ShapeError, Tensor, backward


def _matmul_oracle(a, b):
    # naive triple loop, no numpy dot
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        x = Tensor(np.arange(12.0).reshape(3, 4))
        eye = Tensor(np.eye(3))
        out = T.matmul(eye, x, "ij,jk->ik")
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape_arithmetic(self, rng):
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.normal(size=(3, 4)))
        assert T.matmul(a, b, "ij,jk->ik").shape == (2, 4)

    def test_matches_triple_loop(self, rng):
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3))
        out = T.matmul(Tensor(a), Tensor(b), "ij,jk->ik")
        np.testing.assert_allclose(out.data, _matmul_oracle(a, b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self, rng):
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.normal(size=(4, 5)))
        with pytest.raises(ShapeError, match=r"\(2, 3\)") as exc:
            T.matmul(a, b, "ij,jk->ik")
        assert "(4, 5)" in str(exc.value)

    def test_backward_both_operands(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        out = T.matmul(a, b, "ij,jk->ik")
        backward(T.tsum(out))
        g = np.ones((2, 4))
        np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)

    def test_rejects_unrecoverable_spec(self, rng):
        a = Tensor(rng.normal(size=(2,)))
        b = Tensor(rng.normal(size=(3,)))
        with pytest.raises(ShapeError):
            T.matmul(a, b, "i,j->j")  # i is summed out and unrecoverable


class TestConcat:
    def test_shape(self, rng):
        a = Tensor(rng.normal(size=(5, 2, 3)))
        b = Tensor(rng.normal(size=(5, 2, 3)))
        assert T.concat(a, b, axis=1).shape == (5, 4, 3)

    def test_empty_identity(self, rng):
        x = rng.normal(size=(4, 3))
        out = T.concat(Tensor(x), Tensor(np.zeros((4, 0))), axis=1)
        np.testing.assert_array_equal(out.data, x)

    def test_gradient_splits(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        backward(T.tsum(T.concat(a, b, axis=1)))
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 2)))

    def test_mismatch(self, rng):
        with pytest.raises(ShapeError):
            T.concat(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))), axis=1)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_sigmoid_open_interval(self, rng):
        y = T.sigmoid(Tensor(rng.normal(scale=20, size=1000))).data
        assert np.all(y > 0.0) and np.all(y < 1.0)

    def test_softmax_single_element(self):
        out = T.softmax(Tensor([[3.7]]), axis=1)
        np.testing.assert_allclose(out.data, [[1.0]])

    def test_softmax_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        e = np.array([np.exp(v) for v in x])
        expected = e / e.sum()
        np.testing.assert_allclose(T.softmax(Tensor(x), axis=0).data, expected, atol=1e-12)

    def test_softmax_sums_to_one(self, rng):
        x = rng.normal(scale=5, size=(4, 7, 3))
        y = T.softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), np.ones((4, 3)), atol=1e-9)
        assert np.all(y >= 0) and np.all(y <= 1)

    def test_broadcast_add_backward(self, rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        backward(T.tsum(T.add(a, b)))
        np.testing.assert_array_equal(b.grad, np.full(4, 6.0))

    def test_scalar_lifting(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        out = T.sub(1.0, x)
        np.testing.assert_array_equal(out.data, [0.0, -1.0])
        backward(T.tsum(out))
        np.testing.assert_array_equal(x.grad, [-1.0, -1.0])

    def test_l2_normalize_unit_norm(self, rng):
        x = rng.normal(size=(5, 8))
        y = T.l2_normalize(Tensor(x), axis=-1).data
        np.testing.assert_allclose(np.linalg.norm(y, axis=-1), np.ones(5), atol=1e-9)


class TestBlockedConv:
    def test_position_count_96_over_6(self, rng):
        x = Tensor(rng.normal(size=(96, 2, 3)))
        w = Tensor(rng.normal(size=(6, 3, 3)))
        b = Tensor(np.zeros(3))
        assert T.blocked_conv1d(x, w, b).shape == (16, 2, 3)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(5, 2, 3))
        w = Tensor(np.eye(3)[None, :, :])  # S=1 identity
        out = T.blocked_conv1d(Tensor(x), w, Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_matches_naive_loop(self, rng):
        t, s, n, d = 8, 2, 3, 3
        x = rng.normal(size=(t, n, d))
        w = rng.normal(size=(s, d, d))
        b = rng.normal(size=d)
        out = T.blocked_conv1d(Tensor(x), Tensor(w), Tensor(b)).data
        expected = np.zeros((t // s, n, d))
        for p in range(t // s):
            for v in range(n):
                acc = b.copy()
                for j in range(s):
                    acc = acc + x[p * s + j, v, :] @ w[j]
                expected[p, v] = acc
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_batched_matches_per_sample(self, rng):
        x = rng.normal(size=(2, 8, 3, 4))
        w = Tensor(rng.normal(size=(4, 4, 4)))
        b = Tensor(rng.normal(size=4))
        batched = T.blocked_conv1d(Tensor(x), w, b).data
        for i in range(2):
            single = T.blocked_conv1d(Tensor(x[i]), w, b).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    def test_indivisible_length_raises(self, rng):
        x = Tensor(rng.normal(size=(7, 2, 3)))
        w = Tensor(rng.normal(size=(2, 3, 3)))
        with pytest.raises(ShapeError, match="divisible"):
            T.blocked_conv1d(x, w, Tensor(np.zeros(3)))


class TestMseLoss:
    def test_zero_when_equal(self, rng):
        x = rng.normal(size=(3, 4))
        assert T.mse_loss(Tensor(x), Tensor(x.copy())).item() == 0.0

    def test_unit_offset(self, rng):
        x = rng.normal(size=(3, 4))
        assert T.mse_loss(Tensor(x + 1.0), Tensor(x)).item() == pytest.approx(1.0)

    def test_matches_hand_sum(self, rng):
        p = rng.normal(size=(4, 5))
        t = rng.normal(size=(4, 5))
        total = 0.0
        for i in range(4):
            for j in range(5):
                total += (p[i, j] - t[i, j]) ** 2
        assert T.mse_loss(Tensor(p), Tensor(t)).item() == pytest.approx(total / 20, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestBackward:
    def test_linear_case(self, rng):
        w = Tensor(rng.normal(size=(4,)), requires_grad=True)
        x = rng.normal(size=(4,))
        backward(T.tsum(T.mul(w, Tensor(x))))
        np.testing.assert_allclose(w.grad, x, atol=1e-12)

    def test_double_backward_raises(self):
        w = Tensor([2.0], requires_grad=True)
        loss = T.tsum(T.mul(w, w))
        backward(loss)
        with pytest.raises(AutodiffError):
            backward(loss)

    def test_stop_gradient_blocks_flow(self, rng):
        w = Tensor(rng.normal(size=(3,)), requires_grad=True)
        frozen = T.stop_gradient(w)
        out = T.tsum(T.mul(frozen, Tensor(np.ones(3), requires_grad=True)))
        assert not out.requires_grad or w.grad is None
        loss = T.tsum(T.mul(T.stop_gradient(w), w))
        backward(loss)
        np.testing.assert_allclose(w.grad, w.data, atol=1e-12)  # only the live branch

    def test_no_grad_context(self, rng):
        w = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with T.no_grad():
            out = T.tsum(T.mul(w, w))
        assert not out.requires_grad

    def test_grad_accumulates_across_uses(self):
        x = Tensor([3.0], requires_grad=True)
        backward(T.tsum(T.mul(x, x)))  # d/dx x^2 = 2x
        np.testing.assert_allclose(x.grad, [6.0])

    def test_forward_determinism(self, rng):
        x = rng.normal(size=(4, 5))
        a = T.softmax(T.gelu(Tensor(x)), axis=1).data
        b = T.softmax(T.gelu(Tensor(x.copy())), axis=1).data
        np.testing.assert_array_equal(a, b)

    def test_values_stay_finite(self, rng):
        x = Tensor(rng.normal(scale=50, size=(6, 6)), requires_grad=True)
        out = T.mse_loss(T.softmax(T.sigmoid(T.gelu(x)), axis=1), Tensor(np.zeros((6, 6))))
        backward(out)
        assert np.isfinite(out.data).all()
        assert np.isfinite(x.grad).all()
