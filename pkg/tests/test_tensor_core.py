"""
Tensor core: forward values, tape mechanics and gradients of every op.
"""

import numpy as np
import pytest

import tensor_core as tc
from errors import ConfigError, ShapeError, UsageError
from gradcheck import gradient_check, numerical_gradient, relative_error


def weighted_sum(y, w):
    """Scalar sum(y * w) with fixed weights."""
    return tc.sum(tc.mul(y, tc.Tensor(w)))


def assert_grads(fn, params, per_param=None):
    result = gradient_check(fn, params, per_param=per_param, rng=np.random.default_rng(0))
    assert result["max_rel_error"] < 1e-4, result["groups"]


# =============================================================================
# Tape
# =============================================================================

class TestTape:

    def test_no_recording_outside_tape(self):
        a = tc.parameter(np.ones(3))
        y = tc.add(a, a)
        assert not y.requires_grad
        assert y._tape is None

    def test_backward_requires_scalar(self):
        a = tc.parameter(np.ones(3))
        with tc.ComputationTape():
            y = tc.scale(a, 2.0)
        with pytest.raises(UsageError):
            tc.backward(y)

    def test_backward_requires_tape(self):
        with pytest.raises(UsageError):
            tc.backward(tc.Tensor(1.0))

    def test_each_entry_visited_once(self):
        a = tc.parameter(np.arange(4.0))
        with tc.ComputationTape() as tape:
            y = tc.sum(tc.mul(tc.add(a, 1.0), a))
        assert tc.backward(y) == len(tape) == 3

    def test_leaf_reused_accumulates(self):
        a = tc.parameter(np.array([1.0, 2.0, 3.0]))
        with tc.ComputationTape():
            y = tc.sum(tc.mul(a, a))
        tc.backward(y)
        np.testing.assert_allclose(a.grad, 2.0 * a.data)

    def test_no_grad_suspends(self):
        a = tc.parameter(np.ones(2))
        with tc.ComputationTape() as tape:
            with tc.no_grad():
                tc.add(a, a)
        assert len(tape) == 0

    def test_item(self):
        assert tc.Tensor([[2.5]]).item() == 2.5
        with pytest.raises(UsageError):
            tc.Tensor([1.0, 2.0]).item()


# =============================================================================
# Elementwise
# =============================================================================

class TestElementwise:

    def test_add_broadcast_gradient(self, rng):
        a = tc.parameter(rng.standard_normal((3, 4)))
        b = tc.parameter(rng.standard_normal((3, 1)))
        w = rng.standard_normal((3, 4))
        assert_grads(lambda: weighted_sum(tc.add(a, b), w), [a, b])

    def test_sub_mul_gradients(self, rng):
        a = tc.parameter(rng.standard_normal((2, 5)))
        b = tc.parameter(rng.standard_normal((5,)))
        w = rng.standard_normal((2, 5))
        assert_grads(lambda: weighted_sum(tc.mul(tc.sub(a, b), a), w), [a, b])

    def test_bad_broadcast(self):
        with pytest.raises(ShapeError):
            tc.add(tc.Tensor(np.ones((2, 3))), tc.Tensor(np.ones((4,))))

    def test_hadamard_strict(self):
        with pytest.raises(ShapeError):
            tc.hadamard(tc.Tensor(np.ones((2, 3))), tc.Tensor(np.ones((1, 3))))

    def test_matmul(self, rng):
        a = tc.parameter(rng.standard_normal((3, 4)))
        b = tc.parameter(rng.standard_normal((4, 2)))
        np.testing.assert_allclose(tc.matmul(a, b).data, a.data @ b.data)
        w = rng.standard_normal((3, 2))
        assert_grads(lambda: weighted_sum(tc.matmul(a, b), w), [a, b])

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            tc.matmul(tc.Tensor(np.ones((2, 3))), tc.Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("f", ["silu", "softplus", "exp", "sigmoid"])
    def test_pointwise_gradients(self, rng, f):
        x = tc.parameter(rng.standard_normal((4, 3)))
        w = rng.standard_normal((4, 3))
        assert_grads(lambda: weighted_sum(tc.pointwise(x, f), w), [x])

    def test_sqrt_gradient(self, rng):
        x = tc.parameter(rng.uniform(0.5, 2.0, size=(5,)))
        w = rng.standard_normal(5)
        assert_grads(lambda: weighted_sum(tc.sqrt(x), w), [x])

    def test_unknown_pointwise(self):
        with pytest.raises(ConfigError):
            tc.pointwise(tc.Tensor(np.ones(2)), "gelu")

    def test_softplus_values(self):
        y = tc.softplus(tc.Tensor(np.array([-50.0, 0.0, 50.0]))).data
        np.testing.assert_allclose(y, [np.exp(-50.0), np.log(2.0), 50.0], rtol=1e-12)

    def test_silu_values(self):
        x = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(tc.silu(tc.Tensor(x)).data, x / (1 + np.exp(-x)), rtol=1e-12)


# =============================================================================
# Shape ops and gather
# =============================================================================

class TestShapeOps:

    def test_sum_axis_gradient(self, rng):
        x = tc.parameter(rng.standard_normal((3, 4, 2)))
        w = rng.standard_normal((3, 2))
        assert_grads(lambda: weighted_sum(tc.sum(x, axis=1), w), [x])

    def test_mean(self):
        x = tc.Tensor(np.arange(6.0).reshape(2, 3))
        assert tc.mean(x).item() == pytest.approx(2.5)
        np.testing.assert_allclose(tc.mean(x, axis=0).data, [1.5, 2.5, 3.5])

    def test_transpose_reshape_concat(self, rng):
        a = tc.parameter(rng.standard_normal((2, 3)))
        b = tc.parameter(rng.standard_normal((1, 3)))
        w = rng.standard_normal((3, 3))
        fn = lambda: weighted_sum(tc.transpose(tc.reshape(tc.concat([a, b], axis=0), (3, 3)), (1, 0)), w)  # noqa: E731
        assert_grads(fn, [a, b])

    def test_getitem_gradient(self, rng):
        x = tc.parameter(rng.standard_normal((5, 4)))
        w = rng.standard_normal((2, 4))
        assert_grads(lambda: weighted_sum(x[1:3], w), [x])

    def test_gather_fill_and_duplicates(self):
        x = tc.parameter(np.array([[1.0, 2.0, 3.0]]))
        with tc.ComputationTape():
            y = tc.gather(x, np.array([2, -1, 0, 2]))
            loss = tc.sum(y)
        np.testing.assert_array_equal(y.data, [[3.0, 0.0, 1.0, 3.0]])
        tc.backward(loss)
        np.testing.assert_array_equal(x.grad, [[1.0, 0.0, 2.0]])

    def test_gather_2d_index_gradient(self, rng):
        x = tc.parameter(rng.standard_normal((3, 6)))
        idx = rng.integers(-1, 6, size=(2, 5))
        w = rng.standard_normal((3, 2, 5))
        assert_grads(lambda: weighted_sum(tc.gather(x, idx), w), [x])

    def test_gather_out_of_range(self):
        with pytest.raises(ShapeError):
            tc.gather(tc.Tensor(np.ones((2, 3))), np.array([0, 3]))


# =============================================================================
# Normalisation and convolution
# =============================================================================

def conv_oracle(x, w, b, stride, pad):
    """Nested-loop zero-padded cross-correlation."""
    cin, H, W = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((cout, Ho, Wo))
    for o in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[o, i, j] = (patch * w[o]).sum() + b[o]
    return out


class TestNormConv:

    def test_layer_norm_values(self, rng):
        x = rng.standard_normal((6, 3, 2))
        g, b = tc.parameter(np.ones(6)), tc.parameter(np.zeros(6))
        y = tc.layer_norm(tc.Tensor(x), g, b, eps=1e-5, axis=0).data
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=0), 1.0, rtol=1e-3)

    def test_layer_norm_gradient(self, rng):
        x = tc.parameter(rng.standard_normal((5, 3, 3)))
        g = tc.parameter(rng.uniform(0.5, 1.5, 5))
        b = tc.parameter(rng.standard_normal(5))
        w = rng.standard_normal((5, 3, 3))
        assert_grads(lambda: weighted_sum(tc.layer_norm(x, g, b, axis=0), w), [x, g, b])

    def test_layer_norm_bad_eps(self):
        with pytest.raises(ConfigError):
            tc.layer_norm(tc.Tensor(np.ones((2, 2))), tc.Tensor(np.ones(2)), tc.Tensor(np.zeros(2)), eps=0.0)

    @pytest.mark.parametrize("stride,size", [(1, 5), (2, 6), (2, 7)])
    def test_conv2d_matches_oracle(self, rng, stride, size):
        x = rng.standard_normal((2, size, size))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        y = tc.conv2d(tc.Tensor(x), tc.Tensor(w), tc.Tensor(b), stride=stride)
        np.testing.assert_allclose(y.data, conv_oracle(x, w, b, stride, 1), atol=1e-12)

    def test_conv2d_gradient(self, rng):
        x = tc.parameter(rng.standard_normal((2, 5, 5)))
        w = tc.parameter(rng.standard_normal((3, 2, 3, 3)))
        b = tc.parameter(rng.standard_normal(3))
        w_out = rng.standard_normal((3, 3, 3))
        assert_grads(lambda: weighted_sum(tc.conv2d(x, w, b, stride=2), w_out), [x, w, b])

    def test_depthwise_matches_oracle(self, rng):
        x = rng.standard_normal((3, 6, 5))
        k = rng.standard_normal((3, 3, 3))
        y = tc.conv2d_depthwise(tc.Tensor(x), tc.Tensor(k)).data
        for c in range(3):
            ref = conv_oracle(x[c:c + 1], k[c][None, None], np.zeros(1), 1, 1)[0]
            np.testing.assert_allclose(y[c], ref, atol=1e-12)

    def test_depthwise_gradient(self, rng):
        x = tc.parameter(rng.standard_normal((2, 4, 4)))
        k = tc.parameter(rng.standard_normal((2, 3, 3)))
        w = rng.standard_normal((2, 4, 4))
        assert_grads(lambda: weighted_sum(tc.conv2d_depthwise(x, k), w), [x, k])

    def test_depthwise_even_kernel(self):
        with pytest.raises(ConfigError):
            tc.conv2d_depthwise(tc.Tensor(np.ones((1, 4, 4))), tc.Tensor(np.ones((1, 2, 2))))

    def test_depthwise_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.conv2d_depthwise(tc.Tensor(np.ones((2, 4, 4))), tc.Tensor(np.ones((3, 3, 3))))


# =============================================================================
# Finite-difference oracle
# =============================================================================

class TestGradcheck:

    def test_relative_error_rule(self):
        assert relative_error([1.0], [1.0]) == 0.0
        assert relative_error([1.1], [1.0]) == pytest.approx(0.1, rel=1e-6)

    def test_numerical_gradient_of_square(self):
        x = tc.parameter(np.array([1.0, -2.0, 3.0]))
        g = numerical_gradient(lambda: tc.sum(tc.mul(x, x)), x)
        np.testing.assert_allclose(g, [2.0, -4.0, 6.0], rtol=1e-8)
        np.testing.assert_array_equal(x.data, [1.0, -2.0, 3.0])


# =============================================================================
# Randomised properties
# =============================================================================

def matmul_oracle(a, b):
    M, K = a.shape
    N = b.shape[1]
    out = np.zeros((M, N))
    for i in range(M):
        for j in range(N):
            for k in range(K):
                out[i, j] += a[i, k] * b[k, j]
    return out


def random_dims(rng, n, hi=6):
    return [int(v) for v in rng.integers(1, hi, size=n)]


def composite_forward(x, w, k, g, b, idx):
    y = tc.silu(tc.matmul(w, tc.reshape(x, (x.shape[0], -1))))
    y = tc.reshape(y, (w.shape[0],) + tuple(x.shape[1:]))
    y = tc.conv2d_depthwise(y, k)
    y = tc.layer_norm(y, g, b, axis=0)
    return tc.gather(tc.reshape(y, (y.shape[0], -1)), idx)


class TestRandomised:

    @pytest.mark.parametrize("seed", range(20))
    def test_matmul_matches_loops(self, seed):
        rng = np.random.default_rng(seed)
        M, K, N = random_dims(rng, 3)
        a, b = rng.standard_normal((M, K)), rng.standard_normal((K, N))
        np.testing.assert_allclose(tc.matmul(tc.Tensor(a), tc.Tensor(b)).data, matmul_oracle(a, b),
                                   rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matmul_is_linear(self, seed):
        rng = np.random.default_rng(seed)
        M, K, N = random_dims(rng, 3)
        a, b = tc.Tensor(rng.standard_normal((M, K))), tc.Tensor(rng.standard_normal((M, K)))
        c = tc.Tensor(rng.standard_normal((K, N)))
        lhs = tc.matmul(tc.add(a, b), c).data
        rhs = tc.add(tc.matmul(a, c), tc.matmul(b, c)).data
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_forward_is_deterministic(self, seed):
        rng = np.random.default_rng(seed)
        C, D, H, W = random_dims(rng, 4)
        x = tc.Tensor(rng.standard_normal((C, H, W)))
        w = tc.Tensor(rng.standard_normal((D, C)))
        k = tc.Tensor(rng.standard_normal((D, 3, 3)))
        g, b = tc.Tensor(rng.uniform(0.5, 1.5, D)), tc.Tensor(rng.standard_normal(D))
        idx = rng.integers(-1, H * W, size=2 * H * W)
        first = composite_forward(x, w, k, g, b, idx).data
        second = composite_forward(x, w, k, g, b, idx).data
        np.testing.assert_array_equal(first, second)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_at_random_shapes(self, seed):
        rng = np.random.default_rng(seed)
        M, K, N = random_dims(rng, 3)
        a = tc.parameter(rng.standard_normal((M, K)))
        b = tc.parameter(rng.standard_normal((K, N)))
        bias = tc.parameter(rng.standard_normal((M, 1)))
        w = rng.standard_normal((M, N))
        assert_grads(lambda: weighted_sum(tc.silu(tc.add(tc.matmul(a, b), bias)), w), [a, b, bias], per_param=8)

        C = int(rng.integers(2, 6))
        H, W = random_dims(rng, 2)
        x = tc.parameter(rng.standard_normal((C, H, W)))
        k = tc.parameter(rng.standard_normal((C, 3, 3)))
        g = tc.parameter(rng.uniform(0.5, 1.5, C))
        beta = tc.parameter(rng.standard_normal(C))
        w_out = rng.standard_normal((C, H, W))
        fn = lambda: weighted_sum(tc.layer_norm(tc.conv2d_depthwise(x, k), g, beta, axis=0), w_out)  # noqa: E731
        assert_grads(fn, [x, k, g, beta], per_param=8)
