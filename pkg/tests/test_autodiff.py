import math

import numpy as np
import pytest

from rdsverify.autodiff import (
    BatchNormState,
    Tensor,
    affine,
    batchnorm,
    concat,
    conv1d,
    exp,
    linear,
    log,
    lstm,
    masked_mean_time,
    maxpool_indices,
    relu,
    sigmoid,
    softmax,
    sqrt,
    std,
    tanh,
)
from rdsverify.autodiff.checkpoint import load_checkpoint, save_checkpoint
from rdsverify.autodiff.gradcheck import check_gradients
from rdsverify.errors import GraphFreedError, NotScalarError, ShapeError

TOL = 1e-4
SHAPES = [(2, 3, 7), (1, 4, 5), (3, 2, 9)]


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, size=shape), requires_grad=True)


def weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * w).sum()


class TestBackward:
    def test_sum_gives_ones(self):
        p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        p.sum().backward()
        np.testing.assert_array_equal(p.grad, [1, 1, 1])

    def test_sum_of_squares(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        (p * p).sum().backward()
        np.testing.assert_array_equal(p.grad, [2.0, 4.0])

    def test_second_backward_raises(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        loss = (p * p).sum()
        loss.backward()
        with pytest.raises(GraphFreedError):
            loss.backward()

    def test_non_scalar_raises(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(NotScalarError):
            (p * 2.0).backward()

    def test_graph_is_freed(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        mid = p * 3.0
        loss = mid.sum()
        loss.backward()
        assert mid._parents == () and mid._backward is None

    def test_grads_accumulate_across_graphs(self):
        p = Tensor([1.0], requires_grad=True)
        (p * 2.0).sum().backward()
        (p * 3.0).sum().backward()
        np.testing.assert_array_equal(p.grad, [5.0])

    def test_shared_subexpression(self):
        p = Tensor([3.0], requires_grad=True)
        q = p * p
        (q + q).sum().backward()
        np.testing.assert_allclose(p.grad, [12.0])


class TestForwardExamples:
    def test_conv_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(3, 6))
        w = Tensor(np.eye(3).reshape(3, 3, 1))
        out = conv1d(Tensor(x), w, Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_conv_ones_kernel(self):
        out = conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones((1, 1, 3))), Tensor([0.0]))
        np.testing.assert_array_equal(out.data, [[3.0, 6.0, 5.0]])

    def test_conv_dilation_keeps_length(self):
        x = Tensor(np.ones((2, 2, 10)))
        out = conv1d(x, Tensor(np.ones((4, 2, 3))), dilation=3)
        assert out.shape == (2, 4, 10)

    def test_conv_shape_errors(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((1, 3, 3))))
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.ones((2, 5))), Tensor(np.ones((1, 2, 2))))

    def test_maxpool_example(self):
        vals, idx = maxpool_indices(Tensor([1.0, 3.0, 2.0]), 2)
        np.testing.assert_array_equal(vals.data, [3.0, 3.0])
        np.testing.assert_array_equal(idx, [1, 1])

    def test_maxpool_ties_pick_window_start(self):
        _, idx = maxpool_indices(Tensor(np.full((2, 6), 4.0)), 3)
        np.testing.assert_array_equal(idx, np.tile(np.arange(4), (2, 1)))

    def test_maxpool_too_short(self):
        with pytest.raises(ShapeError):
            maxpool_indices(Tensor([1.0, 2.0]), 3)

    def test_maxpool_backward_routes_to_argmax(self):
        x = Tensor([1.0, 3.0, 2.0, 0.0], requires_grad=True)
        vals, _ = maxpool_indices(x, 2)
        vals.sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 2.0, 1.0, 0.0])

    def test_lstm_zero_weights(self):
        x = Tensor(np.random.default_rng(1).normal(size=(3, 5)))
        out = lstm(x, Tensor(np.zeros((8, 3))), Tensor(np.zeros((8, 2))), Tensor(np.zeros(8)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_lstm_single_step_by_hand(self):
        # 2-unit cell, one input channel, L = 1
        w_ih = np.array([[0.5], [-0.3], [0.8], [0.1], [0.2], [0.4], [-0.6], [0.9]])
        bias = np.array([0.1, -0.2, 0.0, 0.3, 0.5, -0.1, 0.2, 0.0])
        x = 1.5
        sig = lambda z: 1 / (1 + math.exp(-z))
        expected = []
        for u in range(2):
            i = sig(w_ih[0 + u, 0] * x + bias[0 + u])
            f = sig(w_ih[2 + u, 0] * x + bias[2 + u])  # unused: c_prev = 0
            g = math.tanh(w_ih[4 + u, 0] * x + bias[4 + u])
            o = sig(w_ih[6 + u, 0] * x + bias[6 + u])
            c = f * 0.0 + i * g
            expected.append(o * math.tanh(c))
        out = lstm(Tensor([[x]]), Tensor(w_ih), Tensor(np.ones((8, 2))), Tensor(bias))
        np.testing.assert_allclose(out.data[:, 0], expected, atol=1e-12)

    def test_softmax_constant(self):
        out = softmax(Tensor(np.full(7, 2.5)))
        np.testing.assert_allclose(out.data, 1 / 7, atol=1e-15)

    def test_softmax_mask(self):
        out = softmax(Tensor([1.0, 2.0, 3.0]), mask=np.array([1, 1, 0]))
        assert out.data[2] == 0.0
        assert out.data.sum() == pytest.approx(1.0)

    def test_mean_std(self):
        x = Tensor([1.0, 2.0, 3.0, 4.0])
        assert x.mean().item() == 2.5
        assert std(x).item() == pytest.approx(math.sqrt(1.25), abs=1e-15)

    def test_concat(self):
        out = concat([Tensor(np.ones((2, 3))), Tensor(np.zeros((1, 3)))], axis=0)
        assert out.shape == (3, 3)

    def test_batchnorm_eval_uses_running_stats(self):
        st = BatchNormState(np.array([1.0, -1.0]), np.array([4.0, 1.0]))
        x = Tensor(np.array([[[3.0, 1.0]], [[0.0, 2.0]]]).reshape(1, 2, 2))
        out = batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), st, training=False, eps=0.0)
        np.testing.assert_allclose(out.data, [[[1.0, 0.0], [1.0, 3.0]]])

    def test_batchnorm_running_update(self):
        st = BatchNormState.fresh(1)
        x = Tensor(np.array([[[1.0, 3.0]]]))
        batchnorm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), st, training=True)
        np.testing.assert_allclose(st.mean, [0.2])
        np.testing.assert_allclose(st.var, [0.9 + 0.1 * 1.0])


@pytest.mark.gradcheck
@pytest.mark.parametrize("shape", SHAPES)
class TestGradients:
    def test_elementwise(self, shape):
        rng = np.random.default_rng(sum(shape))
        a = param(rng, *shape)
        b = Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)
        w = rng.normal(size=shape)

        def build():
            out = a * b + a / b - b + tanh(a) + sigmoid(b) + exp(affine(a, 0.3, 0.1))
            return weighted_sum(out + log(b) + sqrt(b) + (b ** 3), w)

        assert check_gradients(build, [a, b]) < TOL

    def test_relu(self, shape):
        rng = np.random.default_rng(10 + sum(shape))
        data = rng.normal(size=shape)
        data[np.abs(data) < 0.05] = 0.3  # keep away from the kink
        a = Tensor(data, requires_grad=True)
        w = rng.normal(size=shape)
        assert check_gradients(lambda: weighted_sum(relu(a), w), [a]) < TOL

    def test_reductions_and_softmax(self, shape):
        rng = np.random.default_rng(20 + sum(shape))
        a = param(rng, *shape)
        w = rng.normal(size=shape)
        mask = rng.random(shape) > 0.3
        mask[:, 0, :] = True

        def build():
            s = softmax(a, axis=-1) * w + softmax(a, axis=1, mask=mask) * w
            m = a.mean(axis=2, keepdims=True) * std(a, axis=2, keepdims=True)
            return s.sum() + (m * m).sum() + std(a) * a.mean()

        assert check_gradients(build, [a]) < TOL

    def test_shape_ops(self, shape):
        rng = np.random.default_rng(30 + sum(shape))
        a = param(rng, *shape)
        b = param(rng, shape[0], shape[2], 4)
        w = rng.normal(size=(shape[0], shape[1], 4))

        def build():
            c = concat([a, a[:, :1, :]], axis=1)
            d = (c.transpose(0, 2, 1).reshape(shape[0], shape[2], shape[1] + 1))[:, :, 1:]
            return weighted_sum((d.transpose(0, 2, 1) @ b), w) + a[:, :, [0, 0, 1]].sum()

        assert check_gradients(build, [a, b]) < TOL

    def test_conv1d(self, shape):
        rng = np.random.default_rng(40 + sum(shape))
        b, c, length = shape
        x = param(rng, b, c, length)
        w = param(rng, 3, c, 3)
        bias = param(rng, 3)
        target = rng.normal(size=(b, 3, length))
        for dilation in (1, 2):
            assert check_gradients(lambda: weighted_sum(conv1d(x, w, bias, dilation), target), [x, w, bias]) < TOL

    def test_maxpool(self, shape):
        rng = np.random.default_rng(50 + sum(shape))
        # distinct values spaced far wider than the probe step: no ties, no argmax switches
        x = Tensor(rng.permutation(np.prod(shape)).reshape(shape) * 0.1, requires_grad=True)
        vals, _ = maxpool_indices(x, 3)
        w = rng.normal(size=vals.shape)
        assert check_gradients(lambda: weighted_sum(maxpool_indices(x, 3)[0], w), [x]) < TOL

    def test_lstm(self, shape):
        rng = np.random.default_rng(60 + sum(shape))
        b, c, length = shape
        hidden = 3
        x = param(rng, b, c, length)
        w_ih = param(rng, 4 * hidden, c, scale=0.5)
        w_hh = param(rng, 4 * hidden, hidden, scale=0.5)
        bias = param(rng, 4 * hidden, scale=0.5)
        w = rng.normal(size=(b, hidden, length))
        assert check_gradients(lambda: weighted_sum(lstm(x, w_ih, w_hh, bias), w), [x, w_ih, w_hh, bias]) < TOL

    @pytest.mark.parametrize("training", [True, False])
    def test_batchnorm(self, shape, training):
        rng = np.random.default_rng(70 + sum(shape))
        b, c, length = shape
        x = param(rng, b, c, length)
        gamma = param(rng, c)
        beta = param(rng, c)
        mask = np.ones((b, length))
        mask[0, -2:] = 0
        w = rng.normal(size=shape)

        def build():
            st = BatchNormState(np.full(c, 0.3), np.full(c, 1.7))
            return weighted_sum(batchnorm(x, gamma, beta, st, training=training, mask=mask), w)

        assert check_gradients(build, [x, gamma, beta]) < TOL

    def test_linear(self, shape):
        rng = np.random.default_rng(80 + sum(shape))
        x = param(rng, shape[0], shape[1])
        w = param(rng, 5, shape[1])
        b = param(rng, 5)
        t = rng.normal(size=(shape[0], 5))
        assert check_gradients(lambda: weighted_sum(linear(x, w, b), t), [x, w, b]) < TOL

    def test_masked_mean_time(self, shape):
        rng = np.random.default_rng(90 + sum(shape))
        x = param(rng, *shape)
        mask = np.ones((shape[0], shape[2]))
        mask[:, -2:] = 0
        w = rng.normal(size=shape[:2])
        assert check_gradients(lambda: weighted_sum(masked_mean_time(x, mask), w), [x]) < TOL


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    arrays = {"a": rng.normal(size=(2, 3)), "b": np.array(1.5), "c": rng.normal(size=(4,))}
    save_checkpoint(tmp_path / "x.ckpt", arrays, {"k": 1, "nested": {"z": [1, 2]}})
    loaded, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"k": 1, "nested": {"z": [1, 2]}}
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])
    save_checkpoint(tmp_path / "y.ckpt", arrays, {"nested": {"z": [1, 2]}, "k": 1})
    assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()
