import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eegssl.autodiff import (
    LSTM, Adam, AdamState, BatchNorm1d, Conv1d, Dropout, Linear, Tensor, adam_step, batch_norm,
    clip_gradients, concat, conv1d, cross_entropy, dropout, exp, flatten, leaky_relu, log,
    log_softmax, matmul, max_pool1d, mse_loss, no_grad, one_hot, relu, sigmoid, softmax, stack,
    tanh, topological_order,
)
from eegssl.autodiff.gradcheck import check_gradients, numerical_grad, relative_error
from eegssl.errors import DegenerateError, DomainError, NumericError, SchemaError, ShapeError, TrainingError


def leaf(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


class TestTensorBasics:
    def test_float64_storage(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,)
        assert t.size == 3

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (t * 2).backward()

    def test_grad_matches_value_shape(self):
        rng = np.random.default_rng(0)
        a = leaf(rng, 4, 3)
        (a * a).sum().backward()
        assert a.grad.shape == a.shape

    def test_shared_input_accumulates(self):
        a = Tensor([2.0], requires_grad=True)
        y = a * a + a * 3.0
        y.sum().backward()
        np.testing.assert_allclose(a.grad, [2 * 2.0 + 3.0])

    def test_every_reachable_leaf_gets_grad(self):
        rng = np.random.default_rng(1)
        a, b, c = leaf(rng, 2, 2), leaf(rng, 2, 2), leaf(rng, 2)
        loss = (tanh(matmul(a, b)) + c).sum()
        loss.backward()
        assert all(t.grad is not None for t in (a, b, c))

    def test_topological_order_visits_once(self):
        a = Tensor([1.0], requires_grad=True)
        b = a * 2.0
        c = b + b
        d = c * b
        order = topological_order(d)
        assert len(order) == len({id(t) for t in order})
        assert order[-1] is d
        pos = {id(t): i for i, t in enumerate(order)}
        assert pos[id(b)] < pos[id(c)] < pos[id(d)]

    def test_deep_chain_no_recursion_limit(self):
        a = Tensor([1.0], requires_grad=True)
        y = a
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        np.testing.assert_allclose(a.grad, [1.0])

    def test_no_grad_builds_no_graph(self):
        a = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = a * 3.0
        assert not y.requires_grad

    def test_broadcast_add_gradient(self):
        rng = np.random.default_rng(2)
        a, b = leaf(rng, 4, 3), leaf(rng, 3)
        err = check_gradients(lambda: ((a + b) * (a + b)).sum(), [a, b])
        assert err < 1e-6


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        a, b = leaf(rng, 3, 3), leaf(rng, 3, 3)
        assert check_gradients(lambda: matmul(a, b).sum(), [a, b]) < 1e-6


UNARY = {
    "tanh": (tanh, -2, 2),
    "sigmoid": (sigmoid, -4, 4),
    "relu": (relu, -2, 2),
    "leaky_relu": (leaky_relu, -2, 2),
    "exp": (exp, -2, 2),
    "log": (log, 0.1, 3),
}


class TestElementwise:
    def test_tanh_zero(self):
        assert tanh(Tensor([0.0])).data[0] == 0.0

    def test_leaky_relu_slope(self):
        np.testing.assert_allclose(leaky_relu(Tensor([-2.0])).data, [-0.6])

    def test_log_domain(self):
        with pytest.raises(DomainError):
            log(Tensor([1.0, 0.0]))
        with pytest.raises(DomainError):
            log(Tensor([-1.0]))

    @pytest.mark.parametrize("name", sorted(UNARY))
    def test_unary_gradients(self, name):
        fn, lo, hi = UNARY[name]
        rng = np.random.default_rng(4)
        x = Tensor(rng.uniform(lo, hi, 100), requires_grad=True)
        if name in ("relu", "leaky_relu"):
            # keep away from the kink
            x.data[np.abs(x.data) < 1e-3] = 0.5
        assert check_gradients(lambda: (fn(x) * np.linspace(0.5, 1.5, 100)).sum(), [x]) < 1e-6

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "pow"])
    def test_binary_gradients(self, op):
        rng = np.random.default_rng(5)
        a, b = leaf(rng, 20, low=0.5, high=2), leaf(rng, 20, low=0.5, high=2)
        f = {"add": lambda: (a + b) * a, "sub": lambda: (a - b) * a, "mul": lambda: a * b,
             "div": lambda: a / b, "pow": lambda: a ** 3}[op]
        assert check_gradients(lambda: f().sum(), [a, b]) < 1e-6

    def test_sigmoid_stable_at_extremes(self):
        out = sigmoid(Tensor([-1000.0, 1000.0])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)

    def test_nan_raises(self):
        with pytest.raises(NumericError):
            softmax(Tensor([0.0, np.nan]))

    def test_jacobian(self):
        rng = np.random.default_rng(6)
        x = leaf(rng, 5, low=-3, high=3)
        for k in range(5):
            w = np.zeros(5)
            w[k] = 1.0
            assert check_gradients(lambda: (softmax(x) * w).sum(), [x]) < 1e-6

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_sums_to_one_and_shift_invariant(self, x, c):
        p = softmax(Tensor(x)).data
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(softmax(Tensor(x + c)).data, p, atol=1e-12)

    def test_log_softmax_consistent(self):
        x = np.array([[1.0, 2.0, -3.0]])
        np.testing.assert_allclose(np.exp(log_softmax(Tensor(x), axis=1).data),
                                   softmax(Tensor(x), axis=1).data, atol=1e-15)


class TestConv1d:
    def test_constant_signal(self):
        out = conv1d(Tensor(np.ones((1, 5))), Tensor(np.ones((1, 1, 3))))
        np.testing.assert_array_equal(out.data, [[3.0, 3.0, 3.0]])

    def test_impulse_response(self):
        a, b, c = 2.0, -1.0, 5.0
        out = conv1d(Tensor([[0.0, 0.0, 1.0, 0.0, 0.0]]), Tensor([[[a, b, c]]]))
        np.testing.assert_array_equal(out.data, [[c, b, a]])

    def test_too_short(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 3))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv1d(Tensor(np.ones((2, 1, 6))), Tensor(np.ones((1, 3, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(7)
        x, w, b = leaf(rng, 2, 3, 9), leaf(rng, 4, 3, 3), leaf(rng, 4)
        assert check_gradients(lambda: (conv1d(x, w, b) ** 2).sum(), [x, w, b]) < 1e-5


class TestLayers:
    def test_maxpool(self):
        np.testing.assert_array_equal(max_pool1d(Tensor([[[1.0, 3.0, 2.0, 5.0]]])).data, [[[3.0, 5.0]]])

    def test_maxpool_gradient(self):
        rng = np.random.default_rng(8)
        x = leaf(rng, 2, 3, 8)
        assert check_gradients(lambda: (max_pool1d(x) ** 2).sum(), [x]) < 1e-6

    def test_dropout_eval_identity(self):
        x = Tensor(np.arange(6.0))
        assert dropout(x, 0.5, training=False, rng=None) is x

    def test_dropout_inverted_scaling(self):
        rng = np.random.default_rng(9)
        out = dropout(Tensor(np.ones(200_000)), 0.5, training=True, rng=rng).data
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert abs(out.mean() - 1.0) < 0.01

    def test_dropout_mask_resampled(self):
        layer = Dropout(0.5)
        layer.bind_rng(np.random.default_rng(0))
        x = Tensor(np.ones(64))
        assert not np.array_equal(layer(x).data, layer(x).data)

    def test_batchnorm_statistics(self):
        rng = np.random.default_rng(10)
        bn = BatchNorm1d(4)
        x = Tensor(rng.normal(3.0, 5.0, (16, 4, 7)))
        out = bn(x).data
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-6)

    def test_batchnorm_running_stats_momentum(self):
        rng = np.random.default_rng(11)
        bn = BatchNorm1d(2)
        x = rng.normal(2.0, 3.0, (8, 2, 5))
        bn(Tensor(x))
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2), ddof=1)
        np.testing.assert_allclose(bn.running_mean, 0.1 * mean)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * var)

    def test_batchnorm_eval_uses_running(self):
        bn = BatchNorm1d(1)
        bn.running_mean[:] = 2.0
        bn.running_var[:] = 4.0
        bn.eval()
        out = bn(Tensor(np.full((1, 1, 3), 6.0))).data
        np.testing.assert_allclose(out, 2.0, rtol=1e-8)

    def test_batchnorm_batch_of_one(self):
        with pytest.raises(DegenerateError):
            BatchNorm1d(2)(Tensor(np.ones((1, 2))))

    def test_batchnorm_gradients(self):
        rng = np.random.default_rng(12)
        x, g, b = leaf(rng, 5, 3, 4), leaf(rng, 3), leaf(rng, 3)
        rm, rv = np.zeros(3), np.ones(3)
        w = rng.normal(size=(5, 3, 4))
        err = check_gradients(lambda: (batch_norm(x, g, b, rm.copy(), rv.copy(), True) * w).sum(), [x, g, b])
        assert err < 1e-5

    def test_flatten(self):
        rng = np.random.default_rng(13)
        x = leaf(rng, 2, 3, 4)
        assert flatten(x).shape == (2, 12)
        assert check_gradients(lambda: (flatten(x) ** 2).sum(), [x]) < 1e-6

    def test_concat_stack_gradients(self):
        rng = np.random.default_rng(14)
        a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)
        assert check_gradients(lambda: (concat([a, b], axis=0) ** 2).sum(), [a, b]) < 1e-6
        assert check_gradients(lambda: (stack([a, b], axis=1) ** 3).sum(), [a, b]) < 1e-6

    def test_linear_and_conv_modules(self):
        rng = np.random.default_rng(15)
        lin = Linear(4, 3, rng)
        conv = Conv1d(2, 3, 3, rng)
        assert np.all(np.abs(lin.weight.data) <= 1 / math.sqrt(4))
        assert np.all(lin.bias.data == 0)
        assert np.all(np.abs(conv.weight.data) <= 1 / math.sqrt(6))
        x = leaf(rng, 5, 4)
        assert check_gradients(lambda: (lin(x) ** 2).sum(), lin.parameters() + [x]) < 1e-6

    def test_lstm_gradients_and_forget_bias(self):
        rng = np.random.default_rng(16)
        lstm = LSTM(3, 4, rng, steps=5)
        b = lstm.bias.data
        np.testing.assert_array_equal(b[4:8], 1.0)
        np.testing.assert_array_equal(np.delete(b, range(4, 8)), 0.0)
        x = leaf(rng, 2, 5, 3)
        err = check_gradients(lambda: sum((h * h).sum() for h in lstm(x)), lstm.parameters() + [x])
        assert err < 1e-6

    def test_lstm_wrong_step_count(self):
        lstm = LSTM(3, 4, np.random.default_rng(0), steps=8)
        with pytest.raises(ShapeError):
            lstm(Tensor(np.zeros((2, 7, 3))))


class TestLosses:
    def test_mse_identical(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 8, 5)))
        assert mse_loss(x, x.data).item() == 0.0

    def test_mse_is_batch_mean_of_squared_norms(self):
        a = np.arange(12.0).reshape(3, 4)
        b = np.zeros((3, 4))
        expect = np.mean([np.sum(r ** 2) for r in a])
        assert mse_loss(Tensor(a), b).item() == pytest.approx(expect)

    def test_cross_entropy_uniform(self):
        for label in range(3):
            assert cross_entropy(Tensor(np.zeros((1, 3))), one_hot([label])).item() == pytest.approx(math.log(3))

    def test_cross_entropy_rejects_non_one_hot(self):
        with pytest.raises(SchemaError):
            cross_entropy(Tensor(np.zeros((1, 3))), np.array([[0.5, 0.5, 0.0]]))

    def test_loss_gradients(self):
        rng = np.random.default_rng(17)
        a, b = leaf(rng, 4, 6), leaf(rng, 4, 6)
        assert check_gradients(lambda: mse_loss(a, b), [a, b]) < 1e-6
        z = leaf(rng, 5, 3, low=-3, high=3)
        y = one_hot(rng.integers(0, 3, 5))
        assert check_gradients(lambda: cross_entropy(z, y), [z]) < 1e-6


class TestOptim:
    def test_zero_gradient_no_change(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        before = p.data.copy()
        adam_step([p], AdamState())
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_closed_form(self):
        p = Tensor(np.array([0.5]), requires_grad=True)
        p.grad = np.array([1.0])
        state = AdamState()
        adam_step([p], state)
        # bias-corrected moments are exactly g and g^2 on step one
        assert p.data[0] == pytest.approx(0.5 - 1e-3 * 1.0 / (1.0 + 1e-8), abs=1e-15)
        assert state.step_count == 1
        assert state.first_moment[0].shape == p.shape

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(18)
        p = Tensor(rng.normal(size=3), requires_grad=True)
        w, m, v = p.data.copy(), np.zeros(3), np.zeros(3)
        opt = Adam([p])
        for t in range(1, 11):
            g = rng.normal(size=3)
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, w, rtol=1e-12)

    def test_quadratic_descent(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([w], lr=0.05)
        trace = []
        for _ in range(100):
            opt.zero_grad()
            (w * w).sum().backward()
            opt.step()
            trace.append(abs(w.data[0]))
        assert trace[-1] < trace[0]
        assert all(b <= a for a, b in zip(trace[5:15], trace[6:16]))

    def test_missing_grad(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(TrainingError):
            adam_step([p], AdamState())

    def test_clip_examples(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        p.grad = np.array([0.5, -3.7, 2.0])
        clip_gradients([p])
        np.testing.assert_array_equal(p.grad, [0.5, -1.0, 1.0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
    def test_clip_is_elementwise_clamp(self, g):
        p = Tensor(np.zeros_like(g), requires_grad=True)
        p.grad = g.copy()
        clip_gradients([p])
        np.testing.assert_array_equal(p.grad, np.maximum(-1.0, np.minimum(1.0, g)))

    def test_seeded_runs_identical(self):
        def run():
            rng = np.random.default_rng(42)
            lin = Linear(3, 2, rng)
            opt = Adam(lin.parameters())
            x = rng.normal(size=(8, 3))
            for _ in range(5):
                opt.zero_grad()
                (lin(Tensor(x)) ** 2).sum().backward()
                opt.step()
            return [p.data.copy() for p in lin.parameters()]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)


class TestGradcheckHelpers:
    def test_numerical_grad_quadratic(self):
        x = np.array([1.0, -2.0])
        g = numerical_grad(lambda: float(np.sum(x ** 2)), x)
        np.testing.assert_allclose(g, 2 * x, rtol=1e-8)

    def test_relative_error_zero_vectors(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
