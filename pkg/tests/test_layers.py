import numpy as np
import pytest
from gradcheck import assert_grad_close, numerical_grad

from grufcn.layers import (
    ConvBlock,
    DenseSoftmax,
    GruCell,
    LstmCell,
    conv_block_backward,
    conv_block_forward,
    dense_softmax_ce,
    dense_softmax_ce_backward,
    dropout,
    global_avg_pool,
    global_avg_pool_backward,
    gru_backward,
    gru_step,
    hard_sigmoid,
    lstm_backward,
    lstm_step,
)
from grufcn.tensor_core import Rng

GRAD_TOL = 1e-5


def make_conv_block(rng, k, c_in, c_out, gamma_scale=1.0):
    return ConvBlock(
        kernels=rng.normal(size=(k, c_in, c_out)),
        bias=rng.normal(size=c_out),
        bn_gamma=np.ones(c_out) * gamma_scale,
        bn_beta=rng.normal(size=c_out) * 0.1,
        bn_moving_mean=np.zeros(c_out),
        bn_moving_var=np.ones(c_out),
    )


def make_gru_cell(rng, n_in, hidden, scale=0.5):
    return GruCell(
        W_zx=rng.normal(size=(n_in, hidden)) * scale,
        U_zh=rng.normal(size=(hidden, hidden)) * scale,
        b_z=rng.normal(size=hidden) * scale,
        W_rx=rng.normal(size=(n_in, hidden)) * scale,
        U_rh=rng.normal(size=(hidden, hidden)) * scale,
        b_r=rng.normal(size=hidden) * scale,
        W_x=rng.normal(size=(n_in, hidden)) * scale,
        U_h=rng.normal(size=(hidden, hidden)) * scale,
        b=rng.normal(size=hidden) * scale,
    )


def make_lstm_cell(rng, n_in, hidden, scale=0.5):
    params = {}
    for gate in ("i", "f", "g", "o"):
        params[f"W_{gate}x"] = rng.normal(size=(n_in, hidden)) * scale
        params[f"U_{gate}h"] = rng.normal(size=(hidden, hidden)) * scale
        params[f"b_{gate}"] = rng.normal(size=hidden) * scale
    return LstmCell(**params)


class TestHardSigmoid:
    def test_values(self):
        assert hard_sigmoid(np.array(0.0)) == 0.5
        assert hard_sigmoid(np.array(3.0)) == 1.0
        assert hard_sigmoid(np.array(-3.0)) == 0.0
        assert hard_sigmoid(np.array(1.0)) == pytest.approx(0.7)


class TestConvBlock:
    def test_zero_input_identity_bn(self):
        block = make_conv_block(np.random.default_rng(0), 3, 1, 4)
        block.bias[:] = 0
        block.bn_beta[:] = 0
        out, _ = conv_block_forward(block, np.zeros((2, 5, 1)), training=True)
        assert np.allclose(out, 0.0)

    def test_relu_saturation(self):
        rng = np.random.default_rng(1)
        block = make_conv_block(rng, 3, 1, 4)
        block.bn_beta[:] = -10.0
        out, _ = conv_block_forward(block, rng.normal(size=(2, 5, 1)), training=True)
        assert np.all(out == 0.0)

    def test_training_mode_normalizes_batch(self):
        rng = np.random.default_rng(2)
        block = make_conv_block(rng, 5, 2, 3)
        block.bn_beta[:] = 0.0
        x = rng.normal(size=(4, 16, 2)) * 3 + 1
        _, cache = conv_block_forward(block, x, training=True)
        x_hat = cache["x_hat"]
        means = x_hat.mean(axis=(0, 1))
        variances = x_hat.var(axis=(0, 1))
        assert np.all(np.abs(means) < 1e-9)
        # variance of x_hat is var/(var+eps), slightly below 1
        assert np.all(np.abs(variances - 1.0) < 1e-2)

    def test_moving_statistics_update(self):
        rng = np.random.default_rng(3)
        block = make_conv_block(rng, 3, 1, 2)
        x = rng.normal(size=(4, 8, 1)) * 2 + 5
        before_mean = block.bn_moving_mean.copy()
        conv_block_forward(block, x, training=True)
        assert not np.array_equal(block.bn_moving_mean, before_mean)
        # inference mode leaves them untouched
        frozen = block.bn_moving_mean.copy()
        conv_block_forward(block, x, training=False)
        assert np.array_equal(block.bn_moving_mean, frozen)

    def test_non_finite_input_rejected(self):
        block = make_conv_block(np.random.default_rng(4), 3, 1, 2)
        bad = np.zeros((1, 4, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            conv_block_forward(block, bad, training=True)

    def test_zero_grad_out_gives_zero_grads(self):
        rng = np.random.default_rng(5)
        block = make_conv_block(rng, 3, 2, 4)
        x = rng.normal(size=(2, 6, 2))
        out, cache = conv_block_forward(block, x, training=True)
        grad_x, grads = conv_block_backward(cache, np.zeros_like(out))
        assert np.all(grad_x == 0)
        assert all(np.all(g == 0) for g in grads.values())

    @pytest.mark.parametrize("seed", range(20))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        c_in = int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 4))
        block = make_conv_block(rng, k, c_in, c_out)
        x = rng.normal(size=(2, 16, c_in))
        grad_out = rng.normal(size=(2, 16, c_out))

        def loss_after(setter):
            def f(v):
                setter(v)
                out, _ = conv_block_forward(block, x, training=True)
                return float(np.sum(out * grad_out))
            return f

        out, cache = conv_block_forward(block, x, training=True)
        grad_x, grads = conv_block_backward(cache, grad_out)

        def set_x(v):
            x[...] = v
        assert_grad_close(grad_x, numerical_grad(loss_after(set_x), x.copy()),
                          GRAD_TOL, "conv_block x")
        for name, arr in (("kernels", block.kernels), ("bias", block.bias),
                          ("bn_gamma", block.bn_gamma), ("bn_beta", block.bn_beta)):
            def setter(v, arr=arr):
                arr[...] = v
            numeric = numerical_grad(loss_after(setter), arr.copy())
            assert_grad_close(grads[name], numeric, GRAD_TOL, f"conv_block {name}")


class TestGru:
    def test_zero_params_halve_state(self):
        hidden = 4
        cell = GruCell(*[np.zeros(s) for s in
                         [(3, hidden), (hidden, hidden), (hidden,)] * 3])
        h_prev = np.array([[1.0, -2.0, 0.5, 3.0]])
        h, _ = gru_step(cell, np.zeros((1, 3)), h_prev)
        assert np.allclose(h, 0.5 * h_prev)

    def test_zero_state_zero_params(self):
        hidden = 4
        cell = GruCell(*[np.zeros(s) for s in
                         [(3, hidden), (hidden, hidden), (hidden,)] * 3])
        h, _ = gru_step(cell, np.ones((1, 3)), np.zeros((1, hidden)))
        assert np.allclose(h, 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_hidden_stays_in_open_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        cell = make_gru_cell(rng, 5, 6, scale=2.0)
        h = np.zeros((3, 6))
        for _ in range(4):
            h, _ = gru_step(cell, rng.normal(size=(3, 5)), h)
            assert np.all(h > -1.0) and np.all(h < 1.0)

    def test_zero_final_grad_gives_zero_grads(self):
        rng = np.random.default_rng(0)
        cell = make_gru_cell(rng, 3, 4)
        _, cache = gru_step(cell, rng.normal(size=(2, 3)), np.zeros((2, 4)))
        grad_x_seq, grads = gru_backward(cell, [cache], np.zeros((2, 4)))
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(grad_x_seq[0] == 0)

    def test_zero_input_sequence_zeroes_feedforward_grads(self):
        rng = np.random.default_rng(1)
        cell = make_gru_cell(rng, 3, 4)
        h = rng.normal(size=(2, 4)) * 0.1
        caches = []
        for _ in range(3):
            h, cache = gru_step(cell, np.zeros((2, 3)), h)
            caches.append(cache)
        _, grads = gru_backward(cell, caches, rng.normal(size=(2, 4)))
        for name in ("W_zx", "W_rx", "W_x"):
            assert np.all(grads[name] == 0)

    @pytest.mark.parametrize("steps", [1, 3])
    @pytest.mark.parametrize("seed", range(10))
    def test_backward_matches_finite_differences(self, steps, seed):
        rng = np.random.default_rng(100 + seed)
        n_in, hidden, batch = 3, 4, 2
        cell = make_gru_cell(rng, n_in, hidden)
        xs = [rng.normal(size=(batch, n_in)) for _ in range(steps)]
        h0 = rng.normal(size=(batch, hidden)) * 0.1
        grad_h = rng.normal(size=(batch, hidden))

        def run():
            h = h0
            caches = []
            for x in xs:
                h, cache = gru_step(cell, x, h)
                caches.append(cache)
            return h, caches

        _, caches = run()
        grad_x_seq, grads = gru_backward(cell, caches, grad_h)

        def loss():
            h, _ = run()
            return float(np.sum(h * grad_h))

        for name in cell.param_names():
            arr = getattr(cell, name)
            def f(v, arr=arr):
                arr[...] = v
                return loss()
            assert_grad_close(grads[name], numerical_grad(f, arr.copy()),
                              GRAD_TOL, f"gru {name}")
        for t in range(steps):
            def f(v, t=t):
                xs[t][...] = v
                return loss()
            assert_grad_close(grad_x_seq[t], numerical_grad(f, xs[t].copy()),
                              GRAD_TOL, f"gru x[{t}]")


class TestLstm:
    def test_zero_params_zero_cell(self):
        hidden = 4
        cell = LstmCell(*[np.zeros(s) for s in
                          [(3, hidden), (hidden, hidden), (hidden,)] * 4])
        h, c, _ = lstm_step(cell, np.ones((1, 3)), np.zeros((1, hidden)),
                            np.zeros((1, hidden)))
        assert np.allclose(h, 0.0) and np.allclose(c, 0.0)

    def test_zero_params_gates_at_half(self):
        hidden = 4
        cell = LstmCell(*[np.zeros(s) for s in
                          [(3, hidden), (hidden, hidden), (hidden,)] * 4])
        c_prev = np.array([[1.0, -1.0, 2.0, 0.5]])
        h, c, _ = lstm_step(cell, np.zeros((1, 3)), np.zeros((1, hidden)), c_prev)
        assert np.allclose(c, 0.5 * c_prev)
        assert np.allclose(h, 0.5 * np.tanh(0.5 * c_prev))

    @pytest.mark.parametrize("steps", [1, 3])
    @pytest.mark.parametrize("seed", range(10))
    def test_backward_matches_finite_differences(self, steps, seed):
        rng = np.random.default_rng(200 + seed)
        n_in, hidden, batch = 3, 4, 2
        cell = make_lstm_cell(rng, n_in, hidden)
        xs = [rng.normal(size=(batch, n_in)) for _ in range(steps)]
        h0 = rng.normal(size=(batch, hidden)) * 0.1
        c0 = rng.normal(size=(batch, hidden)) * 0.1
        grad_h = rng.normal(size=(batch, hidden))

        def run():
            h, c = h0, c0
            caches = []
            for x in xs:
                h, c, cache = lstm_step(cell, x, h, c)
                caches.append(cache)
            return h, caches

        _, caches = run()
        grad_x_seq, grads = lstm_backward(cell, caches, grad_h)

        def loss():
            h, _ = run()
            return float(np.sum(h * grad_h))

        for name in cell.param_names():
            arr = getattr(cell, name)
            def f(v, arr=arr):
                arr[...] = v
                return loss()
            assert_grad_close(grads[name], numerical_grad(f, arr.copy()),
                              GRAD_TOL, f"lstm {name}")
        for t in range(steps):
            def f(v, t=t):
                xs[t][...] = v
                return loss()
            assert_grad_close(grad_x_seq[t], numerical_grad(f, xs[t].copy()),
                              GRAD_TOL, f"lstm x[{t}]")


class TestElementCounts:
    def test_gru_and_lstm_parameter_elements(self):
        rng = np.random.default_rng(0)
        n_in, hidden = 7, 5
        gru = make_gru_cell(rng, n_in, hidden)
        lstm = make_lstm_cell(rng, n_in, hidden)
        gru_total = sum(getattr(gru, n).size for n in gru.param_names())
        lstm_total = sum(getattr(lstm, n).size for n in lstm.param_names())
        assert gru_total == 3 * (n_in * hidden + hidden**2 + hidden)
        assert lstm_total == 4 * (n_in * hidden + hidden**2 + hidden)
        assert len([n for n in gru.param_names() if not n.startswith("b")]) == 6
        assert len([n for n in gru.param_names() if n.startswith("b")]) == 3
        assert len([n for n in lstm.param_names() if not n.startswith("b")]) == 8
        assert len([n for n in lstm.param_names() if n.startswith("b")]) == 4


class TestGlobalAvgPool:
    def test_constant_channel(self):
        x = np.full((2, 5, 3), 7.0)
        assert np.allclose(global_avg_pool(x), 7.0)

    def test_simple_mean(self):
        x = np.array([[[1.0], [2.0], [3.0]]])
        assert np.allclose(global_avg_pool(x), 2.0)

    def test_empty_length_rejected(self):
        with pytest.raises(ValueError):
            global_avg_pool(np.zeros((1, 0, 3)))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 6, 3))
        grad_out = rng.normal(size=(2, 3))
        analytic = global_avg_pool_backward(grad_out, 6)
        numeric = numerical_grad(
            lambda v: float(np.sum(global_avg_pool(v) * grad_out)), x.copy()
        )
        assert_grad_close(analytic, numeric, 1e-8, "gap")


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 5))
        out, _ = dropout(x, 0.0, training=True, rng=Rng(0))
        assert np.array_equal(out, x)

    def test_inference_is_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 5))
        out, _ = dropout(x, 0.9, training=False)
        assert np.array_equal(out, x)

    def test_survivor_fraction_and_mean(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=100_000) + 2.0
        out, mask = dropout(x, 0.8, training=True, rng=Rng(7))
        survivors = np.mean(mask > 0)
        assert survivors == pytest.approx(0.2, abs=0.01)
        assert out.mean() == pytest.approx(x.mean(), rel=0.03)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(np.zeros(3), 1.0, training=True, rng=Rng(0))


class TestDenseSoftmax:
    def test_uniform_logits(self):
        layer = DenseSoftmax(W=np.zeros((5, 4)), b=np.zeros(4))
        x = np.random.default_rng(0).normal(size=(2, 5))
        y = np.eye(4)[[1, 3]]
        probs, loss, _ = dense_softmax_ce(layer, x, y)
        assert np.allclose(probs, 0.25)
        assert loss == pytest.approx(np.log(4.0))

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        layer = DenseSoftmax(W=rng.normal(size=(5, 3)), b=rng.normal(size=3))
        probs, _, _ = dense_softmax_ce(layer, rng.normal(size=(4, 5)), np.eye(3)[[0, 1, 2, 0]])
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        from grufcn.layers import softmax
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(3, 4))
        # max-subtraction keeps large shifts from overflowing
        assert np.allclose(softmax(logits), softmax(logits + 500.0), atol=1e-12)
        assert np.all(np.isfinite(softmax(logits + 5000.0)))

    def test_degenerate_onehot_rejected(self):
        layer = DenseSoftmax(W=np.zeros((2, 3)), b=np.zeros(3))
        with pytest.raises(ValueError):
            dense_softmax_ce(layer, np.zeros((1, 2)), np.array([[1.0, 1.0, 0.0]]))
        with pytest.raises(ValueError):
            dense_softmax_ce(layer, np.zeros((1, 2)), np.array([[0.0, 0.0, 0.0]]))

    def test_logit_gradient_is_probs_minus_onehot(self):
        rng = np.random.default_rng(3)
        layer = DenseSoftmax(W=rng.normal(size=(4, 3)), b=rng.normal(size=3))
        x = rng.normal(size=(2, 4))
        y = np.eye(3)[[0, 2]]
        probs, _, cache = dense_softmax_ce(layer, x, y)
        grad_x, grads = dense_softmax_ce_backward(cache)

        def loss_of_w(v):
            layer.W[...] = v
            _, loss, _ = dense_softmax_ce(layer, x, y)
            return loss

        assert_grad_close(grads["W"], numerical_grad(loss_of_w, layer.W.copy()),
                          GRAD_TOL, "dense W")

        def loss_of_x(v):
            _, loss, _ = dense_softmax_ce(layer, v, y)
            return loss

        assert_grad_close(grad_x, numerical_grad(loss_of_x, x.copy()),
                          GRAD_TOL, "dense x")
