import copy

import numpy as np
import pytest

from flexarm.model import (
    UNIDIRECTIONAL,
    build_model,
    loss_and_grads,
    model_forward,
    parameters,
)
from flexarm.optim import AdamState, adam_step, init_adam
from flexarm.training import TrainConfig, mse_of, normalized_mse, train


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        params = {"a": np.array([1.0, -2.0]), "b": np.array([[3.0]])}
        state = init_adam(params)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        for _ in range(5):
            state, params_new = adam_step(state, params, grads, 1e-2)
            for k in params:
                assert np.array_equal(params_new[k], params[k])
            params = params_new

    def test_first_step_hand_computation(self):
        # t=1: m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps)
        g = np.array([0.3, -2.0, 1e-12])
        lr, eps = 1e-3, 1e-8
        params = {"w": np.zeros(3)}
        state = init_adam(params)
        _, new = adam_step(state, params, {"w": g}, lr, eps=eps)
        expected = -lr * g / (np.abs(g) + eps)
        assert np.max(np.abs(new["w"] - expected)) < 1e-18

    def test_moment_recursion_matches_hand_rollout(self):
        rng = np.random.default_rng(3)
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        params = {"w": rng.normal(size=4)}
        state = init_adam(params)
        m = np.zeros(4)
        v = np.zeros(4)
        w = params["w"].copy()
        for t in range(1, 6):
            g = rng.normal(size=4)
            state, params = adam_step(state, params, {"w": g}, lr, b1, b2, eps)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            assert np.max(np.abs(params["w"] - w)) < 1e-15

    def test_converges_on_scalar_quadratic(self):
        # f(x) = 0.5 (x - 3)^2, analytic minimizer x* = 3
        params = {"x": np.array([0.0])}
        state = init_adam(params)
        for _ in range(5000):
            g = {"x": params["x"] - 3.0}
            state, params = adam_step(state, params, g, 1e-2)
        assert abs(params["x"][0] - 3.0) < 1e-6

    def test_functional_purity(self):
        params = {"w": np.array([1.0])}
        state = init_adam(params)
        before = params["w"].copy()
        adam_step(state, params, {"w": np.array([0.5])}, 1e-2)
        assert np.array_equal(params["w"], before)
        assert state.t == 0


class TestTrain:
    def make_data(self, rng, n=2, T=6, count=300):
        inputs = rng.normal(size=(count, n, T))
        w = rng.normal(size=(n, n))
        targets = np.tanh(inputs.mean(axis=2)) @ w.T
        return inputs, targets

    def test_zero_iters_returns_model_unchanged(self, rng):
        m = build_model(UNIDIRECTIONAL, 2, 6, hidden_size=4, depth=2, seed=0)
        before = copy.deepcopy(parameters(m))
        inputs, targets = self.make_data(rng)
        out, history = train(m, inputs, targets, TrainConfig(max_iters=0))
        assert history == []
        for k, v in parameters(out).items():
            assert np.array_equal(v, before[k])
        assert np.array_equal(out.in_scale, np.ones(2))  # normalization untouched

    def test_fixed_seed_reproduces_history_bitwise(self, rng):
        inputs, targets = self.make_data(rng)
        cfg = TrainConfig(max_iters=60, batch_size=16, rng_seed=42, log_every=20,
                          dropout_keep=0.8)
        runs = []
        for _ in range(2):
            m = build_model(UNIDIRECTIONAL, 2, 6, hidden_size=4, depth=2, seed=9)
            runs.append(train(m, inputs, targets, cfg))
        (m1, h1), (m2, h2) = runs
        assert h1 == h2
        for k in parameters(m1):
            assert np.array_equal(parameters(m1)[k], parameters(m2)[k])

    def test_loss_decreases(self, rng):
        inputs, targets = self.make_data(rng, count=600)
        cfg = TrainConfig(max_iters=400, batch_size=32, rng_seed=1, log_every=100,
                          dropout_keep=1.0)
        m = build_model(UNIDIRECTIONAL, 2, 6, hidden_size=8, depth=2, seed=2)
        trained, history = train(m, inputs, targets, cfg)
        assert history[-1]["val_mse"] < 0.5 * history[0]["val_mse"]

    def test_batch_larger_than_dataset_rejected(self, rng):
        inputs, targets = self.make_data(rng, count=40)
        m = build_model(UNIDIRECTIONAL, 2, 6, hidden_size=4, depth=1, seed=3)
        with pytest.raises(ValueError, match="batch"):
            train(m, inputs, targets, TrainConfig(max_iters=1, batch_size=64))

    def test_normalization_fitted_from_train_split(self, rng):
        inputs, targets = self.make_data(rng)
        inputs = inputs * 3.0 + 1.0
        m = build_model(UNIDIRECTIONAL, 2, 6, hidden_size=4, depth=1, seed=4)
        trained, _ = train(m, inputs, targets,
                           TrainConfig(max_iters=5, batch_size=16, rng_seed=0))
        assert np.all(np.abs(trained.in_shift - 1.0) < 0.5)
        assert np.all(trained.in_scale > 1.5)

    def test_mse_helpers(self, rng):
        m = build_model(UNIDIRECTIONAL, 2, 6, hidden_size=4, depth=1, seed=5)
        inputs, targets = self.make_data(rng, count=50)
        mse = mse_of(m, inputs, targets)
        from flexarm.model import model_forward_batch

        err = model_forward_batch(m, inputs) - targets
        assert abs(mse - np.mean(err * err)) < 1e-15
        nm = normalized_mse(m, inputs, targets)
        assert abs(nm - mse / np.mean(np.var(targets, axis=0))) < 1e-12


class TestDropoutScaling:
    def test_inverted_dropout_unbiased_pre_readout(self):
        """Single-layer model: the expected post-dropout pre-readout activation
        over many masks equals the no-dropout activation (within 3 sigma)."""
        rng = np.random.default_rng(17)
        n, T, hidden = 2, 6, 8
        m = build_model(UNIDIRECTIONAL, n, T, hidden_size=hidden, depth=1, seed=6)
        window = rng.normal(size=(1, n, T))
        target = np.zeros((1, n))

        keep = 0.5
        base = model_forward(m, window[0])  # no-dropout readout of the activation

        # recover the realized pre-readout activation from the loss value:
        # simpler and more direct - average many dropped forward outputs
        trials = 10000
        mask_rng = np.random.default_rng(1234)
        acc = np.zeros(n)
        from flexarm.model import _forward_core  # white-box: inference w/ dropout

        for _ in range(trials):
            y, _, _ = _forward_core(m, window, dropout_keep=keep, rng=mask_rng)
            acc += y[0]
        mean = acc / trials

        # per-unit variance of inverted dropout ~ h^2 (1-k)/k through the linear
        # readout; bound the allowed deviation by 3 sigma of the estimator
        h_top = None
        # compute the hidden activation directly for the variance bound
        from flexarm.gru import layer_forward_seq

        xs = np.ascontiguousarray(
            ((window[0] - m.in_shift[:, None]) / m.in_scale[:, None]).T[:, None, :]
        )
        outs, _ = layer_forward_seq(m.layers[0], xs)
        h_top = outs[-1, 0]
        var_units = (h_top**2) * (1 - keep) / keep
        var_y = (m.w_out**2) @ var_units * (m.out_scale**2)
        sigma = np.sqrt(var_y / trials)
        assert np.all(np.abs(mean - base) <= 3.0 * sigma + 1e-12)
