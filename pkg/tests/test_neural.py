import math

import numpy as np
import pytest

from mtdlab.neural import (
    Adam,
    Mlp,
    SgdMomentum,
    backward,
    finite_difference_grads,
    gelu,
    gelu_grad,
    mse_grad,
    mse_loss,
)
from oracles import gelu_grad_reference, gelu_reference, max_relative_error, normal_cdf_series


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_large_positive_is_identity(self):
        assert abs(float(gelu(10.0)) - 10.0) < 1e-6

    def test_value_at_one_against_series_oracle(self):
        expected = 1.0 * normal_cdf_series(1.0)
        assert float(gelu(1.0)) == pytest.approx(expected, abs=1e-9)
        assert float(gelu(1.0)) == pytest.approx(0.841345, abs=1e-6)

    @pytest.mark.parametrize("x", [-3.0, -0.7, 0.3, 1.9, 4.2])
    def test_matches_math_erf_reference(self, x):
        assert float(gelu(x)) == pytest.approx(gelu_reference(x), abs=1e-12)
        assert float(gelu_grad(x)) == pytest.approx(gelu_grad_reference(x), abs=1e-12)


class TestForward:
    def test_identity_single_layer(self):
        net = Mlp((3, 3), [np.eye(3)], [np.zeros(3)])
        x = np.array([0.5, -1.5, 2.0])
        out, _ = net.forward(x)
        assert np.array_equal(out, x)

    def test_zero_weights_output_is_bias(self):
        net = Mlp.zeros((4, 2))
        net.biases[0][:] = [3.0, -1.0]
        assert np.array_equal(net.predict(np.ones(4)), [3.0, -1.0])

    def test_hand_computed_2_2_1(self):
        w1 = np.array([[0.5, -0.25], [0.75, 1.0]])
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[1.5, -2.0]])
        b2 = np.array([0.05])
        net = Mlp((2, 2, 1), [w1, w2], [b1, b2])
        x = np.array([0.4, -0.6])

        z1 = w1 @ x + b1  # [0.45, -0.5]
        assert np.allclose(z1, [0.45, -0.5])
        a1 = np.array([gelu_reference(z1[0]), gelu_reference(z1[1])])
        expected = w2 @ a1 + b2
        assert np.allclose(net.predict(x), expected, atol=1e-12)

    def test_dimension_mismatch_errors(self):
        net = Mlp.zeros((3, 2))
        with pytest.raises(ValueError):
            net.forward(np.ones(4))

    def test_batch_matches_rowwise(self):
        rng = np.random.default_rng(2)
        net = Mlp.initialize((5, 4, 2), rng)
        batch = rng.standard_normal((6, 5))
        out = net.predict(batch)
        for i in range(6):
            assert np.allclose(out[i], net.predict(batch[i]), atol=1e-12)


class TestMseLoss:
    def test_identical_is_zero(self):
        assert mse_loss(np.ones(5), np.ones(5)) == 0.0

    def test_forced_arithmetic(self):
        assert mse_loss(np.zeros(2), np.ones(2)) == 1.0

    def test_matches_bruteforce_on_46_vectors(self):
        rng = np.random.default_rng(13)
        pred = rng.standard_normal(46)
        target = rng.standard_normal(46)
        brute = sum((p - t) ** 2 for p, t in zip(pred, target)) / 46
        assert mse_loss(pred, target) == pytest.approx(brute, rel=1e-12)

    def test_length_mismatch_errors(self):
        with pytest.raises(ValueError):
            mse_loss(np.ones(3), np.ones(4))


class TestBackward:
    def test_zero_loss_gradient_gives_zero_grads(self):
        rng = np.random.default_rng(4)
        net = Mlp.initialize((3, 4, 2), rng)
        out, cache = net.forward(rng.standard_normal(3))
        grads = backward(net, cache, np.zeros_like(out))
        assert all(np.all(g == 0.0) for g in grads)

    def test_hand_chain_rule_2_2_1(self):
        w1 = np.array([[0.5, -0.25], [0.75, 1.0]])
        b1 = np.array([0.1, -0.2])
        w2 = np.array([[1.5, -2.0]])
        b2 = np.array([0.05])
        net = Mlp((2, 2, 1), [w1, w2], [b1, b2])
        x = np.array([0.4, -0.6])
        target = np.array([0.3])

        out, cache = net.forward(x)
        grads = backward(net, cache, mse_grad(out, target))

        # Chain rule by hand, using independent scalar reference functions.
        z1 = w1 @ x + b1
        a1 = np.array([gelu_reference(v) for v in z1])
        y = float((w2 @ a1 + b2)[0])
        dy = 2.0 * (y - target[0])
        dw2 = dy * a1
        db2 = np.array([dy])
        da1 = dy * w2[0]
        dz1 = da1 * np.array([gelu_grad_reference(v) for v in z1])
        dw1 = np.outer(dz1, x)
        db1 = dz1

        assert np.allclose(grads[0], dw1, atol=1e-12)
        assert np.allclose(grads[1], db1, atol=1e-12)
        assert np.allclose(grads[2], dw2.reshape(1, 2), atol=1e-12)
        assert np.allclose(grads[3], db2, atol=1e-12)

    def test_matches_finite_differences_on_random_net(self):
        rng = np.random.default_rng(5)
        net = Mlp.initialize((4, 6, 3), rng)
        x = rng.standard_normal(4)
        target = rng.standard_normal(3)
        out, cache = net.forward(x)
        analytic = backward(net, cache, mse_grad(out, target))
        fd = finite_difference_grads(net, x, target)
        assert max_relative_error(analytic, fd) < 1e-4

    def test_foreign_cache_rejected(self):
        rng = np.random.default_rng(6)
        net_a = Mlp.initialize((3, 2), rng)
        net_b = Mlp.initialize((3, 2), rng)
        out, cache = net_a.forward(np.ones(3))
        with pytest.raises(ValueError):
            backward(net_b, cache, np.zeros_like(out))

    def test_wrong_grad_shape_rejected(self):
        rng = np.random.default_rng(7)
        net = Mlp.initialize((3, 2), rng)
        _, cache = net.forward(np.ones(3))
        with pytest.raises(ValueError):
            backward(net, cache, np.zeros(5))


class TestSgdMomentum:
    def test_zero_gradient_leaves_params(self):
        p = [np.array([1.0, 2.0])]
        SgdMomentum(0.1, 0.9).step(p, [np.zeros(2)])
        assert np.array_equal(p[0], [1.0, 2.0])

    def test_two_hand_steps(self):
        p = [np.array([1.0])]
        opt = SgdMomentum(0.1, 0.9)
        opt.step(p, [np.array([1.0])])
        assert p[0][0] == pytest.approx(0.9)
        opt.step(p, [np.array([1.0])])
        assert p[0][0] == pytest.approx(0.71)

    def test_zero_momentum_is_vanilla_sgd(self):
        p = [np.array([2.0])]
        SgdMomentum(0.5, 0.0).step(p, [np.array([3.0])])
        assert p[0][0] == pytest.approx(0.5)

    def test_shape_mismatch_errors(self):
        with pytest.raises(ValueError):
            SgdMomentum().step([np.zeros(2)], [np.zeros(3)])


class TestAdam:
    def test_zero_gradient_at_start_leaves_params(self):
        p = [np.array([5.0])]
        Adam(0.001).step(p, [np.zeros(1)])
        assert p[0][0] == 5.0

    def test_single_hand_step(self):
        p = [np.array([0.0])]
        Adam(0.001).step(p, [np.array([1.0])])
        assert p[0][0] == pytest.approx(-0.001 / (1.0 + 1e-8), abs=1e-12)

    def test_constant_gradient_step_size_approaches_lr(self):
        p = [np.array([0.0])]
        opt = Adam(0.01)
        prev = 0.0
        for _ in range(500):
            opt.step(p, [np.array([1.0])])
        delta_before = p[0][0]
        opt.step(p, [np.array([1.0])])
        assert abs(p[0][0] - delta_before) == pytest.approx(0.01, rel=1e-3)

    def test_shape_mismatch_errors(self):
        with pytest.raises(ValueError):
            Adam().step([np.zeros(2)], [np.zeros((2, 1))])

    def test_state_round_trips_through_dict(self):
        p = [np.array([1.0, -2.0])]
        opt = Adam(0.01)
        opt.step(p, [np.array([0.5, 0.5])])
        clone = Adam.from_dict(opt.to_dict())
        assert clone.t == opt.t
        assert np.allclose(clone.m[0], opt.m[0])
        assert np.allclose(clone.v[0], opt.v[0])


class TestDeterminismAndTraining:
    def test_same_seed_same_init(self):
        a = Mlp.initialize((5, 4, 3), np.random.default_rng(77))
        b = Mlp.initialize((5, 4, 3), np.random.default_rng(77))
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_same_seed_same_training_trajectory(self):
        def run():
            rng = np.random.default_rng(5)
            net = Mlp.initialize((4, 3, 4), rng)
            opt = SgdMomentum(1e-4, 0.9)
            data = rng.standard_normal((32, 4))
            for _ in range(5):
                out, cache = net.forward(data)
                opt.step(net.parameters(), backward(net, cache, mse_grad(out, data)))
            return net

        a, b = run(), run()
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_full_batch_loss_decreases_over_ten_steps(self):
        rng = np.random.default_rng(21)
        raw = rng.standard_normal((200, 8)) @ rng.standard_normal((8, 8))
        data = (raw - raw.mean(axis=0)) / raw.std(axis=0, ddof=1)
        net = Mlp.initialize((8, 6, 8), rng)
        opt = SgdMomentum(1e-4, 0.9)
        losses = []
        for _ in range(10):
            out, cache = net.forward(data)
            losses.append(mse_loss(out, data))
            opt.step(net.parameters(), backward(net, cache, mse_grad(out, data)))
        increases = sum(1 for a, b in zip(losses, losses[1:]) if b >= a)
        assert increases <= 1


class TestSerialization:
    def test_json_round_trip_is_numeric_identity(self, tmp_path):
        net = Mlp.initialize((4, 3, 2), np.random.default_rng(1))
        path = tmp_path / "net.json"
        net.save(path)
        loaded = Mlp.load(path)
        assert loaded.layer_sizes == net.layer_sizes
        for wa, wb in zip(loaded.weights, net.weights):
            assert np.max(np.abs(wa - wb)) < 1e-15
        for ba, bb in zip(loaded.biases, net.biases):
            assert np.max(np.abs(ba - bb)) < 1e-15

    def test_inconsistent_dims_rejected(self):
        with pytest.raises(ValueError):
            Mlp((3, 2), [np.zeros((2, 4))], [np.zeros(2)])

    def test_non_finite_params_rejected(self):
        w = np.zeros((2, 3))
        w[0, 0] = np.inf
        with pytest.raises(ValueError):
            Mlp((3, 2), [w], [np.zeros(2)])
