import numpy as np
import pytest

from cardiosep import nngrad
from cardiosep.nngrad import (MLP, ParamSet, Tape, Var, activation, adam_step,
                              affine, grad_check, half_sse, reduce_sum)


class TestOps:
    def test_affine_identity(self):
        params = ParamSet()
        w = params.add("w", np.eye(3))
        b = params.add("b", np.zeros(3))
        out = affine(Tape(), Var(np.eye(3)), w, b)
        np.testing.assert_array_equal(out.value, np.eye(3))

    def test_affine_shape_mismatch(self):
        params = ParamSet()
        w = params.add("w", np.eye(3))
        b = params.add("b", np.zeros(3))
        with pytest.raises(ValueError):
            affine(Tape(), Var(np.ones((1, 4))), w, b)

    def test_relu_definition(self):
        out = activation(Tape(), Var(np.array([[-1.0, 0.0, 2.0]])), "relu")
        np.testing.assert_array_equal(out.value, [[0.0, 0.0, 2.0]])

    def test_tanh_gradient_at_zero(self):
        tape = Tape()
        x = Var(np.zeros((1, 1)))
        out = activation(tape, x, "tanh")
        assert out.value[0, 0] == 0.0
        loss = reduce_sum(tape, out)
        tape.backward(loss)
        assert x.grad[0, 0] == pytest.approx(1.0)

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            activation(Tape(), Var(np.zeros((1, 1))), "gelu")


class TestBackward:
    def test_sum_affine_gradient_structure(self):
        # loss = sum(x @ W): dloss/dW[i, j] = sum over batch of x[:, i]
        rng = np.random.default_rng(0)
        params = ParamSet()
        w = params.add("w", rng.standard_normal((4, 3)))
        b = params.add("b", np.zeros(3))
        x = rng.standard_normal((5, 4))
        tape = Tape()
        loss = reduce_sum(tape, affine(tape, Var(x), w, b))
        tape.backward(loss)
        expected = np.tile(x.sum(axis=0)[:, None], (1, 3))
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)

    def test_unreached_parameter_zero_gradient(self):
        params = ParamSet()
        w = params.add("w", np.eye(2))
        b = params.add("b", np.zeros(2))
        unused = params.add("unused", np.ones(3))
        tape = Tape()
        loss = reduce_sum(tape, affine(tape, Var(np.ones((1, 2))), w, b))
        tape.backward(loss)
        assert unused.grad is None
        assert np.all(params.grad_flat()[-3:] == 0)

    def test_double_backward_rejected(self):
        tape = Tape()
        loss = reduce_sum(tape, Var(np.ones((1, 2))))
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)

    def test_nonscalar_loss_rejected(self):
        tape = Tape()
        out = Var(np.ones((2, 2)))
        with pytest.raises(ValueError):
            tape.backward(out)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = ParamSet()
        w = params.add("w", np.array([[1.0, 2.0]]))
        w.grad = np.zeros_like(w.value)
        adam_step(params, t=1)
        np.testing.assert_array_equal(w.value, [[1.0, 2.0]])

    def test_first_step_magnitude_is_lr(self):
        # constant gradient at t=1: bias correction makes the step lr*sign(g)
        params = ParamSet()
        w = params.add("w", np.zeros((1, 3)))
        w.grad = np.array([[0.5, -2.0, 7.0]])
        lr = 0.05
        g = w.grad.copy()
        adam_step(params, lr=lr, t=1)
        np.testing.assert_allclose(w.value, -lr * np.sign(g), rtol=1e-6)

    def test_quadratic_bowl_convergence(self):
        params = ParamSet()
        w = params.add("w", np.array([[1.0]]))
        for t in range(1, 501):
            w.grad = 2.0 * w.value  # gradient of w^2
            adam_step(params, lr=0.05, t=t)
            w.grad = None
        assert abs(w.value[0, 0]) < 1e-3

    def test_nonfinite_gradient_names_parameter(self):
        params = ParamSet()
        w = params.add("bad_layer", np.zeros((1, 1)))
        w.grad = np.array([[np.nan]])
        with pytest.raises(FloatingPointError, match="bad_layer"):
            adam_step(params, t=1)

    def test_invalid_step_index(self):
        with pytest.raises(ValueError):
            adam_step(ParamSet(), t=0)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(9)
            mlp = MLP([4, 6, 2], rng=rng, name="m")
            x = rng.standard_normal((8, 4))
            target = rng.standard_normal((8, 2))
            for t in range(1, 21):
                mlp.params.zero_grad()
                tape = Tape()
                loss = half_sse(tape, mlp.forward(tape, Var(x)), target)
                tape.backward(loss)
                adam_step(mlp.params, t=t)
            return mlp.params.flatten()

        np.testing.assert_array_equal(run(), run())


class TestGradCheck:
    def test_two_layer_tanh_mlp_mse(self):
        rng = np.random.default_rng(1)
        mlp = MLP([6, 5, 3], hidden_activation="tanh", rng=rng, name="net")
        x = rng.standard_normal((5, 6))
        target = rng.standard_normal((5, 3))

        def fwd(tape):
            return half_sse(tape, mlp.forward(tape, Var(x)), target)

        report = grad_check(fwd, mlp.params)
        assert report.max_rel_err < 1e-4

    def test_identity_network_exact(self):
        params = ParamSet()
        w = params.add("w", np.eye(2))
        b = params.add("b", np.zeros(2))
        x = np.array([[0.3, -0.7]])

        def fwd(tape):
            return half_sse(tape, affine(tape, Var(x), w, b), np.zeros((1, 2)))

        report = grad_check(fwd, params)
        assert report.max_rel_err < 1e-9

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(2)
        mlp = MLP([4, 8, 2], hidden_activation="relu", rng=rng, name="net")
        x = rng.standard_normal((3, 4)) + 1.5  # offset keeps pre-activations off 0
        target = np.zeros((3, 2))

        def fwd(tape):
            return half_sse(tape, mlp.forward(tape, Var(x)), target)

        report = grad_check(fwd, mlp.params)
        assert report.max_rel_err < 1e-4


class TestFiniteness:
    def test_affine_overflow_detected(self):
        params = ParamSet()
        w = params.add("w", np.full((1, 1), 1e308))
        b = params.add("b", np.full(1, 1e308))
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            affine(Tape(), Var(np.full((1, 1), 1e308)), w, b)
