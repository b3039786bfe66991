import numpy as np
import pytest

from calseg import autodiff as ad
from calseg.errors import ShapeError

from conftest import central_difference, relative_error


def _var(rng, shape, offset=0.0):
    return ad.Variable(rng.normal(size=shape) + offset, requires_grad=True)


def _fd_check(variables, build_loss, h=1e-4, tol=1e-6):
    """All-positions central-difference check, float64 inputs assumed."""
    with ad.Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    for var in variables:
        indices = np.arange(var.value.size)
        fd = central_difference(build_loss, var, indices, h=h)
        got = var.grad.reshape(-1)
        worst = float(relative_error(got, fd, floor=1e-7).max())
        assert worst < tol, f"worst rel err {worst:.3e}"


class TestBackwardBasics:
    def test_sum_gradient_is_ones(self, rng):
        x = _var(rng, (3, 4))
        with ad.Tape() as tape:
            loss = ad.tensor_sum(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_sum_of_squares_gradient(self):
        x = ad.Variable(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.tensor_sum(ad.mul(x, x))
        tape.backward(loss)
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    def test_mean_gradient_is_uniform(self, rng):
        x = _var(rng, (5,))
        with ad.Tape() as tape:
            loss = ad.tensor_mean(x)
        tape.backward(loss)
        assert np.allclose(x.grad, 0.2)

    def test_non_scalar_loss_rejected(self, rng):
        x = _var(rng, (3,))
        with ad.Tape() as tape:
            y = ad.mul(x, 2.0)
            with pytest.raises(ShapeError):
                tape.backward(y)

    def test_gradients_accumulate_until_zeroed(self, rng):
        x = _var(rng, (4,))
        for expected in (1.0, 2.0):
            with ad.Tape() as tape:
                loss = ad.tensor_sum(x)
            tape.backward(loss)
            assert np.allclose(x.grad, expected)
        x.zero_grad()
        assert x.grad is None

    def test_backward_deterministic(self, rng):
        x = _var(rng, (6, 6))

        def run():
            x.zero_grad()
            with ad.Tape() as tape:
                y = ad.sigmoid(ad.mul(x, x))
                loss = ad.tensor_sum(ad.mul(y, 3.0))
            tape.backward(loss)
            return x.grad.tobytes()

        assert run() == run()

    def test_no_tape_means_no_recording(self, rng):
        x = _var(rng, (3,))
        y = ad.mul(x, x)  # outside any tape
        assert y.requires_grad is False


class TestElementwiseGradients:
    def test_add_mul_div_chain(self, rng):
        a = _var(rng, (4, 3))
        b = _var(rng, (4, 3), offset=3.0)  # keep denominators away from 0
        _fd_check([a, b], lambda: ad.tensor_sum(
            ad.div(ad.add(ad.mul(a, b), a), b)))

    def test_broadcasting_gradients(self, rng):
        a = _var(rng, (2, 3, 4, 4))
        s = _var(rng, (2, 3, 1, 1))
        _fd_check([a, s], lambda: ad.tensor_sum(ad.mul(a, s)))

    def test_log_exp(self, rng):
        x = _var(rng, (10,), offset=4.0)
        _fd_check([x], lambda: ad.tensor_sum(ad.log(x)))
        y = _var(rng, (10,))
        _fd_check([y], lambda: ad.tensor_sum(ad.exp(y)))

    def test_sigmoid_gradient_identity(self, rng):
        x = _var(rng, (20,))
        with ad.Tape() as tape:
            y = ad.sigmoid(x)
            loss = ad.tensor_sum(y)
        tape.backward(loss)
        s = 1.0 / (1.0 + np.exp(-x.value))
        assert np.allclose(x.grad, s * (1 - s), atol=1e-12)

    def test_sigmoid_stable_at_extremes(self):
        x = ad.Variable(np.array([-500.0, 500.0]))
        y = ad.sigmoid(x)
        assert np.isfinite(y.value).all()
        assert y.value[0] >= 0.0 and y.value[1] <= 1.0
        assert y.value[0] == pytest.approx(0.0, abs=1e-12)
        assert y.value[1] == pytest.approx(1.0, abs=1e-12)

    def test_softplus_values_and_grad(self, rng):
        x = ad.Variable(np.array([-30.0, 0.0, 30.0]))
        y = ad.softplus(x)
        assert y.value[1] == pytest.approx(np.log(2.0))
        assert y.value[2] == pytest.approx(30.0, abs=1e-9)
        xs = _var(rng, (12,))
        _fd_check([xs], lambda: ad.tensor_sum(ad.softplus(xs)))

    def test_leaky_relu_forward_and_subgradient(self):
        x = ad.Variable(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        with ad.Tape() as tape:
            y = ad.leaky_relu(x, alpha=0.01)
            loss = ad.tensor_sum(y)
        tape.backward(loss)
        assert np.allclose(y.value, [-0.01, 0.0, 2.0])
        assert np.allclose(x.grad, [0.01, 0.01, 1.0])  # alpha at exactly 0

    def test_leaky_relu_idempotent_on_nonnegative(self, rng):
        x = ad.Variable(np.abs(rng.normal(size=(8,))))
        y = ad.leaky_relu(x)
        assert np.array_equal(y.value, x.value)

    def test_leaky_relu_fd_away_from_kink(self, rng):
        x = ad.Variable(np.where(rng.normal(size=20) > 0, 1.0, -1.0)
                        + rng.normal(size=20) * 0.1, requires_grad=True)
        _fd_check([x], lambda: ad.tensor_sum(ad.leaky_relu(x)))

    def test_clamp_blocks_gradient_outside(self):
        x = ad.Variable(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.tensor_sum(ad.clamp(x, 0.0, 1.0))
        tape.backward(loss)
        assert np.allclose(x.grad, [0.0, 1.0, 0.0])


class TestConv2D:
    def test_identity_kernel(self, rng):
        x = ad.Variable(rng.normal(size=(2, 1, 4, 4)))
        k = ad.Variable(np.ones((1, 1, 1, 1)))
        y = ad.conv2d(x, k, None, stride=1, padding=0)
        assert np.array_equal(y.value, x.value)

    def test_hand_window_sums(self):
        x = ad.Variable(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
        k = ad.Variable(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]))
        y = ad.conv2d(x, k, None, stride=1, padding=0)
        assert np.array_equal(y.value[0, 0], [[6.0, 8.0], [12.0, 14.0]])

    def test_non_integral_geometry_rejected(self, rng):
        x = ad.Variable(rng.normal(size=(1, 1, 64, 64)))
        k = ad.Variable(rng.normal(size=(1, 1, 3, 3)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, k, None, stride=2, padding=1)

    def test_channel_mismatch_rejected(self, rng):
        x = ad.Variable(rng.normal(size=(1, 3, 4, 4)))
        k = ad.Variable(rng.normal(size=(2, 4, 3, 3)))
        with pytest.raises(ShapeError):
            ad.conv2d(x, k, None)

    @pytest.mark.parametrize("stride,padding,ksize", [(1, 0, 3), (1, 1, 3), (2, 0, 2)])
    def test_gradients_match_finite_differences(self, rng, stride, padding, ksize):
        x = _var(rng, (2, 3, 6, 6))
        k = _var(rng, (4, 3, ksize, ksize))
        b = _var(rng, (4,))
        w = rng.normal(size=(2, 4,
                             (6 + 2 * padding - ksize) // stride + 1,
                             (6 + 2 * padding - ksize) // stride + 1))
        _fd_check([x, k, b], lambda: ad.tensor_sum(
            ad.mul(ad.conv2d(x, k, b, stride, padding), w)))

    def test_linearity_in_input(self, rng):
        x = rng.normal(size=(1, 2, 5, 5))
        y = rng.normal(size=(1, 2, 5, 5))
        k = ad.Variable(rng.normal(size=(3, 2, 3, 3)))
        a, b = 1.7, -0.6
        combined = ad.conv2d(ad.Variable(a * x + b * y), k, None, 1, 1).value
        separate = (a * ad.conv2d(ad.Variable(x), k, None, 1, 1).value
                    + b * ad.conv2d(ad.Variable(y), k, None, 1, 1).value)
        np.testing.assert_allclose(combined, separate, atol=1e-5)


class TestConvTranspose2D:
    def test_hand_scatter(self):
        x = ad.Variable(np.array([[[[2.0]]]]))
        k = ad.Variable(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        y = ad.conv_transpose2d(x, k, None, stride=2, padding=0)
        assert np.array_equal(y.value[0, 0], [[2.0, 4.0], [6.0, 8.0]])

    def test_adjoint_identity(self, rng):
        # <conv2d(v, K), u> == <v, conv_transpose2d(u, K)>
        k = rng.normal(size=(4, 3, 2, 2))
        v = rng.normal(size=(2, 3, 6, 6))
        u = rng.normal(size=(2, 4, 3, 3))
        conv = ad.conv2d(ad.Variable(v), ad.Variable(k), None, stride=2, padding=0)
        tconv = ad.conv_transpose2d(ad.Variable(u), ad.Variable(k), None,
                                    stride=2, padding=0)
        lhs = float((conv.value * u).sum())
        rhs = float((v * tconv.value).sum())
        assert relative_error(lhs, rhs) < 1e-4

    def test_gradients_match_finite_differences(self, rng):
        x = _var(rng, (2, 4, 3, 3))
        k = _var(rng, (4, 3, 2, 2))
        b = _var(rng, (3,))
        w = rng.normal(size=(2, 3, 6, 6))
        _fd_check([x, k, b], lambda: ad.tensor_sum(
            ad.mul(ad.conv_transpose2d(x, k, b, stride=2, padding=0), w)))

    def test_upsamples_shape(self, rng):
        x = ad.Variable(rng.normal(size=(1, 5, 4, 4)))
        k = ad.Variable(rng.normal(size=(5, 2, 2, 2)))
        y = ad.conv_transpose2d(x, k, None, stride=2, padding=0)
        assert y.value.shape == (1, 2, 8, 8)


class TestBatchNorm2D:
    def test_train_mode_normalizes(self, rng):
        x = ad.Variable(rng.normal(3.0, 2.0, size=(4, 3, 5, 5)))
        gamma = ad.Variable(np.ones(3))
        beta = ad.Variable(np.zeros(3))
        running = ad.RunningStats(3, dtype=np.float64)
        y = ad.batch_norm2d(x, gamma, beta, "train", running).value
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-4
        assert np.abs(y.var(axis=(0, 2, 3)) - 1.0).max() < 1e-3

    def test_zero_gamma_gives_beta(self, rng):
        x = ad.Variable(rng.normal(size=(2, 2, 3, 3)))
        gamma = ad.Variable(np.zeros(2))
        beta = ad.Variable(np.array([1.5, -2.0]))
        running = ad.RunningStats(2, dtype=np.float64)
        y = ad.batch_norm2d(x, gamma, beta, "train", running).value
        assert np.allclose(y[:, 0], 1.5) and np.allclose(y[:, 1], -2.0)

    def test_running_stats_update_and_eval_mode(self, rng):
        x = rng.normal(2.0, 3.0, size=(8, 2, 4, 4))
        gamma = ad.Variable(np.ones(2))
        beta = ad.Variable(np.zeros(2))
        running = ad.RunningStats(2, dtype=np.float64)
        ad.batch_norm2d(ad.Variable(x), gamma, beta, "train", running, momentum=1.0)
        np.testing.assert_allclose(running.mean, x.mean(axis=(0, 2, 3)), rtol=1e-6)
        y = ad.batch_norm2d(ad.Variable(x), gamma, beta, "eval", running).value
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-6

    def test_gradients_match_finite_differences(self, rng):
        x = _var(rng, (3, 2, 4, 4))
        gamma = _var(rng, (2,), offset=1.0)
        beta = _var(rng, (2,))
        w = rng.normal(size=(3, 2, 4, 4))

        def build():
            running = ad.RunningStats(2, dtype=np.float64)
            return ad.tensor_sum(ad.mul(
                ad.batch_norm2d(x, gamma, beta, "train", running), w))

        _fd_check([x, gamma, beta], build, tol=1e-5)


class TestConcat:
    def test_shapes_add(self, rng):
        a = ad.Variable(rng.normal(size=(2, 3, 4, 4)))
        b = ad.Variable(rng.normal(size=(2, 5, 4, 4)))
        y = ad.concat_channels(a, b)
        assert y.value.shape == (2, 8, 4, 4)
        assert np.array_equal(y.value[:, :3], a.value)
        assert np.array_equal(y.value[:, 3:], b.value)

    def test_gradient_splits_exactly(self, rng):
        a = _var(rng, (1, 2, 3, 3))
        b = _var(rng, (1, 4, 3, 3))
        w = rng.normal(size=(1, 6, 3, 3))
        with ad.Tape() as tape:
            loss = ad.tensor_sum(ad.mul(ad.concat_channels(a, b), w))
        tape.backward(loss)
        assert np.array_equal(a.grad, w[:, :2])
        assert np.array_equal(b.grad, w[:, 2:])

    def test_incompatible_shapes_rejected(self, rng):
        a = ad.Variable(rng.normal(size=(1, 2, 3, 3)))
        b = ad.Variable(rng.normal(size=(1, 2, 4, 4)))
        with pytest.raises(ShapeError):
            ad.concat_channels(a, b)
