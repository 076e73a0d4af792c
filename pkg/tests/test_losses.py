import numpy as np
import pytest

from radialpose.errors import ArgumentError, DivergenceError
from radialpose.keypoints import RadiiMatrix
from radialpose.losses import (
    LossKind,
    LossWeights,
    bce_loss,
    combined_loss,
    radial_pair_loss,
    residual_loss,
    smooth_l1,
    steps_to_reach,
    toy_fit,
    weight_schedule,
)


def _numeric_grad(fn, est, h=1e-6):
    grad = np.zeros_like(est)
    for idx in np.ndindex(est.shape):
        up, down = est.copy(), est.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (fn(up) - fn(down)) / (2 * h)
    return grad


def _radii_pair(rng, M=5, K=4, spread=0.4):
    gt = rng.uniform(0.5, 2.0, size=(M, K))
    return gt + rng.uniform(-spread, spread, size=(M, K)), gt


class TestSmoothL1:
    @pytest.mark.parametrize(
        "x, value, deriv",
        [(0.0, 0.0, 0.0), (0.5, 0.125, 0.5), (-0.5, 0.125, -0.5), (1.0, 0.5, 1.0), (3.0, 2.5, 1.0), (-3.0, 2.5, -1.0)],
    )
    def test_values(self, x, value, deriv):
        assert smooth_l1(x) == (pytest.approx(value), pytest.approx(deriv))

    def test_continuous_at_transition(self):
        below, _ = smooth_l1(1.0 - 1e-9)
        above, _ = smooth_l1(1.0 + 1e-9)
        assert below == pytest.approx(above, abs=1e-8)

    def test_elementwise(self):
        value, deriv = smooth_l1(np.array([0.0, 2.0]))
        np.testing.assert_allclose(value, [0.0, 1.5])
        np.testing.assert_allclose(deriv, [0.0, 1.0])


class TestResidualLoss:
    def test_zero_at_ground_truth(self, rng):
        _, gt = _radii_pair(rng)
        out = residual_loss(gt, gt)
        assert out.value == 0.0
        np.testing.assert_array_equal(out.grad, 0.0)

    def test_uniform_offset(self):
        gt = np.ones((2, 3))
        assert residual_loss(gt + 0.2, gt).value == pytest.approx(0.02)
        assert residual_loss(gt + 3.0, gt).value == pytest.approx(2.5)

    def test_gradient_matches_finite_differences(self, rng):
        est, gt = _radii_pair(rng, spread=1.5)
        analytic = residual_loss(est, gt).grad
        numeric = _numeric_grad(lambda e: residual_loss(e, gt).value, est)
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            residual_loss(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_accepts_radii_matrix(self, rng):
        est, gt = _radii_pair(rng)
        assert residual_loss(RadiiMatrix(est), RadiiMatrix(gt)).value == pytest.approx(residual_loss(est, gt).value)


class TestRadialPairLoss:
    def test_zero_for_uniform_offset(self, rng):
        _, gt = _radii_pair(rng)
        out = radial_pair_loss(gt + 0.3, gt)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_single_pair_value(self):
        gt = np.array([[1.0, 2.0]])
        est = np.array([[1.0, 1.5]])
        # |1 - 0.5| = 0.5 -> 0.125, normalised by 2 / (1 * 2 * 1)
        assert radial_pair_loss(est, gt).value == pytest.approx(0.125)

    def test_gradient_matches_finite_differences(self, rng):
        est, gt = _radii_pair(rng, spread=1.5)
        analytic = radial_pair_loss(est, gt).grad
        numeric = _numeric_grad(lambda e: radial_pair_loss(e, gt).value, est)
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)

    def test_invariant_to_per_row_constant(self, rng):
        est, gt = _radii_pair(rng, M=6, spread=0.8)
        shift = rng.uniform(-0.4, 3.0, size=(6, 1))
        base = radial_pair_loss(est, gt)
        moved = radial_pair_loss(est + shift, gt + shift)
        assert moved.value == pytest.approx(base.value, abs=1e-12)
        np.testing.assert_allclose(moved.grad, base.grad, atol=1e-12)

    def test_needs_two_keypoints(self):
        with pytest.raises(ArgumentError):
            radial_pair_loss(np.ones((3, 1)), np.ones((3, 1)))


class TestCombinedLoss:
    def test_weighted_sum(self, rng):
        est, gt = _radii_pair(rng)
        w = LossWeights(0.8, 0.2)
        out = combined_loss(est, gt, w)
        expected = 0.8 * residual_loss(est, gt).value + 0.2 * radial_pair_loss(est, gt).value
        assert out.value == pytest.approx(expected)

    def test_gradient_matches_finite_differences(self, rng):
        est, gt = _radii_pair(rng, spread=1.5)
        w = LossWeights(0.2, 0.8)
        analytic = combined_loss(est, gt, w).grad
        numeric = _numeric_grad(lambda e: combined_loss(e, gt, w).value, est)
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ArgumentError):
            LossWeights(0.5, 0.6)


class TestWeightSchedule:
    @pytest.mark.parametrize("epoch, alpha", [(0, 0.8), (99, 0.8), (100, 0.2), (500, 0.2)])
    def test_switch_at_epoch_100(self, epoch, alpha):
        w = weight_schedule(epoch)
        assert w.alpha == alpha
        assert w.alpha + w.beta == pytest.approx(1.0)

    def test_negative_epoch(self):
        with pytest.raises(ArgumentError):
            weight_schedule(-1)


class TestBceLoss:
    def test_half_probability(self):
        assert bce_loss([0.5, 0.5], [0, 1]) == pytest.approx(np.log(2.0))

    def test_confident_and_right_is_near_zero(self):
        assert bce_loss([1.0, 0.0], [1, 0]) < 1e-6

    def test_clamped_when_confident_and_wrong(self):
        assert np.isfinite(bce_loss([0.0], [1]))

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            bce_loss([0.5], [0, 1])


class TestToyFit:
    @pytest.mark.parametrize("kind", ["residual", "combined"])
    def test_converges_from_nearby_start(self, rng, kind):
        gt = rng.uniform(0.5, 2.0, size=(2, 3))
        final, trace = toy_fit(gt, gt + 0.1, kind, steps=200, lr=0.5)
        assert len(trace) == 200
        assert residual_loss(final, gt).value < 1e-3
        assert trace[-1].residual < trace[0].residual

    def test_trace_records_schedule(self, rng):
        gt = rng.uniform(0.5, 2.0, size=(2, 3))
        _, trace = toy_fit(gt, gt + 0.1, LossKind.COMBINED, steps=150, lr=0.5)
        assert (trace[0].alpha, trace[0].beta) == (0.8, 0.2)
        assert (trace[120].alpha, trace[120].beta) == (0.2, 0.8)

    def test_clamp_keeps_radii_nonnegative(self):
        gt = np.full((2, 3), 0.05)
        final, _ = toy_fit(gt, np.zeros((2, 3)) + 2.0, "residual", steps=50, lr=10.0, clamp=True)
        assert np.all(final >= 0.0)

    def test_unclamped_step_is_plain_gradient_descent(self):
        gt = np.full((2, 3), 0.05)
        init = np.full((2, 3), 2.0)
        final, _ = toy_fit(gt, init, "residual", steps=1, lr=30.0)
        np.testing.assert_allclose(final, init - 30.0 * residual_loss(init, gt).grad)
        assert np.all(final < 0.0)

    def test_steps_to_reach(self, rng):
        gt = rng.uniform(0.5, 2.0, size=(2, 3))
        _, trace = toy_fit(gt, gt + 0.1, "residual", steps=200, lr=0.5)
        step = steps_to_reach(trace, 1e-3)
        assert step is not None
        assert trace[step].residual < 1e-3
        assert all(t.residual >= 1e-3 for t in trace[:step])
        assert steps_to_reach(trace, 0.0) is None

    def test_non_finite_start_diverges(self):
        gt = np.ones((2, 3))
        with pytest.raises(DivergenceError) as info:
            toy_fit(gt, np.full((2, 3), np.nan), "residual", steps=10, lr=0.1)
        assert info.value.step == 0

    def test_infinite_start_diverges(self):
        with pytest.raises(DivergenceError):
            toy_fit(np.ones((2, 3)), np.full((2, 3), np.inf), "combined", steps=10, lr=0.1)

    def test_invalid_arguments(self):
        with pytest.raises(ArgumentError):
            toy_fit(np.ones((2, 3)), np.ones((2, 3)), "residual", steps=0, lr=0.1)
        with pytest.raises(ValueError):
            toy_fit(np.ones((2, 3)), np.ones((2, 3)), "hinge", steps=10, lr=0.1)
