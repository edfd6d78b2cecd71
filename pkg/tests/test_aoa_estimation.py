import numpy as np
import pytest

from aple_core.aoa_estimation import (
    SingleToneObjective,
    _axis_grid,
    estimate_posterior,
    estimate_residual_var,
    extrinsic_message,
)
from aple_core.channel import Scene, near_field_channel, steering_vector
from aple_core.geometry import AoaPair, SubarrayShape, build_array, partition
from aple_core.vonmises import VonMisesMsg

UNIFORM = VonMisesMsg.uniform()


def _shape(n_x, n_y, spacing, wavelength):
    return SubarrayShape(n_x=n_x, n_y=n_y, d_x=spacing, d_y=spacing, wavelength=wavelength)


def _line(shape, theta, alpha=1.0):
    return alpha * steering_vector(
        shape.n_x, shape.n_y, shape.d_x, shape.d_y, shape.wavelength, AoaPair(*theta)
    )


def _noise(size, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


@pytest.mark.parametrize("n_x, n_y, spacing_over_lambda", [(10, 10, 0.5), (8, 5, 0.25)])
def test_noiseless_line_is_recovered(wavelength, n_x, n_y, spacing_over_lambda):
    shape = _shape(n_x, n_y, spacing_over_lambda * wavelength, wavelength)
    theta = (0.23, -0.41)
    alpha = 0.7 * np.exp(0.4j)
    posterior = estimate_posterior(_line(shape, theta, alpha), UNIFORM, UNIFORM, shape, 0.0)
    assert posterior.converged
    np.testing.assert_allclose(posterior.theta_hat.as_array(), theta, atol=1e-7)
    assert posterior.post_x.mode_theta == pytest.approx(theta[0], abs=1e-7)
    assert posterior.post_y.mode_theta == pytest.approx(theta[1], abs=1e-7)
    assert posterior.alpha_hat == pytest.approx(alpha, rel=1e-6)
    assert posterior.post_x.kappa > 1e6


def test_concentration_grows_as_noise_shrinks(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    clean = _line(shape, (0.1, 0.3))
    noise = _noise(shape.n_antennas)
    kappas = []
    for scale in (0.3, 0.1, 0.03):
        posterior = estimate_posterior(
            clean + scale * noise, UNIFORM, UNIFORM, shape, scale**2
        )
        kappas.append((posterior.post_x.kappa, posterior.post_y.kappa))
    kappas = np.array(kappas)
    assert np.all(np.diff(kappas, axis=0) > 0)


def test_strong_prior_pulls_estimate(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    y = _line(shape, (0.2, -0.1)) + 0.3 * _noise(shape.n_antennas, seed=4)
    prior_x = VonMisesMsg(mu=np.pi * 0.25, kappa=1e7)
    posterior = estimate_posterior(y, prior_x, UNIFORM, shape, 0.09)
    assert posterior.theta_hat.theta_x == pytest.approx(0.25, abs=5e-3)
    assert posterior.theta_hat.theta_y == pytest.approx(-0.1, abs=0.02)
    assert posterior.post_x.kappa == pytest.approx(prior_x.kappa, rel=0.01)


def test_extrinsic_of_uniform_prior_is_posterior(wavelength):
    shape = _shape(6, 6, wavelength / 2, wavelength)
    y = _line(shape, (-0.3, 0.05)) + 0.1 * _noise(shape.n_antennas)
    posterior = estimate_posterior(y, UNIFORM, UNIFORM, shape, 0.01)
    extrinsic = extrinsic_message(posterior.post_x, UNIFORM)
    assert extrinsic.mu == pytest.approx(posterior.post_x.mu)
    assert extrinsic.kappa == pytest.approx(posterior.post_x.kappa)


def test_extrinsic_removes_informative_prior(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    theta = (0.15, 0.35)
    y = _line(shape, theta) + 0.05 * _noise(shape.n_antennas, seed=9)
    baseline = estimate_posterior(y, UNIFORM, UNIFORM, shape, 0.0025)
    prior_x = VonMisesMsg(mu=np.pi * theta[0], kappa=1e5)
    informed = estimate_posterior(y, prior_x, UNIFORM, shape, 0.0025)
    extrinsic = extrinsic_message(informed.post_x, prior_x)
    assert extrinsic.kappa == pytest.approx(baseline.post_x.kappa, rel=0.02)
    assert extrinsic.mode_theta == pytest.approx(baseline.post_x.mode_theta, abs=1e-5)


def test_wrong_signal_length_raises(wavelength):
    shape = _shape(4, 4, wavelength / 2, wavelength)
    with pytest.raises(ValueError, match="expected 16"):
        estimate_posterior(np.ones(15, dtype=complex), UNIFORM, UNIFORM, shape, 1.0)


def test_residual_variance_is_floored_at_noise(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    sigma2 = 0.04
    y = _line(shape, (0.0, 0.2)) + np.sqrt(sigma2) * _noise(shape.n_antennas, seed=2)
    posterior = estimate_posterior(y, UNIFORM, UNIFORM, shape, sigma2)
    residual = estimate_residual_var(y, posterior, shape, sigma2)
    assert sigma2 <= residual < 1.5 * sigma2
    assert posterior.residual_var == pytest.approx(residual)

    noiseless = estimate_posterior(_line(shape, (0.0, 0.2)), UNIFORM, UNIFORM, shape, 0.0)
    assert estimate_residual_var(_line(shape, (0.0, 0.2)), noiseless, shape, 0.0) < 1e-12


def test_refinement_never_loses_to_grid(wavelength):
    shape = _shape(8, 8, wavelength / 4, wavelength)
    y = _line(shape, (0.61, -0.17)) + 0.5 * _noise(shape.n_antennas, seed=5)
    prior = VonMisesMsg(mu=np.pi * 0.6, kappa=20.0)
    posterior = estimate_posterior(y, prior, prior, shape, 0.25)
    assert posterior.objective >= posterior.grid_objective


def test_unconverged_refinement_falls_back_to_grid(mocker, wavelength):
    shape = _shape(8, 8, wavelength / 2, wavelength)
    y = _line(shape, (0.33, 0.12)) + 0.2 * _noise(shape.n_antennas, seed=6)
    mocker.patch(
        "aple_core.aoa_estimation._newton_refine",
        side_effect=lambda objective, start, config: (np.array(start), False),
    )
    posterior = estimate_posterior(y, UNIFORM, UNIFORM, shape, 0.04)
    assert not posterior.converged
    assert posterior.objective == posterior.grid_objective
    assert posterior.post_x.kappa > 0
    assert posterior.post_x.mode_theta == pytest.approx(0.33, abs=0.05)


def test_objective_derivatives_match_finite_differences(wavelength):
    shape = _shape(7, 6, wavelength / 2, wavelength)
    y = _line(shape, (0.4, -0.2), 1.3) + 0.3 * _noise(shape.n_antennas, seed=8)
    objective = SingleToneObjective(
        y, shape, VonMisesMsg(1.0, 3.0), VonMisesMsg(-0.5, 7.0), 0.09, 1e6
    )
    theta = np.array([0.38, -0.17])
    value, gradient, hessian = objective.evaluate(theta)
    assert value == pytest.approx(objective.value(theta))

    step = 1e-6
    numeric_gradient = np.empty(2)
    numeric_hessian = np.empty((2, 2))
    for axis in range(2):
        offset = np.zeros(2)
        offset[axis] = step
        numeric_gradient[axis] = (
            objective.value(theta + offset) - objective.value(theta - offset)
        ) / (2 * step)
        numeric_hessian[:, axis] = (
            objective.evaluate(theta + offset)[1] - objective.evaluate(theta - offset)[1]
        ) / (2 * step)
    scale = np.linalg.norm(hessian)
    np.testing.assert_allclose(gradient, numeric_gradient, rtol=1e-5, atol=1e-6 * scale)
    np.testing.assert_allclose(hessian, numeric_hessian, rtol=1e-5, atol=1e-6 * scale)
    np.testing.assert_allclose(hessian, hessian.T)


def test_model_mismatch_shrinks_with_range(wavelength):
    d = wavelength / 2
    geometry = build_array(10, 10, d, d, wavelength, allow_even=True)
    plan = partition(geometry, 1, 1)
    shape = plan.subarray_shape
    direction = np.array([0.2, -0.1, np.sqrt(1 - 0.05)])
    relative = []
    for factor in (0.5, 1.0, 2.0, 4.0):
        y = near_field_channel(geometry, Scene(p_user=factor * plan.sub_fraunhofer * direction))
        posterior = estimate_posterior(y, UNIFORM, UNIFORM, shape, 0.0)
        residual = estimate_residual_var(y, posterior, shape, 0.0)
        relative.append(residual / np.mean(np.abs(y) ** 2))
    assert np.all(np.diff(relative) < 0)


def test_pure_noise_residual_matches_noise_power(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    assert shape.n_antennas == 100
    residuals = []
    for seed in range(20):
        y = _noise(100, seed)
        posterior = estimate_posterior(y, UNIFORM, UNIFORM, shape, 0.0)
        residuals.append(estimate_residual_var(y, posterior, shape, 0.0))
    assert np.mean(residuals) == pytest.approx(1.0, rel=0.2)


def test_concentration_is_inverse_to_noise_variance(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    clean = _line(shape, (0.1, 0.3))
    noise = _noise(shape.n_antennas, seed=1)
    variances = np.logspace(-4, -2, 5)
    kappas = [
        estimate_posterior(clean + np.sqrt(v) * noise, UNIFORM, UNIFORM, shape, v).post_x.kappa
        for v in variances
    ]
    slope = np.polyfit(np.log(variances), np.log(kappas), 1)[0]
    assert slope == pytest.approx(-1.0, rel=0.1)


def test_on_grid_shift_moves_estimate_by_the_shift(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    thetas, _, _ = _axis_grid(shape.n_x, shape.d_x, shape.wavelength, 4)
    step = float(thetas[1] - thetas[0])
    delta = (3 * step, -2 * step)
    y = _line(shape, (0.21, 0.07), 0.8) + 0.2 * _noise(shape.n_antennas, seed=3)
    shifted = y * _line(shape, delta)
    base = estimate_posterior(y, UNIFORM, UNIFORM, shape, 0.04)
    moved = estimate_posterior(shifted, UNIFORM, UNIFORM, shape, 0.04)
    np.testing.assert_allclose(
        moved.theta_hat.as_array() - base.theta_hat.as_array(), delta, atol=1e-8
    )
    assert moved.post_x.kappa == pytest.approx(base.post_x.kappa, rel=1e-6)


def test_strong_prior_dominates_weak_signal(wavelength):
    shape = _shape(10, 10, wavelength / 2, wavelength)
    # -20 dB per antenna
    sigma2 = 100.0
    y = _line(shape, (0.1, 0.1)) + np.sqrt(sigma2) * _noise(shape.n_antennas, seed=7)
    prior_x = VonMisesMsg(mu=np.pi * 0.5, kappa=1e6)
    posterior = estimate_posterior(y, prior_x, UNIFORM, shape, sigma2)
    assert posterior.post_x.mode_theta == pytest.approx(0.5, abs=1e-3)
    assert posterior.theta_hat.theta_x == pytest.approx(0.5, abs=1e-3)
