"""
Per-subarray Bayesian AoA estimation and extrinsic message extraction.

Each subarray sees a single spectral line y_m = alpha_m a(theta_x, theta_y) + n_m.
The posterior of the two direction cosines is found with a prior-weighted
zero-padded periodogram, refined jointly by Newton's method and summarized per
axis by a Laplace-matched von Mises message. Any estimator returning an
`AoaPosterior` for the same inputs can replace `estimate_posterior`.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy import fft

from aple_core.channel import steering_vector
from aple_core.data_models.models import AoaEstimatorConfig
from aple_core.geometry import AoaPair, SubarrayShape, centered_indices
from aple_core.utils.utils import ascent_direction
from aple_core.vonmises import KAPPA_FLOOR, VonMisesMsg, vm_combine, vm_from_laplace


@dataclass(frozen=True, eq=False)
class AoaPosterior:
    """
    Laplace/VM posterior of one subarray's direction cosines.

    `objective` and `grid_objective` are the log-posterior at the refined point
    and at the best coarse grid point, both under the final variance.
    """

    post_x: VonMisesMsg
    post_y: VonMisesMsg
    alpha_hat: complex
    residual_var: float
    theta_hat: AoaPair
    converged: bool = True
    objective: float = float("nan")
    grid_objective: float = float("nan")


class SingleToneObjective:
    """
    Log-posterior of (theta_x, theta_y) with the gain concentrated out.

    L(theta) = |a(theta)^H y|^2 / (s^2 (N + eps)) + log-prior_x + log-prior_y,
    where eps = s^2 / sigma_alpha^2 is the ridge from the complex Gaussian gain
    prior. Up to a constant this is -||y - alpha_hat a||^2 / s^2 plus the priors.
    """

    def __init__(
        self,
        y_m: np.ndarray,
        shape: SubarrayShape,
        prior_x: VonMisesMsg,
        prior_y: VonMisesMsg,
        variance: float,
        gain_prior_var: float,
    ):
        self.shape = shape
        self.samples = np.asarray(y_m, dtype=complex).reshape(shape.n_x, shape.n_y)
        self.p = centered_indices(shape.n_x)
        self.q = centered_indices(shape.n_y)
        self.c_x = 2.0 * np.pi * shape.d_x / shape.wavelength
        self.c_y = 2.0 * np.pi * shape.d_y / shape.wavelength
        self.priors = (prior_x, prior_y)
        self.variance = variance
        self.ridge = shape.n_antennas + variance / gain_prior_var
        self.weight = 1.0 / (variance * self.ridge)

    def _prior_terms(self, theta: np.ndarray):
        values = np.empty(2)
        slopes = np.empty(2)
        curvatures = np.empty(2)
        for axis, prior in enumerate(self.priors):
            phase = np.pi * theta[axis] - prior.mu
            values[axis] = prior.kappa * np.cos(phase)
            slopes[axis] = -prior.kappa * np.pi * np.sin(phase)
            curvatures[axis] = -prior.kappa * np.pi**2 * np.cos(phase)
        return values, slopes, curvatures

    def correlation(self, theta: np.ndarray) -> complex:
        """a(theta)^H y"""
        e_x = np.exp(-1j * self.c_x * theta[0] * self.p)
        e_y = np.exp(-1j * self.c_y * theta[1] * self.q)
        return complex(e_x @ (self.samples @ e_y))

    def value(self, theta: np.ndarray) -> float:
        prior_values, _, _ = self._prior_terms(theta)
        return float(
            self.weight * abs(self.correlation(theta)) ** 2 + np.sum(prior_values)
        )

    def evaluate(self, theta: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """
        Value, gradient and Hessian of L at theta.
        """
        e_x = np.exp(-1j * self.c_x * theta[0] * self.p)
        e_y = np.exp(-1j * self.c_y * theta[1] * self.q)
        y_e = self.samples @ e_y
        y_qe = self.samples @ (self.q * e_y)
        y_qqe = self.samples @ (self.q**2 * e_y)
        pe_x = self.p * e_x

        g = e_x @ y_e
        g_x = -1j * self.c_x * (pe_x @ y_e)
        g_y = -1j * self.c_y * (e_x @ y_qe)
        g_xx = -(self.c_x**2) * ((self.p * pe_x) @ y_e)
        g_yy = -(self.c_y**2) * (e_x @ y_qqe)
        g_xy = -self.c_x * self.c_y * (pe_x @ y_qe)

        power = abs(g) ** 2
        gradient = 2.0 * np.array(
            [np.real(np.conj(g) * g_x), np.real(np.conj(g) * g_y)]
        )
        h_xx = 2.0 * (abs(g_x) ** 2 + np.real(np.conj(g) * g_xx))
        h_yy = 2.0 * (abs(g_y) ** 2 + np.real(np.conj(g) * g_yy))
        h_xy = 2.0 * np.real(np.conj(g_y) * g_x + np.conj(g) * g_xy)
        hessian = np.array([[h_xx, h_xy], [h_xy, h_yy]])

        prior_values, prior_slopes, prior_curvatures = self._prior_terms(theta)
        value = self.weight * power + np.sum(prior_values)
        gradient = self.weight * gradient + prior_slopes
        hessian = self.weight * hessian + np.diag(prior_curvatures)
        return float(value), gradient, hessian

    def gain(self, theta: np.ndarray) -> complex:
        """Ridge least-squares gain a^H y / (N + eps)."""
        return self.correlation(theta) / self.ridge


def _axis_grid(n: int, spacing: float, wavelength: float, pad_factor: int):
    """
    Direction cosines in [-1, 1] reachable on a zero-padded FFT axis, and their bins.
    """
    n_fft = fft.next_fast_len(
        int(np.ceil(pad_factor * n * max(1.0, wavelength / (2.0 * spacing))))
    )
    step = wavelength / (n_fft * spacing)
    k_max = int(np.floor(1.0 / step))
    ks = np.arange(-k_max, k_max + 1)
    return ks * step, np.mod(ks, n_fft), n_fft


def _coarse_search(objective: SingleToneObjective, pad_factor: int):
    shape = objective.shape
    thetas_x, bins_x, n_fft_x = _axis_grid(
        shape.n_x, shape.d_x, shape.wavelength, pad_factor
    )
    thetas_y, bins_y, n_fft_y = _axis_grid(
        shape.n_y, shape.d_y, shape.wavelength, pad_factor
    )
    spectrum = fft.fft2(objective.samples, s=(n_fft_x, n_fft_y))
    power = np.abs(spectrum[np.ix_(bins_x, bins_y)]) ** 2
    prior_x, prior_y = objective.priors
    surface = (
        objective.weight * power
        + (prior_x.kappa * np.cos(np.pi * thetas_x - prior_x.mu))[:, None]
        + (prior_y.kappa * np.cos(np.pi * thetas_y - prior_y.mu))[None, :]
    )
    best = np.unravel_index(int(np.argmax(surface)), surface.shape)
    return np.array([thetas_x[best[0]], thetas_y[best[1]]])


def _newton_refine(
    objective: SingleToneObjective, start: np.ndarray, config: AoaEstimatorConfig
) -> Tuple[np.ndarray, bool]:
    theta = np.clip(start, -1.0, 1.0)
    value, gradient, hessian = objective.evaluate(theta)
    for _ in range(config.newton_cap):
        if np.linalg.norm(gradient) <= config.grad_tol * max(1.0, np.linalg.norm(hessian)):
            return theta, True
        direction = ascent_direction(gradient, hessian)
        slope = float(gradient @ direction)
        step = 1.0
        while step > 1e-12:
            candidate = np.clip(theta + step * direction, -1.0, 1.0)
            candidate_value = objective.value(candidate)
            if candidate_value >= value + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            # no uphill step left at working precision
            return theta, True
        moved = float(np.linalg.norm(candidate - theta))
        theta = candidate
        value, gradient, hessian = objective.evaluate(theta)
        if moved < config.step_tol:
            return theta, True
    return theta, False


def _finite_difference_curvature(
    objective: SingleToneObjective, theta: np.ndarray
) -> np.ndarray:
    shape = objective.shape
    curvature = np.empty(2)
    base = objective.value(theta)
    for axis, (n, spacing) in enumerate(
        ((shape.n_x, shape.d_x), (shape.n_y, shape.d_y))
    ):
        step = 1e-3 * shape.wavelength / (max(n, 1) * spacing)
        offset = np.zeros(2)
        offset[axis] = step
        upper = objective.value(np.clip(theta + offset, -1.0, 1.0))
        lower = objective.value(np.clip(theta - offset, -1.0, 1.0))
        curvature[axis] = -(upper - 2.0 * base + lower) / step**2
    return curvature


def estimate_residual_var(
    y_m: np.ndarray, fit: AoaPosterior, shape: SubarrayShape, sigma2: float
) -> float:
    """
    Per-antenna variance left after removing the fitted line, floored at sigma^2.

    Args:
        y_m (np.ndarray): Subarray signal.
        fit (AoaPosterior): Result of `estimate_posterior`.
        shape (SubarrayShape): Subarray shape.
        sigma2 (float): Known noise variance.

    Returns:
        float: max(sigma^2, ||y_m - alpha_hat a(theta_hat)||^2 / N_m).
    """
    model = fit.alpha_hat * steering_vector(
        shape.n_x, shape.n_y, shape.d_x, shape.d_y, shape.wavelength, fit.theta_hat
    )
    return _residual(y_m, model, sigma2)


def _residual(y_m: np.ndarray, model: np.ndarray, sigma2: float) -> float:
    return max(float(sigma2), float(np.mean(np.abs(y_m - model) ** 2)))


def _line_model(objective: SingleToneObjective, theta: np.ndarray) -> np.ndarray:
    shape = objective.shape
    return objective.gain(theta) * steering_vector(
        shape.n_x, shape.n_y, shape.d_x, shape.d_y, shape.wavelength, AoaPair(*theta)
    )


def estimate_posterior(
    y_m: np.ndarray,
    prior_x: VonMisesMsg,
    prior_y: VonMisesMsg,
    shape: SubarrayShape,
    sigma2: float,
    config: Optional[AoaEstimatorConfig] = None,
) -> AoaPosterior:
    """
    Posterior of a subarray's direction cosines given its signal and VM priors.

    Coarse prior-weighted periodogram, joint Newton refinement, then one VM per
    axis from the diagonal of the negative Hessian. The likelihood variance is
    refitted once from the residual so that far-field model mismatch widens the
    posterior.

    Args:
        y_m (np.ndarray): Subarray signal of length N_m.
        prior_x (VonMisesMsg): Prior of theta_x.
        prior_y (VonMisesMsg): Prior of theta_y.
        shape (SubarrayShape): Subarray shape.
        sigma2 (float): Known noise variance.
        config (AoaEstimatorConfig, optional): Estimator settings.

    Returns:
        AoaPosterior: VM posteriors, gain estimate and fitted residual variance.

    Raises:
        ValueError: If y_m does not match the subarray size.
    """
    config = config or AoaEstimatorConfig()
    y_m = np.asarray(y_m, dtype=complex)
    if y_m.shape != (shape.n_antennas,):
        raise ValueError(
            f"Subarray signal has {y_m.size} samples, expected {shape.n_antennas}."
        )

    power = float(np.mean(np.abs(y_m) ** 2))
    floor = max(config.relative_variance_floor * power, np.finfo(float).tiny)
    gain_prior_var = max(config.gain_prior_scale * power, np.finfo(float).tiny)

    objective = SingleToneObjective(
        y_m, shape, prior_x, prior_y, max(sigma2, floor), gain_prior_var
    )
    grid_theta = _coarse_search(objective, config.pad_factor)
    theta, converged = _newton_refine(objective, grid_theta, config)
    residual_var = _residual(y_m, _line_model(objective, theta), sigma2)

    variance = max(residual_var, floor)
    if variance > objective.variance * (1.0 + 1e-9):
        objective = SingleToneObjective(
            y_m, shape, prior_x, prior_y, variance, gain_prior_var
        )
        if prior_x.kappa > 0 or prior_y.kappa > 0:
            start = max((theta, grid_theta), key=objective.value)
            theta, converged = _newton_refine(objective, start, config)

    if converged:
        _, _, hessian = objective.evaluate(theta)
        curvature = -np.diag(hessian)
    else:
        logger.warning(
            f"AoA Newton refinement did not converge in {config.newton_cap} steps; "
            "falling back to the coarse grid point"
        )
        theta = grid_theta
        curvature = _finite_difference_curvature(objective, theta)

    minimum_curvature = KAPPA_FLOOR * np.pi**2
    curvature = np.maximum(curvature, minimum_curvature)
    theta_hat = AoaPair(float(theta[0]), float(theta[1]))
    alpha_hat = objective.gain(theta)
    residual_var = _residual(y_m, _line_model(objective, theta), sigma2)
    return AoaPosterior(
        post_x=vm_from_laplace(theta[0], curvature[0]),
        post_y=vm_from_laplace(theta[1], curvature[1]),
        alpha_hat=alpha_hat,
        residual_var=residual_var,
        theta_hat=theta_hat,
        converged=converged,
        objective=objective.value(theta),
        grid_objective=objective.value(grid_theta),
    )


def extrinsic_message(posterior: VonMisesMsg, prior: VonMisesMsg) -> VonMisesMsg:
    """
    Extrinsic AoA message: the posterior divided by the incoming prior.
    """
    return vm_combine(posterior, prior, -1)
