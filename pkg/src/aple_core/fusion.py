"""
AoA fusion: the location belief built from von Mises AoA messages, its MAP point
and Hessian covariance, and the feedback messages sent back to the AoA variables.

The belief of the user location given the extrinsic AoA messages is

    h(p) = sum_{m,l} kappa_{m,l} cos(pi theta_{m,l}(p) - mu_{m,l}),

with theta_{m,l}(p) = (p - p_BS,m)^T e_l / ||p - p_BS,m||. The message to the
factor (m, l) leaves its own term out.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from aple_core.data_models.models import FusionConfig
from aple_core.utils.utils import ascent_direction
from aple_core.vonmises import VonMisesMsg

AXES = np.eye(3)[:2]

MessageKey = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class MessageSet:
    """
    The 2M extrinsic AoA messages, row m holding the x and y messages of
    the subarray centered at `centers[m]`.
    """

    centers: np.ndarray
    mu: np.ndarray
    kappa: np.ndarray

    @classmethod
    def from_messages(
        cls,
        centers: np.ndarray,
        messages: Sequence[Tuple[VonMisesMsg, VonMisesMsg]],
    ) -> "MessageSet":
        mu = np.array([[msg.mu for msg in pair] for pair in messages], dtype=float)
        kappa = np.array([[msg.kappa for msg in pair] for pair in messages], dtype=float)
        return cls(centers=np.atleast_2d(np.asarray(centers, dtype=float)), mu=mu, kappa=kappa)

    def message(self, m: int, l: int) -> VonMisesMsg:
        return VonMisesMsg(mu=self.mu[m, l], kappa=self.kappa[m, l])

    def scaled(self, factor: float) -> "MessageSet":
        return MessageSet(centers=self.centers, mu=self.mu, kappa=self.kappa * factor)

    def total_kappa(self, exclude: Optional[MessageKey] = None) -> float:
        total = float(np.sum(self.kappa))
        if exclude is not None:
            total -= float(self.kappa[exclude])
        return total


@dataclass(frozen=True, eq=False)
class GaussianBelief3D:
    """
    Gaussian approximation N(mean, cov) of the location message.
    """

    mean: np.ndarray
    cov: np.ndarray
    ill_conditioned: bool = False


@dataclass(frozen=True, eq=False)
class FeedbackGeometry:
    """
    u_bar = p_BS,m - mean, v the unit vector orthogonal to u_bar in span{u_bar, e_l},
    theta_bar the AoA at the belief mean.
    """

    u_bar: np.ndarray
    v: np.ndarray
    theta_bar: float


@dataclass(frozen=True, eq=False)
class MapResult:
    """
    Outcome of one belief ascent.
    """

    point: np.ndarray
    value: float
    gradient_norm: float
    iterations: int
    converged: bool


def _terms(
    point: np.ndarray, messages: MessageSet, with_hessian: bool
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    offsets = np.asarray(point, dtype=float) - messages.centers
    distances = np.linalg.norm(offsets, axis=1)
    if np.any(distances <= 0.0):
        raise ValueError("Location coincides with a subarray center.")
    units = offsets / distances[:, None]
    thetas = units[:, :2]
    phases = np.pi * thetas - messages.mu
    values = messages.kappa * np.cos(phases)
    slopes = -messages.kappa * np.pi * np.sin(phases)
    # d theta_{m,l} / d p = (e_l - theta_{m,l} u_m) / r_m
    theta_grads = (
        AXES[None, :, :] - thetas[:, :, None] * units[:, None, :]
    ) / distances[:, None, None]
    gradients = slopes[:, :, None] * theta_grads
    if not with_hessian:
        return values, gradients, None

    outer_axis_unit = AXES[None, :, :, None] * units[:, None, None, :]
    theta_hessians = (
        -outer_axis_unit
        - np.swapaxes(outer_axis_unit, 2, 3)
        - thetas[:, :, None, None] * np.eye(3)[None, None, :, :]
        + 3.0 * thetas[:, :, None, None] * (units[:, :, None] * units[:, None, :])[:, None, :, :]
    ) / (distances**2)[:, None, None, None]
    curvatures = -messages.kappa * np.pi**2 * np.cos(phases)
    hessians = curvatures[:, :, None, None] * (
        theta_grads[:, :, :, None] * theta_grads[:, :, None, :]
    ) + slopes[:, :, None, None] * theta_hessians
    return values, gradients, hessians


def _reduce(terms: np.ndarray, exclude: Optional[MessageKey]) -> np.ndarray:
    total = terms.sum(axis=(0, 1))
    if exclude is not None:
        total = total - terms[exclude]
    return total


def location_log_belief(
    point: np.ndarray, messages: MessageSet, exclude: Optional[MessageKey] = None
) -> Tuple[float, np.ndarray]:
    """
    Log-belief h(p) and its gradient, leaving out message `exclude` if given.

    Args:
        point (np.ndarray): Location (3,).
        messages (MessageSet): AoA messages and subarray centers.
        exclude (Tuple[int, int], optional): (m, l) of the term to leave out.

    Returns:
        Tuple[float, np.ndarray]: Value and gradient.

    Raises:
        ValueError: If the point coincides with a subarray center.
    """
    values, gradients, _ = _terms(point, messages, with_hessian=False)
    return float(_reduce(values, exclude)), _reduce(gradients, exclude)


def location_log_belief_hessian(
    point: np.ndarray, messages: MessageSet, exclude: Optional[MessageKey] = None
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Value, gradient and Hessian of the log-belief.
    """
    values, gradients, hessians = _terms(point, messages, with_hessian=True)
    return (
        float(_reduce(values, exclude)),
        _reduce(gradients, exclude),
        _reduce(hessians, exclude),
    )


def _batch_values(points: np.ndarray, messages: MessageSet) -> np.ndarray:
    offsets = points[:, None, :] - messages.centers[None, :, :]
    distances = np.linalg.norm(offsets, axis=2)
    thetas = offsets[:, :, :2] / distances[:, :, None]
    return np.sum(
        messages.kappa[None] * np.cos(np.pi * thetas - messages.mu[None]), axis=(1, 2)
    )


def initialize_location(
    messages: MessageSet, r_min: float, r_max: float, config: Optional[FusionConfig] = None
) -> np.ndarray:
    """
    Best starting points of the belief ascent on a coarse grid.

    The grid crosses a square of direction cosines, cut to the cone of sine
    `init_max_sine`, with log-spaced ranges in [r_min, r_max].

    Args:
        messages (MessageSet): AoA messages.
        r_min (float): Smallest range (m).
        r_max (float): Largest range (m).
        config (FusionConfig, optional): Grid sizes.

    Returns:
        np.ndarray: (K, 3) grid points, highest belief first.
    """
    config = config or FusionConfig()
    r_min = config.init_r_min or r_min
    r_max = config.init_r_max or r_max
    sines = np.linspace(-config.init_max_sine, config.init_max_sine, config.init_angles)
    u_x, u_y = np.meshgrid(sines, sines, indexing="ij")
    inside = u_x**2 + u_y**2 <= config.init_max_sine**2
    directions = np.column_stack(
        [u_x[inside], u_y[inside], np.sqrt(1.0 - u_x[inside] ** 2 - u_y[inside] ** 2)]
    )
    ranges = np.geomspace(r_min, r_max, config.init_ranges)
    points = (ranges[:, None, None] * directions[None, :, :]).reshape(-1, 3)
    order = np.argsort(-_batch_values(points, messages), kind="stable")
    return points[order[: config.init_candidates]]


def map_location(
    messages: MessageSet,
    init_point: np.ndarray,
    config: Optional[FusionConfig] = None,
    exclude: Optional[MessageKey] = None,
) -> MapResult:
    """
    Local maximizer of the log-belief by preconditioned gradient ascent.

    Each step follows the gradient preconditioned by the eigen-floored negative
    Hessian, limited to a quarter of the distance to the nearest subarray center,
    with Armijo backtracking. The belief is symmetric under z -> -z; iterates are
    kept in z >= 0.

    Args:
        messages (MessageSet): AoA messages.
        init_point (np.ndarray): Starting location.
        config (FusionConfig, optional): Tolerances and iteration cap.
        exclude (Tuple[int, int], optional): Message left out of the belief.

    Returns:
        MapResult: The local maximizer and convergence information.
    """
    config = config or FusionConfig()
    point = np.array(init_point, dtype=float)
    point[2] = abs(point[2])
    scale = max(
        float(np.linalg.norm(point)),
        float(np.max(np.linalg.norm(messages.centers, axis=1))),
        1e-12,
    )
    gradient_limit = config.grad_tol * max(1.0, messages.total_kappa(exclude))

    value, gradient, hessian = location_log_belief_hessian(point, messages, exclude)
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        if np.linalg.norm(gradient) <= gradient_limit:
            converged = True
            break
        direction = ascent_direction(gradient, hessian)
        nearest = float(np.min(np.linalg.norm(messages.centers - point, axis=1)))
        length = float(np.linalg.norm(direction))
        if length > 0.25 * nearest:
            direction *= 0.25 * nearest / length
        slope = float(gradient @ direction)

        step = 1.0
        while step > 1e-12:
            candidate = point + step * direction
            candidate[2] = abs(candidate[2])
            try:
                candidate_value, _ = location_log_belief(candidate, messages, exclude)
            except ValueError:
                candidate_value = -np.inf
            if candidate_value >= value + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            converged = True
            break

        moved = float(np.linalg.norm(candidate - point))
        point = candidate
        value, gradient, hessian = location_log_belief_hessian(point, messages, exclude)
        if np.linalg.norm(point) > config.divergence_factor * scale:
            logger.warning(f"Belief ascent diverged to ||p|| = {np.linalg.norm(point):.3e} m")
            break
        if moved < config.step_tol:
            converged = True
            break

    if not converged:
        logger.debug(f"Belief ascent stopped after {iteration} iterations without converging")
    return MapResult(
        point=point,
        value=value,
        gradient_norm=float(np.linalg.norm(gradient)),
        iterations=iteration,
        converged=converged,
    )


def best_map_location(
    messages: MessageSet,
    init_points: Iterable[np.ndarray],
    config: Optional[FusionConfig] = None,
    exclude: Optional[MessageKey] = None,
) -> MapResult:
    """
    Run `map_location` from several starts and keep the highest belief.
    """
    results: List[MapResult] = [
        map_location(messages, start, config, exclude) for start in init_points
    ]
    return max(results, key=lambda result: result.value)


def belief_covariance(
    p_hat: np.ndarray,
    messages: MessageSet,
    config: Optional[FusionConfig] = None,
    exclude: Optional[MessageKey] = None,
) -> GaussianBelief3D:
    """
    Gaussian belief at a maximizer: C = (-H)^-1 with eigenvalues of -H floored.

    Args:
        p_hat (np.ndarray): Local maximizer of the log-belief.
        messages (MessageSet): AoA messages.
        config (FusionConfig, optional): Provides the eigenvalue floor.
        exclude (Tuple[int, int], optional): Message left out of the belief.

    Returns:
        GaussianBelief3D: Mean p_hat and the floored covariance; flagged
        ill-conditioned when any eigenvalue hit the floor.
    """
    config = config or FusionConfig()
    _, _, hessian = location_log_belief_hessian(p_hat, messages, exclude)
    eigenvalues, eigenvectors = np.linalg.eigh(-0.5 * (hessian + hessian.T))
    ill_conditioned = bool(np.any(eigenvalues < config.hessian_floor))
    floored = np.maximum(eigenvalues, config.hessian_floor)
    cov = (eigenvectors / floored) @ eigenvectors.T
    if ill_conditioned:
        logger.debug(f"Location belief curvature floored (eigenvalues {eigenvalues})")
    return GaussianBelief3D(
        mean=np.array(p_hat, dtype=float),
        cov=0.5 * (cov + cov.T),
        ill_conditioned=ill_conditioned,
    )


def feedback_geometry(
    axis: np.ndarray, belief: GaussianBelief3D, center: np.ndarray
) -> Optional[FeedbackGeometry]:
    """
    u_bar, v and theta_bar for an AoA axis; None when u_bar is parallel to the axis.

    Raises:
        ValueError: If the belief mean coincides with the center.
    """
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    u_bar = np.asarray(center, dtype=float) - belief.mean
    distance = float(np.linalg.norm(u_bar))
    if distance == 0.0:
        raise ValueError("Belief mean coincides with the subarray center.")
    theta_bar = float(np.clip(-(u_bar @ axis) / distance, -1.0, 1.0))
    normal = np.cross(np.cross(u_bar, axis), u_bar)
    normal_length = float(np.linalg.norm(normal))
    if normal_length <= 1e-12 * distance**2:
        return None
    return FeedbackGeometry(u_bar=u_bar, v=normal / normal_length, theta_bar=theta_bar)


def feedback_from_axis(
    axis: np.ndarray,
    belief: GaussianBelief3D,
    center: np.ndarray,
    kappa_cap: float = 1e10,
) -> VonMisesMsg:
    """
    VM message for the AoA along `axis` implied by a Gaussian location belief.

    mu = pi theta_bar and kappa = ||u_bar||^2 / (pi^2 (1 - theta_bar^2) v^T C v),
    obtained by matching the curvature of the projected Gaussian at theta_bar.
    Degenerate geometry returns a message with kappa = kappa_cap.
    """
    geometry = feedback_geometry(axis, belief, center)
    if geometry is None:
        u_bar = np.asarray(center, dtype=float) - belief.mean
        theta_bar = float(np.clip(-(u_bar @ axis) / np.linalg.norm(u_bar), -1.0, 1.0))
        return VonMisesMsg(mu=np.pi * theta_bar, kappa=kappa_cap)
    theta_bar = geometry.theta_bar
    spread = float(geometry.v @ belief.cov @ geometry.v)
    if abs(theta_bar) > 1.0 - 1e-9 or spread <= 0.0:
        return VonMisesMsg(mu=np.pi * theta_bar, kappa=kappa_cap)
    kappa = float(geometry.u_bar @ geometry.u_bar) / (
        np.pi**2 * (1.0 - theta_bar**2) * spread
    )
    return VonMisesMsg(mu=np.pi * theta_bar, kappa=min(kappa, kappa_cap))


def feedback_message(
    m: int,
    l: int,
    belief: GaussianBelief3D,
    center: np.ndarray,
    config: Optional[FusionConfig] = None,
) -> VonMisesMsg:
    """
    Message from the geometric factor (m, l) to theta_{m,l}.

    Args:
        m (int): Subarray index.
        l (int): 0 for the x axis, 1 for the y axis.
        belief (GaussianBelief3D): Location message with (m, l) left out.
        center (np.ndarray): Center of subarray m.
        config (FusionConfig, optional): Provides the concentration cap.

    Returns:
        VonMisesMsg: The feedback message.

    Raises:
        ValueError: If m is negative or l is not 0 or 1.
    """
    if m < 0 or l not in (0, 1):
        raise ValueError(f"Invalid factor index (m={m}, l={l}).")
    config = config or FusionConfig()
    message = feedback_from_axis(AXES[l], belief, center, config.kappa_cap)
    if message.kappa >= config.kappa_cap:
        logger.debug(f"Feedback to theta_({m},{'xy'[l]}) at the concentration cap")
    return message
