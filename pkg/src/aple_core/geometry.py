"""
Array geometry: uniform planar arrays, near/far-field boundaries, partitioning
into subarrays and the AoA geometry tying a location to direction cosines.

All positions are in meters, in the array frame: the array lies in the
z = 0 plane, centered at the origin, with its sides along the x and y axes.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from loguru import logger

SPEED_OF_LIGHT = 3.0e8


def wavelength_from_frequency(frequency_hz: float) -> float:
    """
    Carrier wavelength for a frequency, using c = 3e8 m/s.

    Args:
        frequency_hz (float): Carrier frequency in Hz.

    Returns:
        float: Wavelength in meters.

    Raises:
        ValueError: If the frequency is not positive.
    """
    if frequency_hz <= 0:
        raise ValueError(f"frequency_hz must be positive, got {frequency_hz}.")
    return SPEED_OF_LIGHT / frequency_hz


def centered_indices(n: int) -> np.ndarray:
    """
    Index set {-(n-1)/2, ..., (n-1)/2}. Half-integer steps when n is even.
    """
    return np.arange(n, dtype=float) - (n - 1) / 2.0


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """
    A uniform planar array. `positions` is (n_x * n_y, 3), row-major over (i, j).
    """

    n_x: int
    n_y: int
    d_x: float
    d_y: float
    wavelength: float
    positions: np.ndarray = field(repr=False)

    @property
    def n_antennas(self) -> int:
        return self.n_x * self.n_y

    @property
    def aperture(self) -> Tuple[float, float]:
        return self.n_x * self.d_x, self.n_y * self.d_y


@dataclass(frozen=True)
class FieldBoundaries:
    """
    Fresnel distance, Fraunhofer distance and largest dimension of an aperture.
    """

    fresnel: float
    fraunhofer: float
    aperture: float


@dataclass(frozen=True)
class SubarrayShape:
    """
    Shape of one subarray, everything an AoA estimator needs about it.
    """

    n_x: int
    n_y: int
    d_x: float
    d_y: float
    wavelength: float

    @property
    def n_antennas(self) -> int:
        return self.n_x * self.n_y


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """
    Partition of an array into m_x * m_y contiguous rectangular subarrays.

    Subarray m = bx * m_y + by covers block (bx, by). `index_map[m]` lists the
    flat antenna indices of subarray m in row-major (p, q) order, the same order
    used by `channel.steering_vector`.
    """

    m_x: int
    m_y: int
    sub_nx: int
    sub_ny: int
    d_x: float
    d_y: float
    wavelength: float
    centers: np.ndarray = field(repr=False)
    index_map: np.ndarray = field(repr=False)
    sub_fraunhofer: float

    @property
    def m_count(self) -> int:
        return self.m_x * self.m_y

    @property
    def subarray_shape(self) -> SubarrayShape:
        return SubarrayShape(
            n_x=self.sub_nx,
            n_y=self.sub_ny,
            d_x=self.d_x,
            d_y=self.d_y,
            wavelength=self.wavelength,
        )


@dataclass(frozen=True)
class AoaPair:
    """
    Direction cosines of the user seen from a subarray.

    theta_x = cos(omega) sin(phi), theta_y = sin(omega) sin(phi).
    """

    theta_x: float
    theta_y: float

    def __post_init__(self):
        if abs(self.theta_x) > 1.0 + 1e-12 or abs(self.theta_y) > 1.0 + 1e-12:
            raise ValueError(
                f"Direction cosines must lie in [-1, 1], got ({self.theta_x}, {self.theta_y})."
            )

    @property
    def azimuth(self) -> float:
        return float(np.arctan2(self.theta_y, self.theta_x))

    @property
    def elevation(self) -> float:
        return float(np.arcsin(min(1.0, np.hypot(self.theta_x, self.theta_y))))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_x, self.theta_y])


@dataclass(frozen=True, eq=False)
class FarFieldReport:
    """
    Per-subarray check of the subarray far-field assumption R_m,F < r_m.
    """

    distances: np.ndarray
    limit: float
    passes: np.ndarray
    all_pass: bool

    @property
    def shortest_distance(self) -> float:
        return float(np.min(self.distances))


def _aperture_boundaries(
    length_x: float, length_y: float, wavelength: float
) -> FieldBoundaries:
    aperture = float(np.hypot(length_x, length_y))
    return FieldBoundaries(
        fresnel=0.62 * np.sqrt(aperture**3 / wavelength),
        fraunhofer=2.0 * aperture**2 / wavelength,
        aperture=aperture,
    )


def build_array(
    n_x: int,
    n_y: int,
    d_x: float,
    d_y: float,
    wavelength: float,
    allow_even: bool = False,
) -> ArrayGeometry:
    """
    Build a uniform planar array centered at the origin.

    Args:
        n_x (int): Antennas along x.
        n_y (int): Antennas along y.
        d_x (float): Spacing along x in meters.
        d_y (float): Spacing along y in meters.
        wavelength (float): Carrier wavelength in meters.
        allow_even (bool): Accept even counts, using the half-integer index set.

    Returns:
        ArrayGeometry: The array, antenna (i, j) at [i*d_x, j*d_y, 0].

    Raises:
        ValueError: If a count is not positive, is even without `allow_even`,
                    or a spacing or the wavelength is not positive.
    """
    for name, count in (("n_x", n_x), ("n_y", n_y)):
        if int(count) != count or count < 1:
            raise ValueError(f"{name} must be a positive integer, got {count}.")
        if count % 2 == 0 and not allow_even:
            raise ValueError(
                f"{name}={count} is even; the index set assumes odd counts "
                "(pass allow_even=True for the half-integer index set)."
            )
    for name, value in (("d_x", d_x), ("d_y", d_y), ("wavelength", wavelength)):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}.")

    grid_i, grid_j = np.meshgrid(
        centered_indices(n_x), centered_indices(n_y), indexing="ij"
    )
    positions = np.column_stack(
        [grid_i.ravel() * d_x, grid_j.ravel() * d_y, np.zeros(n_x * n_y)]
    )
    return ArrayGeometry(
        n_x=int(n_x),
        n_y=int(n_y),
        d_x=float(d_x),
        d_y=float(d_y),
        wavelength=float(wavelength),
        positions=positions,
    )


def field_boundaries(geometry: ArrayGeometry) -> FieldBoundaries:
    """
    Fresnel (0.62 sqrt(D^3 / lambda)) and Fraunhofer (2 D^2 / lambda) distances.

    Args:
        geometry (ArrayGeometry): The array.

    Returns:
        FieldBoundaries: R_N, R_F and D = sqrt(L_x^2 + L_y^2) with L = N d.
    """
    length_x, length_y = geometry.aperture
    return _aperture_boundaries(length_x, length_y, geometry.wavelength)


def partition(geometry: ArrayGeometry, m_x: int, m_y: int) -> PartitionPlan:
    """
    Partition the array into an m_x by m_y grid of equal subarrays.

    Args:
        geometry (ArrayGeometry): The array to partition.
        m_x (int): Number of blocks along x; must divide n_x.
        m_y (int): Number of blocks along y; must divide n_y.

    Returns:
        PartitionPlan: Index maps, centers and subarray Fraunhofer distance.

    Raises:
        ValueError: If a factor is not positive or does not divide its axis.
    """
    for axis, blocks, count in (("x", m_x, geometry.n_x), ("y", m_y, geometry.n_y)):
        if blocks < 1 or count % blocks != 0:
            raise ValueError(
                f"Cannot split the {axis} axis: {count} antennas into {blocks} blocks."
            )

    sub_nx = geometry.n_x // m_x
    sub_ny = geometry.n_y // m_y
    index_map = np.empty((m_x * m_y, sub_nx * sub_ny), dtype=int)
    for block_x in range(m_x):
        rows = block_x * sub_nx + np.arange(sub_nx)
        for block_y in range(m_y):
            cols = block_y * sub_ny + np.arange(sub_ny)
            index_map[block_x * m_y + block_y] = (
                rows[:, None] * geometry.n_y + cols[None, :]
            ).ravel()

    centers = geometry.positions[index_map].mean(axis=1)
    sub_limits = _aperture_boundaries(
        sub_nx * geometry.d_x, sub_ny * geometry.d_y, geometry.wavelength
    )
    logger.debug(
        f"Partitioned {geometry.n_x}x{geometry.n_y} array into {m_x}x{m_y} "
        f"subarrays of {sub_nx}x{sub_ny}, R_m,F={sub_limits.fraunhofer:.4f} m"
    )
    return PartitionPlan(
        m_x=m_x,
        m_y=m_y,
        sub_nx=sub_nx,
        sub_ny=sub_ny,
        d_x=geometry.d_x,
        d_y=geometry.d_y,
        wavelength=geometry.wavelength,
        centers=centers,
        index_map=index_map,
        sub_fraunhofer=sub_limits.fraunhofer,
    )


def validate_far_field(plan: PartitionPlan, p_user: np.ndarray) -> FarFieldReport:
    """
    Check that the user is in the far field of every subarray.

    A failing check is reported, not raised.

    Args:
        plan (PartitionPlan): The partition.
        p_user (np.ndarray): User location (3,).

    Returns:
        FarFieldReport: Distances r_m, the limit R_m,F and per-subarray flags.
    """
    distances = np.linalg.norm(plan.centers - np.asarray(p_user, dtype=float), axis=1)
    passes = plan.sub_fraunhofer < distances
    report = FarFieldReport(
        distances=distances,
        limit=plan.sub_fraunhofer,
        passes=passes,
        all_pass=bool(np.all(passes)),
    )
    if not report.all_pass:
        logger.warning(
            f"{int(np.sum(~passes))} of {plan.m_count} subarrays see the user inside "
            f"R_m,F={plan.sub_fraunhofer:.4f} m (shortest r_m={report.shortest_distance:.4f} m)"
        )
    return report


def direction_cosines(
    centers: np.ndarray, point: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Direction cosines of `point` seen from each center.

    Args:
        centers (np.ndarray): (M, 3) reference points.
        point (np.ndarray): (3,) location.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (M, 2) direction cosines along x and y,
        and the (M,) distances.

    Raises:
        ValueError: If the point coincides with a center.
    """
    offsets = np.asarray(point, dtype=float) - np.atleast_2d(centers)
    distances = np.linalg.norm(offsets, axis=1)
    if np.any(distances <= 0.0):
        raise ValueError("Location coincides with a subarray center.")
    return offsets[:, :2] / distances[:, None], distances


def subarray_aoa(center: np.ndarray, p_user: np.ndarray) -> AoaPair:
    """
    AoA of the user at a subarray: theta_l = (p_U - center)^T e_l / ||p_U - center||.

    The unit vector points from the subarray to the user, which is the direction
    the far-field steering vector assumes.

    Args:
        center (np.ndarray): Subarray center (3,).
        p_user (np.ndarray): User location (3,).

    Returns:
        AoaPair: Direction cosines.

    Raises:
        ValueError: If the two points coincide.
    """
    thetas, _ = direction_cosines(np.asarray(center, dtype=float)[None, :], p_user)
    theta_x, theta_y = np.clip(thetas[0], -1.0, 1.0)
    return AoaPair(theta_x=float(theta_x), theta_y=float(theta_y))


def range_in_meters(
    value: float, unit: str, geometry: ArrayGeometry, plan: PartitionPlan
) -> float:
    """
    Convert a user range given in meters or in multiples of R_F or R_m,F.

    Raises:
        ValueError: If the unit is unknown.
    """
    if unit == "m":
        return float(value)
    if unit == "fraunhofer":
        return float(value) * field_boundaries(geometry).fraunhofer
    if unit == "sub_fraunhofer":
        return float(value) * plan.sub_fraunhofer
    raise ValueError(f"Unknown range unit {unit!r}.")
