"""
Reference estimators on a polar search grid: the exhaustive maximum-likelihood
oracle and single-path orthogonal matching pursuit.

Grid points are p = r [cos(omega) sin(phi), sin(omega) sin(phi), cos(phi)].
Flat index g = (i_r * n_omega + i_omega) * n_phi + i_phi.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from aple_core.channel import Snapshot
from aple_core.data_models.models import GridConfig
from aple_core.geometry import ArrayGeometry


class DictionaryBudgetError(MemoryError):
    """
    The OMP dictionary would exceed the configured memory budget.
    """


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """
    Search grid over range r (m), azimuth omega and elevation phi (rad).
    """

    r_points: np.ndarray
    omega_points: np.ndarray
    phi_points: np.ndarray
    r_step: float = field(default=float("nan"))
    angle_step: float = field(default=float("nan"))

    def __post_init__(self):
        for name in ("r_points", "omega_points", "phi_points"):
            axis = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if axis.size == 0:
                raise ValueError(f"{name} is empty.")
            if np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} must be strictly increasing.")
            object.__setattr__(self, name, axis)
        if self.r_points[0] <= 0:
            raise ValueError("r_points must be positive.")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.r_points.size, self.omega_points.size, self.phi_points.size

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def points(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        """
        Cartesian points of flat indices [start, stop), shape (k, 3).
        """
        stop = self.size if stop is None else min(stop, self.size)
        i_r, i_omega, i_phi = np.unravel_index(np.arange(start, stop), self.shape)
        r = self.r_points[i_r]
        omega = self.omega_points[i_omega]
        phi = self.phi_points[i_phi]
        return polar_to_cartesian(r, omega, phi)

    def point(self, index: int) -> np.ndarray:
        return self.points(index, index + 1)[0]


def polar_to_cartesian(r, omega, phi) -> np.ndarray:
    r, omega, phi = np.broadcast_arrays(
        np.asarray(r, dtype=float), np.asarray(omega, dtype=float), np.asarray(phi, dtype=float)
    )
    return np.stack(
        [r * np.cos(omega) * np.sin(phi), r * np.sin(omega) * np.sin(phi), r * np.cos(phi)],
        axis=-1,
    )


def cartesian_to_polar(point: np.ndarray) -> Tuple[float, float, float]:
    """
    (r, omega, phi) of a point with r > 0.
    """
    point = np.asarray(point, dtype=float)
    r = float(np.linalg.norm(point))
    if r == 0.0:
        raise ValueError("The origin has no polar angles.")
    omega = float(np.arctan2(point[1], point[0]))
    phi = float(np.arccos(np.clip(point[2] / r, -1.0, 1.0)))
    return r, omega, phi


def _axis(low: float, high: float, step: float) -> np.ndarray:
    count = int(np.floor((high - low) / step + 1e-9)) + 1
    return low + step * np.arange(max(count, 1))


def build_polar_grid(
    r_range: Tuple[float, float],
    omega_range: Tuple[float, float] = (-np.pi, np.pi),
    phi_range: Tuple[float, float] = (0.0, 0.5 * np.pi),
    r_step: float = 0.1,
    angle_step_deg: float = 0.02,
) -> PolarGrid:
    """
    Uniform polar grid over a search region.

    The default angular region is the front hemisphere; the usual range region is
    [R_N / 2, 2 R_F].

    Args:
        r_range (Tuple[float, float]): Range interval (m).
        omega_range (Tuple[float, float]): Azimuth interval (rad).
        phi_range (Tuple[float, float]): Elevation interval (rad).
        r_step (float): Range resolution (m).
        angle_step_deg (float): Angular resolution (degrees).

    Returns:
        PolarGrid: The grid.

    Raises:
        ValueError: If a step is not positive or an interval is reversed.
    """
    angle_step = np.deg2rad(angle_step_deg)
    if r_step <= 0 or angle_step <= 0:
        raise ValueError("Grid steps must be positive.")
    for name, (low, high) in (("r", r_range), ("omega", omega_range), ("phi", phi_range)):
        if high < low:
            raise ValueError(f"{name} interval is reversed: ({low}, {high}).")
    return PolarGrid(
        r_points=_axis(*r_range, r_step),
        omega_points=_axis(*omega_range, angle_step),
        phi_points=_axis(*phi_range, angle_step),
        r_step=r_step,
        angle_step=angle_step,
    )


def local_polar_grid(
    reference: np.ndarray,
    config: Optional[GridConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> PolarGrid:
    """
    Reduced grid of 2 * half_cells + 1 points per axis around a reference point.

    Without `rng` the window is centered on the reference, which is a grid point.
    With `rng`, every axis is shifted by a uniform sub-cell offset so the
    reference is generally off-grid and, when `config.random_window` is set, by
    a uniform whole number of cells in [-half_cells, half_cells] so its place
    in the window is random. The reference always stays within half a cell of
    the window.

    Args:
        reference (np.ndarray): Point the window must contain, usually the true location.
        config (GridConfig, optional): Resolution and extent.
        rng (np.random.Generator, optional): Source of the offsets.

    Returns:
        PolarGrid: The local grid.
    """
    config = config or GridConfig()
    r, omega, phi = cartesian_to_polar(reference)
    angle_step = np.deg2rad(config.angle_step_deg)
    offsets = np.zeros(3)
    if rng is not None:
        offsets = rng.uniform(-0.5, 0.5, size=3)
        if config.random_window:
            half = np.array(
                [config.half_cells_r, config.half_cells_angle, config.half_cells_angle]
            )
            offsets = offsets + rng.integers(-half, half + 1)
    r_cells = np.arange(-config.half_cells_r, config.half_cells_r + 1)
    angle_cells = np.arange(-config.half_cells_angle, config.half_cells_angle + 1)
    r_points = r + (r_cells + offsets[0]) * config.r_step
    return PolarGrid(
        r_points=r_points[r_points > 0],
        omega_points=omega + (angle_cells + offsets[1]) * angle_step,
        phi_points=phi + (angle_cells + offsets[2]) * angle_step,
        r_step=config.r_step,
        angle_step=angle_step,
    )


def _grid_channels(geometry: ArrayGeometry, points: np.ndarray) -> np.ndarray:
    distances = np.linalg.norm(points[:, None, :] - geometry.positions[None, :, :], axis=2)
    wavelength = geometry.wavelength
    return wavelength / (4.0 * np.pi * distances) * np.exp(-2j * np.pi * distances / wavelength)


def mle_objective(snapshot: Snapshot, geometry: ArrayGeometry, points: np.ndarray) -> np.ndarray:
    """
    Concentrated likelihood |h(p)^H y|^2 / ||h(p)||^2 at each point, with h the
    exact near-field channel.
    """
    channels = _grid_channels(geometry, np.atleast_2d(points))
    correlation = channels.conj() @ snapshot.y
    return np.abs(correlation) ** 2 / np.sum(np.abs(channels) ** 2, axis=1)


def mle_grid_oracle(
    snapshot: Snapshot,
    geometry: ArrayGeometry,
    grid: PolarGrid,
    chunk_size: int = 512,
    workers: int = 1,
) -> np.ndarray:
    """
    Exhaustive maximum-likelihood search over a polar grid.

    Blocks of `chunk_size` points are scored independently and merged by
    max-reduction; ties go to the lowest flat index.

    Args:
        snapshot (Snapshot): Received signal.
        geometry (ArrayGeometry): The array.
        grid (PolarGrid): Search grid.
        chunk_size (int): Points per block.
        workers (int): Threads scoring blocks.

    Returns:
        np.ndarray: The maximizing grid point.
    """
    starts = list(range(0, grid.size, chunk_size))

    def best_in_chunk(start: int) -> Tuple[float, int]:
        scores = mle_objective(snapshot, geometry, grid.points(start, start + chunk_size))
        local = int(np.argmax(scores))
        return float(scores[local]), start + local

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(best_in_chunk, starts))
    else:
        results = [best_in_chunk(start) for start in starts]

    best_score, best_index = -np.inf, 0
    for score, index in results:
        if score > best_score:
            best_score, best_index = score, index
    logger.debug(f"MLE oracle picked grid point {best_index} of {grid.size}")
    return grid.point(best_index)


def dictionary_bytes(geometry: ArrayGeometry, grid: PolarGrid) -> int:
    """
    Memory of the complex128 OMP dictionary for this array and grid.
    """
    return 16 * geometry.n_antennas * grid.size


def omp_polar(
    snapshot: Snapshot,
    geometry: ArrayGeometry,
    grid: PolarGrid,
    n_iter: int = 1,
    budget_bytes: int = 2 * 1024**3,
) -> np.ndarray:
    """
    Orthogonal matching pursuit over a dictionary of normalized near-field channels.

    Args:
        snapshot (Snapshot): Received signal.
        geometry (ArrayGeometry): The array.
        grid (PolarGrid): Grid the atoms are built on.
        n_iter (int): Atoms to select; the first is the LoS estimate.
        budget_bytes (int): Largest dictionary allowed.

    Returns:
        np.ndarray: Grid point of the first selected atom.

    Raises:
        DictionaryBudgetError: If the dictionary would exceed `budget_bytes`.
        ValueError: If n_iter < 1.
    """
    if n_iter < 1:
        raise ValueError(f"n_iter must be at least 1, got {n_iter}.")
    required = dictionary_bytes(geometry, grid)
    if required > budget_bytes:
        raise DictionaryBudgetError(
            f"OMP dictionary for {geometry.n_antennas} antennas and {grid.size} grid points "
            f"needs {required / 1024**3:.2f} GiB, budget is {budget_bytes / 1024**3:.2f} GiB."
        )

    atoms = _grid_channels(geometry, grid.points()).T
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)

    residual = snapshot.y.astype(complex)
    support: List[int] = []
    for _ in range(n_iter):
        correlation = np.abs(atoms.conj().T @ residual)
        correlation[support] = -np.inf
        support.append(int(np.argmax(correlation)))
        selected = atoms[:, support]
        coefficients, *_ = np.linalg.lstsq(selected, snapshot.y, rcond=None)
        residual = snapshot.y - selected @ coefficients
    logger.debug(f"OMP selected atoms {support} of {grid.size}")
    return grid.point(support[0])
