"""
Exact near-field LoS channel, one-snapshot signal synthesis and the far-field
subarray signal model.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from loguru import logger

from aple_core.geometry import AoaPair, ArrayGeometry, PartitionPlan, centered_indices


@dataclass(frozen=True, eq=False)
class Scene:
    """
    A single-user LoS scene.

    `beta` is the common antenna gain, `pilot` the transmitted symbol x and
    `noise_var` the per-antenna noise variance sigma^2.
    """

    p_user: np.ndarray
    beta: complex = 1.0
    pilot: complex = 1.0
    noise_var: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        p_user = np.asarray(self.p_user, dtype=float).reshape(3)
        object.__setattr__(self, "p_user", p_user)
        if self.noise_var < 0:
            raise ValueError(f"noise_var must be non-negative, got {self.noise_var}.")
        if abs(self.pilot) == 0:
            raise ValueError("pilot must be non-zero.")


@dataclass(frozen=True, eq=False)
class Snapshot:
    """
    Received one-snapshot signal and its per-subarray views.

    `noise_var` is the noise variance known to the receiver.
    """

    y: np.ndarray
    plan: PartitionPlan = field(repr=False)
    noise_var: float = 0.0

    @property
    def slices(self) -> List[np.ndarray]:
        return [self.y[indices] for indices in self.plan.index_map]


@dataclass(frozen=True)
class SubarrayFarFieldModel:
    """
    Far-field model of one subarray: y_m = alpha * a(theta_x, theta_y) + n_m.
    """

    alpha: complex
    aoa: AoaPair

    def predict(
        self, sub_nx: int, sub_ny: int, d_x: float, d_y: float, wavelength: float
    ) -> np.ndarray:
        return self.alpha * steering_vector(
            sub_nx, sub_ny, d_x, d_y, wavelength, self.aoa
        )


def near_field_channel(geometry: ArrayGeometry, scene: Scene) -> np.ndarray:
    """
    Exact spherical-wavefront channel of every antenna.

    h_(i,j) = beta * lambda / (4 pi r_(i,j)) * exp(-j 2 pi r_(i,j) / lambda).

    Args:
        geometry (ArrayGeometry): The array.
        scene (Scene): User location and gain.

    Returns:
        np.ndarray: Complex channel of length N_B, row-major over (i, j).

    Raises:
        ValueError: If the user coincides with an antenna.
    """
    distances = np.linalg.norm(geometry.positions - scene.p_user, axis=1)
    if np.any(distances <= 1e-12 * geometry.wavelength):
        raise ValueError("User location coincides with an antenna.")
    wavelength = geometry.wavelength
    return (
        scene.beta
        * wavelength
        / (4.0 * np.pi * distances)
        * np.exp(-2j * np.pi * distances / wavelength)
    )


def synthesize_snapshot(
    h: np.ndarray,
    scene: Scene,
    plan: PartitionPlan,
    rng: Optional[np.random.Generator] = None,
) -> Snapshot:
    """
    Draw y = h x + n with circularly-symmetric Gaussian noise of variance sigma^2.

    Args:
        h (np.ndarray): Channel vector.
        scene (Scene): Pilot, noise variance and seed.
        plan (PartitionPlan): Partition used to slice the snapshot.
        rng (np.random.Generator, optional): Generator to draw from. Defaults to
            one seeded with `scene.rng_seed`.

    Returns:
        Snapshot: The received signal.

    Raises:
        ValueError: If the channel length does not match the plan.
    """
    n_antennas = plan.index_map.size
    if h.shape != (n_antennas,):
        raise ValueError(
            f"Channel has {h.shape[0]} entries but the plan covers {n_antennas} antennas."
        )
    rng = rng if rng is not None else np.random.default_rng(scene.rng_seed)
    noise = np.sqrt(scene.noise_var / 2.0) * (
        rng.standard_normal(n_antennas) + 1j * rng.standard_normal(n_antennas)
    )
    return Snapshot(y=h * scene.pilot + noise, plan=plan, noise_var=scene.noise_var)


def reassemble(slices: List[np.ndarray], plan: PartitionPlan) -> np.ndarray:
    """
    Inverse of `Snapshot.slices`.
    """
    y = np.empty(plan.index_map.size, dtype=complex)
    for indices, values in zip(plan.index_map, slices):
        y[indices] = values
    return y


def steering_vector(
    sub_nx: int,
    sub_ny: int,
    d_x: float,
    d_y: float,
    wavelength: float,
    aoa: AoaPair,
) -> np.ndarray:
    """
    Far-field steering vector a(theta_x) kron a(theta_y) of a subarray.

    Entry (p, q) is exp(j 2 pi (p d_x theta_x + q d_y theta_y) / lambda) with p, q
    in the centered index sets, flattened row-major like `PartitionPlan.index_map`.

    Args:
        sub_nx (int): Antennas along x.
        sub_ny (int): Antennas along y.
        d_x (float): Spacing along x.
        d_y (float): Spacing along y.
        wavelength (float): Carrier wavelength.
        aoa (AoaPair): Direction cosines.

    Returns:
        np.ndarray: Unit-modulus vector of length sub_nx * sub_ny.

    Raises:
        ValueError: If a direction cosine is outside [-1, 1].
    """
    theta_x, theta_y = aoa.theta_x, aoa.theta_y
    if abs(theta_x) > 1.0 or abs(theta_y) > 1.0:
        raise ValueError(f"Direction cosines out of range: ({theta_x}, {theta_y}).")
    a_x = np.exp(2j * np.pi * centered_indices(sub_nx) * d_x * theta_x / wavelength)
    a_y = np.exp(2j * np.pi * centered_indices(sub_ny) * d_y * theta_y / wavelength)
    return np.kron(a_x, a_y)


def snr_to_noise_var(h: np.ndarray, pilot: complex, snr_db: float) -> float:
    """
    Noise variance giving a per-antenna average receive SNR of `snr_db`.

    sigma^2 = ||h x||^2 / (N_B 10^(snr_db / 10)).

    Raises:
        ValueError: If the channel is identically zero.
    """
    signal_power = float(np.sum(np.abs(h * pilot) ** 2))
    if signal_power <= 0:
        raise ValueError("Channel has zero power.")
    return signal_power / (h.size * 10.0 ** (snr_db / 10.0))


def dump_snapshot(snapshot: Snapshot, path: Union[str, Path]) -> Path:
    """
    Write a snapshot and its partition index map to an `.npz` trace.
    """
    path = Path(path).with_suffix(".npz")
    np.savez(
        path,
        y=snapshot.y,
        index_map=snapshot.plan.index_map,
        centers=snapshot.plan.centers,
        noise_var=snapshot.noise_var,
    )
    logger.debug(f"Wrote snapshot trace to {path}")
    return path
