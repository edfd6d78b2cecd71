"""
APLE: location estimation by alternating per-subarray AoA estimation and AoA fusion.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from aple_core.aoa_estimation import AoaPosterior, estimate_posterior, extrinsic_message
from aple_core.channel import (
    Scene,
    Snapshot,
    near_field_channel,
    snr_to_noise_var,
    synthesize_snapshot,
)
from aple_core.config.config import Config
from aple_core.data_models.models import ApleConfig, ExperimentConfig
from aple_core.fusion import (
    GaussianBelief3D,
    MessageSet,
    belief_covariance,
    best_map_location,
    feedback_message,
    initialize_location,
    map_location,
)
from aple_core.geometry import (
    ArrayGeometry,
    PartitionPlan,
    build_array,
    field_boundaries,
    partition,
    range_in_meters,
    wavelength_from_frequency,
)
from aple_core.vonmises import VonMisesMsg

MessagePair = Tuple[VonMisesMsg, VonMisesMsg]
TIMING_COLUMNS = ["estimator", "n_x", "m", "n_antennas", "time_s"]


@dataclass(frozen=True, eq=False)
class LocationEstimate:
    """
    Result of `run_aple`.

    `trajectory` holds the full-belief MAP of every outer iteration run and
    `feedback` the damped (x, y) feedback messages of each subarray after the last.
    """

    p_hat: np.ndarray
    belief: GaussianBelief3D
    per_subarray: List[AoaPosterior]
    iterations_run: int
    converged: bool
    trajectory: List[np.ndarray] = field(default_factory=list, repr=False)
    feedback: List[MessagePair] = field(default_factory=list, repr=False)


def _damp(old: VonMisesMsg, new: VonMisesMsg, damping: float) -> VonMisesMsg:
    if damping == 0.0 or old.kappa == 0.0:
        return new
    return VonMisesMsg.from_natural((1.0 - damping) * new.natural + damping * old.natural)


def _mapper(pool: Optional[ThreadPoolExecutor]) -> Callable[..., Iterable[Any]]:
    return pool.map if pool is not None else map


def run_aple(
    snapshot: Snapshot,
    plan: PartitionPlan,
    geometry: ArrayGeometry,
    config: Optional[ApleConfig] = None,
) -> LocationEstimate:
    """
    Estimate the user location from one snapshot.

    Feedback messages start uniform. Each outer iteration estimates every
    subarray's AoA posterior under its feedback prior, forms the extrinsic
    messages, finds the MAP of the full location belief and sends each AoA
    variable a feedback message computed from the belief with its own factor
    left out. The returned estimate is the MAP of the full belief.

    Args:
        snapshot (Snapshot): Received signal, sliced by `plan`.
        plan (PartitionPlan): Partition of `geometry`.
        geometry (ArrayGeometry): The array.
        config (ApleConfig, optional): Loop settings.

    Returns:
        LocationEstimate: The estimate, its Gaussian belief and per-subarray posteriors.

    Raises:
        ValueError: If the plan or snapshot does not match the geometry.
    """
    config = config or ApleConfig()
    if plan.index_map.size != geometry.n_antennas:
        raise ValueError(
            f"Partition covers {plan.index_map.size} antennas, array has {geometry.n_antennas}."
        )
    if snapshot.y.shape != (geometry.n_antennas,):
        raise ValueError(
            f"Snapshot has {snapshot.y.size} samples, array has {geometry.n_antennas}."
        )

    shape = plan.subarray_shape
    slices = snapshot.slices
    boundaries = field_boundaries(geometry)
    r_min, r_max = 0.5 * boundaries.fresnel, 2.0 * boundaries.fraunhofer
    keys = [(m, l) for m in range(plan.m_count) for l in range(2)]
    feedback: List[MessagePair] = [
        (VonMisesMsg.uniform(), VonMisesMsg.uniform()) for _ in range(plan.m_count)
    ]

    def estimate(m: int) -> AoaPosterior:
        return estimate_posterior(
            slices[m],
            feedback[m][0],
            feedback[m][1],
            shape,
            snapshot.noise_var,
            config.estimator,
        )

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    posteriors: List[AoaPosterior] = []
    messages: Optional[MessageSet] = None
    p_hat: Optional[np.ndarray] = None

    def leave_one_out(key: Tuple[int, int]) -> VonMisesMsg:
        m, l = key
        result = map_location(messages, p_hat, config.fusion, exclude=key)
        belief = belief_covariance(result.point, messages, config.fusion, exclude=key)
        return feedback_message(m, l, belief, plan.centers[m], config.fusion)

    try:
        trajectory: List[np.ndarray] = []
        shared_converged = False
        iteration = 0
        for iteration in range(1, config.n1 + 1):
            posteriors = list(_mapper(pool)(estimate, range(plan.m_count)))
            messages = MessageSet.from_messages(
                plan.centers,
                [
                    (
                        extrinsic_message(posterior.post_x, prior[0]),
                        extrinsic_message(posterior.post_y, prior[1]),
                    )
                    for posterior, prior in zip(posteriors, feedback)
                ],
            )
            starts = (
                initialize_location(messages, r_min, r_max, config.fusion)
                if p_hat is None
                else [p_hat]
            )
            shared = best_map_location(messages, starts, config.fusion)
            shared_converged = shared.converged
            moved = np.inf if p_hat is None else float(np.linalg.norm(shared.point - p_hat))
            p_hat = shared.point
            trajectory.append(p_hat.copy())
            logger.debug(
                f"APLE iteration {iteration}: p_hat={np.round(p_hat, 6)}, moved {moved:.3e} m"
            )

            updates = dict(zip(keys, _mapper(pool)(leave_one_out, keys)))
            feedback = [
                (
                    _damp(feedback[m][0], updates[(m, 0)], config.damping),
                    _damp(feedback[m][1], updates[(m, 1)], config.damping),
                )
                for m in range(plan.m_count)
            ]
            if moved < config.location_tol:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    belief = belief_covariance(p_hat, messages, config.fusion)
    if belief.ill_conditioned:
        logger.warning("Location belief is ill-conditioned; covariance floored")
    converged = shared_converged and all(posterior.converged for posterior in posteriors)
    return LocationEstimate(
        p_hat=p_hat,
        belief=belief,
        per_subarray=posteriors,
        iterations_run=iteration,
        converged=converged,
        trajectory=trajectory,
        feedback=feedback,
    )


def timing_scene(
    config: ExperimentConfig, n_x: int, n_y: int, m_x: int, m_y: int
) -> Tuple[ArrayGeometry, PartitionPlan, np.ndarray, Snapshot]:
    """
    Fixed scene of the runtime measurements on an n_x by n_y array.

    The user sits 10 degrees off boresight at the first range of `config`, with
    the first SNR unless `config.noiseless` is set.

    Returns:
        Tuple: Geometry, partition, user location and snapshot.
    """
    wavelength = wavelength_from_frequency(config.frequency_hz)
    spacing = config.d_over_lambda * wavelength
    geometry = build_array(n_x, n_y, spacing, spacing, wavelength, allow_even=config.allow_even)
    plan = partition(geometry, m_x, m_y)
    r = range_in_meters(config.r_values[0], config.r_unit, geometry, plan)
    tilt = np.deg2rad(10.0)
    p_user = r * np.array([np.sin(tilt), 0.0, np.cos(tilt)])
    h = near_field_channel(geometry, Scene(p_user=p_user))
    noise_var = 0.0 if config.noiseless else snr_to_noise_var(h, 1.0, config.snr_db[0])
    scene = Scene(p_user=p_user, noise_var=noise_var, rng_seed=config.seed)
    return geometry, plan, p_user, synthesize_snapshot(h, scene, plan)


def median_runtime(call: Callable[[], Any], runs: int) -> float:
    """Median wall time of `runs` calls."""
    timings = []
    for _ in range(runs):
        start = time.perf_counter()
        call()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def complexity_probe(
    config: ExperimentConfig, sizes: Optional[Sequence[int]] = None, runs: Optional[int] = None
) -> pd.DataFrame:
    """
    Median APLE wall time per array size.

    Each size is a square array in the scene of `timing_scene`. Sizes are paired
    with partitions as in `ExperimentConfig.arrays`. Only `run_aple` is timed.

    Args:
        config (ExperimentConfig): Array spacing, partitions, range, SNR and seed.
        sizes (Sequence[int], optional): Antennas per side. Defaults to `config.sizes`.
        runs (int, optional): Timed runs per size. Defaults to `config.runs`.

    Returns:
        pd.DataFrame: Columns as in `TIMING_COLUMNS`, estimator "aple".

    Raises:
        ValueError: If no sizes are given or they do not pair with the partitions.
    """
    sizes = list(sizes if sizes is not None else config.sizes)
    runs = runs or config.runs
    if not sizes:
        raise ValueError("complexity_probe needs at least one array size.")

    rows = []
    for n_x, n_y, [(m_x, m_y)] in config.arrays(sizes):
        geometry, plan, _, snapshot = timing_scene(config, n_x, n_y, m_x, m_y)
        elapsed = median_runtime(lambda: run_aple(snapshot, plan, geometry, config.aple), runs)
        rows.append(
            {
                "estimator": "aple",
                "n_x": n_x,
                "m": plan.m_count,
                "n_antennas": geometry.n_antennas,
                "time_s": elapsed,
            }
        )
        logger.info(f"APLE {n_x}x{n_y}, M={plan.m_count}: median {elapsed:.4f} s over {runs} runs")
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


class Aple:
    """
    Near-field localizer holding a default `ApleConfig` and the process `Config`.
    """

    def __init__(
        self,
        aple_config: Optional[Union[ApleConfig, Dict[str, Any]]] = None,
        config: Optional[Config] = None,
    ):
        """
        Initialize the localizer.

        Args:
            aple_config (ApleConfig | Dict, optional): Default loop settings.
            config (Config, optional): Process settings. Loaded from the environment if None.
        """
        self.config = config or Config.from_env()

        if isinstance(aple_config, ApleConfig):
            self.aple_config = aple_config
        elif isinstance(aple_config, dict):
            self.aple_config = ApleConfig(**aple_config)
        else:
            self.aple_config = ApleConfig(workers=self.config.threads)

    def _prepare_config(
        self, aple_config: Optional[Union[ApleConfig, Dict[str, Any]]] = None
    ) -> ApleConfig:
        """
        Merge a per-call override over the default settings.

        Args:
            aple_config (ApleConfig | Dict, optional): Fields to override.

        Returns:
            ApleConfig: The settings for this call.
        """
        config = self.aple_config.model_copy()
        if aple_config:
            if isinstance(aple_config, dict):
                update_data = aple_config
            else:
                update_data = aple_config.model_dump(exclude_unset=True)
            config = ApleConfig.model_validate({**config.model_dump(), **update_data})
        return config

    def locate(
        self,
        snapshot: Snapshot,
        plan: PartitionPlan,
        geometry: ArrayGeometry,
        aple_config: Optional[Union[ApleConfig, Dict[str, Any]]] = None,
    ) -> LocationEstimate:
        """
        Estimate the user location from a snapshot.

        Args:
            snapshot (Snapshot): Received signal.
            plan (PartitionPlan): Partition of the array.
            geometry (ArrayGeometry): The array.
            aple_config (ApleConfig | Dict, optional): Override default settings.

        Returns:
            LocationEstimate: The estimate.
        """
        config = self._prepare_config(aple_config)
        logger.debug(
            f"Locating with {plan.m_x}x{plan.m_y} subarrays of {plan.sub_nx}x{plan.sub_ny}, "
            f"n1={config.n1}"
        )
        try:
            return run_aple(snapshot, plan, geometry, config)
        except Exception as e:
            logger.error(f"Error locating user: {e}")
            raise
