"""
Monte Carlo experiment runner: flat config files, per-trial seeding, estimator
dispatch, CSV result tables and NMSE aggregation.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from loguru import logger
from pydantic import BaseModel
from tqdm import tqdm

from aple_core.aple import (
    TIMING_COLUMNS,
    complexity_probe,
    median_runtime,
    run_aple,
    timing_scene,
)
from aple_core.baselines import (
    DictionaryBudgetError,
    PolarGrid,
    local_polar_grid,
    mle_grid_oracle,
    omp_polar,
)
from aple_core.channel import (
    Scene,
    Snapshot,
    near_field_channel,
    snr_to_noise_var,
    synthesize_snapshot,
)
from aple_core.config.config import DEFAULT_DICTIONARY_BUDGET
from aple_core.data_models.models import ApleConfig, ExperimentConfig
from aple_core.geometry import (
    ArrayGeometry,
    PartitionPlan,
    build_array,
    partition,
    range_in_meters,
    validate_far_field,
    wavelength_from_frequency,
)
from aple_core.schemas import RESULT_COLUMNS, ResultRow
from aple_core.utils.utils import nmse_db

ConfigModel = TypeVar("ConfigModel", bound=BaseModel)

_APLE_KEYS = set(ApleConfig.model_fields) - {"estimator", "fusion"}
_ESTIMATOR_SHORTHANDS = {"newton_cap", "pad_factor"}
_PREFIXES = (
    ("estimator_", ("aple", "estimator")),
    ("fusion_", ("aple", "fusion")),
    ("grid_", ("grid",)),
)


def load_flat_config(path: Union[str, Path]) -> Dict[str, str]:
    """
    Read a flat `key=value` file; `#` starts a comment.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If a key has no value.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    values = dotenv_values(path)
    missing = [key for key, value in values.items() if value is None]
    if missing:
        raise ValueError(f"Config keys without a value in {path}: {', '.join(missing)}")
    return {key.strip(): value for key, value in values.items()}


def nest_flat(values: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Map flat keys onto the nested config models.

    n1, damping, location_tol and workers go to `aple`; newton_cap and pad_factor
    to `aple.estimator`; `estimator_*`, `fusion_*` and `grid_*` keys to the
    matching nested model. Other keys stay top-level.
    """
    nested: Dict[str, Any] = {}
    for key, value in values.items():
        if key in _APLE_KEYS:
            nested.setdefault("aple", {})[key] = value
            continue
        if key in _ESTIMATOR_SHORTHANDS:
            nested.setdefault("aple", {}).setdefault("estimator", {})[key] = value
            continue
        for prefix, path in _PREFIXES:
            if key.startswith(prefix):
                target = nested
                for part in path:
                    target = target.setdefault(part, {})
                target[key[len(prefix):]] = value
                break
        else:
            nested[key] = value
    return nested


def config_from_flat(
    values: Mapping[str, Any], model: Type[ConfigModel] = ExperimentConfig
) -> ConfigModel:
    """
    Validate flat key-value settings into `model`.

    Raises:
        pydantic.ValidationError: On unknown keys or invalid values.
    """
    return model.model_validate(nest_flat(values))


def load_experiment(
    path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """
    Load an experiment file, with flat-key overrides applied before validation.
    """
    values: Dict[str, Any] = dict(load_flat_config(path))
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return config_from_flat(values, ExperimentConfig)


def trial_seed(master_seed: int, snr_index: int, trial_index: int) -> np.random.SeedSequence:
    """
    Seed of one trial: a pure function of the master seed and the cell indices.
    """
    return np.random.SeedSequence(master_seed, spawn_key=(snr_index, trial_index))


def sample_direction(cone_half_angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """
    Unit vector uniform on the spherical cap of the given half-angle around +z.
    """
    cos_min = np.cos(np.deg2rad(cone_half_angle_deg))
    cos_phi = rng.uniform(cos_min, 1.0)
    omega = rng.uniform(0.0, 2.0 * np.pi)
    sin_phi = np.sqrt(max(0.0, 1.0 - cos_phi**2))
    return np.array([np.cos(omega) * sin_phi, np.sin(omega) * sin_phi, cos_phi])


def sample_user(r: float, cone_half_angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """
    User at range r in a direction drawn from the boresight cone.
    """
    return r * sample_direction(cone_half_angle_deg, rng)


def _run_estimator(
    name: str,
    snapshot: Snapshot,
    geometry: ArrayGeometry,
    plan: PartitionPlan,
    grid: Optional[PolarGrid],
    config: ExperimentConfig,
    budget_bytes: int,
) -> Tuple[np.ndarray, bool]:
    if name == "aple":
        estimate = run_aple(snapshot, plan, geometry, config.aple)
        return estimate.p_hat, estimate.converged
    if name == "mle":
        return mle_grid_oracle(snapshot, geometry, grid, config.grid.chunk_size), True
    if name == "omp":
        return omp_polar(snapshot, geometry, grid, budget_bytes=budget_bytes), True
    raise ValueError(f"Unknown estimator {name!r}.")


def _run_trial(
    config: ExperimentConfig,
    arrays: Sequence[Tuple[ArrayGeometry, List[Tuple[int, int]]]],
    snr_index: int,
    trial: int,
    budget_bytes: int,
) -> List[ResultRow]:
    rows: List[ResultRow] = []
    for geometry, partitions in arrays:
        for m_x, m_y in partitions:
            plan = partition(geometry, m_x, m_y)
            if config.p_user is not None:
                ranges = [float(np.linalg.norm(config.p_user))]
            else:
                ranges = [
                    range_in_meters(r, config.r_unit, geometry, plan) for r in config.r_values
                ]
            for r in ranges:
                rows.extend(
                    _run_cell(config, geometry, plan, r, snr_index, trial, budget_bytes)
                )
    return rows


def _run_cell(
    config: ExperimentConfig,
    geometry: ArrayGeometry,
    plan: PartitionPlan,
    r: float,
    snr_index: int,
    trial: int,
    budget_bytes: int,
) -> List[ResultRow]:
    snr_db = config.snr_db[snr_index]
    rng = np.random.default_rng(trial_seed(config.seed, snr_index, trial))
    if config.p_user is not None:
        p_user = np.asarray(config.p_user, dtype=float)
    else:
        p_user = sample_user(r, config.cone_half_angle_deg, rng)
    h = near_field_channel(geometry, Scene(p_user=p_user))
    noise_var = 0.0 if config.noiseless else snr_to_noise_var(h, 1.0, snr_db)
    snapshot = synthesize_snapshot(h, Scene(p_user=p_user, noise_var=noise_var), plan, rng=rng)
    grid = None
    if any(name in ("mle", "omp") for name in config.estimators):
        grid = local_polar_grid(p_user, config.grid, rng)
    validate_far_field(plan, p_user)

    rows: List[ResultRow] = []
    for name in config.estimators:
        start = time.perf_counter()
        try:
            p_hat, converged = _run_estimator(
                name, snapshot, geometry, plan, grid, config, budget_bytes
            )
            err2 = float(np.sum((p_hat - p_user) ** 2))
        except Exception as e:
            logger.error(
                f"{name} failed on trial {trial} ({geometry.n_x}x{geometry.n_y}, "
                f"SNR {snr_db} dB, r {r:.4f} m, M {plan.m_count}): {e}"
            )
            err2, converged = float("nan"), False
        elapsed = time.perf_counter() - start if config.record_timing else 0.0
        rows.append(
            ResultRow(
                estimator=name,
                n_x=geometry.n_x,
                m=plan.m_count,
                r=r,
                snr_db=snr_db,
                trial=trial,
                err2=err2,
                pnorm2=float(p_user @ p_user),
                time_s=elapsed,
                converged=converged,
            )
        )
    return rows


def experiment_arrays(
    config: ExperimentConfig,
) -> List[Tuple[ArrayGeometry, List[Tuple[int, int]]]]:
    """
    Arrays of a sweep with their partitions, after checking that every partition divides
    its array.

    Raises:
        ValueError: If an array or a partition is invalid.
    """
    wavelength = wavelength_from_frequency(config.frequency_hz)
    spacing = config.d_over_lambda * wavelength
    arrays = []
    for n_x, n_y, partitions in config.arrays():
        geometry = build_array(n_x, n_y, spacing, spacing, wavelength, allow_even=config.allow_even)
        for m_x, m_y in partitions:
            partition(geometry, m_x, m_y)
        arrays.append((geometry, partitions))
    return arrays


def scaling_table(
    config: ExperimentConfig,
    budget_bytes: int = DEFAULT_DICTIONARY_BUDGET,
    sizes: Optional[Sequence[int]] = None,
    runs: Optional[int] = None,
) -> pd.DataFrame:
    """
    Median wall time per array size of APLE and of every baseline in `config.estimators`.

    Baselines run on the local grid of `config.grid` around the user of
    `timing_scene`. An OMP dictionary over budget gives a NaN time, as the
    baseline cannot run at that size.

    Args:
        config (ExperimentConfig): Sizes, partitions, scene and estimators.
        budget_bytes (int): OMP dictionary budget.
        sizes (Sequence[int], optional): Antennas per side. Defaults to `config.sizes`.
        runs (int, optional): Timed runs per size. Defaults to `config.runs`.

    Returns:
        pd.DataFrame: Columns as in `TIMING_COLUMNS`, APLE rows first.
    """
    sizes = list(sizes if sizes is not None else config.sizes)
    runs = runs or config.runs
    timings = complexity_probe(config, sizes, runs)
    baselines = [name for name in config.estimators if name != "aple"]
    if not baselines:
        return timings
    rows = []
    for n_x, n_y, [(m_x, m_y)] in config.arrays(sizes):
        geometry, plan, p_user, snapshot = timing_scene(config, n_x, n_y, m_x, m_y)
        grid = local_polar_grid(p_user, config.grid, np.random.default_rng(config.seed))
        for name in baselines:
            try:
                elapsed = median_runtime(
                    lambda: _run_estimator(
                        name, snapshot, geometry, plan, grid, config, budget_bytes
                    ),
                    runs,
                )
            except DictionaryBudgetError as e:
                logger.warning(f"{name} not timed at {n_x}x{n_y}: {e}")
                elapsed = float("nan")
            rows.append(
                {
                    "estimator": name,
                    "n_x": n_x,
                    "m": plan.m_count,
                    "n_antennas": geometry.n_antennas,
                    "time_s": elapsed,
                }
            )
    return pd.concat([timings, pd.DataFrame(rows, columns=TIMING_COLUMNS)], ignore_index=True)


def run_experiment(
    config: ExperimentConfig,
    workers: Optional[int] = None,
    budget_bytes: int = DEFAULT_DICTIONARY_BUDGET,
    progress: bool = True,
) -> pd.DataFrame:
    """
    Run every (SNR, trial) cell of a sweep over all arrays, partitions, ranges and
    estimators.

    Estimator failures are logged and recorded as rows with NaN error and
    converged=False. Rows are ordered by (SNR index, trial index) whatever the
    worker count.

    Args:
        config (ExperimentConfig): The sweep.
        workers (int, optional): Trial threads. Defaults to `config.threads` or 1.
        budget_bytes (int): OMP dictionary budget.
        progress (bool): Show a progress bar.

    Returns:
        pd.DataFrame: One row per estimator run, columns as in `RESULT_COLUMNS`.
    """
    workers = workers or config.threads or 1
    arrays = experiment_arrays(config)
    tasks = [
        (snr_index, trial)
        for snr_index in range(len(config.snr_db))
        for trial in range(config.trials)
    ]
    layout = ", ".join(f"{geometry.n_x}x{geometry.n_y} {pairs}" for geometry, pairs in arrays)
    logger.info(
        f"Running {config.name}: {len(tasks)} trials on {layout}, "
        f"estimators {config.estimators}"
    )

    def run(task: Tuple[int, int]) -> List[ResultRow]:
        return _run_trial(config, arrays, task[0], task[1], budget_bytes)

    with tqdm(total=len(tasks), desc=config.name, disable=not progress) as bar:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batches = []
                for batch in pool.map(run, tasks):
                    batches.append(batch)
                    bar.update()
        else:
            batches = []
            for task in tasks:
                batches.append(run(task))
                bar.update()

    records = [row.model_dump() for batch in batches for row in batch]
    return pd.DataFrame(records, columns=RESULT_COLUMNS)


def write_results(results: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Write a result table as CSV with the documented header.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results.to_csv(path, columns=RESULT_COLUMNS, index=False)
    logger.info(f"Wrote {len(results)} rows to {path}")
    return path


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a result CSV, validating every row against `ResultRow`.

    Raises:
        ValueError: If the header differs from the documented schema.
    """
    frame = pd.read_csv(path)
    if list(frame.columns) != RESULT_COLUMNS:
        raise ValueError(f"Unexpected result columns {list(frame.columns)} in {path}.")
    rows = [ResultRow.model_validate(record) for record in frame.to_dict("records")]
    return pd.DataFrame([row.model_dump() for row in rows], columns=RESULT_COLUMNS)


def aggregate_nmse(
    results: pd.DataFrame,
    by: Sequence[str] = ("estimator", "n_x", "m", "r", "snr_db"),
) -> pd.DataFrame:
    """
    NMSE in dB per cell, with trial and failure counts and the median wall time.
    """
    summary = []
    for key, group in results.groupby(list(by), sort=True):
        key = key if isinstance(key, tuple) else (key,)
        summary.append(
            {
                **dict(zip(by, key)),
                "nmse_db": nmse_db(group["err2"], group["pnorm2"]),
                "trials": len(group),
                "failures": int((~group["converged"].astype(bool)).sum()),
                "time_s": float(group["time_s"].median()),
            }
        )
    return pd.DataFrame(summary, columns=[*by, "nmse_db", "trials", "failures", "time_s"])


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Least-squares slope of log(y) against log(x).
    """
    log_x = np.log(np.asarray(x, dtype=float))
    log_y = np.log(np.asarray(y, dtype=float))
    slope, _ = np.polyfit(log_x, log_y, 1)
    return float(slope)
