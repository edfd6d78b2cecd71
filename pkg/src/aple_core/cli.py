"""
Command-line entry point: `aple {locate,sweep,scaling,plot}`.

Exit codes: 0 success, 2 configuration or usage error, 3 partial estimator failure.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from aple_core.aple import Aple
from aple_core.channel import (
    Scene,
    near_field_channel,
    snr_to_noise_var,
    synthesize_snapshot,
)
from aple_core.config.config import Config
from aple_core.data_models.models import ApleConfig, SceneConfig
from aple_core.geometry import (
    build_array,
    partition,
    validate_far_field,
    wavelength_from_frequency,
)
from aple_core.harness import (
    aggregate_nmse,
    config_from_flat,
    experiment_arrays,
    load_experiment,
    load_flat_config,
    loglog_slope,
    read_results,
    run_experiment,
    scaling_table,
    write_results,
)
from aple_core.schemas import RESULT_COLUMNS, LocateReport
from aple_core.utils.plotting import plot_nmse, plot_runtime
from aple_core.utils.utils import configure_logging

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


class ConfigError(Exception):
    """
    Invalid configuration file or option.
    """


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        number = 0
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aple", description="Near-field localization by array partitioning."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    locate = commands.add_parser("locate", help="Locate the user of one scene file.")
    sweep = commands.add_parser("sweep", help="Run a Monte Carlo sweep to CSV.")
    scaling = commands.add_parser("scaling", help="Median runtime against array size.")
    for command in (locate, sweep, scaling):
        command.add_argument("--config", required=True, type=Path, help="Flat key=value file.")
        command.add_argument("--seed", type=int, help="Override the master seed.")
        command.add_argument("--out", type=Path, help="Output file.")
        command.add_argument("--threads", type=_positive_int, help="Worker threads.")
    sweep.add_argument("--estimators", help="Comma-separated subset of aple,mle,omp.")

    plot = commands.add_parser("plot", help="Plot a sweep or scaling CSV.")
    plot.add_argument("csv", type=Path, help="CSV written by sweep or scaling.")
    plot.add_argument("--out", type=Path, help="Image file. Defaults to the CSV name with .png.")
    plot.add_argument("--x", choices=["snr_db", "r"], help="Horizontal axis of NMSE plots.")
    return parser


def _experiment(args: argparse.Namespace):
    overrides = {"seed": args.seed, "threads": args.threads}
    if getattr(args, "estimators", None):
        overrides["estimators"] = args.estimators
    try:
        return load_experiment(args.config, overrides)
    except (OSError, ValueError, ValidationError) as e:
        raise ConfigError(str(e)) from e


def _output_path(args: argparse.Namespace, configured: Optional[str], default: Path) -> Path:
    if args.out is not None:
        return args.out
    return Path(configured) if configured else default


def _locate(args: argparse.Namespace, process: Config) -> int:
    try:
        values = dict(load_flat_config(args.config))
        if args.seed is not None:
            values["seed"] = args.seed
        scene_config = config_from_flat(values, SceneConfig)
    except (OSError, ValueError, ValidationError) as e:
        raise ConfigError(str(e)) from e

    wavelength = wavelength_from_frequency(scene_config.frequency_hz)
    spacing = scene_config.d_over_lambda * wavelength
    n_y = scene_config.n_y or scene_config.n_x
    try:
        geometry = build_array(
            scene_config.n_x, n_y, spacing, spacing, wavelength, scene_config.allow_even
        )
        plan = partition(geometry, scene_config.m_x, scene_config.m_y or scene_config.m_x)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    p_user = np.asarray(scene_config.p_user, dtype=float)
    validate_far_field(plan, p_user)
    h = near_field_channel(geometry, Scene(p_user=p_user))
    noise_var = (
        0.0 if scene_config.snr_db is None else snr_to_noise_var(h, 1.0, scene_config.snr_db)
    )
    scene = Scene(p_user=p_user, noise_var=noise_var, rng_seed=scene_config.seed)
    snapshot = synthesize_snapshot(h, scene, plan)

    try:
        aple_config = scene_config.aple
        if args.threads is not None:
            aple_config = ApleConfig.model_validate(
                {**aple_config.model_dump(), "workers": args.threads}
            )
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    estimate = Aple(aple_config=aple_config, config=process).locate(snapshot, plan, geometry)
    report = LocateReport(
        p_hat=estimate.p_hat.tolist(),
        covariance_diagonal=np.diag(estimate.belief.cov).tolist(),
        iterations_run=estimate.iterations_run,
        converged=estimate.converged,
        ill_conditioned=estimate.belief.ill_conditioned,
        p_user=p_user.tolist(),
        error_m=float(np.linalg.norm(estimate.p_hat - p_user)),
    )
    text = report.model_dump_json(indent=2)
    print(text)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    return EXIT_OK


def _sweep(args: argparse.Namespace, process: Config) -> int:
    config = _experiment(args)
    try:
        experiment_arrays(config)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    out = _output_path(args, config.output, Path(process.output_dir) / f"{config.name}.csv")
    workers = args.threads or config.threads or process.threads
    results = run_experiment(
        config, workers=workers, budget_bytes=process.dictionary_budget_bytes
    )
    write_results(results, out)
    print(aggregate_nmse(results).to_string(index=False))
    failures = int((~np.isfinite(results["err2"])).sum())
    if failures:
        logger.warning(f"{failures} of {len(results)} estimator runs failed")
        return EXIT_PARTIAL
    return EXIT_OK


def _scaling(args: argparse.Namespace, process: Config) -> int:
    config = _experiment(args)
    if not config.sizes:
        raise ConfigError("scaling needs a `sizes` list in the config file.")
    if args.threads:
        config = config.model_copy(
            update={"aple": config.aple.model_copy(update={"workers": args.threads})}
        )
    try:
        timings = scaling_table(config, process.dictionary_budget_bytes)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    out = _output_path(
        args, config.output, Path(process.output_dir) / f"{config.name}_scaling.csv"
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    timings.to_csv(out, index=False)
    print(timings.to_string(index=False))
    aple_rows = timings[timings["estimator"] == "aple"]
    if len(aple_rows) > 1:
        slope = loglog_slope(aple_rows["n_antennas"], aple_rows["time_s"])
        logger.info(f"Runtime grows as N_B^{slope:.2f}")
        print(f"log-log slope: {slope:.3f}")
    return EXIT_OK


def _plot(args: argparse.Namespace, process: Config) -> int:
    if not args.csv.is_file():
        raise ConfigError(f"CSV not found: {args.csv}")
    out = args.out or args.csv.with_suffix(".png")
    header = list(pd.read_csv(args.csv, nrows=0).columns)
    if header == RESULT_COLUMNS:
        summary = aggregate_nmse(read_results(args.csv))
        x = args.x or ("snr_db" if summary["snr_db"].nunique() > 1 else "r")
        plot_nmse(summary, out, x=x)
    elif {"n_x", "time_s"} <= set(header):
        plot_runtime(pd.read_csv(args.csv), out)
    else:
        raise ConfigError(f"Unrecognized CSV columns {header} in {args.csv}.")
    logger.info(f"Wrote plot to {out}")
    return EXIT_OK


COMMANDS = {"locate": _locate, "sweep": _sweep, "scaling": _scaling, "plot": _plot}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the CLI and return its exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        process = Config.from_env()
    except ValueError as e:
        logger.error(f"Invalid environment: {e}")
        return EXIT_CONFIG
    configure_logging(process.log_level)

    try:
        return COMMANDS[args.command](args, process)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
