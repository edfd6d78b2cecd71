"""
Line plots of result tables.
"""
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def plot_nmse(summary: pd.DataFrame, path: Union[str, Path], x: str = "snr_db") -> Path:
    """
    NMSE (dB) against `x`, one line per estimator and partition.

    Args:
        summary (pd.DataFrame): Output of `harness.aggregate_nmse`.
        path (str | Path): Image file to write.
        x (str): Column for the horizontal axis, `snr_db` or `r`.

    Returns:
        Path: The written image.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for (estimator, m), group in summary.groupby(["estimator", "m"], sort=True):
        group = group.sort_values(x)
        ax.plot(group[x], group["nmse_db"], marker="o", label=f"{estimator.upper()} (M={m})")
    ax.set_xlabel("SNR (dB)" if x == "snr_db" else "r (m)")
    ax.set_ylabel("NMSE (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_runtime(timings: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Median runtime against antennas per side, log-log, one line per estimator.
    """
    path = Path(path)
    if "estimator" not in timings:
        timings = timings.assign(estimator="aple")
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, group in timings.groupby("estimator", sort=False):
        ax.loglog(group["n_x"], group["time_s"], marker="o", label=name.upper())
    ax.set_xlabel("Antennas per side")
    ax.set_ylabel("Runtime (s)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
