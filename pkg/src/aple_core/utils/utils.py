"""
Utility functions for aple_core.
"""
import sys
from typing import Iterable

import numpy as np
from loguru import logger


def configure_logging(level: str = "INFO") -> None:
    """
    Route loguru output to a single stderr sink at `level`.

    Args:
        level (str): Minimum level name, e.g. "DEBUG" or "INFO".
    """
    logger.remove()
    logger.add(sys.stderr, level=level.upper())


def ascent_direction(
    gradient: np.ndarray, hessian: np.ndarray, relative_floor: float = 1e-12
) -> np.ndarray:
    """
    Ascent direction preconditioned by the negative Hessian.

    This is the Newton step when the Hessian is negative definite. Otherwise the
    eigenvalues of -H are replaced by their magnitudes, floored relative to the
    largest one, which keeps the direction uphill near saddles and flat valleys.

    Args:
        gradient (np.ndarray): Gradient of the objective being maximized.
        hessian (np.ndarray): Its Hessian.
        relative_floor (float): Eigenvalue floor as a fraction of the largest.

    Returns:
        np.ndarray: A direction d with gradient^T d >= 0.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(-0.5 * (hessian + hessian.T))
    magnitudes = np.abs(eigenvalues)
    largest = float(np.max(magnitudes)) if magnitudes.size else 0.0
    if largest == 0.0:
        return np.array(gradient, dtype=float)
    magnitudes = np.maximum(magnitudes, relative_floor * largest)
    return eigenvectors @ ((eigenvectors.T @ gradient) / magnitudes)


def nmse_db(errors_sq: Iterable[float], norms_sq: Iterable[float]) -> float:
    """
    NMSE in dB: 10 log10(mean ||p_hat - p_U||^2 / mean ||p_U||^2).

    Non-finite errors are ignored; NaN when no finite error remains.
    """
    errors_sq = np.asarray(list(errors_sq), dtype=float)
    norms_sq = np.asarray(list(norms_sq), dtype=float)
    finite = np.isfinite(errors_sq)
    if not np.any(finite):
        return float("nan")
    ratio = np.mean(errors_sq[finite]) / np.mean(norms_sq[finite])
    if ratio <= 0:
        return float("-inf")
    return float(10.0 * np.log10(ratio))
