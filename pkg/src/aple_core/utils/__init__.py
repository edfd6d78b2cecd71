"""
Utility functions for aple_core.
"""
from aple_core.utils.plotting import plot_nmse, plot_runtime
from aple_core.utils.utils import ascent_direction, configure_logging, nmse_db

__all__ = ["ascent_direction", "configure_logging", "nmse_db", "plot_nmse", "plot_runtime"]
