"""
Data models for aple_core.
"""
from aple_core.data_models.models import (
    AoaEstimatorConfig,
    ApleConfig,
    ExperimentConfig,
    FusionConfig,
    GridConfig,
    SceneConfig,
)

__all__ = [
    "AoaEstimatorConfig",
    "ApleConfig",
    "ExperimentConfig",
    "FusionConfig",
    "GridConfig",
    "SceneConfig",
]
