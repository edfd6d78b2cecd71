from aple_core.aple import Aple, LocationEstimate, run_aple
from aple_core.config.config import Config
from aple_core.data_models.models import ApleConfig, ExperimentConfig

__all__ = ["Aple", "ApleConfig", "Config", "ExperimentConfig", "LocationEstimate", "run_aple"]
