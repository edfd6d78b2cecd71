"""
Configuration module for aple_core.
"""
from aple_core.config.config import Config

__all__ = ["Config"]
