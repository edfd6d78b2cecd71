"""
Configuration management for aple_core.
"""
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

DEFAULT_DICTIONARY_BUDGET = 2 * 1024**3


def _int_from_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ValueError(f"{name} must be an integer, got {raw!r}.") from e


@dataclass
class Config:
    """
    Process-level settings for aple_core.
    """

    threads: int = 1
    log_level: str = "INFO"
    output_dir: str = "results"
    dictionary_budget_bytes: int = DEFAULT_DICTIONARY_BUDGET

    @classmethod
    def from_env(cls, package_dir: Optional[str] = None) -> "Config":
        """
        Load configuration from environment variables.

        Args:
            package_dir (str, optional): Directory holding a .env file to load first.
                                         Defaults to the process environment only.

        Returns:
            Config: The configuration object.

        Raises:
            ValueError: If APLE_THREADS or APLE_DICTIONARY_BUDGET_BYTES is not a
                        positive integer.
        """
        if package_dir:
            load_dotenv(Path(package_dir) / ".env")

        threads = _int_from_env("APLE_THREADS", 1)
        if threads < 1:
            raise ValueError(f"APLE_THREADS must be at least 1, got {threads}.")
        budget = _int_from_env("APLE_DICTIONARY_BUDGET_BYTES", DEFAULT_DICTIONARY_BUDGET)
        if budget < 1:
            raise ValueError(
                f"APLE_DICTIONARY_BUDGET_BYTES must be positive, got {budget}."
            )

        return cls(
            threads=threads,
            log_level=os.getenv("APLE_LOG_LEVEL", "INFO"),
            output_dir=os.getenv("APLE_OUTPUT_DIR", "results"),
            dictionary_budget_bytes=budget,
        )
