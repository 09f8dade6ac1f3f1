"""
Process settings for the rare-event estimation toolkit.
Values come from the environment or an optional .env file at the project root.
"""

from pathlib import Path
from pydantic_settings import BaseSettings

BASE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """
    Runtime settings.
    Experiment-specific parameters live in the JSON configs (config/experiment.py).
    """

    # Worker pool cap for repetition-parallel runs
    MFCE_THREADS: int = 1

    # Threads scoring the points of one PDE batch
    MFCE_SCORE_THREADS: int = 1

    # Output location when a config leaves output_dir unset
    MFCE_OUTPUT_DIR: str = "runs"

    MFCE_LOG_LEVEL: str = "INFO"

    # Sample cap used when engine.m_max is not given
    MFCE_M_MAX: int = 1_000_000

    model_config = {
        "env_file": str(BASE_DIR / ".env"),
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }
