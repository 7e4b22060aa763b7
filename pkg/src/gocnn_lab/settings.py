"""Process-wide settings for gocnn-lab.

Defaults for the training harness and logging. Every field can be
overridden through the environment with the GOCNN_ prefix, e.g.
GOCNN_LEARNING_RATE=0.02 or GOCNN_RECORD_WALL_TIME=false.
"""

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings for gocnn-lab.

    Environment variable prefix: GOCNN_
    """

    service_name: str = "gocnn-lab"

    # Logging
    log_level: str = "INFO"
    log_json: bool = False

    # Optimizer defaults (SGD with momentum and L2 weight decay)
    learning_rate: float = Field(default=0.05, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)

    # Validation-plateau schedule: divide LR by 10 after `plateau_patience`
    # epochs without a `plateau_min_delta` gain in validation top-1
    plateau_patience: int = Field(default=5, ge=1)
    plateau_min_delta: float = Field(default=0.002, ge=0.0)
    plateau_factor: float = Field(default=0.1, gt=0.0, lt=1.0)

    # Training loop
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=30, ge=1)
    eval_batch_size: int = Field(default=128, ge=1)
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)

    # Metrics rows carry seconds=0.0 when false, making CSVs byte-stable
    record_wall_time: bool = True

    # Corpus generation fan-out; per-sample seeding keeps output identical
    generation_workers: int = Field(default=1, ge=1)

    model_config = SettingsConfigDict(env_prefix="GOCNN_")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return the cached process settings.

    Returns:
        The Settings instance built from the environment.
    """
    return Settings()
