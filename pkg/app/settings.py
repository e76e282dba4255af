"""Process-level settings read from ``TRACK_*`` environment variables or ``.env``.

Per-run tracking parameters live in the TOML pipeline configuration
(`app.models.config`); these settings only cover how the process runs.
"""
from __future__ import annotations

import logging
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_FORMATS = {
    "plain": "%(asctime)s %(levelname)s %(name)s: %(message)s",
    "short": "%(levelname)s %(name)s: %(message)s",
}


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="TRACK_", env_file=".env", extra="ignore")

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_format: Literal["plain", "short"] = "plain"
    # fallback for --workers
    workers: int = Field(default=1, ge=1)
    unconverged_limit: float = Field(
        default=0.05, ge=0, le=1, description="Unconverged solve fraction above which the CLI exits with code 3"
    )


def configure_logging(settings: Settings) -> None:
    logging.basicConfig(level=settings.log_level, format=LOG_FORMATS[settings.log_format], force=True)


settings = Settings()
