"""Application configuration helpers."""
from __future__ import annotations

import logging
import os
from functools import lru_cache
from typing import Any

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

load_dotenv()

_LOG_LEVELS = {"CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"}


def _env_flag(name: str, default: bool = False) -> bool:
    """Return a boolean flag read from the environment."""

    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str, default: int) -> int:
    """Return a positive integer read from the environment."""

    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw.strip())
    except ValueError:
        return default
    return value if value > 0 else default


def _default_threads() -> int:
    return os.cpu_count() or 1


class Settings(BaseModel):
    """Process-wide runtime configuration loaded from environment variables."""

    threads: int = Field(
        default_factory=lambda: _env_int("REFINEGAN_THREADS", _default_threads())
    )
    log_level: str = Field(
        default_factory=lambda: os.getenv("REFINEGAN_LOG_LEVEL", "INFO"),
        validate_default=True,
    )
    deterministic: bool = Field(
        default_factory=lambda: _env_flag("REFINEGAN_DETERMINISTIC", default=True)
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalise_log_level(cls, value: str | None) -> str:
        """Fall back to ``INFO`` for blank or unknown level names."""

        if value is None:
            return "INFO"
        level = value.strip().upper()
        return level if level in _LOG_LEVELS else "INFO"

    @property
    def log_level_value(self) -> int:
        """Return the numeric :mod:`logging` level."""

        return logging.getLevelName(self.log_level)

    model_config: dict[str, Any] = {"frozen": True}


@lru_cache(1)
def get_settings() -> Settings:
    """Return a cached :class:`Settings` instance."""

    return Settings()
