"""Application configuration from environment variables and run config files."""

from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from hypertab.errors import ConfigError


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables (prefix ILTM_)."""

    model_config = SettingsConfigDict(
        env_prefix="ILTM_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"

    # Worker pools (ILTM_THREADS caps every fan-out)
    threads: int = 1

    # Run ledger
    database_url: str = "sqlite:///runs/ledger.db"

    # Outputs
    runs_dir: str = "runs"

    # Task-embedding cache lives beside the data in this sub-directory
    cache_dirname: str = ".cache"

    @property
    def workers(self) -> int:
        """Effective worker count (at least one)."""
        return max(1, self.threads)


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Read a flat key=value config file.

    Comment lines (#) are ignored; keys without a value are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    values = dotenv_values(path)
    missing = [key for key, value in values.items() if value is None]
    if missing:
        raise ConfigError(f"Config keys without a value in {path}: {', '.join(sorted(missing))}")
    return {key: value for key, value in values.items()}


def load_run_config(
    model: Type[ConfigT],
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ConfigT:
    """
    Build a run config from an optional file plus CLI overrides.

    Priority: CLI flag > config file > model default. Unknown keys are rejected.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return model.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"Invalid {model.__name__}: {e}") from e


def dump_run_config(config: BaseModel) -> str:
    """Render a run config as key=value lines (every defaulted value included)."""
    lines = []
    for key, value in config.model_dump(mode="json").items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
