"""Application configuration management."""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Application
    app_name: str = "Multi-View Novel View Synthesis"
    app_version: str = "1.0.0"

    # Artifacts
    out_dir: str = "runs"  # VALID_OUT_DIR overrides the run root

    # Compute
    device: str = "cpu"
    num_workers: int = 4  # scene rendering fan-out
    deterministic: bool = True

    # Logging
    log_level: str = "INFO"
    log_file: str = "logs/valid.log"

    model_config = SettingsConfigDict(
        env_prefix="VALID_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


# Global settings instance
settings = Settings()
