from pydantic_settings import BaseSettings, SettingsConfigDict
import logging


class Settings(BaseSettings):
    # Dense materialization / power iteration
    DENSE_CAP: int = 1000
    POWER_TOL: float = 1e-8
    POWER_MAX_ITERS: int = 10_000
    POWER_SEED: int = 0

    # Stability classification
    STABILITY_MARGIN: float = 0.05

    # Iterative estimators
    FIT_TOL: float = 1e-10
    FIT_MAX_ITERS: int = 5000
    STEP_SAFETY: float = 0.9
    PINV_RCOND: float = 1e-12

    # Ground truth and student defaults
    DEFAULT_D: float = 2.0
    GROUND_TRUTH_ALPHA: float = 0.5
    STUDENT_ALPHA: float = 1.0
    DIAGNOSTIC_HORIZON: int = 100

    # Sweep execution
    SWEEP_WORKERS: int = 1
    # Off by default so identical sweeps write identical files
    RECORD_RUNTIME: bool = False

    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="ARSCALE_", extra="ignore")


settings = Settings()

logger = logging.getLogger(__name__)

if settings.SWEEP_WORKERS < 1:
    logger.warning(f"⚠️ ARSCALE_SWEEP_WORKERS={settings.SWEEP_WORKERS} is invalid - falling back to 1")
    settings.SWEEP_WORKERS = 1
