"""
sketchcomm Configuration Settings
All environment variables and configuration in one place.
"""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="SKETCHCOMM_",
        extra="ignore",
    )

    # Random sketch (Ω) generation
    DEFAULT_SEED: str = "0x5EED"  # decimal or 0x-hex, parsed by rng.parse_seed
    DEFAULT_DISTRIBUTION: str = "gaussian"  # Nyström pipeline
    BENCH_DISTRIBUTION: str = "uniform"  # cost benchmarks

    # Fabric
    DEFAULT_BACKEND: str = "lockstep"  # "threaded" or "lockstep"
    MAILBOX_CAPACITY: int = 64  # messages per (src, dst) channel
    DEADLOCK_TIMEOUT: float = 30.0  # seconds a threaded receive may block

    # Numerics
    PINV_TOLERANCE: float = 1e-12  # relative to the largest |eigenvalue|
    JACOBI_TOLERANCE: float = 1e-14  # off(M) < tol * ||M||_F
    JACOBI_MAX_SWEEPS: int = 60
    SYMMETRY_TOLERANCE: float = 1e-10

    # Verification
    ORACLE_CUTOFF: int = 1024  # rows; larger runs skip the serial oracle
    SKETCH_RESIDUAL_LIMIT: float = 1e-10

    # Grid selection / bound oracles
    MAX_ENUMERATION_P: int = 4096
    ORACLE_GRID_POINTS: int = 200

    LOG_LEVEL: str = "INFO"


# Global settings instance
settings = Settings()
