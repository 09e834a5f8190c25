import os
from contextvars import ContextVar
from datetime import datetime, time
from pathlib import Path
from typing import Optional, Self

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .types import GroupingMethod

GRAVITY = 9.81  # m/s²
KINEMATIC_VISCOSITY = 1.004e-6  # m²/s, water at 20 °C
SECONDS_PER_HOUR = 3600.0

# EPANET flow units → m³/h
FLOW_UNITS_TO_CMH = {
    "CFS": 101.9406477,
    "GPM": 0.2271247,
    "MGD": 157.7254,
    "IMGD": 189.4204,
    "AFD": 51.39852,
    "LPS": 3.6,
    "LPM": 0.06,
    "MLD": 41.666667,
    "CMH": 1.0,
    "CMD": 1.0 / 24.0,
}
US_FLOW_UNITS = {"CFS", "GPM", "MGD", "IMGD", "AFD"}
FEET_TO_M = 0.3048
INCH_TO_MM = 25.4
MILLIFEET_TO_MM = 0.3048

NOISE = -1

_CONFIG_FILE: ContextVar[Optional[Path]] = ContextVar("_CONFIG_FILE", default=None)


class SolverOptions(BaseModel):
    head_tolerance: float = Field(default=1e-6, gt=0.0)  # m
    flow_tolerance: float = Field(default=1e-6, gt=0.0)  # m³/s
    max_iterations: int = Field(default=200, ge=1)
    viscosity: float = Field(default=KINEMATIC_VISCOSITY, gt=0.0)


class BoundsPolicy(BaseModel):
    c_lo: float = Field(default=0.2, gt=0.0)
    c_hi: float = Field(default=0.75, gt=0.0)
    c_hi_transmission: float = Field(default=0.3, gt=0.0)

    @model_validator(mode="after")
    def _check_order(self) -> Self:
        if not (self.c_lo < self.c_hi_transmission <= self.c_hi):
            raise ValueError(
                "Bounds multipliers must satisfy c_lo < c_hi_transmission <= c_hi, "
                f"got {self.c_lo}, {self.c_hi_transmission}, {self.c_hi}"
            )
        return self


class SceOptions(BaseModel):
    """Shuffled Complex Evolution hyperparameters; defaults are the published reference set."""

    max_calls: int = Field(default=280000, ge=1)
    n_complexes: int = Field(default=7, ge=1)
    points_per_complex: int = Field(default=65, ge=1)
    min_complexes: int = Field(default=5, ge=1)
    evolution_steps: int = Field(default=4, ge=1)
    subcomplex_size: int = Field(default=5, ge=2)
    target_objective: float = 17.0
    convergence_loops: int = Field(default=30, ge=1)
    min_relative_change: float = Field(default=0.005, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_sizes(self) -> Self:
        if self.subcomplex_size > self.points_per_complex:
            raise ValueError("subcomplex_size cannot exceed points_per_complex")
        if self.min_complexes > self.n_complexes:
            raise ValueError("min_complexes cannot exceed n_complexes")
        return self

    @property
    def population_size(self) -> int:
        return self.n_complexes * self.points_per_complex


class PathsConfig(BaseModel):
    inp: Path
    sidecar: Optional[Path] = None
    measurements: Path
    weights: Optional[Path] = None
    reference: Optional[Path] = None


class GroupingConfig(BaseModel):
    method: GroupingMethod = GroupingMethod.KMEANS
    k: int = Field(default=27, ge=1)
    restarts: int = Field(default=10, ge=1)
    max_iter: int = Field(default=300, ge=1)
    min_cluster_size: int = Field(default=5, ge=2)
    min_samples: int = Field(default=5, ge=1)
    resolution: float = Field(default=0.5, gt=0.0)
    reduction_ratio: float = Field(default=0.95, gt=0.0, lt=1.0)
    k_min: int = Field(default=11, ge=1)
    k_max: int = Field(default=99, ge=1)
    step: int = Field(default=2, ge=1)
    baseline_k: int = Field(default=27, ge=1)

    @model_validator(mode="after")
    def _check_sweep(self) -> Self:
        if self.k_min > self.k_max:
            raise ValueError(f"k_min ({self.k_min}) cannot exceed k_max ({self.k_max})")
        return self


class PreprocessingConfig(BaseModel):
    smoothing_window: int = Field(default=5, ge=1)
    night_start: time = time(0, 0)
    night_end: time = time(5, 0)
    timezone: Optional[str] = None

    @model_validator(mode="after")
    def _check_window(self) -> Self:
        if self.smoothing_window % 2 == 0:
            raise ValueError(f"smoothing_window must be odd, got {self.smoothing_window}")
        return self


class PipelineConfig(BaseSettings):
    model_config = SettingsConfigDict(
        extra="ignore",
        env_prefix="ROUGHCAL_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    paths: PathsConfig
    grouping: GroupingConfig = GroupingConfig()
    bounds: BoundsPolicy = BoundsPolicy()
    sce: SceOptions = SceOptions()
    solver: SolverOptions = SolverOptions()
    preprocessing: PreprocessingConfig = PreprocessingConfig()
    n_runs: int = Field(default=5, ge=1)
    seed: int = 0
    out_dir: Path = Path("out")
    simulation_start: Optional[datetime] = None
    variant_id: Optional[str] = None

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        sources: list[PydanticBaseSettingsSource] = [init_settings, env_settings, dotenv_settings]
        if (config_file := _CONFIG_FILE.get()) is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=config_file))
        sources.append(file_secret_settings)
        return tuple(sources)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "PipelineConfig":
        """
        Load the pipeline configuration from a TOML file.

        Relative paths inside the file are resolved against the file's directory.
        Keyword overrides (from the CLI) take precedence over environment and file.
        """
        config_file = Path(path)
        if not config_file.is_file():
            raise FileNotFoundError(f"Config file not found: {config_file}")
        token = _CONFIG_FILE.set(config_file)
        try:
            config = cls(**overrides)
        finally:
            _CONFIG_FILE.reset(token)
        return config.resolve_paths(config_file.parent)

    def resolve_paths(self, base: Path) -> "PipelineConfig":
        def _resolve(p: Optional[Path]) -> Optional[Path]:
            if p is None or p.is_absolute():
                return p
            return base / p

        paths = self.paths.model_copy(
            update={name: _resolve(getattr(self.paths, name)) for name in PathsConfig.model_fields}
        )
        return self.model_copy(update={"paths": paths, "out_dir": _resolve(self.out_dir)})

    def missing_inputs(self) -> list[Path]:
        required = [self.paths.inp, self.paths.measurements]
        optional = [self.paths.sidecar, self.paths.weights, self.paths.reference]
        return [p for p in required + optional if p is not None and not p.exists()]


class RuntimeSettings(BaseSettings):
    """Process-wide knobs read from the environment."""

    model_config = SettingsConfigDict(
        extra="ignore",
        env_prefix="ROUGHCAL_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    threads: int = Field(default=0, ge=0)
    fixed_clock: bool = False

    @property
    def worker_count(self) -> int:
        return self.threads or (os.cpu_count() or 1)


settings = RuntimeSettings()
