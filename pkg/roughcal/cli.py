import textwrap
import traceback
from pathlib import Path
from typing import Annotated, Optional

import typer
from pydantic import ValidationError

from . import logging_config
from .constants import PipelineConfig
from .errors import ConfigError, EmptyAfterScreening, NetworkError, ObjectiveSpecError, StageError
from .pipeline import Pipeline, run_pipeline
from .synthetic import write_twin
from .types import GroupingMethod

app = typer.Typer(help="Group-wise pipe roughness calibration for water distribution networks")
logger = logging_config.init(__name__)

EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_STAGE = 3
INPUT_ERRORS = (NetworkError, FileNotFoundError, EmptyAfterScreening, ObjectiveSpecError)

ConfigOption = Annotated[Path, typer.Option("--config", "-c", help="Pipeline TOML file.")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Base random seed. (Overrides config)")]
RunsOption = Annotated[Optional[int], typer.Option("--runs", help="Calibration runs. (Overrides config)")]
MethodOption = Annotated[
    Optional[GroupingMethod], typer.Option("--method", help="Grouping method. (Overrides config)")
]
OutOption = Annotated[Optional[Path], typer.Option("--out", help="Output directory. (Overrides config)")]
ForceOption = Annotated[bool, typer.Option("--force", help="Rerun even when the manifest is current.")]


def exit_code(e: Exception) -> int:
    """1 for configuration errors, 2 for bad input data, 3 for any other stage failure."""
    if isinstance(e, ConfigError):
        return EXIT_CONFIG
    cause = e.cause if isinstance(e, StageError) else e
    if isinstance(cause, INPUT_ERRORS):
        return EXIT_INPUT
    return EXIT_STAGE


def load_config(
    config: Path,
    seed: Optional[int] = None,
    runs: Optional[int] = None,
    method: Optional[GroupingMethod] = None,
    out: Optional[Path] = None,
    **grouping,
) -> PipelineConfig:
    overrides: dict = {}
    if seed is not None:
        overrides["seed"] = seed
    if runs is not None:
        overrides["n_runs"] = runs
    if out is not None:
        overrides["out_dir"] = out.resolve()
    if method is not None:
        grouping["method"] = method
    if grouping := {key: value for key, value in grouping.items() if value is not None}:
        overrides["grouping"] = grouping
    try:
        return PipelineConfig.load(config, **overrides)
    except (ValidationError, FileNotFoundError) as e:
        raise ConfigError(f"Invalid configuration {config}: {e}") from e


def _terminate(e: Exception) -> typer.Exit:
    logger.error(f"Application terminated by {e}")
    logger.debug(traceback.format_exc())
    return typer.Exit(code=exit_code(e))


def _run_stages(stages: list[str], config: PipelineConfig, force: bool) -> None:
    with Pipeline(config, force=force) as pipeline:
        ran = pipeline.run(stages)
    logger.info(f"Stages run: {ran or 'none (all up to date)'}")


def _stage_command(stage: str, **overrides) -> None:
    force = overrides.pop("force", False)
    try:
        _run_stages([stage], load_config(**overrides), force)
    except Exception as e:
        raise _terminate(e)


@app.command()
def simulate(config: ConfigOption, out: OutOption = None, force: ForceOption = False):
    """Extended-period simulation of the input network."""
    _stage_command("simulate", config=config, out=out, force=force)


@app.command()
def attributes(config: ConfigOption, method: MethodOption = None, out: OutOption = None, force: ForceOption = False):
    """Per-pipe attribute matrix and its encoded design matrix."""
    _stage_command("attributes", config=config, method=method, out=out, force=force)


@app.command()
def group(
    config: ConfigOption,
    method: MethodOption = None,
    seed: SeedOption = None,
    k: Annotated[Optional[int], typer.Option("--k", help="Cluster count for k-means variants.")] = None,
    out: OutOption = None,
    force: ForceOption = False,
):
    """Group calibratable pipes with the configured method."""
    _stage_command("group", config=config, method=method, seed=seed, k=k, out=out, force=force)


@app.command()
def elbow(
    config: ConfigOption,
    seed: SeedOption = None,
    k_min: Annotated[Optional[int], typer.Option("--k-min", help="Smallest k of the sweep.")] = None,
    k_max: Annotated[Optional[int], typer.Option("--k-max", help="Largest k of the sweep.")] = None,
    step: Annotated[Optional[int], typer.Option("--step", help="Step between swept k values.")] = None,
    out: OutOption = None,
    force: ForceOption = False,
):
    """k-means elbow sweep with SC/DBI per k and a candidate-k shortlist."""
    _stage_command("elbow", config=config, seed=seed, k_min=k_min, k_max=k_max, step=step, out=out, force=force)


@app.command()
def calibrate(
    config: ConfigOption,
    seed: SeedOption = None,
    runs: RunsOption = None,
    method: MethodOption = None,
    out: OutOption = None,
    force: ForceOption = False,
):
    """Repeated SCE calibration of group roughness."""
    _stage_command("calibrate", config=config, seed=seed, runs=runs, method=method, out=out, force=force)


@app.command()
def evaluate(config: ConfigOption, method: MethodOption = None, out: OutOption = None, force: ForceOption = False):
    """Fit metrics and calibration descriptors for the ensemble."""
    _stage_command("evaluate", config=config, method=method, out=out, force=force)


@app.command()
def report(config: ConfigOption, method: MethodOption = None, out: OutOption = None, force: ForceOption = False):
    """Assemble the JSON run report."""
    _stage_command("report", config=config, method=method, out=out, force=force)


@app.command()
def run(
    config: ConfigOption,
    seed: SeedOption = None,
    runs: RunsOption = None,
    method: MethodOption = None,
    out: OutOption = None,
    force: ForceOption = False,
):
    """Run the full pipeline from simulation to report."""
    logger.info("Pipeline initiated. Loading configuration...")
    try:
        result = run_pipeline(load_config(config, seed, runs, method, out), force=force)
    except Exception as e:
        raise _terminate(e)
    ensemble, descriptors = result.ensemble, result.descriptors
    logger.info(
        textwrap.dedent(
            f"""
            ===Run Report===
            Variant: {result.variant_id or result.grouping['method']}
            DVs: {result.grouping['n_dvs']}
            Mean objective: {ensemble['mean_objective']}
            Mean RMSE: {ensemble['mean_rmse']}
            Mean IOA: {ensemble['mean_ioa']}

            BI: {descriptors.get('bi')}
            RI: {descriptors.get('ri')}
            MAPE: {descriptors.get('mape')}
            """
        )
    )


@app.command()
def twin(
    out: Annotated[Path, typer.Argument(help="Directory for the synthetic dataset.")],
    seed: Annotated[int, typer.Option("--seed", help="Random seed.")] = 0,
    sigma: Annotated[float, typer.Option("--sigma", help="Pressure noise std (m).")] = 0.05,
    stations: Annotated[int, typer.Option("--stations", help="Measurement stations.")] = 8,
):
    """Write a synthetic-twin dataset with a ready roughcal.toml."""
    try:
        dataset = write_twin(out, seed=seed, sigma=sigma, n_stations=stations)
    except Exception as e:
        raise _terminate(e)
    logger.info(f"Run it with: roughcal run --config {dataset.config}")
