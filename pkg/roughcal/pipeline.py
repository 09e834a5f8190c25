"""
Stage orchestration: simulate → attributes → group → calibrate → evaluate → report.

Every stage reads the previous stages' persisted artifacts from the output
directory, so any stage can be rerun on its own. A manifest records the content
hash of each stage's inputs, outputs and configuration section; a stage whose
recorded hashes all still match is skipped.
"""

import json
import logging
import textwrap
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, ClassVar, Optional, Self

import numpy as np
import pandas as pd

from .attributes import (
    build_attribute_matrix,
    encode_features,
    read_attribute_csv,
    read_design_csv,
    reduced_subset,
    write_attribute_csv,
    write_design_csv,
)
from .calibration import (
    ObjectiveSpec,
    apply_roughness,
    calibrate_ensemble,
    read_dvs_csv,
    read_ensemble_csv,
    roughness_table,
    write_dvs_csv,
    write_ensemble_csv,
    write_trace_csv,
)
from .constants import PipelineConfig, settings
from .errors import GroupingError, MetricsError, PipelineError, StageError, StaleArtifact
from .grouping import (
    build_line_graph,
    elbow_sweep,
    group_size_summary,
    hdbscan,
    kmeans,
    louvain_linegraph,
    read_grouping_csv,
    shortlist_candidates,
    vn_coarsen_linegraph,
    write_elbow_csv,
    write_grouping_csv,
)
from .hydraulics import read_simulation_csv, simulate_eps, write_simulation_csv
from .metrics import (
    DescriptorReport,
    acs,
    boundary_index,
    cluster_validity,
    rae_mape,
    repeatability_index,
    station_fit,
    write_rae_csv,
)
from .models import Grouping, MeasurementBook, Network, RunEnsemble
from .network import load_measurements, load_sidecar, merge_metadata, network_summary, read_inp, validate_network, write_inp
from .preprocessing import preprocess_book
from .sce import SceResult
from .types import GroupingMethod
from .utils import file_digest, json_safe, now, payload_digest

LOGGER = logging.getLogger(__name__)

SIMULATION = "simulation.csv"
ATTRIBUTES = "attributes.csv"
ATTRIBUTE_KINDS = "attributes.kinds.json"
DESIGN = "design_matrix.csv"
GROUPING = "grouping.csv"
ELBOW = "elbow.csv"
SHORTLIST = "shortlist.json"
DVS = "dvs.csv"
ENSEMBLE = "ensemble.csv"
ROUGHNESS = "roughness.csv"
CALIBRATED_INP = "calibrated.inp"
STATION_FIT = "station_fit.csv"
RAE = "rae.csv"
DESCRIPTORS = "descriptors.json"
REPORT = "report.json"
MANIFEST = "manifest.json"

KMEANS_FAMILY = (GroupingMethod.KMEANS, GroupingMethod.KMEANS_NG)


def trace_name(run_index: int) -> str:
    return f"trace_{run_index}.csv"


# --- Manifest ---


@dataclass
class StageRecord:
    inputs: dict[str, str]
    outputs: dict[str, str]
    config: str


class Manifest:
    """Stage → content hashes of its inputs, outputs and configuration section."""

    def __init__(self, path: Path, records: Optional[dict[str, StageRecord]] = None) -> None:
        self.path = path
        self.records = records if records is not None else {}

    def __repr__(self) -> str:
        return f"Manifest({self.path}, stages={sorted(self.records)})"

    @staticmethod
    def load(path: Path) -> "Manifest":
        if not path.is_file():
            return Manifest(path)
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise StaleArtifact(f"Manifest {path} is unreadable: {e}") from e
        return Manifest(path, {stage: StageRecord(**record) for stage, record in payload.items()})

    def is_fresh(self, stage: str, inputs: dict[str, str], config: str) -> bool:
        record = self.records.get(stage)
        if record is None or record.inputs != inputs or record.config != config:
            return False
        for name, digest in record.outputs.items():
            path = Path(name)
            if not path.is_file() or file_digest(path) != digest:
                return False
        return True

    def record(self, stage: str, inputs: dict[str, str], outputs: list[Path], config: str) -> None:
        self.records[stage] = StageRecord(inputs, {str(p): file_digest(p) for p in outputs}, config)

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        payload = {stage: asdict(record) for stage, record in sorted(self.records.items())}
        self.path.write_text(json.dumps(payload, indent=2, sort_keys=True))


# --- Context ---


@dataclass
class PipelineContext:
    config: PipelineConfig
    manifest: Manifest
    force: bool = False
    workers: Optional[int] = None

    @property
    def out_dir(self) -> Path:
        return self.config.out_dir

    def artifact(self, name: str) -> Path:
        return self.out_dir / name

    @property
    def method(self) -> GroupingMethod:
        return self.config.grouping.method

    @cached_property
    def network(self) -> Network:
        net = read_inp(self.config.paths.inp)
        if self.config.paths.sidecar is not None:
            net = merge_metadata(net, load_sidecar(self.config.paths.sidecar))
        validate_network(net)
        return net

    @cached_property
    def measurements(self) -> MeasurementBook:
        book = load_measurements(self.config.paths.measurements, self.config.paths.weights)
        return preprocess_book(book, self.config.preprocessing)

    @cached_property
    def objective_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec.build(self.network, self.measurements, self.config.simulation_start)

    def network_inputs(self) -> list[Path]:
        return [p for p in (self.config.paths.inp, self.config.paths.sidecar) if p is not None]

    def measurement_inputs(self) -> list[Path]:
        return [p for p in (self.config.paths.measurements, self.config.paths.weights) if p is not None]


# --- Stages ---


class Stage(ABC):
    """
    One rerunnable step of the pipeline.

    Subclasses declare their input files and the configuration they depend on,
    and write their outputs in execute(), returning the paths written.
    """

    name: ClassVar[str]

    def __init__(self, context: PipelineContext) -> None:
        self.context = context
        self.config = context.config

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    @staticmethod
    def of(name: str, context: PipelineContext) -> "Stage":
        """
        Factory method to create a stage instance.

        Raises:
            ValueError: If no stage has this name
        """
        stage_class = STAGES.get(name)
        if stage_class is None:
            raise ValueError(f"Unknown stage '{name}', expected one of {list(STAGES)}")
        return stage_class(context)

    @abstractmethod
    def inputs(self) -> list[Path]: ...

    @abstractmethod
    def config_section(self) -> Any: ...

    @abstractmethod
    def execute(self) -> list[Path]: ...

    def external_inputs(self) -> list[Path]:
        """Inputs that no stage produces."""
        return [p for p in self.inputs() if p.parent != self.context.out_dir]

    def _input_digests(self) -> dict[str, str]:
        missing = [p for p in self.inputs() if not p.is_file()]
        if missing:
            raise FileNotFoundError(f"Missing inputs: {', '.join(str(p) for p in missing)}")
        return {str(p): file_digest(p) for p in self.inputs()}

    def run(self) -> bool:
        """Execute the stage unless its manifest record is current; True when it ran."""
        manifest = self.context.manifest
        try:
            digests = self._input_digests()
            config = payload_digest(json_safe(self.config_section()))
            if not self.context.force and manifest.is_fresh(self.name, digests, config):
                LOGGER.info(f"Stage '{self.name}' is up to date, skipping")
                return False
            LOGGER.info(f"Stage '{self.name}' started")
            outputs = self.execute()
        except StageError:
            raise
        except Exception as e:
            LOGGER.error(f"Stage '{self.name}' failed: {e}")
            raise StageError(self.name, e) from e
        manifest.record(self.name, digests, outputs, config)
        LOGGER.info(f"Stage '{self.name}' finished, wrote {len(outputs)} artifacts")
        return True


class SimulateStage(Stage):
    name = "simulate"

    def inputs(self) -> list[Path]:
        return self.context.network_inputs()

    def config_section(self) -> Any:
        return self.config.solver.model_dump(mode="json")

    def execute(self) -> list[Path]:
        net = self.context.network
        sim = simulate_eps(net, self.config.solver)
        if not sim.converged:
            LOGGER.warning("Some simulation steps did not converge; attributes use the best iterates")
        path = self.context.artifact(SIMULATION)
        write_simulation_csv(sim, path)
        LOGGER.info(f"Simulated {len(sim)} steps for {network_summary(net)['open_pipes']} open pipes")
        return [path]


class AttributesStage(Stage):
    name = "attributes"

    def inputs(self) -> list[Path]:
        return self.context.network_inputs() + [self.context.artifact(SIMULATION)]

    def config_section(self) -> Any:
        return {"reduced": self.context.method.is_reduced}

    def execute(self) -> list[Path]:
        sim = read_simulation_csv(self.context.artifact(SIMULATION))
        m = build_attribute_matrix(self.context.network, sim)
        attributes_path = self.context.artifact(ATTRIBUTES)
        design_path = self.context.artifact(DESIGN)
        write_attribute_csv(m, attributes_path)
        features = reduced_subset(m) if self.context.method.is_reduced else m
        write_design_csv(encode_features(features), design_path)
        return [attributes_path, self.context.artifact(ATTRIBUTE_KINDS), design_path]


class GroupStage(Stage):
    name = "group"

    def inputs(self) -> list[Path]:
        return self.context.network_inputs() + [self.context.artifact(SIMULATION), self.context.artifact(DESIGN)]

    def config_section(self) -> Any:
        return {"grouping": self.config.grouping.model_dump(mode="json"), "seed": self.config.seed}

    def _group(self) -> Grouping:
        opts = self.config.grouping
        method = self.context.method
        x = read_design_csv(self.context.artifact(DESIGN))
        if method in KMEANS_FAMILY:
            grouping, _ = kmeans(x, opts.k, self.config.seed, opts.restarts, opts.max_iter, method)
            return grouping
        if method.is_clustering:
            return hdbscan(x, opts.min_cluster_size, opts.min_samples, method)
        sim = read_simulation_csv(self.context.artifact(SIMULATION))
        lg = build_line_graph(self.context.network, sim, x.pipe_ids)
        if method == GroupingMethod.LOUVAIN:
            return louvain_linegraph(lg, opts.resolution, self.config.seed)
        return vn_coarsen_linegraph(lg, opts.reduction_ratio)

    def execute(self) -> list[Path]:
        grouping = self._group()
        path = self.context.artifact(GROUPING)
        write_grouping_csv(grouping, path)
        summary = group_size_summary(grouping)
        LOGGER.info(
            textwrap.dedent(
                f"""
                Grouping ({grouping.method.value})
                - Groups:      {summary['n_groups']}
                - Noise pipes: {summary['noise']}
                - Sizes:       min {summary['min']}, median {summary['median']}, max {summary['max']}
                """
            )
        )
        return [path]


class ElbowStage(Stage):
    name = "elbow"

    def inputs(self) -> list[Path]:
        return [self.context.artifact(DESIGN)]

    def config_section(self) -> Any:
        opts = self.config.grouping
        return {
            "k_min": opts.k_min,
            "k_max": opts.k_max,
            "step": opts.step,
            "restarts": opts.restarts,
            "max_iter": opts.max_iter,
            "baseline_k": opts.baseline_k,
            "seed": self.config.seed,
        }

    def execute(self) -> list[Path]:
        opts = self.config.grouping
        x = read_design_csv(self.context.artifact(DESIGN))
        report = elbow_sweep(x, opts.k_min, opts.k_max, opts.step, self.config.seed, opts.restarts, opts.max_iter)
        elbow_path = self.context.artifact(ELBOW)
        shortlist_path = self.context.artifact(SHORTLIST)
        write_elbow_csv(report, elbow_path)
        try:
            shortlist = shortlist_candidates(report, opts.baseline_k)
        except GroupingError as e:
            LOGGER.warning(f"No shortlist: {e}")
            shortlist = {}
        shortlist_path.write_text(json.dumps(shortlist, indent=2, sort_keys=True))
        return [elbow_path, shortlist_path]


class CalibrateStage(Stage):
    name = "calibrate"

    def inputs(self) -> list[Path]:
        return self.context.network_inputs() + self.context.measurement_inputs() + [self.context.artifact(GROUPING)]

    def config_section(self) -> Any:
        return self.config.model_dump(
            mode="json",
            include={"bounds", "sce", "solver", "preprocessing", "n_runs", "seed", "simulation_start"},
        )

    def execute(self) -> list[Path]:
        ctx = self.context
        net = ctx.network
        grouping = read_grouping_csv(ctx.artifact(GROUPING), ctx.method)
        outputs: list[Path] = []

        def _persist_trace(run_index: int, result: SceResult) -> None:
            path = ctx.artifact(trace_name(run_index))
            write_trace_csv(result, path)
            outputs.append(path)

        ensemble = calibrate_ensemble(
            net,
            grouping,
            self.config.bounds,
            ctx.objective_spec,
            self.config.sce,
            n_runs=self.config.n_runs,
            seed=self.config.seed,
            solver_opts=self.config.solver,
            workers=ctx.workers,
            on_result=_persist_trace,
        )
        for name, write in (
            (DVS, lambda p: write_dvs_csv(ensemble.dvs, p)),
            (ENSEMBLE, lambda p: write_ensemble_csv(ensemble, p)),
            (ROUGHNESS, lambda p: roughness_table(net, ensemble).to_csv(p)),
        ):
            write(ctx.artifact(name))
            outputs.append(ctx.artifact(name))
        if (best := ensemble.best_run()) is not None:
            write_inp(apply_roughness(net, ensemble.dvs, np.array(best.roughness)), ctx.artifact(CALIBRATED_INP))
            outputs.append(ctx.artifact(CALIBRATED_INP))
        else:
            LOGGER.warning("Every calibration run failed; no calibrated network written")
        return outputs


class EvaluateStage(Stage):
    name = "evaluate"

    def inputs(self) -> list[Path]:
        ctx = self.context
        reference = [self.config.paths.reference] if self.config.paths.reference is not None else []
        produced = [ctx.artifact(name) for name in (ATTRIBUTES, DESIGN, GROUPING, DVS, ENSEMBLE)]
        return ctx.network_inputs() + ctx.measurement_inputs() + reference + produced

    def config_section(self) -> Any:
        return self.config.model_dump(mode="json", include={"solver", "preprocessing", "simulation_start"})

    def _station_fits(self, ensemble: RunEnsemble) -> pd.DataFrame:
        ctx = self.context
        frames = []
        for run in ensemble:
            if run.failed:
                continue
            calibrated = apply_roughness(ctx.network, ensemble.dvs, np.array(run.roughness))
            fit = station_fit(ctx.objective_spec.aligned(simulate_eps(calibrated, self.config.solver)))
            frames.append(fit.assign(run=run.run_index))
        if not frames:
            return pd.DataFrame(columns=["run", "station", "rmse", "ioa"])
        return pd.concat(frames, ignore_index=True)[["run", "station", "rmse", "ioa"]]

    def _reference(self) -> Optional[dict[str, float]]:
        path = self.config.paths.reference
        if path is None:
            return None
        frame = pd.read_csv(path, dtype={"pipe_id": str})
        return dict(zip(frame["pipe_id"], frame["roughness_mm"].astype(float)))

    def execute(self) -> list[Path]:
        ctx = self.context
        method = ctx.method
        grouping = read_grouping_csv(ctx.artifact(GROUPING), method)
        dvs = read_dvs_csv(ctx.artifact(DVS))
        ensemble = read_ensemble_csv(ctx.artifact(ENSEMBLE), dvs)
        succeeded = RunEnsemble([run for run in ensemble if not run.failed], dvs)
        report = DescriptorReport()
        outputs: list[Path] = []

        m = read_attribute_csv(ctx.artifact(ATTRIBUTES))
        try:
            report.acs = acs(reduced_subset(m) if method.is_reduced else m, grouping)
        except MetricsError as e:
            LOGGER.warning(f"ACS undefined: {e}")
        if method.is_clustering:
            x = read_design_csv(ctx.artifact(DESIGN))
            report.clustering = cluster_validity(x, grouping, with_inertia=method in KMEANS_FAMILY)

        if len(succeeded) and len(dvs):
            report.bi = boundary_index(succeeded)
            if len(succeeded) >= 2:
                report.ri = repeatability_index(succeeded)

        fits = self._station_fits(ensemble)
        fits.to_csv(ctx.artifact(STATION_FIT), index=False)
        outputs.append(ctx.artifact(STATION_FIT))

        if (best := ensemble.best_run()) is not None:
            report.stations = fits[fits["run"] == best.run_index][["station", "rmse", "ioa"]].to_dict("records")
            reference = self._reference()
            if reference is not None:
                rae, mape = rae_mape(dvs.roughness_map(np.array(best.roughness)), reference, ctx.network)
                report.rae = rae.to_dict()
                report.mape = mape
                write_rae_csv(rae, ctx.artifact(RAE))
                outputs.append(ctx.artifact(RAE))

        report.write_json(ctx.artifact(DESCRIPTORS))
        outputs.append(ctx.artifact(DESCRIPTORS))
        LOGGER.info(
            textwrap.dedent(
                f"""
                Descriptors
                - BI:   {report.bi}
                - RI:   {report.ri}
                - MAPE: {report.mape}
                """
            )
        )
        return outputs


# --- Report ---


@dataclass
class RunReport:
    generated_at: str
    variant_id: Optional[str]
    config: dict
    network: dict
    grouping: dict
    clustering: dict
    ensemble: dict
    descriptors: dict
    roughness_table: str
    artifacts: list[str] = field(default_factory=list)

    @staticmethod
    def read_json(path: str | Path) -> "RunReport":
        return RunReport(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return json_safe(asdict(self))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _mean(values: pd.Series) -> Optional[float]:
    finite = values.astype(float)
    finite = finite[np.isfinite(finite)]
    return float(finite.mean()) if len(finite) else None


class ReportStage(Stage):
    name = "report"

    def inputs(self) -> list[Path]:
        produced = [GROUPING, DVS, ENSEMBLE, STATION_FIT, DESCRIPTORS, ROUGHNESS]
        return self.context.network_inputs() + [self.context.artifact(name) for name in produced]

    def config_section(self) -> Any:
        return self.config.model_dump(mode="json")

    def execute(self) -> list[Path]:
        ctx = self.context
        grouping = read_grouping_csv(ctx.artifact(GROUPING), ctx.method)
        dvs = read_dvs_csv(ctx.artifact(DVS))
        ensemble = pd.read_csv(ctx.artifact(ENSEMBLE)).drop_duplicates(subset="run")
        fits = pd.read_csv(ctx.artifact(STATION_FIT))
        descriptors = json.loads(ctx.artifact(DESCRIPTORS).read_text())
        objectives = ensemble["objective"].astype(float)
        finite = objectives[np.isfinite(objectives)]

        report = RunReport(
            generated_at=now().isoformat(),
            variant_id=self.config.variant_id,
            config=self.config.model_dump(mode="json"),
            network=network_summary(ctx.network),
            grouping={"method": grouping.method.value, "n_dvs": len(dvs), **group_size_summary(grouping)},
            clustering=descriptors.pop("clustering") or {},
            ensemble={
                "runs": len(ensemble),
                "failed_runs": int(len(objectives) - len(finite)),
                "mean_objective": float(finite.mean()) if len(finite) else None,
                "min_objective": float(finite.min()) if len(finite) else None,
                "mean_rmse": _mean(fits["rmse"]),
                "mean_ioa": _mean(fits["ioa"]),
                "mean_wall_time_s": float(ensemble["wall_time_s"].astype(float).mean()),
            },
            descriptors=descriptors,
            roughness_table=ROUGHNESS,
            artifacts=sorted(p.name for p in ctx.out_dir.iterdir() if p.name not in (REPORT, MANIFEST)),
        )
        path = ctx.artifact(REPORT)
        report.write_json(path)
        return [path]


STAGES: dict[str, type[Stage]] = {
    stage.name: stage
    for stage in (SimulateStage, AttributesStage, GroupStage, ElbowStage, CalibrateStage, EvaluateStage, ReportStage)
}
RUN_ORDER = ["simulate", "attributes", "group", "calibrate", "evaluate", "report"]


# --- Pipeline ---


class Pipeline:
    """
    Runs stages in order against one output directory.

    Use as a context manager; the manifest is written on exit even when a stage fails,
    so completed stages stay recorded and partial outputs are kept.
    """

    def __init__(self, config: PipelineConfig, force: bool = False, workers: Optional[int] = None) -> None:
        manifest = Manifest.load(config.out_dir / MANIFEST)
        self.context = PipelineContext(config, manifest, force, workers or settings.worker_count)

    def __repr__(self) -> str:
        return f"Pipeline(out_dir={self.context.out_dir}, force={self.context.force})"

    def __enter__(self) -> Self:
        self.context.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def close(self) -> None:
        self.context.manifest.write()

    def _preflight(self, stages: list[Stage]) -> None:
        for stage in stages:
            if missing := [p for p in stage.external_inputs() if not p.is_file()]:
                cause = FileNotFoundError(f"Missing inputs: {', '.join(str(p) for p in missing)}")
                LOGGER.error(f"Stage '{stage.name}' cannot start: {cause}")
                raise StageError(stage.name, cause)

    def run(self, names: Optional[list[str]] = None) -> list[str]:
        """Run the named stages (the full sequence by default); returns the stages that executed."""
        stages = [Stage.of(name, self.context) for name in (names or RUN_ORDER)]
        self._preflight(stages)
        return [stage.name for stage in stages if stage.run()]


def run_pipeline(config: PipelineConfig, force: bool = False, workers: Optional[int] = None) -> RunReport:
    """Full pipeline; returns the report written to the output directory."""
    with Pipeline(config, force, workers) as pipeline:
        ran = pipeline.run()
    report_path = config.out_dir / REPORT
    if not report_path.is_file():
        raise PipelineError(f"Pipeline finished without a report at {report_path}")
    LOGGER.info(f"Pipeline finished ({len(ran)} stages ran), report at {report_path}")
    return RunReport.read_json(report_path)
