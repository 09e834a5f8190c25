"""
Roughness calibration: decision variables from a grouping, the weighted-RMSE
pressure objective, and repeated SCE runs collected into an ensemble.
"""

import logging
import math
import textwrap
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
import pandas as pd

from .constants import BoundsPolicy, SceOptions, SolverOptions
from .errors import EmptyGroup, HydraulicsError, InvertedBounds, ObjectiveSpecError, UnknownPipeId
from .hydraulics import HydraulicSolver
from .metrics import rmse
from .models import (
    CalibrationRun,
    DecisionVariable,
    DecisionVariables,
    Grouping,
    MeasurementBook,
    Network,
    RunEnsemble,
    SimulationResult,
)
from .sce import SceResult, sce_minimize
from .types import Termination
from .utils import Stopwatch

LOGGER = logging.getLogger(__name__)


# --- Decision variables ---


def build_decision_variables(g: Grouping, net: Network, policy: Optional[BoundsPolicy] = None) -> DecisionVariables:
    """
    One bounded decision variable per non-noise group.

    Bounds are multiples of the group's smallest diameter (mm); groups made only of
    transmission mains use the tighter upper multiplier. Noise pipes are held.
    """
    policy = policy or BoundsPolicy()
    dvs = []
    for label, members in g.groups().items():
        if not members:
            raise EmptyGroup(f"Group {label} has no pipes")
        pipes = []
        for pipe_id in members:
            if (pipe := net.pipe(pipe_id)) is None:
                raise UnknownPipeId(f"Grouped pipe '{pipe_id}' not found in network")
            pipes.append(pipe)
        d_min = min(p.diameter for p in pipes)
        upper_factor = policy.c_hi_transmission if all(p.is_transmission for p in pipes) else policy.c_hi
        lower, upper = policy.c_lo * d_min, upper_factor * d_min
        if not 0 < lower < upper:
            raise InvertedBounds(f"Group {label} bounds [{lower}, {upper}] mm are inverted")
        dvs.append(DecisionVariable(label=label, members=tuple(members), lower=lower, upper=upper))

    if not dvs:
        LOGGER.warning(f"Grouping {g.method.value} has no groups; all {len(g)} pipes are held at initial roughness")
    decision_variables = DecisionVariables(dvs, held=tuple(g.noise))
    LOGGER.info(f"Built {len(dvs)} decision variables, {len(g.noise)} pipes held at initial roughness")
    return decision_variables


def apply_roughness(net: Network, dvs: DecisionVariables, x: np.ndarray) -> Network:
    """Network copy with DV roughness written into every member pipe; held pipes untouched."""
    if len(x) != len(dvs):
        raise ValueError(f"Expected {len(dvs)} roughness values, got {len(x)}")
    return net.with_roughness(dvs.roughness_map(np.asarray(x, dtype=float)))


# --- Objective ---


@dataclass(frozen=True, eq=False)
class StationTarget:
    node: str
    weight: float
    steps: np.ndarray  # simulation step index per sample
    observed: np.ndarray  # m H₂O


def _default_start(book: MeasurementBook, net: Network) -> pd.Timestamp:
    first = min(series.samples.index[0] for series in book.values() if len(series))
    return first.normalize() + pd.Timedelta(hours=net.times.start_clock)


def _align_tz(start: pd.Timestamp, index: pd.DatetimeIndex) -> pd.Timestamp:
    if index.tz is not None and start.tzinfo is None:
        return start.tz_localize(index.tz)
    if index.tz is None and start.tzinfo is not None:
        return start.tz_convert(None)
    return start


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Measurement stations aligned to simulation steps."""

    stations: tuple[StationTarget, ...]
    start: pd.Timestamp

    def __repr__(self) -> str:
        return f"ObjectiveSpec(stations={len(self.stations)}, start={self.start})"

    @staticmethod
    def build(
        net: Network,
        book: MeasurementBook,
        start: Optional[datetime] = None,
    ) -> "ObjectiveSpec":
        """
        Map each sample to the nearest simulation step.

        Samples more than half a timestep outside the simulated horizon are dropped.
        The default start is midnight of the earliest measurement day plus the
        network's start clock time.

        Raises:
            ObjectiveSpecError: Unknown station node or a station with no usable sample
        """
        if not book:
            raise ObjectiveSpecError("No measurement stations")
        origin = pd.Timestamp(start) if start is not None else _default_start(book, net)
        times = net.times
        last_step = times.step_count - 1

        stations = []
        for station_id, series in book.items():
            if not net.has_node(station_id):
                raise ObjectiveSpecError(f"Station '{station_id}' is not a network node")
            index = series.samples.index
            offsets = (index - _align_tz(origin, index)) / timedelta(hours=1)
            steps = np.rint(np.asarray(offsets, dtype=float) / times.timestep).astype(int)
            usable = (steps >= 0) & (steps <= last_step)
            if not usable.any():
                raise ObjectiveSpecError(f"Station '{station_id}' has no samples inside the simulated horizon")
            stations.append(
                StationTarget(
                    node=station_id,
                    weight=series.weight,
                    steps=steps[usable],
                    observed=series.samples.to_numpy(dtype=float)[usable],
                )
            )
        spec = ObjectiveSpec(tuple(stations), origin)
        LOGGER.debug(f"Aligned {sum(len(s.steps) for s in stations)} samples from {len(stations)} stations")
        return spec

    def aligned(self, sim: SimulationResult) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Station → (observed, simulated) pressure pairs."""
        pairs = {}
        for station in self.stations:
            pressures = sim.pressure_series(station.node)
            pairs[station.node] = (station.observed, pressures[station.steps])
        return pairs

    def combine(self, station_rmse: Mapping[str, float]) -> float:
        """Σ ω_m · RMSE_m."""
        return float(sum(s.weight * station_rmse[s.node] for s in self.stations))

    def evaluate(self, sim: SimulationResult) -> float:
        return self.combine({node: rmse(obs, simulated) for node, (obs, simulated) in self.aligned(sim).items()})


class Objective:
    """
    Callable objective over DV roughness vectors.

    Each thread gets its own HydraulicSolver. Failed or non-converged simulations
    evaluate to +inf.
    """

    def __init__(
        self,
        net: Network,
        dvs: DecisionVariables,
        spec: ObjectiveSpec,
        solver_opts: Optional[SolverOptions] = None,
    ) -> None:
        self.net = net
        self.dvs = dvs
        self.spec = spec
        self.solver_opts = solver_opts or SolverOptions()
        self._local = threading.local()

    @property
    def solver(self) -> HydraulicSolver:
        if (solver := getattr(self._local, "solver", None)) is None:
            solver = self._local.solver = HydraulicSolver(self.net, self.solver_opts)
        return solver

    def __call__(self, x: np.ndarray) -> float:
        if len(x) != len(self.dvs):
            raise ValueError(f"Expected {len(self.dvs)} roughness values, got {len(x)}")
        solver = self.solver
        try:
            sim = solver.simulate(solver.roughness_vector(self.dvs.roughness_map(x)), strict=True)
        except HydraulicsError as e:
            LOGGER.warning(f"Objective evaluation failed: {e}")
            return math.inf
        return self.spec.evaluate(sim)


def objective(
    net: Network,
    dvs: DecisionVariables,
    x: np.ndarray,
    spec: ObjectiveSpec,
    solver_opts: Optional[SolverOptions] = None,
) -> float:
    return Objective(net, dvs, spec, solver_opts)(np.asarray(x, dtype=float))


# --- Ensemble ---


def calibrate_ensemble(
    net: Network,
    grouping: Grouping,
    policy: BoundsPolicy,
    spec: ObjectiveSpec,
    opts: SceOptions,
    n_runs: int = 5,
    seed: int = 0,
    solver_opts: Optional[SolverOptions] = None,
    workers: Optional[int] = None,
    on_result: Optional[Callable[[int, SceResult], None]] = None,
) -> RunEnsemble:
    """
    Repeat SCE calibration n_runs times with seeds seed, seed+1, ...

    on_result receives every run's SceResult (e.g. to persist its trace).
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be positive, got {n_runs}")
    dvs = build_decision_variables(grouping, net, policy)
    f = Objective(net, dvs, spec, solver_opts)
    ensemble = RunEnsemble(dvs=dvs)

    for i in range(n_runs):
        run_seed = seed + i
        stopwatch = Stopwatch()
        if len(dvs) == 0:
            value = f(np.zeros(0))
            ensemble.add(CalibrationRun(i, run_seed, (), value, 1, stopwatch.elapsed, Termination.MAX_CALLS))
            continue
        result = sce_minimize(f, dvs.lower, dvs.upper, opts.model_copy(update={"seed": run_seed}), workers)
        if on_result is not None:
            on_result(i, result)
        run = CalibrationRun(
            run_index=i,
            seed=run_seed,
            roughness=tuple(float(v) for v in result.best_x),
            objective=result.best_f,
            n_calls=result.n_calls,
            wall_time=stopwatch.elapsed,
            termination=result.termination,
        )
        ensemble.add(run)
        LOGGER.info(
            f"Run {i + 1}/{n_runs} (seed {run_seed}): objective={run.objective:.6g}, "
            f"calls={run.n_calls}, termination={result.termination.value}"
        )

    objectives = np.array([run.objective for run in ensemble], dtype=float)
    finite = objectives[np.isfinite(objectives)]
    LOGGER.info(
        textwrap.dedent(
            f"""
            Calibration ensemble
            - Runs:            {len(ensemble)} ({len(ensemble) - finite.size} failed)
            - DVs:             {len(dvs)}
            - Best objective:  {finite.min() if finite.size else math.inf:.6g}
            - Mean objective:  {finite.mean() if finite.size else math.inf:.6g}
            """
        )
    )
    return ensemble


def roughness_table(net: Network, ensemble: RunEnsemble) -> pd.DataFrame:
    """Per-pipe roughness (mm): initial value and each run's calibrated value."""
    pipe_ids = [p.id for p in net.calibratable_pipes]
    table = pd.DataFrame({"initial": [net.pipe(p).roughness for p in pipe_ids]}, index=pd.Index(pipe_ids, name="pipe_id"))
    for run in ensemble:
        calibrated = ensemble.dvs.roughness_map(np.array(run.roughness))
        table[f"run_{run.run_index}"] = [calibrated.get(p, table.at[p, "initial"]) for p in pipe_ids]
    return table


# --- CSV I/O ---


ENSEMBLE_COLUMNS = ["run", "seed", "dv_label", "roughness_mm", "objective", "n_calls", "wall_time_s", "termination"]


def write_ensemble_csv(ensemble: RunEnsemble, path: str | Path) -> None:
    rows = []
    for run in ensemble:
        termination = run.termination.value if run.termination else None
        for dv, value in zip(ensemble.dvs, run.roughness):
            rows.append([run.run_index, run.seed, dv.label, value, run.objective, run.n_calls, run.wall_time, termination])
        if not len(ensemble.dvs):
            rows.append([run.run_index, run.seed, None, None, run.objective, run.n_calls, run.wall_time, termination])
    pd.DataFrame(rows, columns=ENSEMBLE_COLUMNS).to_csv(path, index=False)


def read_ensemble_csv(path: str | Path, dvs: DecisionVariables) -> RunEnsemble:
    frame = pd.read_csv(path)
    ensemble = RunEnsemble(dvs=dvs)
    order = {dv.label: i for i, dv in enumerate(dvs)}
    for run_index, rows in frame.groupby("run", sort=True):
        first = rows.iloc[0]
        scored = rows.dropna(subset=["dv_label"])
        roughness = [math.nan] * len(dvs)
        for row in scored.itertuples(index=False):
            roughness[order[int(row.dv_label)]] = float(row.roughness_mm)
        termination = first["termination"]
        ensemble.add(
            CalibrationRun(
                run_index=int(run_index),
                seed=int(first["seed"]),
                roughness=tuple(roughness),
                objective=float(first["objective"]),
                n_calls=int(first["n_calls"]),
                wall_time=float(first["wall_time_s"]),
                termination=Termination(termination) if isinstance(termination, str) else None,
            )
        )
    return ensemble


def write_trace_csv(result: SceResult, path: str | Path) -> None:
    result.to_frame().to_csv(path, index=False)


def write_dvs_csv(dvs: DecisionVariables, path: str | Path) -> None:
    rows = [(dv.label, pipe_id, dv.lower, dv.upper) for dv in dvs for pipe_id in dv.members]
    rows += [(-1, pipe_id, None, None) for pipe_id in dvs.held]
    pd.DataFrame(rows, columns=["label", "pipe_id", "lower_mm", "upper_mm"]).to_csv(path, index=False)


def read_dvs_csv(path: str | Path) -> DecisionVariables:
    frame = pd.read_csv(path, dtype={"pipe_id": str})
    held = tuple(frame.loc[frame["label"] < 0, "pipe_id"])
    dvs = [
        DecisionVariable(
            label=int(label),
            members=tuple(rows["pipe_id"]),
            lower=float(rows["lower_mm"].iloc[0]),
            upper=float(rows["upper_mm"].iloc[0]),
        )
        for label, rows in frame[frame["label"] >= 0].groupby("label", sort=True)
    ]
    return DecisionVariables(dvs, held=held)
