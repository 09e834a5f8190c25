import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Mapping, Optional

import networkx as nx
import numpy as np
import pandas as pd

from .constants import NOISE
from .errors import InvalidGrouping, InvalidNetwork
from .types import AttributeKind, ElementKind, GroupingMethod, PipeRole, PipeStatus, Termination

LOGGER = logging.getLogger(__name__)


# --- Network ---


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float  # m
    base_demand: float = 0.0  # m³/h
    pattern_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.base_demand < 0:
            raise InvalidNetwork(f"Junction '{self.id}' has negative demand {self.base_demand}")


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float  # m
    pattern_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.head <= 0:
            raise InvalidNetwork(f"Reservoir '{self.id}' must have positive head, got {self.head}")


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float  # m
    diameter: float  # mm
    roughness: float  # mm, absolute Darcy-Weisbach roughness
    status: PipeStatus = PipeStatus.OPEN
    material: str = "unknown"
    age: float = 0.0  # years
    role: PipeRole = PipeRole.DISTRIBUTION
    dma: str = "none"
    calibratable: bool = True
    minor_loss: float = 0.0

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise InvalidNetwork(f"Pipe '{self.id}' must have positive length, got {self.length}")
        if self.diameter <= 0:
            raise InvalidNetwork(f"Pipe '{self.id}' must have positive diameter, got {self.diameter}")
        if not 0 < self.roughness < self.diameter:
            raise InvalidNetwork(
                f"Pipe '{self.id}' roughness {self.roughness} mm must lie in (0, diameter={self.diameter})"
            )

    def __repr__(self) -> str:
        return f"Pipe({self.id}, {self.from_node}->{self.to_node}, D={self.diameter}, k={self.roughness})"

    @property
    def is_open(self) -> bool:
        return self.status != PipeStatus.CLOSED

    @property
    def is_transmission(self) -> bool:
        return self.role == PipeRole.TRANSMISSION


@dataclass(frozen=True)
class DemandPattern:
    id: str
    multipliers: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(m < 0 for m in self.multipliers):
            raise InvalidNetwork(f"Pattern '{self.id}' has negative multipliers")

    def __len__(self) -> int:
        return len(self.multipliers)

    def at(self, step: int) -> float:
        return self.multipliers[step]


@dataclass(frozen=True)
class SimulationTimes:
    duration: float = 0.0  # h
    timestep: float = 1.0  # h
    start_clock: float = 0.0  # h after midnight

    @property
    def step_count(self) -> int:
        return max(1, int(round(self.duration / self.timestep)))

    def offsets(self) -> tuple[float, ...]:
        return tuple(i * self.timestep for i in range(self.step_count))


@dataclass(frozen=True)
class Network:
    junctions: tuple[Junction, ...]
    reservoirs: tuple[Reservoir, ...]
    pipes: tuple[Pipe, ...]
    patterns: Mapping[str, DemandPattern] = field(default_factory=dict)
    times: SimulationTimes = SimulationTimes()
    title: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __repr__(self) -> str:
        return (
            f"Network(junctions={len(self.junctions)}, reservoirs={len(self.reservoirs)}, "
            f"pipes={len(self.pipes)}, patterns={len(self.patterns)})"
        )

    @cached_property
    def _junction_index(self) -> dict[str, Junction]:
        return {j.id: j for j in self.junctions}

    @cached_property
    def _reservoir_index(self) -> dict[str, Reservoir]:
        return {r.id: r for r in self.reservoirs}

    @cached_property
    def _pipe_index(self) -> dict[str, Pipe]:
        return {p.id: p for p in self.pipes}

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(j.id for j in self.junctions) + tuple(r.id for r in self.reservoirs)

    def has_node(self, node_id: str) -> bool:
        return node_id in self._junction_index or node_id in self._reservoir_index

    def junction(self, node_id: str) -> Optional[Junction]:
        return self._junction_index.get(node_id)

    def reservoir(self, node_id: str) -> Optional[Reservoir]:
        return self._reservoir_index.get(node_id)

    def pipe(self, pipe_id: str) -> Optional[Pipe]:
        return self._pipe_index.get(pipe_id)

    def elevation(self, node_id: str) -> float:
        if (j := self.junction(node_id)) is not None:
            return j.elevation
        if (r := self.reservoir(node_id)) is not None:
            return r.head
        raise KeyError(f"Node '{node_id}' not found in network")

    @property
    def open_pipes(self) -> tuple[Pipe, ...]:
        return tuple(p for p in self.pipes if p.is_open)

    @property
    def calibratable_pipes(self) -> tuple[Pipe, ...]:
        return tuple(p for p in self.pipes if p.is_open and p.calibratable)

    def with_pipes(self, pipes: Mapping[str, Pipe]) -> "Network":
        """Copy with the given pipes replaced by id."""
        return replace(self, pipes=tuple(pipes.get(p.id, p) for p in self.pipes))

    def with_roughness(self, roughness: Mapping[str, float]) -> "Network":
        return self.with_pipes(
            {pid: replace(self._pipe_index[pid], roughness=float(k)) for pid, k in roughness.items()}
        )


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
    station_node: str
    samples: pd.Series  # DatetimeIndex → pressure (m H₂O)
    weight: float = 1.0

    def __repr__(self) -> str:
        return f"MeasurementSeries({self.station_node}, n={len(self.samples)}, w={self.weight})"

    def __len__(self) -> int:
        return len(self.samples)

    def with_samples(self, samples: pd.Series) -> "MeasurementSeries":
        return replace(self, samples=samples)


class MeasurementBook(dict[str, MeasurementSeries]):
    """Dict mapping station node id to its pressure series."""

    def __repr__(self) -> str:
        return f"MeasurementBook({list(self.values())})"

    @property
    def stations(self) -> list[str]:
        return list(self.keys())

    def total_samples(self) -> int:
        return sum(len(s) for s in self.values())


# --- Hydraulics ---


@dataclass(frozen=True, eq=False)
class StepResult:
    node_ids: tuple[str, ...]
    pipe_ids: tuple[str, ...]  # open pipes only
    node_head: np.ndarray  # m
    node_pressure: np.ndarray  # m H₂O
    pipe_flow: np.ndarray  # m³/h, positive from → to
    converged: bool
    iterations: int

    def __repr__(self) -> str:
        return f"StepResult(converged={self.converged}, iterations={self.iterations})"

    @cached_property
    def _node_pos(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.node_ids)}

    @cached_property
    def _pipe_pos(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.pipe_ids)}

    def head(self, node_id: str) -> float:
        return float(self.node_head[self._node_pos[node_id]])

    def pressure(self, node_id: str) -> float:
        return float(self.node_pressure[self._node_pos[node_id]])

    def flow(self, pipe_id: str) -> float:
        return float(self.pipe_flow[self._pipe_pos[pipe_id]])

    def has_pipe(self, pipe_id: str) -> bool:
        return pipe_id in self._pipe_pos


@dataclass(frozen=True, eq=False)
class SimulationResult:
    steps: tuple[StepResult, ...]
    timestamps: tuple[float, ...]  # h from simulation start

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.steps)

    def flow_series(self, pipe_id: str) -> np.ndarray:
        return np.array([s.flow(pipe_id) for s in self.steps])

    def pressure_series(self, node_id: str) -> np.ndarray:
        return np.array([s.pressure(node_id) for s in self.steps])

    def to_frame(self) -> pd.DataFrame:
        """Long-format table: timestamp, element_id, kind, value."""
        frames = []
        for t, step in zip(self.timestamps, self.steps):
            for kind, ids, values in (
                (ElementKind.HEAD, step.node_ids, step.node_head),
                (ElementKind.PRESSURE, step.node_ids, step.node_pressure),
                (ElementKind.FLOW, step.pipe_ids, step.pipe_flow),
            ):
                frames.append(
                    pd.DataFrame({"timestamp": t, "element_id": ids, "kind": kind.value, "value": values})
                )
        return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True)
class FlowStats:
    min: float
    max: float
    mean: float
    median: float
    std: float


# --- Attributes ---


@dataclass(frozen=True, eq=False)
class AttributeMatrix:
    frame: pd.DataFrame  # index: pipe ids
    kinds: Mapping[str, AttributeKind]

    def __post_init__(self) -> None:
        missing = set(self.frame.columns) ^ set(self.kinds)
        if missing:
            raise ValueError(f"Attribute kinds do not match columns: {sorted(missing)}")

    def __len__(self) -> int:
        return len(self.frame)

    def __repr__(self) -> str:
        return f"AttributeMatrix(rows={len(self.frame)}, columns={list(self.frame.columns)})"

    @property
    def pipe_ids(self) -> list[str]:
        return [str(i) for i in self.frame.index]

    @property
    def columns(self) -> list[str]:
        return list(self.frame.columns)

    def select(self, columns: list[str]) -> "AttributeMatrix":
        return AttributeMatrix(self.frame[columns].copy(), {c: self.kinds[c] for c in columns})


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    frame: pd.DataFrame  # index: pipe ids, all float
    provenance: Mapping[str, str]  # design column → source attribute

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def values(self) -> np.ndarray:
        return self.frame.to_numpy(dtype=float)

    @property
    def pipe_ids(self) -> list[str]:
        return [str(i) for i in self.frame.index]

    @property
    def sources(self) -> set[str]:
        return set(self.provenance.values())


# --- Grouping ---


@dataclass
class Grouping:
    labels: dict[str, int]  # pipe id → label, NOISE reserved
    method: GroupingMethod
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def __repr__(self) -> str:
        return f"Grouping({self.method.value}, groups={self.n_groups}, noise={len(self.noise)})"

    @property
    def pipe_ids(self) -> list[str]:
        return list(self.labels.keys())

    def label_array(self, pipe_ids: Optional[list[str]] = None) -> np.ndarray:
        ids = pipe_ids if pipe_ids is not None else self.pipe_ids
        return np.array([self.labels[p] for p in ids], dtype=int)

    @property
    def n_groups(self) -> int:
        return len({label for label in self.labels.values() if label != NOISE})

    @property
    def noise(self) -> list[str]:
        return [p for p, label in self.labels.items() if label == NOISE]

    def groups(self) -> dict[int, list[str]]:
        """Non-noise groups in label order."""
        members: dict[int, list[str]] = {}
        for pipe_id, label in self.labels.items():
            if label != NOISE:
                members.setdefault(label, []).append(pipe_id)
        return dict(sorted(members.items()))

    def validate(self, expected: Optional[list[str]] = None) -> None:
        if expected is not None and (missing := set(expected) - set(self.labels)):
            raise InvalidGrouping(f"Grouping is missing {len(missing)} pipes: {sorted(missing)[:5]}")
        labels = sorted({label for label in self.labels.values() if label != NOISE})
        if labels != list(range(len(labels))):
            raise InvalidGrouping(f"Group labels are not contiguous from 0: {labels[:10]}")
        if any(label < NOISE for label in self.labels.values()):
            raise InvalidGrouping("Group labels below -1 are not allowed")


@dataclass(frozen=True)
class ElbowRow:
    k: int
    inertia: Optional[float]
    sc: Optional[float]
    dbi: Optional[float]
    error: Optional[str] = None


@dataclass(frozen=True)
class ElbowReport:
    rows: tuple[ElbowRow, ...]

    @property
    def ks(self) -> list[int]:
        return [r.k for r in self.rows]

    def valid_rows(self) -> list[ElbowRow]:
        return [r for r in self.rows if r.error is None]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "k": [r.k for r in self.rows],
                "inertia": [r.inertia for r in self.rows],
                "sc": [r.sc for r in self.rows],
                "dbi": [r.dbi for r in self.rows],
            }
        )


@dataclass(frozen=True, eq=False)
class LineGraph:
    graph: nx.DiGraph  # nodes: pipe ids

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    @property
    def pipe_ids(self) -> list[str]:
        return list(self.graph.nodes)

    def to_undirected(self) -> nx.Graph:
        return nx.Graph(self.graph.to_undirected(as_view=False))


# --- Calibration ---


@dataclass(frozen=True)
class DecisionVariable:
    label: int
    members: tuple[str, ...]
    lower: float  # mm
    upper: float  # mm

    def __repr__(self) -> str:
        return f"DV({self.label}, n={len(self.members)}, [{self.lower}, {self.upper}])"

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


class DecisionVariables:
    """Wrapper around the DV list with the pipes held at initial roughness."""

    def __init__(self, dvs: list[DecisionVariable] | None = None, held: tuple[str, ...] = ()) -> None:
        self.dvs: list[DecisionVariable] = dvs if dvs is not None else []
        self.held = held

    def __iter__(self) -> Iterator[DecisionVariable]:
        return iter(self.dvs)

    def __len__(self) -> int:
        return len(self.dvs)

    def __getitem__(self, index: int) -> DecisionVariable:
        return self.dvs[index]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DecisionVariables) and (self.dvs, self.held) == (other.dvs, other.held)

    def __repr__(self) -> str:
        return f"DecisionVariables(n={len(self.dvs)}, held={len(self.held)})"

    @property
    def lower(self) -> np.ndarray:
        return np.array([dv.lower for dv in self.dvs], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([dv.upper for dv in self.dvs], dtype=float)

    def roughness_map(self, x: np.ndarray) -> dict[str, float]:
        """Pipe id → roughness for a DV vector."""
        return {pipe_id: float(value) for dv, value in zip(self.dvs, x) for pipe_id in dv.members}


@dataclass(frozen=True)
class CalibrationRun:
    run_index: int
    seed: int
    roughness: tuple[float, ...]  # mm per DV
    objective: float  # m H₂O
    n_calls: int
    wall_time: float  # s
    termination: Optional[Termination] = None

    @property
    def failed(self) -> bool:
        return not np.isfinite(self.objective)


class RunEnsemble:
    """Repeated calibration runs sharing one DV definition."""

    def __init__(self, runs: list[CalibrationRun] | None = None, dvs: DecisionVariables | None = None) -> None:
        self.runs: list[CalibrationRun] = runs if runs is not None else []
        self.dvs = dvs if dvs is not None else DecisionVariables()

    def __iter__(self) -> Iterator[CalibrationRun]:
        return iter(self.runs)

    def __len__(self) -> int:
        return len(self.runs)

    def __repr__(self) -> str:
        return f"RunEnsemble(runs={len(self.runs)}, dvs={len(self.dvs)})"

    def add(self, run: CalibrationRun) -> None:
        if len(run.roughness) != len(self.dvs):
            raise ValueError(
                f"Run {run.run_index} has {len(run.roughness)} values for {len(self.dvs)} DVs"
            )
        self.runs.append(run)

    def roughness_matrix(self) -> np.ndarray:
        """N runs × K DVs."""
        return np.array([run.roughness for run in self.runs], dtype=float).reshape(len(self.runs), len(self.dvs))

    def best_run(self) -> Optional[CalibrationRun]:
        finite = [run for run in self.runs if not run.failed]
        return min(finite, key=lambda r: (r.objective, r.run_index)) if finite else None
