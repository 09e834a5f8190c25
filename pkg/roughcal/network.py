"""
Network model I/O: EPANET INP subset, pipe metadata sidecar and pressure measurements.

All quantities are converted at parse time to m, mm, m³/h, m H₂O and hours.
"""

import logging
import math
import re
from collections import defaultdict
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Optional

import networkx as nx
import numpy as np
import pandas as pd

from .constants import (
    FEET_TO_M,
    FLOW_UNITS_TO_CMH,
    INCH_TO_MM,
    MILLIFEET_TO_MM,
    US_FLOW_UNITS,
)
from .errors import (
    DanglingReference,
    DuplicateId,
    InvalidNetwork,
    InvalidRole,
    MalformedLine,
    MeasurementError,
    NegativeWeight,
    NetworkError,
    NonMonotonicTimestamps,
    UnknownPipeId,
)
from .models import (
    DemandPattern,
    Junction,
    MeasurementBook,
    MeasurementSeries,
    Network,
    Pipe,
    Reservoir,
    SimulationTimes,
)
from .types import PipeRole, PipeStatus

LOGGER = logging.getLogger(__name__)

SECTION_RE = re.compile(r"^\[(?P<name>[A-Za-z_]+)\]$")
HANDLED_SECTIONS = {
    "TITLE",
    "JUNCTIONS",
    "RESERVOIRS",
    "PIPES",
    "PATTERNS",
    "DEMANDS",
    "STATUS",
    "TIMES",
    "OPTIONS",
    "END",
}
SIDECAR_COLUMNS = ["pipe_id", "material", "age", "role", "dma", "calibratable"]
MEASUREMENT_COLUMNS = ["station_id", "timestamp", "pressure_m"]
WEIGHT_COLUMNS = ["station_id", "weight"]
TIME_UNITS_TO_HOURS = {
    "SEC": 1 / 3600,
    "SECONDS": 1 / 3600,
    "MIN": 1 / 60,
    "MINUTES": 1 / 60,
    "HOUR": 1.0,
    "HOURS": 1.0,
    "DAY": 24.0,
    "DAYS": 24.0,
}
TRUE_STRINGS = {"true", "1", "yes", "y", "t"}
FALSE_STRINGS = {"false", "0", "no", "n", "f"}


# --- INP parsing ---


class _Line:
    __slots__ = ("section", "line_no", "text", "tokens")

    def __init__(self, section: str, line_no: int, text: str, tokens: list[str]) -> None:
        self.section = section
        self.line_no = line_no
        self.text = text
        self.tokens = tokens

    def malformed(self, reason: str = "") -> MalformedLine:
        return MalformedLine(self.section, self.line_no, self.text, reason)

    def number(self, index: int, name: str) -> float:
        try:
            value = float(self.tokens[index])
        except IndexError:
            raise self.malformed(f"missing {name}")
        except ValueError:
            raise self.malformed(f"{name} '{self.tokens[index]}' is not a number")
        if not math.isfinite(value):
            raise self.malformed(f"{name} is not finite")
        return value

    def optional(self, index: int) -> Optional[str]:
        return self.tokens[index] if len(self.tokens) > index else None


def _split_sections(text: str) -> tuple[dict[str, list[_Line]], list[str]]:
    sections: dict[str, list[_Line]] = defaultdict(list)
    warnings: list[str] = []
    current: Optional[str] = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        content = raw.split(";", 1)[0].strip()
        if not content:
            continue
        if match := SECTION_RE.match(content):
            current = match.group("name").upper()
            if current not in HANDLED_SECTIONS:
                warnings.append(f"Skipped unsupported section [{current}] at line {line_no}")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise MalformedLine("<none>", line_no, raw, "data before the first section header")
        if current in HANDLED_SECTIONS:
            sections[current].append(_Line(current, line_no, raw, content.split()))
    return sections, warnings


def _parse_hours(line: _Line, tokens: list[str], clock: bool = False) -> float:
    """Parse an EPANET time value into hours."""
    if not tokens:
        raise line.malformed("missing time value")
    value, *rest = tokens
    unit = rest[0].upper() if rest else None
    try:
        if ":" in value:
            parts = [float(p) for p in value.split(":")]
            hours = parts[0] + (parts[1] / 60 if len(parts) > 1 else 0.0) + (parts[2] / 3600 if len(parts) > 2 else 0.0)
        else:
            hours = float(value)
    except ValueError:
        raise line.malformed(f"invalid time value '{value}'")
    if unit in ("AM", "PM") and clock:
        hours = hours % 12 + (12 if unit == "PM" else 0)
    elif unit is not None:
        if unit not in TIME_UNITS_TO_HOURS:
            raise line.malformed(f"unknown time unit '{unit}'")
        hours *= TIME_UNITS_TO_HOURS[unit]
    return hours


class _UnitSystem:
    def __init__(self, flow_units: str = "CMH") -> None:
        if flow_units not in FLOW_UNITS_TO_CMH:
            raise ValueError(f"Unsupported flow units '{flow_units}'")
        self.flow_units = flow_units
        self.flow = FLOW_UNITS_TO_CMH[flow_units]
        is_us = flow_units in US_FLOW_UNITS
        self.length = FEET_TO_M if is_us else 1.0
        self.diameter = INCH_TO_MM if is_us else 1.0
        self.roughness = MILLIFEET_TO_MM if is_us else 1.0


def _parse_options(lines: list[_Line], warnings: list[str]) -> tuple[_UnitSystem, Optional[str]]:
    units = _UnitSystem()
    default_pattern: Optional[str] = None
    for line in lines:
        key = line.tokens[0].upper()
        if key == "UNITS":
            flow_units = (line.optional(1) or "").upper()
            try:
                units = _UnitSystem(flow_units)
            except ValueError as e:
                raise line.malformed(str(e))
        elif key == "HEADLOSS":
            formula = (line.optional(1) or "").upper()
            if formula != "D-W":
                warnings.append(
                    f"Headloss formula '{formula}' ignored; roughness is read as Darcy-Weisbach absolute roughness"
                )
        elif key == "PATTERN":
            default_pattern = line.optional(1)
        else:
            LOGGER.debug(f"Ignoring option '{line.text.strip()}'")
    return units, default_pattern


def _parse_times(lines: list[_Line], warnings: list[str]) -> SimulationTimes:
    duration, timestep, start_clock = 0.0, 1.0, 0.0
    for line in lines:
        words = [t.upper() for t in line.tokens]
        if words[0] == "DURATION":
            duration = _parse_hours(line, line.tokens[1:])
        elif words[:2] == ["HYDRAULIC", "TIMESTEP"]:
            timestep = _parse_hours(line, line.tokens[2:])
        elif words[:2] == ["PATTERN", "TIMESTEP"]:
            pattern_step = _parse_hours(line, line.tokens[2:])
            if not math.isclose(pattern_step, timestep):
                warnings.append(
                    f"Pattern timestep {pattern_step} h differs from hydraulic timestep; patterns are indexed per hydraulic step"
                )
        elif words[:2] == ["START", "CLOCKTIME"]:
            start_clock = _parse_hours(line, line.tokens[2:], clock=True)
        else:
            warnings.append(f"Ignored [TIMES] entry '{line.text.strip()}'")
    if timestep <= 0:
        raise InvalidNetwork(f"Hydraulic timestep must be positive, got {timestep}")
    if duration < 0:
        raise InvalidNetwork(f"Duration must be non-negative, got {duration}")
    return SimulationTimes(duration=duration, timestep=timestep, start_clock=start_clock)


def _parse_status(token: str, line: _Line, warnings: list[str]) -> PipeStatus:
    try:
        status = PipeStatus(token.upper())
    except ValueError:
        raise line.malformed(f"unsupported pipe status '{token}'")
    if status == PipeStatus.CV:
        warnings.append(f"Check valve on pipe '{line.tokens[0]}' treated as an open pipe")
        return PipeStatus.OPEN
    return status


def _check_unique(ids: Iterable[str], kind: str) -> None:
    seen: set[str] = set()
    for element_id in ids:
        if element_id in seen:
            raise DuplicateId(f"Duplicate {kind} id '{element_id}'")
        seen.add(element_id)


def parse_inp(text: str) -> Network:
    """
    Parse the supported EPANET INP subset into a validated Network.

    Raises:
        MalformedLine: A line cannot be read (section and line number attached)
        DanglingReference: A pipe references a node that does not exist
        DuplicateId: Two nodes or two pipes share an id
        InvalidNetwork: A type invariant does not hold
    """
    sections, warnings = _split_sections(text)
    units, default_pattern = _parse_options(sections.get("OPTIONS", []), warnings)
    times = _parse_times(sections.get("TIMES", []), warnings)
    title = " ".join(" ".join(line.tokens) for line in sections.get("TITLE", []))

    patterns: dict[str, list[float]] = {}
    for line in sections.get("PATTERNS", []):
        pattern_id = line.tokens[0]
        values = [line.number(i, "multiplier") for i in range(1, len(line.tokens))]
        patterns.setdefault(pattern_id, []).extend(values)

    junction_rows: dict[str, dict] = {}
    junction_order: list[str] = []
    for line in sections.get("JUNCTIONS", []):
        junction_id = line.tokens[0]
        if junction_id in junction_rows:
            raise DuplicateId(f"Duplicate node id '{junction_id}' at line {line.line_no}")
        junction_rows[junction_id] = {
            "elevation": line.number(1, "elevation") * units.length,
            "base_demand": (line.number(2, "demand") if len(line.tokens) > 2 else 0.0) * units.flow,
            "pattern_id": line.optional(3) or default_pattern,
        }
        junction_order.append(junction_id)

    demanded: set[str] = set()
    for line in sections.get("DEMANDS", []):
        junction_id = line.tokens[0]
        if junction_id not in junction_rows:
            raise DanglingReference(f"[DEMANDS] line {line.line_no} references unknown junction '{junction_id}'")
        demand = line.number(1, "demand") * units.flow
        pattern_id = line.optional(2) or default_pattern
        row = junction_rows[junction_id]
        if junction_id in demanded:
            if pattern_id != row["pattern_id"]:
                raise line.malformed("multiple demand categories with different patterns are not supported")
            row["base_demand"] += demand
        else:
            row["base_demand"], row["pattern_id"] = demand, pattern_id
            demanded.add(junction_id)

    junctions = tuple(
        Junction(
            id=junction_id,
            elevation=junction_rows[junction_id]["elevation"],
            base_demand=junction_rows[junction_id]["base_demand"],
            pattern_id=junction_rows[junction_id]["pattern_id"],
        )
        for junction_id in junction_order
    )
    reservoirs = tuple(
        Reservoir(
            id=line.tokens[0],
            head=line.number(1, "head") * units.length,
            pattern_id=line.optional(2),
        )
        for line in sections.get("RESERVOIRS", [])
    )

    status_overrides: dict[str, PipeStatus] = {}
    for line in sections.get("STATUS", []):
        if len(line.tokens) < 2:
            raise line.malformed("missing status")
        status_overrides[line.tokens[0]] = _parse_status(line.tokens[1], line, warnings)

    pipes: list[Pipe] = []
    for line in sections.get("PIPES", []):
        if len(line.tokens) < 6:
            raise line.malformed("expected at least: id node1 node2 length diameter roughness")
        status_token = line.optional(7)
        status = _parse_status(status_token, line, warnings) if status_token else PipeStatus.OPEN
        try:
            pipes.append(
                Pipe(
                    id=line.tokens[0],
                    from_node=line.tokens[1],
                    to_node=line.tokens[2],
                    length=line.number(3, "length") * units.length,
                    diameter=line.number(4, "diameter") * units.diameter,
                    roughness=line.number(5, "roughness") * units.roughness,
                    minor_loss=line.number(6, "minor loss") if len(line.tokens) > 6 else 0.0,
                    status=status,
                )
            )
        except InvalidNetwork as e:
            raise line.malformed(str(e)) from e

    pipe_ids = {p.id for p in pipes}
    for pipe_id, status in status_overrides.items():
        if pipe_id not in pipe_ids:
            raise DanglingReference(f"[STATUS] references unknown pipe '{pipe_id}'")
    pipes = [replace(p, status=status_overrides[p.id]) if p.id in status_overrides else p for p in pipes]

    network = Network(
        junctions=junctions,
        reservoirs=reservoirs,
        pipes=tuple(pipes),
        patterns={pid: DemandPattern(pid, tuple(values)) for pid, values in patterns.items()},
        times=times,
        title=title,
        warnings=tuple(warnings),
    )
    validate_network(network)
    for warning in warnings:
        LOGGER.warning(warning)
    return network


def read_inp(path: str | Path) -> Network:
    LOGGER.info(f"Reading network from {path}...")
    return parse_inp(Path(path).read_text(encoding="utf-8"))


def validate_network(net: Network) -> None:
    _check_unique(net.node_ids, "node")
    _check_unique((p.id for p in net.pipes), "pipe")
    if not net.reservoirs:
        raise InvalidNetwork("Network must contain at least one reservoir")

    for pipe in net.pipes:
        for node_id in (pipe.from_node, pipe.to_node):
            if not net.has_node(node_id):
                raise DanglingReference(f"Pipe '{pipe.id}' references missing node '{node_id}'")
        if pipe.from_node == pipe.to_node:
            raise InvalidNetwork(f"Pipe '{pipe.id}' connects node '{pipe.from_node}' to itself")

    for owner, pattern_id in [(j.id, j.pattern_id) for j in net.junctions] + [
        (r.id, r.pattern_id) for r in net.reservoirs
    ]:
        if pattern_id is not None and pattern_id not in net.patterns:
            raise DanglingReference(f"Node '{owner}' references missing pattern '{pattern_id}'")

    g = nx.Graph()
    g.add_nodes_from(net.node_ids)
    g.add_edges_from((p.from_node, p.to_node) for p in net.open_pipes)
    sources = {r.id for r in net.reservoirs}
    for component in nx.connected_components(g):
        if component & sources:
            continue
        demand_nodes = [n for n in component if (j := net.junction(n)) is not None and j.base_demand > 0]
        if demand_nodes:
            raise InvalidNetwork(
                f"Demand nodes {sorted(demand_nodes)[:5]} are not connected to any reservoir through open pipes"
            )


def network_summary(net: Network) -> dict:
    return {
        "junctions": len(net.junctions),
        "reservoirs": len(net.reservoirs),
        "pipes": len(net.pipes),
        "open_pipes": len(net.open_pipes),
        "calibratable_pipes": len(net.calibratable_pipes),
        "patterns": len(net.patterns),
        "total_length_m": float(sum(p.length for p in net.pipes)),
        "steps": net.times.step_count,
    }


# --- INP serialization ---


def to_inp(net: Network) -> str:
    """Serialize a Network to the INP subset understood by parse_inp."""
    out: list[str] = ["[TITLE]"]
    if net.title:
        out.append(net.title)
    out += ["", "[JUNCTIONS]", ";ID Elevation Demand Pattern"]
    for j in net.junctions:
        out.append(f"{j.id} {j.elevation!r} {j.base_demand!r} {j.pattern_id or ''}".rstrip())
    out += ["", "[RESERVOIRS]", ";ID Head Pattern"]
    for r in net.reservoirs:
        out.append(f"{r.id} {r.head!r} {r.pattern_id or ''}".rstrip())
    out += ["", "[PIPES]", ";ID Node1 Node2 Length Diameter Roughness MinorLoss Status"]
    for p in net.pipes:
        out.append(
            f"{p.id} {p.from_node} {p.to_node} {p.length!r} {p.diameter!r} "
            f"{p.roughness!r} {p.minor_loss!r} {p.status.value}"
        )
    out += ["", "[PATTERNS]"]
    for pattern in net.patterns.values():
        out.append(" ".join([pattern.id] + [repr(m) for m in pattern.multipliers]))
    out += [
        "",
        "[TIMES]",
        f"DURATION {net.times.duration!r}",
        f"HYDRAULIC TIMESTEP {net.times.timestep!r}",
        f"START CLOCKTIME {net.times.start_clock!r}",
        "",
        "[OPTIONS]",
        "UNITS CMH",
        "HEADLOSS D-W",
        "",
        "[END]",
        "",
    ]
    return "\n".join(out)


def write_inp(net: Network, path: str | Path) -> None:
    Path(path).write_text(to_inp(net), encoding="utf-8")


# --- Metadata sidecar ---


def _parse_bool(value, pipe_id: str) -> bool:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    text = str(value).strip().lower()
    if text in TRUE_STRINGS:
        return True
    if text in FALSE_STRINGS:
        return False
    raise NetworkError(f"Sidecar row for pipe '{pipe_id}' has invalid calibratable flag '{value}'")


def _parse_role(value, pipe_id: str) -> PipeRole:
    try:
        return PipeRole(str(value).strip().lower())
    except ValueError:
        raise InvalidRole(
            f"Pipe '{pipe_id}' has role '{value}'; expected one of {[r.value for r in PipeRole]}"
        )


def load_sidecar(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"pipe_id": str, "material": str, "dma": str}, encoding="utf-8")


def merge_metadata(net: Network, sidecar: pd.DataFrame) -> Network:
    """
    Apply pipe metadata rows (material, age, role, dma, calibratable) to the network.

    Duplicate pipe_id rows are resolved last-wins with a warning.
    """
    missing = [c for c in SIDECAR_COLUMNS if c not in sidecar.columns]
    if missing:
        raise NetworkError(f"Sidecar is missing columns {missing}")
    if sidecar.empty:
        return net

    rows = sidecar.assign(pipe_id=sidecar["pipe_id"].astype(str))
    duplicated = rows.loc[rows["pipe_id"].duplicated(keep="last"), "pipe_id"].unique()
    if len(duplicated):
        LOGGER.warning(f"Sidecar has duplicate rows for pipes {list(duplicated)}; last row wins")
    rows = rows.drop_duplicates(subset="pipe_id", keep="last")

    updates: dict[str, Pipe] = {}
    for row in rows.itertuples(index=False):
        pipe = net.pipe(row.pipe_id)
        if pipe is None:
            raise UnknownPipeId(f"Sidecar references unknown pipe '{row.pipe_id}'")
        age = float(row.age)
        if not math.isfinite(age):
            raise NetworkError(f"Sidecar row for pipe '{row.pipe_id}' has invalid age '{row.age}'")
        updates[pipe.id] = replace(
            pipe,
            material=str(row.material),
            age=age,
            role=_parse_role(row.role, pipe.id),
            dma=str(row.dma),
            calibratable=_parse_bool(row.calibratable, pipe.id),
        )
    LOGGER.info(f"Merged metadata for {len(updates)} of {len(net.pipes)} pipes")
    return net.with_pipes(updates)


# --- Measurements ---


def _read_table(table: pd.DataFrame | str | Path, columns: list[str], kind: str) -> pd.DataFrame:
    frame = table if isinstance(table, pd.DataFrame) else pd.read_csv(table, dtype={"station_id": str})
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MeasurementError(f"{kind} table is missing columns {missing}")
    return frame.assign(station_id=frame["station_id"].astype(str))


def load_measurements(
    table: pd.DataFrame | str | Path,
    weights: pd.DataFrame | str | Path | None = None,
) -> MeasurementBook:
    """
    Build one pressure series per station.

    Stations absent from the weights table get weight 1.

    Raises:
        NonMonotonicTimestamps: A station's timestamps are not strictly increasing in file order
        NegativeWeight: A weight is negative
        MeasurementError: Non-finite pressures or missing columns
    """
    frame = _read_table(table, MEASUREMENT_COLUMNS, "Measurement")
    weight_map: dict[str, float] = {}
    if weights is not None:
        weight_frame = _read_table(weights, WEIGHT_COLUMNS, "Weights")
        for row in weight_frame.itertuples(index=False):
            weight = float(row.weight)
            if not math.isfinite(weight) or weight < 0:
                raise NegativeWeight(f"Station '{row.station_id}' has invalid weight {row.weight}")
            weight_map[row.station_id] = weight

    book = MeasurementBook()
    for station_id, rows in frame.groupby("station_id", sort=False):
        timestamps = pd.DatetimeIndex(pd.to_datetime(rows["timestamp"], format="ISO8601"))
        pressures = rows["pressure_m"].to_numpy(dtype=float)
        if not np.all(np.isfinite(pressures)):
            raise MeasurementError(f"Station '{station_id}' has non-finite pressures")
        if len(timestamps) > 1 and not np.all(np.diff(timestamps.asi8) > 0):
            raise NonMonotonicTimestamps(f"Timestamps of station '{station_id}' are not strictly increasing")
        book[str(station_id)] = MeasurementSeries(
            station_node=str(station_id),
            samples=pd.Series(pressures, index=timestamps, name=str(station_id)),
            weight=weight_map.get(str(station_id), 1.0),
        )

    if unused := set(weight_map) - set(book):
        LOGGER.warning(f"Weights given for stations without measurements: {sorted(unused)}")
    LOGGER.info(f"Loaded {book.total_samples()} samples from {len(book)} stations")
    return book
