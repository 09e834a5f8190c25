"""
Synthetic twin: a looped grid network with planted roughness groups and noisy
pressure measurements simulated from it. Used for end-to-end recovery studies.
"""

import logging
import math
import textwrap
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .hydraulics import simulate_eps
from .models import DemandPattern, Junction, Network, Pipe, Reservoir, SimulationTimes
from .network import SIDECAR_COLUMNS, write_inp
from .types import PipeRole

LOGGER = logging.getLogger(__name__)

TWIN_START = datetime(2024, 6, 3)
INITIAL_ROUGHNESS = 1.0  # mm
RESERVOIR_ID = "R1"
MAIN_ID = "MAIN"
# (diameter mm, planted roughness mm, material, age years) per planted group
GROUP_PROFILES = (
    (150.0, 0.1, "pe", 5.0),
    (200.0, 0.5, "ductile_iron", 15.0),
    (125.0, 1.0, "pvc", 25.0),
    (150.0, 2.0, "steel", 40.0),
    (200.0, 3.0, "cast_iron", 60.0),
    (250.0, 5.0, "grey_iron", 80.0),
)
# Bounds multipliers that bracket every planted value
TWIN_BOUNDS = {"c_lo": 0.0005, "c_hi": 0.05, "c_hi_transmission": 0.01}


def _diurnal_pattern(steps: int = 24) -> tuple[float, ...]:
    hours = np.arange(steps)
    return tuple(float(round(1.0 + 0.5 * math.sin(2.0 * math.pi * (h - 6) / 24.0), 6)) for h in hours)


def _planted_group(orientation: str, r: int, c: int, rows: int, cols: int) -> int:
    mid_row = r if orientation == "h" else r + 0.5
    mid_col = c + 0.5 if orientation == "h" else c
    row_band = 0 if mid_row < rows / 2 else 1
    col_band = min(int(mid_col * 3 // cols), 2)
    return row_band * 3 + col_band


def build_twin_network(seed: int = 0, rows: int = 6, cols: int = 6) -> tuple[Network, dict[str, int]]:
    """
    Grid of rows × cols junctions fed from one reservoir through a transmission main.

    Returns the network (uniform initial roughness, metadata constant per group)
    and the planted group of every calibratable pipe.
    """
    rng = np.random.default_rng(seed)

    def node(r: int, c: int) -> str:
        return f"J{r}_{c}"

    junctions = tuple(
        Junction(
            id=node(r, c),
            elevation=float(round(rng.uniform(0.0, 10.0), 3)),
            base_demand=float(round(rng.uniform(4.0, 10.0), 3)),
            pattern_id="DIURNAL",
        )
        for r in range(rows)
        for c in range(cols)
    )
    reservoir = Reservoir(id=RESERVOIR_ID, head=70.0)

    pipes = [
        Pipe(
            id=MAIN_ID,
            from_node=RESERVOIR_ID,
            to_node=node(0, 0),
            length=200.0,
            diameter=400.0,
            roughness=0.1,
            material="steel",
            age=10.0,
            role=PipeRole.TRANSMISSION,
            dma="SUPPLY",
            calibratable=False,
        )
    ]
    groups: dict[str, int] = {}
    edges = [("h", r, c, node(r, c), node(r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    edges += [("v", r, c, node(r, c), node(r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    for orientation, r, c, u, v in edges:
        group = _planted_group(orientation, r, c, rows, cols)
        diameter, _, material, age = GROUP_PROFILES[group]
        pipe_id = f"P{orientation}{r}_{c}"
        pipes.append(
            Pipe(
                id=pipe_id,
                from_node=u,
                to_node=v,
                length=float(round(rng.uniform(100.0, 300.0), 2)),
                diameter=diameter,
                roughness=INITIAL_ROUGHNESS,
                material=material,
                age=age,
                dma=f"DMA_{group}",
            )
        )
        groups[pipe_id] = group

    net = Network(
        junctions=junctions,
        reservoirs=(reservoir,),
        pipes=tuple(pipes),
        patterns={"DIURNAL": DemandPattern("DIURNAL", _diurnal_pattern())},
        times=SimulationTimes(duration=24.0, timestep=1.0, start_clock=0.0),
        title=f"Synthetic twin {rows}x{cols} (seed {seed})",
    )
    return net, groups


def plant_roughness(net: Network, groups: Mapping[str, int], values: Optional[Mapping[int, float]] = None) -> Network:
    values = values if values is not None else {g: profile[1] for g, profile in enumerate(GROUP_PROFILES)}
    return net.with_roughness({pipe_id: values[group] for pipe_id, group in groups.items()})


def pick_stations(net: Network, count: int = 8, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    ids = [j.id for j in net.junctions]
    return sorted(rng.choice(ids, size=min(count, len(ids)), replace=False).tolist())


def synthesize_measurements(
    net: Network,
    stations: list[str],
    sigma: float = 0.05,
    seed: int = 0,
    start: datetime = TWIN_START,
) -> pd.DataFrame:
    """Simulated station pressures with Gaussian noise, as a measurement table."""
    sim = simulate_eps(net)
    rng = np.random.default_rng(seed)
    timestamps = [pd.Timestamp(start) + pd.Timedelta(hours=h) for h in sim.timestamps]
    frames = []
    for station in stations:
        pressures = sim.pressure_series(station) + rng.normal(0.0, sigma, len(timestamps))
        frames.append(
            pd.DataFrame(
                {
                    "station_id": station,
                    "timestamp": [t.isoformat() for t in timestamps],
                    "pressure_m": np.round(pressures, 6),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def sidecar_frame(net: Network) -> pd.DataFrame:
    return pd.DataFrame(
        [(p.id, p.material, p.age, p.role.value, p.dma, p.calibratable) for p in net.pipes],
        columns=SIDECAR_COLUMNS,
    )


@dataclass(frozen=True)
class TwinDataset:
    config: Path
    inp: Path
    sidecar: Path
    measurements: Path
    weights: Path
    reference: Path
    groups: Mapping[str, int]


def _twin_toml(seed: int, n_groups: int) -> str:
    bounds = "\n".join(f"{key} = {value!r}" for key, value in TWIN_BOUNDS.items())
    return textwrap.dedent(
        f"""\
        seed = {seed}
        n_runs = 5
        out_dir = "out"
        simulation_start = "{TWIN_START.isoformat()}"

        [paths]
        inp = "network.inp"
        sidecar = "sidecar.csv"
        measurements = "measurements.csv"
        weights = "weights.csv"
        reference = "reference.csv"

        [grouping]
        method = "kmeans"
        k = {n_groups}
        baseline_k = {n_groups}

        [bounds]
        {{bounds}}

        [sce]
        max_calls = 1500
        n_complexes = 3
        points_per_complex = 13
        min_complexes = 2
        evolution_steps = 13
        subcomplex_size = 7
        target_objective = 0.0
        convergence_loops = 10
        min_relative_change = 0.001

        [preprocessing]
        smoothing_window = 1
        night_start = "00:00:00"
        night_end = "05:00:00"
        """
    ).replace("{bounds}", bounds)


def write_twin(
    out_dir: str | Path,
    seed: int = 0,
    sigma: float = 0.05,
    n_stations: int = 8,
) -> TwinDataset:
    """Write network, sidecar, measurements, weights, planted reference and a config file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, groups = build_twin_network(seed)
    truth = plant_roughness(net, groups)
    stations = pick_stations(net, n_stations, seed)

    dataset = TwinDataset(
        config=out / "roughcal.toml",
        inp=out / "network.inp",
        sidecar=out / "sidecar.csv",
        measurements=out / "measurements.csv",
        weights=out / "weights.csv",
        reference=out / "reference.csv",
        groups=groups,
    )
    write_inp(net, dataset.inp)
    sidecar_frame(net).to_csv(dataset.sidecar, index=False)
    synthesize_measurements(truth, stations, sigma, seed).to_csv(dataset.measurements, index=False)
    # Weights sum to 1 so the objective reads as a mean station RMSE
    pd.DataFrame({"station_id": stations, "weight": 1.0 / len(stations)}).to_csv(dataset.weights, index=False)
    pd.DataFrame(
        {"pipe_id": list(groups), "roughness_mm": [truth.pipe(p).roughness for p in groups]}
    ).to_csv(dataset.reference, index=False)
    dataset.config.write_text(_twin_toml(seed, len(GROUP_PROFILES)))
    LOGGER.info(f"Synthetic twin written to {out} ({len(net.pipes)} pipes, {len(stations)} stations)")
    return dataset
