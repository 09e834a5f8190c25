"""
Demand-driven hydraulic simulation with Darcy-Weisbach head loss.

Unknowns are junction heads and open-pipe flows; each iteration is a Newton
step on the coupled energy/mass equations reduced to a sparse symmetric
system in heads (the global gradient formulation).
"""

import logging
import math
from pathlib import Path
from typing import Mapping, Optional

import networkx as nx
import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .constants import GRAVITY, SECONDS_PER_HOUR, SolverOptions
from .errors import ClosedPipe, NotConverged, PatternTooShort, SingularSystem, StepFailure
from .models import FlowStats, Network, SimulationResult, StepResult
from .types import ElementKind

LOGGER = logging.getLogger(__name__)

RE_LAMINAR = 2000.0
RE_TURBULENT = 4000.0
LN10 = math.log(10.0)
INITIAL_VELOCITY = 1.0  # m/s


# --- Friction ---


def _swamee_jain(reynolds: np.ndarray, rr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Swamee-Jain friction factor and its derivative with respect to Re."""
    inner = rr / 3.7 + 5.74 * reynolds**-0.9
    y = np.log10(inner)
    f = 0.25 / y**2
    dy = -0.9 * 5.74 * reynolds**-1.9 / (inner * LN10)
    return f, -0.5 / y**3 * dy


def friction_factors(reynolds: np.ndarray, rr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorized Darcy friction factor f(Re, ε/D) and df/dRe.

    Laminar below Re 2000 (64/Re with Re floored at 1), Swamee-Jain above 4000,
    linear interpolation in Re in between.
    """
    reynolds = np.asarray(reynolds, dtype=float)
    rr = np.broadcast_to(np.asarray(rr, dtype=float), reynolds.shape)
    f = np.empty_like(reynolds)
    df = np.zeros_like(reynolds)

    laminar = reynolds < RE_LAMINAR
    turbulent = reynolds > RE_TURBULENT
    transition = ~(laminar | turbulent)

    re_lam = np.maximum(reynolds[laminar], 1.0)
    f[laminar] = 64.0 / re_lam
    df[laminar] = np.where(reynolds[laminar] > 1.0, -64.0 / re_lam**2, 0.0)

    if turbulent.any():
        f[turbulent], df[turbulent] = _swamee_jain(reynolds[turbulent], rr[turbulent])

    if transition.any():
        f_lo = 64.0 / RE_LAMINAR
        f_hi, _ = _swamee_jain(np.full(transition.sum(), RE_TURBULENT), rr[transition])
        slope = (f_hi - f_lo) / (RE_TURBULENT - RE_LAMINAR)
        f[transition] = f_lo + slope * (reynolds[transition] - RE_LAMINAR)
        df[transition] = slope
    return f, df


def friction_factor(reynolds: float, relative_roughness: float) -> float:
    f, _ = friction_factors(np.array([reynolds]), np.array([relative_roughness]))
    return float(f[0])


# --- Solver ---


class HydraulicSolver:
    """
    Reusable solver bound to one network topology.

    Holds precomputed incidence matrices and pipe constants; not thread-safe,
    create one instance per worker.
    """

    def __init__(self, net: Network, opts: Optional[SolverOptions] = None) -> None:
        self.net = net
        self.opts = opts or SolverOptions()
        self.node_ids = net.node_ids
        self.junction_ids = tuple(j.id for j in net.junctions)
        self.reservoir_ids = tuple(r.id for r in net.reservoirs)
        pipes = net.open_pipes
        self.pipe_ids = tuple(p.id for p in pipes)
        self._pipe_pos = {pid: i for i, pid in enumerate(self.pipe_ids)}

        self.elevation = np.array([j.elevation for j in net.junctions], dtype=float)
        self.base_demand = np.array([j.base_demand for j in net.junctions], dtype=float)
        self.base_head = np.array([r.head for r in net.reservoirs], dtype=float)
        self.roughness = np.array([p.roughness for p in pipes], dtype=float)

        length = np.array([p.length for p in pipes], dtype=float)
        self.diameter = np.array([p.diameter for p in pipes], dtype=float) / 1000.0
        area = math.pi * self.diameter**2 / 4.0
        self._q_init = INITIAL_VELOCITY * area
        self._k_friction = 8.0 * length / (GRAVITY * math.pi**2 * self.diameter**5)
        self._k_minor = np.array([p.minor_loss for p in pipes], dtype=float) / (2.0 * GRAVITY * area**2)
        self._re_per_flow = 4.0 / (math.pi * self.diameter * self.opts.viscosity)
        self._laminar_slope = 64.0 * self._k_friction / self._re_per_flow

        self._build_topology()

    def _build_topology(self) -> None:
        net = self.net
        g = nx.Graph()
        g.add_nodes_from(self.node_ids)
        g.add_edges_from((p.from_node, p.to_node) for p in net.open_pipes)
        sources = set(self.reservoir_ids)
        fed: set[str] = set()
        for component in nx.connected_components(g):
            if component & sources:
                fed |= component

        junction_pos = {jid: i for i, jid in enumerate(self.junction_ids)}
        reservoir_pos = {rid: i for i, rid in enumerate(self.reservoir_ids)}
        self.active_junctions = np.array([jid in fed for jid in self.junction_ids], dtype=bool)
        if unfed := [jid for jid in self.junction_ids if jid not in fed]:
            LOGGER.warning(f"Junctions {unfed[:10]} have no path to a reservoir; their heads are NaN")
        self.active_pipes = np.array(
            [p.from_node in fed for p in net.open_pipes], dtype=bool
        )
        active_index = -np.ones(len(self.junction_ids), dtype=int)
        active_index[self.active_junctions] = np.arange(int(self.active_junctions.sum()))
        self._active_index = active_index

        rows, cols, vals = [], [], []
        rows0, cols0, vals0 = [], [], []
        for k, pipe in enumerate(p for p, active in zip(net.open_pipes, self.active_pipes) if active):
            for node, sign in ((pipe.from_node, 1.0), (pipe.to_node, -1.0)):
                if node in junction_pos:
                    rows.append(k)
                    cols.append(active_index[junction_pos[node]])
                    vals.append(sign)
                else:
                    rows0.append(k)
                    cols0.append(reservoir_pos[node])
                    vals0.append(sign)
        n_pipes = int(self.active_pipes.sum())
        n_junctions = int(self.active_junctions.sum())
        self._a12 = sp.csr_matrix((vals, (rows, cols)), shape=(n_pipes, n_junctions))
        self._a10 = sp.csr_matrix((vals0, (rows0, cols0)), shape=(n_pipes, len(self.reservoir_ids)))

    def roughness_vector(self, roughness: Mapping[str, float]) -> np.ndarray:
        """Open-pipe roughness array (mm) with the given per-pipe overrides."""
        vector = self.roughness.copy()
        for pipe_id, value in roughness.items():
            if (k := self._pipe_pos.get(pipe_id)) is not None:
                vector[k] = value
        return vector

    def _head_loss(self, q: np.ndarray, rr: np.ndarray, act: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Head loss h(Q) (m) and dh/dQ for the active pipes."""
        k_f = self._k_friction[act]
        k_m = self._k_minor[act]
        re_per_flow = self._re_per_flow[act]
        abs_q = np.abs(q)
        f, df = friction_factors(re_per_flow * abs_q, rr)
        resistance = k_f * f + k_m
        h = resistance * q * abs_q
        grad = 2.0 * resistance * abs_q + k_f * df * re_per_flow * q**2
        return h, np.maximum(grad, self._laminar_slope[act])

    def solve_step(
        self,
        demands: np.ndarray,
        source_heads: np.ndarray,
        roughness: Optional[np.ndarray] = None,
    ) -> StepResult:
        """
        Solve one demand-driven steady state.

        Args:
            demands: m³/h per junction, aligned with junction order
            source_heads: m per reservoir, aligned with reservoir order
            roughness: mm per open pipe; defaults to the network roughness

        Raises:
            SingularSystem: A junction with demand has no path to a reservoir
        """
        opts = self.opts
        act_j, act_p = self.active_junctions, self.active_pipes
        if np.any(demands[~act_j] > 0):
            stranded = [jid for jid, a, d in zip(self.junction_ids, act_j, demands) if not a and d > 0]
            raise SingularSystem(f"Junctions {stranded[:5]} carry demand but are isolated from every reservoir")

        rough = self.roughness if roughness is None else roughness
        rr = rough[act_p] / 1000.0 / self.diameter[act_p]
        d = demands[act_j] / SECONDS_PER_HOUR
        a12, a10 = self._a12, self._a10
        fixed = a10 @ source_heads

        q = self._q_init[act_p].copy()
        h_nodes = np.full(int(act_j.sum()), float(source_heads.max()))
        best: Optional[tuple[float, np.ndarray, np.ndarray]] = None
        converged = False
        iterations = 0

        for iterations in range(1, opts.max_iterations + 1):
            loss, grad = self._head_loss(q, rr, act_p)
            energy = loss - (a12 @ h_nodes + fixed)
            mass = -(a12.T @ q) - d
            e_max = float(np.max(np.abs(energy), initial=0.0))
            m_max = float(np.max(np.abs(mass), initial=0.0))
            score = e_max / opts.head_tolerance + m_max / opts.flow_tolerance
            if best is None or score < best[0]:
                best = (score, q.copy(), h_nodes.copy())
            if e_max <= opts.head_tolerance and m_max <= opts.flow_tolerance:
                converged = True
                break

            inv_grad = 1.0 / grad
            if h_nodes.size:
                schur = (a12.T @ sp.diags(inv_grad) @ a12).tocsc()
                rhs = mass + a12.T @ (inv_grad * energy)
                dh = np.atleast_1d(spsolve(schur, rhs))
                if not np.all(np.isfinite(dh)):
                    raise SingularSystem("Head correction system is singular")
            else:
                dh = np.zeros(0)
            q = q + inv_grad * (a12 @ dh - energy)
            h_nodes = h_nodes + dh

        if not converged:
            assert best is not None
            _, q, h_nodes = best
            LOGGER.warning(f"Hydraulic solve did not converge in {opts.max_iterations} iterations")

        return self._step_result(q, h_nodes, source_heads, converged, iterations)

    def _step_result(
        self,
        q: np.ndarray,
        h_nodes: np.ndarray,
        source_heads: np.ndarray,
        converged: bool,
        iterations: int,
    ) -> StepResult:
        junction_head = np.full(len(self.junction_ids), np.nan)
        junction_head[self.active_junctions] = h_nodes
        node_head = np.concatenate([junction_head, source_heads])
        node_pressure = np.concatenate([junction_head - self.elevation, np.zeros(len(source_heads))])
        flow = np.zeros(len(self.pipe_ids))
        flow[self.active_pipes] = q * SECONDS_PER_HOUR
        return StepResult(
            node_ids=self.node_ids,
            pipe_ids=self.pipe_ids,
            node_head=node_head,
            node_pressure=node_pressure,
            pipe_flow=flow,
            converged=converged,
            iterations=iterations,
        )

    def _multipliers(self, pattern_ids: list[Optional[str]], steps: int) -> np.ndarray:
        """steps × elements pattern multipliers (1 for unpatterned elements)."""
        table = np.ones((steps, len(pattern_ids)))
        for col, pattern_id in enumerate(pattern_ids):
            if pattern_id is None:
                continue
            pattern = self.net.patterns[pattern_id]
            if len(pattern) < steps:
                raise PatternTooShort(
                    f"Pattern '{pattern_id}' has {len(pattern)} multipliers for {steps} steps"
                )
            table[:, col] = pattern.multipliers[:steps]
        return table

    def simulate(self, roughness: Optional[np.ndarray] = None, strict: bool = False) -> SimulationResult:
        """
        Extended-period simulation: one independent steady solve per timestep.

        Non-converged steps keep their best iterate and are flagged; with strict=True
        the first one raises NotConverged carrying that iterate instead.
        """
        times = self.net.times
        steps = times.step_count
        demand_mult = self._multipliers([j.pattern_id for j in self.net.junctions], steps)
        head_mult = self._multipliers([r.pattern_id for r in self.net.reservoirs], steps)

        results = []
        for i in range(steps):
            try:
                results.append(
                    self.solve_step(self.base_demand * demand_mult[i], self.base_head * head_mult[i], roughness)
                )
            except SingularSystem as e:
                raise StepFailure(i, e) from e
            if strict and not results[-1].converged:
                raise NotConverged(f"Hydraulic step {i} did not converge", best=results[-1])
        return SimulationResult(steps=tuple(results), timestamps=times.offsets())


def solve_steady(
    net: Network,
    step_demands: Optional[Mapping[str, float]] = None,
    opts: Optional[SolverOptions] = None,
) -> StepResult:
    """Steady state for the given junction demands (m³/h); base demands when omitted."""
    solver = HydraulicSolver(net, opts)
    demands = solver.base_demand.copy()
    if step_demands is not None:
        position = {jid: i for i, jid in enumerate(solver.junction_ids)}
        for junction_id, demand in step_demands.items():
            if demand < 0:
                raise ValueError(f"Demand at '{junction_id}' must be non-negative, got {demand}")
            demands[position[junction_id]] = demand
    return solver.solve_step(demands, solver.base_head)


def simulate_eps(net: Network, opts: Optional[SolverOptions] = None) -> SimulationResult:
    return HydraulicSolver(net, opts).simulate()


def flow_statistics(sim: SimulationResult, pipe_id: str) -> FlowStats:
    """
    Statistics of |flow| (m³/h) across timesteps.

    The median of an even count is the lower-middle element; std is the population std.
    """
    if not sim.steps:
        raise ValueError("Simulation has no steps")
    if not sim.steps[0].has_pipe(pipe_id):
        raise ClosedPipe(f"Pipe '{pipe_id}' is closed or absent from the simulation")
    flows = np.sort(np.abs(sim.flow_series(pipe_id)))
    return FlowStats(
        min=float(flows[0]),
        max=float(flows[-1]),
        mean=float(flows.mean()),
        median=float(flows[(len(flows) - 1) // 2]),
        std=float(flows.std()),
    )


def write_simulation_csv(sim: SimulationResult, path: str | Path) -> None:
    sim.to_frame().to_csv(path, index=False)


def read_simulation_csv(path: str | Path) -> SimulationResult:
    """Rebuild a SimulationResult from its long-format table; steps read back as converged."""
    frame = pd.read_csv(path, dtype={"element_id": str, "kind": str})
    steps = []
    timestamps = []
    for t, rows in frame.groupby("timestamp", sort=True):
        heads = rows[rows["kind"] == ElementKind.HEAD.value]
        pressures = rows[rows["kind"] == ElementKind.PRESSURE.value].set_index("element_id")["value"]
        flows = rows[rows["kind"] == ElementKind.FLOW.value]
        node_ids = tuple(heads["element_id"])
        steps.append(
            StepResult(
                node_ids=node_ids,
                pipe_ids=tuple(flows["element_id"]),
                node_head=heads["value"].to_numpy(dtype=float),
                node_pressure=pressures.reindex(list(node_ids)).to_numpy(dtype=float),
                pipe_flow=flows["value"].to_numpy(dtype=float),
                converged=True,
                iterations=0,
            )
        )
        timestamps.append(float(t))
    return SimulationResult(steps=tuple(steps), timestamps=tuple(timestamps))
