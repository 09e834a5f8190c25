"""
Shuffled Complex Evolution (SCE-UA) global minimizer for box-bounded problems.

Complexes evolve independently by competitive complex evolution (reflection,
contraction, random replacement) and are periodically shuffled. Every complex
draws from its own random stream derived from (seed, complex, shuffle), and
per-complex call budgets are fixed before each loop, so results do not depend
on how many worker threads evaluate the complexes.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from .constants import SceOptions, settings
from .types import Termination

LOGGER = logging.getLogger(__name__)

REFLECTION = 1.0
CONTRACTION = 0.5
EPSILON = 1e-12

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class TraceEntry:
    call_index: int
    f: float
    is_incumbent: bool
    x: tuple[float, ...]


@dataclass
class SceResult:
    best_x: np.ndarray
    best_f: float
    trace: list[TraceEntry] = field(default_factory=list)
    n_loops: int = 0
    termination: Termination = Termination.MAX_CALLS

    def __repr__(self) -> str:
        return (
            f"SceResult(best_f={self.best_f:.6g}, calls={self.n_calls}, "
            f"loops={self.n_loops}, termination={self.termination.value})"
        )

    @property
    def n_calls(self) -> int:
        return len(self.trace)

    def incumbent_curve(self) -> np.ndarray:
        """Best objective value after each call."""
        return np.minimum.accumulate(np.array([t.f for t in self.trace], dtype=float))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "call_index": [t.call_index for t in self.trace],
                "objective": [t.f for t in self.trace],
                "is_incumbent": [t.is_incumbent for t in self.trace],
            }
        )


def _relative_change(old: float, new: float) -> float:
    if old == new:
        return 0.0
    if not np.isfinite(old):
        return np.inf
    return (old - new) / max(abs(old), EPSILON)


def _subcomplex_probabilities(m: int) -> np.ndarray:
    """Triangular weights favouring better-ranked points: p_i = 2(m+1−i)/(m(m+1))."""
    ranks = np.arange(1, m + 1)
    return 2.0 * (m + 1 - ranks) / (m * (m + 1))


class _Complex:
    """One complex evolving on its own random stream and call budget."""

    def __init__(
        self,
        points: np.ndarray,
        values: np.ndarray,
        f: Objective,
        lower: np.ndarray,
        upper: np.ndarray,
        rng: np.random.Generator,
        opts: SceOptions,
        budget: int,
    ) -> None:
        self.points = points
        self.values = values
        self.f = f
        self.lower = lower
        self.upper = upper
        self.rng = rng
        self.opts = opts
        self.budget = budget
        self.evaluations: list[tuple[float, np.ndarray]] = []

    def _evaluate(self, x: np.ndarray) -> float:
        value = float(self.f(x))
        if np.isnan(value):
            value = np.inf
        self.evaluations.append((value, x.copy()))
        return value

    def _random_point(self) -> np.ndarray:
        return self.lower + self.rng.random(self.lower.size) * (self.upper - self.lower)

    def _in_bounds(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def _step(self, probabilities: np.ndarray) -> None:
        m, q = len(self.values), self.opts.subcomplex_size
        chosen = np.sort(self.rng.choice(m, size=q, replace=False, p=probabilities))
        worst = chosen[-1]
        x_worst, f_worst = self.points[worst], self.values[worst]
        centroid = self.points[chosen[:-1]].mean(axis=0)

        candidate = centroid + REFLECTION * (centroid - x_worst)
        if not self._in_bounds(candidate):
            candidate = self._random_point()
        f_new = self._evaluate(candidate)
        if f_new > f_worst:
            candidate = x_worst + CONTRACTION * (centroid - x_worst)
            f_new = self._evaluate(candidate)
            if f_new > f_worst:
                candidate = self._random_point()
                f_new = self._evaluate(candidate)

        self.points[worst] = candidate
        self.values[worst] = f_new
        order = np.argsort(self.values, kind="stable")
        self.points, self.values = self.points[order], self.values[order]

    def evolve(self) -> "_Complex":
        probabilities = _subcomplex_probabilities(len(self.values))
        for _ in range(self.opts.evolution_steps):
            if len(self.evaluations) >= self.budget:
                break
            self._step(probabilities)
        return self


def _budgets(remaining: int, n_complexes: int) -> list[int]:
    base, extra = divmod(max(remaining, 0), n_complexes)
    return [base + (1 if c < extra else 0) for c in range(n_complexes)]


def sce_minimize(
    f: Objective,
    lower: np.ndarray,
    upper: np.ndarray,
    opts: Optional[SceOptions] = None,
    workers: Optional[int] = None,
) -> SceResult:
    """
    Minimize f over the box [lower, upper].

    f must be reentrant when workers > 1 and should return +inf on failure.
    Terminates on the call budget, on reaching opts.target_objective, or when the
    best value improves by less than opts.min_relative_change over
    opts.convergence_loops shuffles.
    """
    opts = opts or SceOptions()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1 or lower.size == 0:
        raise ValueError("Bounds must be two non-empty vectors of equal length")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))) or np.any(lower >= upper):
        raise ValueError("Bounds must be finite with lower < upper")
    workers = workers or settings.worker_count
    m = opts.points_per_complex

    trace: list[TraceEntry] = []
    best_f = np.inf

    def _record(evaluations: list[tuple[float, np.ndarray]]) -> None:
        nonlocal best_f
        for value, x in evaluations:
            improved = value < best_f
            best_f = min(best_f, value)
            trace.append(TraceEntry(len(trace), value, improved, tuple(float(v) for v in x)))

    # Initial population
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed]))
    points = lower + rng.random((opts.population_size, lower.size)) * (upper - lower)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        values = np.array(list(executor.map(lambda x: float(f(x)), points)), dtype=float)
    values[np.isnan(values)] = np.inf
    _record(list(zip(values, points)))
    order = np.argsort(values, kind="stable")
    points, values = points[order], values[order]

    history = [float(values[0])]
    n_complexes = opts.n_complexes
    termination = Termination.MAX_CALLS
    loop = 0

    if values[0] <= opts.target_objective:
        termination = Termination.TARGET_REACHED
    else:
        while len(trace) < opts.max_calls:
            budgets = _budgets(opts.max_calls - len(trace), n_complexes)
            complexes = []
            for c in range(n_complexes):
                members = np.arange(c, n_complexes * m, n_complexes)
                stream = np.random.default_rng(np.random.SeedSequence([opts.seed, c, loop]))
                complexes.append(
                    _Complex(points[members].copy(), values[members].copy(), f, lower, upper, stream, opts, budgets[c])
                )
            with ThreadPoolExecutor(max_workers=workers) as executor:
                evolved = list(executor.map(_Complex.evolve, complexes))
            for cx in evolved:
                _record(cx.evaluations)

            points = np.concatenate([cx.points for cx in evolved])
            values = np.concatenate([cx.values for cx in evolved])
            order = np.argsort(values, kind="stable")
            points, values = points[order], values[order]
            loop += 1
            history.append(float(values[0]))
            LOGGER.debug(f"Shuffle {loop}: best={values[0]:.6g}, calls={len(trace)}, complexes={n_complexes}")

            if values[0] <= opts.target_objective:
                termination = Termination.TARGET_REACHED
                break
            k = opts.convergence_loops
            if loop >= k and _relative_change(history[-1 - k], history[-1]) < opts.min_relative_change:
                termination = Termination.CONVERGED
                break
            stalled = _relative_change(history[-2], history[-1]) < opts.min_relative_change
            if stalled and n_complexes > opts.min_complexes:
                n_complexes -= 1
                points, values = points[: n_complexes * m], values[: n_complexes * m]
                LOGGER.debug(f"Dropped worst complex, {n_complexes} remain")

    result = SceResult(
        best_x=points[0].copy(),
        best_f=float(values[0]),
        trace=trace,
        n_loops=loop,
        termination=termination,
    )
    LOGGER.info(f"SCE finished: {result!r}")
    return result
