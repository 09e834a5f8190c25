"""
Pipe grouping: attribute clustering (k-means, HDBSCAN) and topology-based
grouping on the pipe line graph (Louvain communities, local-variation coarsening).
"""

import logging
import math
import textwrap
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import networkx as nx
import numpy as np
import pandas as pd
from sklearn.cluster import HDBSCAN, KMeans

from .constants import NOISE, settings
from .errors import DegenerateData, EmptyGraph, GroupingError, MetricsError
from .metrics import davies_bouldin, silhouette
from .models import DesignMatrix, ElbowReport, ElbowRow, Grouping, LineGraph, Network, SimulationResult
from .types import GroupingMethod

LOGGER = logging.getLogger(__name__)

COMPARABLE_MARGIN = 0.05
ZERO_FLOW = 1e-9  # m³/h


def _relabel_by_size(raw: np.ndarray) -> np.ndarray:
    """Labels ordered by group size descending, ties by first member position; noise kept."""
    order = []
    for label in np.unique(raw[raw != NOISE]):
        members = np.flatnonzero(raw == label)
        order.append((-len(members), int(members[0]), label))
    mapping = {label: new for new, (_, _, label) in enumerate(sorted(order))}
    return np.array([mapping.get(label, NOISE) for label in raw], dtype=int)


def _grouping(pipe_ids: list[str], raw: np.ndarray, method: GroupingMethod, params: dict) -> Grouping:
    labels = _relabel_by_size(np.asarray(raw, dtype=int))
    grouping = Grouping(dict(zip(pipe_ids, (int(v) for v in labels))), method, params)
    grouping.validate(pipe_ids)
    return grouping


# --- Attribute clustering ---


def kmeans(
    x: DesignMatrix,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
    method: GroupingMethod = GroupingMethod.KMEANS,
) -> tuple[Grouping, float]:
    values = x.values
    if not 1 <= k <= len(values):
        raise DegenerateData(f"k must lie in [1, {len(values)}], got {k}")
    distinct = len(np.unique(values, axis=0))
    if distinct < k:
        raise DegenerateData(f"Only {distinct} distinct rows for k={k}")

    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=restarts,
        max_iter=max_iter,
        random_state=seed,
        algorithm="lloyd",
    ).fit(values)
    inertia = float(model.inertia_)
    LOGGER.debug(f"k-means k={k} converged in {model.n_iter_} iterations, inertia={inertia:.6g}")
    params = {"k": k, "seed": seed, "restarts": restarts, "max_iter": max_iter, "inertia": inertia}
    return _grouping(x.pipe_ids, model.labels_, method, params), inertia


def _elbow_row(x: DesignMatrix, k: int, seed: int, restarts: int, max_iter: int) -> ElbowRow:
    try:
        grouping, inertia = kmeans(x, k, seed, restarts, max_iter)
    except DegenerateData as e:
        LOGGER.warning(f"Elbow sweep gap at k={k}: {e}")
        return ElbowRow(k=k, inertia=None, sc=None, dbi=None, error=str(e))
    try:
        sc, dbi = silhouette(x, grouping), davies_bouldin(x, grouping)
    except MetricsError as e:
        return ElbowRow(k=k, inertia=inertia, sc=None, dbi=None, error=str(e))
    return ElbowRow(k=k, inertia=inertia, sc=sc, dbi=dbi)


def elbow_sweep(
    x: DesignMatrix,
    k_min: int = 11,
    k_max: int = 99,
    step: int = 2,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
) -> ElbowReport:
    """k-means with SC and DBI for every k in the grid; infeasible k are recorded as gaps."""
    if k_min > k_max or step < 1:
        raise ValueError(f"Invalid sweep grid k_min={k_min}, k_max={k_max}, step={step}")
    ks = list(range(k_min, k_max + 1, step))
    with ThreadPoolExecutor(max_workers=settings.worker_count) as executor:
        rows = list(executor.map(lambda k: _elbow_row(x, k, seed, restarts, max_iter), ks))
    gaps = sum(r.error is not None for r in rows)
    LOGGER.info(f"Elbow sweep over {len(ks)} values of k, {gaps} gaps")
    return ElbowReport(tuple(rows))


def _fit_hdbscan(values: np.ndarray, min_cluster_size: int, min_samples: int, single: bool) -> np.ndarray:
    model = HDBSCAN(
        min_cluster_size=min_cluster_size,
        min_samples=min_samples,
        metric="euclidean",
        cluster_selection_method="eom",
        allow_single_cluster=single,
    ).fit(values)
    return np.where(model.labels_ < 0, NOISE, model.labels_)


def hdbscan(
    x: DesignMatrix,
    min_cluster_size: int = 5,
    min_samples: int = 5,
    method: GroupingMethod = GroupingMethod.HDBSCAN,
) -> Grouping:
    """
    Density clusters over the distinct design rows; duplicated rows share one label.

    When no multi-cluster split exists, the whole set is refitted as one candidate
    cluster, kept only if it covers at least half the distinct rows. Otherwise
    every pipe is noise.
    """
    values = x.values
    if len(values) < min_cluster_size:
        raise DegenerateData(f"{len(values)} rows cannot form a cluster of {min_cluster_size}")
    distinct, inverse = np.unique(values, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(distinct) == 1:
        raise DegenerateData("All rows are identical")
    if len(distinct) < max(min_cluster_size, min_samples):
        raise DegenerateData(f"{len(distinct)} distinct rows cannot form a cluster of {min_cluster_size}")

    labels = _fit_hdbscan(distinct, min_cluster_size, min_samples, single=False)
    if np.all(labels == NOISE):
        single = _fit_hdbscan(distinct, min_cluster_size, min_samples, single=True)
        if np.count_nonzero(single != NOISE) * 2 >= len(distinct):
            labels = single
    params = {"min_cluster_size": min_cluster_size, "min_samples": min_samples}
    grouping = _grouping(x.pipe_ids, labels[inverse], method, params)
    if grouping.n_groups == 0:
        LOGGER.warning(f"HDBSCAN labelled all {len(grouping)} pipes as noise")
    else:
        LOGGER.info(f"HDBSCAN found {grouping.n_groups} clusters and {len(grouping.noise)} noise pipes")
    return grouping


# --- Line graph ---


def build_line_graph(net: Network, sim: SimulationResult, subset: Optional[list[str]] = None) -> LineGraph:
    """
    Directed pipe adjacency: p → q when q touches a downstream end of p.

    Direction follows the mean simulated flow; zero-mean pipes have both ends downstream.
    """
    pipe_ids = subset if subset is not None else [p.id for p in net.calibratable_pipes]
    downstream: dict[str, set[str]] = {}
    touching: dict[str, set[str]] = {}
    for pipe_id in pipe_ids:
        pipe = net.pipe(pipe_id)
        assert pipe is not None
        mean_flow = float(np.mean(sim.flow_series(pipe_id)))
        if mean_flow > ZERO_FLOW:
            downstream[pipe_id] = {pipe.to_node}
        elif mean_flow < -ZERO_FLOW:
            downstream[pipe_id] = {pipe.from_node}
        else:
            downstream[pipe_id] = {pipe.from_node, pipe.to_node}
        for node in (pipe.from_node, pipe.to_node):
            touching.setdefault(node, set()).add(pipe_id)

    lg = nx.DiGraph()
    lg.add_nodes_from(pipe_ids)
    for p in pipe_ids:
        for node in sorted(downstream[p]):
            lg.add_edges_from((p, q) for q in sorted(touching[node]) if q != p)
    return LineGraph(lg)


# --- Louvain ---


def louvain_linegraph(lg: LineGraph, resolution: float = 0.5, seed: int = 0) -> Grouping:
    """
    Louvain communities maximizing directed modularity on the line graph.

    Singleton communities are labelled noise. params["level_modularity"] holds the
    modularity after each aggregation level; individual local moves are not traced.
    """
    g = lg.graph
    if g.number_of_nodes() == 0:
        raise EmptyGraph("Line graph has no pipes")
    if resolution <= 0:
        raise ValueError(f"Resolution must be positive, got {resolution}")

    levels = list(nx.community.louvain_partitions(g, resolution=resolution, seed=seed))
    partition = levels[-1]
    trace = []
    if g.number_of_edges() > 0:
        trace = [nx.community.modularity(g, level, resolution=resolution) for level in levels]

    position = {pipe_id: i for i, pipe_id in enumerate(lg.pipe_ids)}
    raw = np.full(len(position), NOISE, dtype=int)
    for label, community in enumerate(partition):
        if len(community) > 1:
            raw[[position[p] for p in community]] = label
    params = {"resolution": resolution, "seed": seed, "levels": len(levels), "level_modularity": trace}
    grouping = _grouping(lg.pipe_ids, raw, GroupingMethod.LOUVAIN, params)
    LOGGER.info(f"Louvain found {grouping.n_groups} communities over {len(levels)} levels")
    return grouping


# --- Local-variation coarsening ---


def _laplacian(w: np.ndarray) -> np.ndarray:
    return np.diag(w.sum(axis=1)) - w


def _variation_cost(laplacian: np.ndarray, members: list[int]) -> float:
    """Spectral norm of the centred restricted Laplacian, per contracted node."""
    size = len(members)
    block = laplacian[np.ix_(members, members)]
    centering = np.eye(size) - np.full((size, size), 1.0 / size)
    return float(np.linalg.norm(centering @ block @ centering, 2)) / (size - 1)


def _contract(w: np.ndarray, assignment: np.ndarray, n_coarse: int) -> np.ndarray:
    projection = np.zeros((len(assignment), n_coarse))
    projection[np.arange(len(assignment)), assignment] = 1.0
    coarse = projection.T @ w @ projection
    np.fill_diagonal(coarse, 0.0)
    return coarse


def _coarsen_level(w: np.ndarray, target: int) -> Optional[np.ndarray]:
    """One greedy pass; coarse index per node, or None when nothing can contract."""
    n = len(w)
    laplacian = _laplacian(w)
    candidates = []
    for i in range(n):
        members = sorted({i, *np.flatnonzero(w[i] > 0).tolist()})
        if len(members) > 1:
            candidates.append((_variation_cost(laplacian, members), i, members))
    if not candidates:
        return None

    assignment = -np.ones(n, dtype=int)
    count = n
    for _, _, members in sorted(candidates, key=lambda c: (c[0], c[1])):
        if count <= target:
            break
        if np.any(assignment[members] >= 0):
            continue
        assignment[members] = members[0]
        count -= len(members) - 1
    untouched = assignment < 0
    assignment[untouched] = np.flatnonzero(untouched)
    _, compact = np.unique(assignment, return_inverse=True)
    return compact


def vn_coarsen_linegraph(lg: LineGraph, reduction_ratio: float = 0.95) -> Grouping:
    """
    Group pipes by multilevel local-variation neighbourhood coarsening.

    Node-plus-neighbourhood sets are contracted cheapest first until at most
    ceil((1 − r)·n) super-nodes remain. Leftover singleton super-nodes join the
    adjacent super-node with the lowest pairwise cost; a pipe with no neighbours is noise.
    """
    if not 0 < reduction_ratio < 1:
        raise ValueError(f"Reduction ratio must lie in (0, 1), got {reduction_ratio}")
    pipe_ids = lg.pipe_ids
    n = len(pipe_ids)
    if n == 0:
        raise EmptyGraph("Line graph has no pipes")
    target = max(1, math.ceil((1.0 - reduction_ratio) * n))

    undirected = lg.to_undirected()
    w = nx.to_numpy_array(undirected, nodelist=pipe_ids, weight=None)
    np.fill_diagonal(w, 0.0)
    membership = np.arange(n)
    levels = 0
    while len(w) > target:
        assignment = _coarsen_level(w, target)
        if assignment is None or assignment.max() + 1 == len(w):
            break
        n_coarse = int(assignment.max()) + 1
        w = _contract(w, assignment, n_coarse)
        membership = assignment[membership]
        levels += 1

    membership = _merge_singletons(w, membership)
    params = {"reduction_ratio": reduction_ratio, "target": target, "levels": levels}
    grouping = _grouping(pipe_ids, membership, GroupingMethod.VN, params)
    LOGGER.info(f"Coarsening reached {grouping.n_groups} groups after {levels} levels (target {target})")
    return grouping


def _merge_singletons(w: np.ndarray, membership: np.ndarray) -> np.ndarray:
    sizes = np.bincount(membership, minlength=len(w))
    laplacian = _laplacian(w)
    merged_into = np.arange(len(w))
    for s in range(len(w)):
        if sizes[s] != 1:
            continue
        neighbours = np.flatnonzero(w[s] > 0)
        if neighbours.size == 0:
            merged_into[s] = NOISE
            continue
        costs = [(_variation_cost(laplacian, [s, int(t)]), int(t)) for t in neighbours]
        _, best = min(costs)
        root = best
        while merged_into[root] != root:
            root = merged_into[root]
        merged_into[s] = root
        sizes[root] += 1
        sizes[s] = 0
    return np.array([merged_into[c] for c in membership], dtype=int)


# --- Reporting aids ---


def _rank_key(row: ElbowRow) -> tuple[float, float, int]:
    assert row.sc is not None and row.dbi is not None
    return (-row.sc, row.dbi, row.k)


def shortlist_candidates(report: ElbowReport, baseline_k: Optional[int] = 27) -> dict[str, int]:
    """
    Candidate k values for a human elbow decision.

    best: highest SC, ties by lowest DBI; second_best: next in that order;
    baseline: baseline_k when swept; smallest_comparable: smallest k within
    COMPARABLE_MARGIN of the best SC and DBI.
    """
    rows = [r for r in report.valid_rows() if r.sc is not None and r.dbi is not None]
    if not rows:
        raise GroupingError("Elbow report has no scored rows")
    ranked = sorted(rows, key=_rank_key)
    best = ranked[0]
    shortlist = {"best": best.k}
    if len(ranked) > 1:
        shortlist["second_best"] = ranked[1].k
    if baseline_k is not None and baseline_k in {r.k for r in rows}:
        shortlist["baseline"] = baseline_k
    assert best.sc is not None and best.dbi is not None
    comparable = [
        r.k for r in rows if r.sc >= best.sc - COMPARABLE_MARGIN and r.dbi <= best.dbi + COMPARABLE_MARGIN
    ]
    shortlist["smallest_comparable"] = min(comparable)
    LOGGER.info(
        textwrap.dedent(
            f"""
            Elbow shortlist
            - Best:                {shortlist['best']}
            - Second best:         {shortlist.get('second_best', '-')}
            - Baseline:            {shortlist.get('baseline', '-')}
            - Smallest comparable: {shortlist['smallest_comparable']}
            """
        )
    )
    return shortlist


def group_size_summary(grouping: Grouping) -> dict:
    """Group count, size quartiles, noise count and groups holding more than half the pipes."""
    sizes = np.array([len(members) for members in grouping.groups().values()], dtype=float)
    total = len(grouping)
    summary: dict = {"n_groups": grouping.n_groups, "n_pipes": total, "noise": len(grouping.noise)}
    if sizes.size:
        q1, median, q3 = np.percentile(sizes, [25, 50, 75])
        summary.update(
            min=int(sizes.min()), q1=float(q1), median=float(median), q3=float(q3), max=int(sizes.max())
        )
    else:
        summary.update(min=None, q1=None, median=None, q3=None, max=None)
    summary["dominant"] = [
        label for label, members in grouping.groups().items() if len(members) > total / 2
    ]
    return summary


# --- CSV I/O ---


def write_grouping_csv(grouping: Grouping, path: str | Path) -> None:
    pd.DataFrame({"pipe_id": grouping.pipe_ids, "label": list(grouping.labels.values())}).to_csv(
        path, index=False
    )


def read_grouping_csv(path: str | Path, method: GroupingMethod) -> Grouping:
    frame = pd.read_csv(path, dtype={"pipe_id": str, "label": int})
    grouping = Grouping(dict(zip(frame["pipe_id"].tolist(), frame["label"].astype(int).tolist())), method)
    grouping.validate()
    return grouping


def write_elbow_csv(report: ElbowReport, path: str | Path) -> None:
    report.to_frame().to_csv(path, index=False)
