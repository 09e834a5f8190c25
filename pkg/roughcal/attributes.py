"""
Per-pipe attribute matrix (hydraulic + graph descriptors) and its numeric encoding.
"""

import json
import logging
from pathlib import Path
from typing import Optional

import networkx as nx
import pandas as pd
from sklearn.preprocessing import StandardScaler

from .errors import UnknownPipeId
from .graph import (
    PPR_RESTART,
    PprCache,
    build_wdn_graph,
    degree_attributes,
    edge_betweenness,
    edge_strength,
    find_bridges,
)
from .hydraulics import flow_statistics
from .models import AttributeMatrix, DesignMatrix, Network, SimulationResult
from .types import AttributeKind

LOGGER = logging.getLogger(__name__)

HYDRAULIC_KINDS = {
    "diameter": AttributeKind.NUMERIC,
    "length": AttributeKind.NUMERIC,
    "age": AttributeKind.NUMERIC,
    "role": AttributeKind.CATEGORICAL,
    "material": AttributeKind.CATEGORICAL,
    "dma": AttributeKind.CATEGORICAL,
    "flow_min": AttributeKind.NUMERIC,
    "flow_max": AttributeKind.NUMERIC,
    "flow_mean": AttributeKind.NUMERIC,
    "flow_median": AttributeKind.NUMERIC,
    "flow_std": AttributeKind.NUMERIC,
}

GRAPH_KINDS = {
    "is_bridge": AttributeKind.BOOLEAN,
    "edge_betweenness": AttributeKind.NUMERIC,
    "degree_sum": AttributeKind.NUMERIC,
    "degree_difference": AttributeKind.NUMERIC,
    "min_degree": AttributeKind.NUMERIC,
    "max_degree": AttributeKind.NUMERIC,
    "avg_neighbour_degree_difference": AttributeKind.NUMERIC,
    "edge_strength": AttributeKind.NUMERIC,
    "ppr_similarity": AttributeKind.NUMERIC,
}

HYDRAULIC_COLUMNS = list(HYDRAULIC_KINDS)
GRAPH_COLUMNS = list(GRAPH_KINDS)
ONE_HOT_SEPARATOR = "="


def _default_subset(net: Network) -> list[str]:
    return [p.id for p in net.calibratable_pipes]


def compute_hydraulic_attributes(
    net: Network, sim: SimulationResult, subset: Optional[list[str]] = None
) -> AttributeMatrix:
    pipe_ids = subset if subset is not None else _default_subset(net)
    rows = []
    for pipe_id in pipe_ids:
        if (pipe := net.pipe(pipe_id)) is None:
            raise UnknownPipeId(f"Pipe '{pipe_id}' not found in network")
        stats = flow_statistics(sim, pipe_id)
        rows.append(
            {
                "diameter": pipe.diameter,
                "length": pipe.length,
                "age": pipe.age,
                "role": pipe.role.value,
                "material": pipe.material,
                "dma": pipe.dma,
                "flow_min": stats.min,
                "flow_max": stats.max,
                "flow_mean": stats.mean,
                "flow_median": stats.median,
                "flow_std": stats.std,
            }
        )
    frame = pd.DataFrame(rows, index=pd.Index(pipe_ids, name="pipe_id"), columns=HYDRAULIC_COLUMNS)
    return AttributeMatrix(frame, dict(HYDRAULIC_KINDS))


def compute_graph_attributes(
    net: Network,
    g: nx.MultiGraph,
    pipe_ids: list[str],
    ppr_restart: float = PPR_RESTART,
    weighted_betweenness: bool = False,
) -> AttributeMatrix:
    bridges = find_bridges(g)
    betweenness = {
        key[2]: value
        for key, value in edge_betweenness(g, weight="length" if weighted_betweenness else None).items()
    }
    ppr = PprCache(g, restart=ppr_restart)

    rows = []
    for pipe_id in pipe_ids:
        if (pipe := net.pipe(pipe_id)) is None:
            raise UnknownPipeId(f"Pipe '{pipe_id}' not found in network")
        u, v = pipe.from_node, pipe.to_node
        rows.append(
            {
                "is_bridge": frozenset((u, v)) in bridges,
                "edge_betweenness": betweenness[pipe_id],
                **degree_attributes(g, u, v),
                "edge_strength": edge_strength(g, u, v),
                "ppr_similarity": ppr.similarity(u, v),
            }
        )
    frame = pd.DataFrame(rows, index=pd.Index(pipe_ids, name="pipe_id"), columns=GRAPH_COLUMNS)
    return AttributeMatrix(frame, dict(GRAPH_KINDS))


def build_attribute_matrix(
    net: Network,
    sim: SimulationResult,
    subset: Optional[list[str]] = None,
    ppr_restart: float = PPR_RESTART,
    weighted_betweenness: bool = False,
) -> AttributeMatrix:
    """Full attribute matrix for the calibratable open pipes, in INP order."""
    pipe_ids = subset if subset is not None else _default_subset(net)
    hydraulic = compute_hydraulic_attributes(net, sim, pipe_ids)
    graph = compute_graph_attributes(net, build_wdn_graph(net), pipe_ids, ppr_restart, weighted_betweenness)
    LOGGER.info(f"Computed {len(HYDRAULIC_COLUMNS) + len(GRAPH_COLUMNS)} attributes for {len(pipe_ids)} pipes")
    return AttributeMatrix(
        pd.concat([hydraulic.frame, graph.frame], axis=1),
        {**hydraulic.kinds, **graph.kinds},
    )


def reduced_subset(m: AttributeMatrix) -> AttributeMatrix:
    """Hydraulic attributes only."""
    return m.select([c for c in m.columns if c in HYDRAULIC_KINDS])


def encode_features(m: AttributeMatrix) -> DesignMatrix:
    """
    Numeric matrix for clustering.

    Numeric and boolean columns are z-scored (constant columns become zeros),
    categorical columns are one-hot expanded.
    """
    parts: list[pd.DataFrame] = []
    provenance: dict[str, str] = {}
    for column in m.columns:
        kind = m.kinds[column]
        if kind == AttributeKind.CATEGORICAL:
            dummies = pd.get_dummies(
                m.frame[column].astype(str), prefix=column, prefix_sep=ONE_HOT_SEPARATOR, dtype=float
            )
            parts.append(dummies)
            provenance.update({c: column for c in dummies.columns})
            continue
        values = m.frame[[column]].astype(float).to_numpy()
        scaled = StandardScaler().fit_transform(values)
        parts.append(pd.DataFrame(scaled, index=m.frame.index, columns=[column]))
        provenance[column] = column
    frame = pd.concat(parts, axis=1) if parts else pd.DataFrame(index=m.frame.index)
    return DesignMatrix(frame, provenance)


# --- CSV I/O ---


def _kinds_path(path: Path) -> Path:
    return path.with_suffix(".kinds.json")


def write_attribute_csv(m: AttributeMatrix, path: str | Path) -> None:
    path = Path(path)
    m.frame.to_csv(path, index_label="pipe_id")
    _kinds_path(path).write_text(json.dumps({c: k.value for c, k in m.kinds.items()}, indent=2))


def read_attribute_csv(path: str | Path) -> AttributeMatrix:
    path = Path(path)
    kinds = {c: AttributeKind(k) for c, k in json.loads(_kinds_path(path).read_text()).items()}
    dtypes = {c: str for c, k in kinds.items() if k == AttributeKind.CATEGORICAL}
    frame = pd.read_csv(path, index_col="pipe_id", dtype={"pipe_id": str, **dtypes})
    for column, kind in kinds.items():
        if kind == AttributeKind.BOOLEAN:
            frame[column] = frame[column].astype(bool)
    return AttributeMatrix(frame, kinds)


def write_design_csv(x: DesignMatrix, path: str | Path) -> None:
    x.frame.to_csv(path, index_label="pipe_id")


def read_design_csv(path: str | Path) -> DesignMatrix:
    frame = pd.read_csv(path, index_col="pipe_id", dtype={"pipe_id": str})
    provenance = {c: c.split(ONE_HOT_SEPARATOR, 1)[0] for c in frame.columns}
    return DesignMatrix(frame.astype(float), provenance)
