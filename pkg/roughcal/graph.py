"""
Graph-theoretic pipe descriptors on the undirected open-pipe multigraph.

Edges are keyed by pipe id so parallel pipes stay distinguishable.
"""

import logging
from typing import Hashable, Iterable, Optional

import networkx as nx
import numpy as np

from .errors import MissingEdge, NoConvergence
from .models import Network

LOGGER = logging.getLogger(__name__)

PPR_RESTART = 0.15
PPR_TOLERANCE = 1e-8
PPR_MAX_ITER = 10000

Edge = frozenset


def build_wdn_graph(net: Network) -> nx.MultiGraph:
    g = nx.MultiGraph()
    g.add_nodes_from(net.node_ids)
    for pipe in net.open_pipes:
        g.add_edge(pipe.from_node, pipe.to_node, key=pipe.id, length=pipe.length)
    return g


def _require_edge(g: nx.Graph, u: Hashable, v: Hashable) -> None:
    if not g.has_edge(u, v):
        raise MissingEdge(f"Edge ({u}, {v}) is not in the graph")


def edge_multiplicity(g: nx.Graph, u: Hashable, v: Hashable) -> int:
    return g.number_of_edges(u, v) if g.is_multigraph() else int(g.has_edge(u, v))


def find_bridges(g: nx.Graph) -> set[Edge]:
    """
    Node pairs whose single connecting edge is a cut edge.

    Parallel edges are never bridges.
    """
    simple = nx.Graph(g)
    return {
        frozenset((u, v))
        for u, v in nx.bridges(simple)
        if edge_multiplicity(g, u, v) == 1
    }


def edge_betweenness(g: nx.Graph, weight: Optional[str] = None) -> dict[tuple, float]:
    """
    Normalized edge betweenness computed per connected component.

    Keys follow networkx: (u, v) for simple graphs, (u, v, key) for multigraphs.
    """
    result: dict[tuple, float] = {}
    for component in nx.connected_components(g):
        sub = g.subgraph(component)
        if sub.number_of_edges() == 0:
            continue
        result.update(nx.edge_betweenness_centrality(sub, normalized=True, weight=weight))
    return result


def degree_attributes(g: nx.Graph, u: Hashable, v: Hashable) -> dict[str, float]:
    """
    Degree descriptors of edge (u, v), where degree counts incident pipes.

    Parallel pipes count once each, both in a node's degree and in the neighbour
    average, which is taken over incident pipes rather than distinct neighbours.
    """
    _require_edge(g, u, v)
    deg_u, deg_v = g.degree(u), g.degree(v)

    def _avg_neighbour_degree(node: Hashable) -> float:
        return float(np.mean([g.degree(w) for _, w in g.edges(node)]))

    return {
        "degree_sum": deg_u + deg_v,
        "degree_difference": abs(deg_u - deg_v),
        "min_degree": min(deg_u, deg_v),
        "max_degree": max(deg_u, deg_v),
        "avg_neighbour_degree_difference": abs(_avg_neighbour_degree(u) - _avg_neighbour_degree(v)),
    }


def edge_strength(g: nx.Graph, u: Hashable, v: Hashable) -> float:
    """Neighbourhood overlap |N(u) ∩ N(v)| / |N(u) ∪ N(v) \\ {u, v}|."""
    _require_edge(g, u, v)
    n_u, n_v = set(g.neighbors(u)), set(g.neighbors(v))
    others = (n_u | n_v) - {u, v}
    if not others:
        return 0.0
    return len(n_u & n_v) / len(others)


def ppr_vector(
    g: nx.Graph,
    seed: Hashable,
    restart: float = PPR_RESTART,
    tolerance: float = PPR_TOLERANCE,
) -> np.ndarray:
    """Personalized PageRank seeded at one node, aligned with g.nodes order."""
    try:
        scores = nx.pagerank(
            g,
            alpha=1.0 - restart,
            personalization={seed: 1.0},
            tol=tolerance,
            max_iter=PPR_MAX_ITER,
        )
    except nx.PowerIterationFailedConvergence as e:
        raise NoConvergence(f"Personalized PageRank from '{seed}' did not converge") from e
    return np.array([scores[n] for n in g.nodes], dtype=float)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(a @ b / norm) if norm > 0 else 0.0


def ppr_similarity(
    g: nx.Graph,
    u: Hashable,
    v: Hashable,
    restart: float = PPR_RESTART,
    tolerance: float = PPR_TOLERANCE,
) -> float:
    """Cosine similarity of the PPR vectors seeded at u and at v."""
    _require_edge(g, u, v)
    return _cosine(ppr_vector(g, u, restart, tolerance), ppr_vector(g, v, restart, tolerance))


class PprCache:
    """Memoized PPR vectors, one power iteration per seed node."""

    def __init__(self, g: nx.Graph, restart: float = PPR_RESTART, tolerance: float = PPR_TOLERANCE) -> None:
        self.g = g
        self.restart = restart
        self.tolerance = tolerance
        self._vectors: dict[Hashable, np.ndarray] = {}

    def vector(self, node: Hashable) -> np.ndarray:
        if node not in self._vectors:
            self._vectors[node] = ppr_vector(self.g, node, self.restart, self.tolerance)
        return self._vectors[node]

    def similarity(self, u: Hashable, v: Hashable) -> float:
        _require_edge(self.g, u, v)
        return _cosine(self.vector(u), self.vector(v))

    def warm(self, nodes: Iterable[Hashable]) -> None:
        for node in nodes:
            self.vector(node)
        LOGGER.debug(f"Cached {len(self._vectors)} PPR vectors")
