"""Tests for graph-theoretic pipe descriptors.

This module tests:
- build_wdn_graph(): open-pipe multigraph construction
- find_bridges() and edge_betweenness(): hand examples and brute-force oracles
- degree_attributes() and edge_strength(): hand counts
- ppr_similarity(): independent power-iteration oracle and symmetry
"""

import itertools

import networkx as nx
import numpy as np
import pytest

from roughcal.errors import MissingEdge
from roughcal.graph import (
    PprCache,
    build_wdn_graph,
    degree_attributes,
    edge_betweenness,
    edge_strength,
    find_bridges,
    ppr_similarity,
    ppr_vector,
)
from roughcal.models import Network, Pipe
from roughcal.network import parse_inp
from roughcal.types import PipeStatus


def brute_force_bridges(g: nx.Graph) -> set[frozenset]:
    baseline = nx.number_connected_components(g)
    result = set()
    for u, v in list(g.edges()):
        h = g.copy()
        h.remove_edge(u, v)
        if nx.number_connected_components(h) > baseline:
            result.add(frozenset((u, v)))
    return result


def brute_force_betweenness(g: nx.Graph) -> dict[frozenset, float]:
    """Fraction of shortest paths through each edge, summed over pairs and normalized per component."""
    scores = {frozenset(e): 0.0 for e in g.edges()}
    for component in nx.connected_components(g):
        n = len(component)
        if n < 2:
            continue
        for s, t in itertools.combinations(sorted(component), 2):
            paths = list(nx.all_shortest_paths(g, s, t))
            for path in paths:
                for a, b in zip(path, path[1:]):
                    scores[frozenset((a, b))] += 1.0 / len(paths) / (n * (n - 1) / 2)
    return scores


def power_iteration_ppr(g: nx.Graph, seed, restart: float = 0.15, tol: float = 1e-14) -> np.ndarray:
    nodes = list(g.nodes)
    a = nx.to_numpy_array(g, nodelist=nodes)
    p = a / a.sum(axis=1, keepdims=True)
    e = np.zeros(len(nodes))
    e[nodes.index(seed)] = 1.0
    x = e.copy()
    while True:
        nxt = restart * e + (1.0 - restart) * p.T @ x
        if np.abs(nxt - x).sum() < tol:
            return nxt
        x = nxt


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# =============================================================================
# TestBuildWdnGraph
# =============================================================================


class TestBuildWdnGraph:
    """Tests for build_wdn_graph()."""

    def test_single_pipe_is_k2(self, single_pipe: Network) -> None:
        """One pipe gives two nodes joined by one edge."""
        g = build_wdn_graph(single_pipe)
        assert (g.number_of_nodes(), g.number_of_edges()) == (2, 1)

    def test_two_loop_counts(self, two_loop: Network) -> None:
        """Six nodes and seven pipes."""
        g = build_wdn_graph(two_loop)
        assert (g.number_of_nodes(), g.number_of_edges()) == (6, 7)

    def test_parallel_pipes_kept(self, single_pipe_inp: str) -> None:
        """Parallel pipes are separate edges keyed by pipe id."""
        net = parse_inp(single_pipe_inp.replace("P1 R1 J1 1000 200 0.5", "P1 R1 J1 1000 200 0.5\nP2 J1 R1 800 150 0.5"))
        g = build_wdn_graph(net)

        assert g.number_of_edges("R1", "J1") == 2
        assert set(g["R1"]["J1"]) == {"P1", "P2"}

    def test_closed_pipe_omitted(self, two_loop: Network) -> None:
        """Closed pipes are not edges."""
        net = two_loop.with_pipes({"P6": Pipe("P6", "J4", "J5", 300.0, 100.0, 2.0, status=PipeStatus.CLOSED)})
        g = build_wdn_graph(net)

        assert g.number_of_edges() == 6
        assert not g.has_edge("J4", "J5")


# =============================================================================
# TestFindBridges
# =============================================================================


class TestFindBridges:
    """Tests for find_bridges()."""

    def test_path(self) -> None:
        """Both edges of a path are bridges."""
        assert find_bridges(nx.path_graph(["a", "b", "c"])) == {frozenset("ab"), frozenset("bc")}

    def test_triangle(self) -> None:
        """A cycle has no bridges."""
        assert find_bridges(nx.cycle_graph(3)) == set()

    def test_parallel_edges_never_bridges(self) -> None:
        """A doubled edge survives the removal of either copy."""
        g = nx.MultiGraph([("a", "b"), ("a", "b"), ("b", "c")])
        assert find_bridges(g) == {frozenset("bc")}

    def test_two_loop_source_main(self, two_loop: Network) -> None:
        """Only the reservoir main is a bridge."""
        assert find_bridges(build_wdn_graph(two_loop)) == {frozenset(("R1", "J1"))}

    @pytest.mark.parametrize("seed", range(100))
    def test_brute_force_oracle(self, seed: int) -> None:
        """Equals remove-and-count on random graphs of up to 12 nodes."""
        rng = np.random.default_rng(seed)
        g = nx.gnp_random_graph(int(rng.integers(2, 13)), float(rng.uniform(0.1, 0.5)), seed=seed)
        assert find_bridges(g) == brute_force_bridges(g)


# =============================================================================
# TestEdgeBetweenness
# =============================================================================


class TestEdgeBetweenness:
    """Tests for edge_betweenness()."""

    def test_path(self) -> None:
        """Each edge of a 3-path carries two of three pairs."""
        scores = edge_betweenness(nx.path_graph(["a", "b", "c"]))
        assert all(value == pytest.approx(2.0 / 3.0) for value in scores.values())

    def test_triangle_symmetric(self) -> None:
        """Every triangle edge scores the same."""
        values = list(edge_betweenness(nx.cycle_graph(3)).values())
        assert values == pytest.approx([values[0]] * 3)

    def test_per_component_normalization(self) -> None:
        """A lone edge in its own component scores 1 regardless of the rest of the graph."""
        g = nx.path_graph(["a", "b", "c"])
        g.add_edge("x", "y")
        scores = {frozenset(k): v for k, v in edge_betweenness(g).items()}

        assert scores[frozenset("xy")] == pytest.approx(1.0)
        assert scores[frozenset("ab")] == pytest.approx(2.0 / 3.0)

    def test_multigraph_keys(self, two_loop: Network) -> None:
        """Multigraph results are keyed by (u, v, pipe id)."""
        keys = {k[2] for k in edge_betweenness(build_wdn_graph(two_loop))}
        assert keys == {p.id for p in two_loop.pipes}

    @pytest.mark.parametrize("seed", range(100))
    def test_brute_force_oracle(self, seed: int) -> None:
        """Equals all-pairs shortest-path enumeration on random graphs of up to 10 nodes."""
        rng = np.random.default_rng(seed)
        g = nx.gnp_random_graph(int(rng.integers(2, 11)), float(rng.uniform(0.2, 0.6)), seed=seed)
        expected = brute_force_betweenness(g)
        actual = {frozenset(k): v for k, v in edge_betweenness(g).items()}

        assert actual.keys() == expected.keys()
        for edge, value in expected.items():
            assert actual[edge] == pytest.approx(value, abs=1e-9)


# =============================================================================
# TestLocalDescriptors - Degree and Edge Strength
# =============================================================================


class TestLocalDescriptors:
    """Tests for degree_attributes() and edge_strength()."""

    def test_k2_degrees(self) -> None:
        """Single edge: sum 2, everything else trivial."""
        assert degree_attributes(nx.path_graph(2), 0, 1) == {
            "degree_sum": 2,
            "degree_difference": 0,
            "min_degree": 1,
            "max_degree": 1,
            "avg_neighbour_degree_difference": 0.0,
        }

    def test_star_degrees(self) -> None:
        """Centre-leaf edge of a 3-star."""
        attrs = degree_attributes(nx.star_graph(3), 0, 1)
        assert (attrs["degree_sum"], attrs["degree_difference"], attrs["min_degree"], attrs["max_degree"]) == (
            4,
            2,
            1,
            3,
        )

    def test_path_neighbour_degree(self) -> None:
        """End of a 3-path sees degree 2, the middle sees mean degree 1."""
        attrs = degree_attributes(nx.path_graph(["a", "b", "c"]), "a", "b")
        assert attrs["avg_neighbour_degree_difference"] == pytest.approx(1.0)

    def test_parallel_pipes_counted_per_pipe(self) -> None:
        """Two parallel a-b pipes and one b-c pipe: degrees 2 and 3, neighbour means 3 and 5/3."""
        g = nx.MultiGraph([("a", "b"), ("a", "b"), ("b", "c")])
        attrs = degree_attributes(g, "a", "b")

        assert (attrs["degree_sum"], attrs["min_degree"], attrs["max_degree"]) == (5, 2, 3)
        assert attrs["avg_neighbour_degree_difference"] == pytest.approx(4.0 / 3.0)

    def test_edge_strength(self) -> None:
        """K2 → 0, triangle → 1, square → 0."""
        assert edge_strength(nx.path_graph(2), 0, 1) == 0.0
        assert edge_strength(nx.cycle_graph(3), 0, 1) == 1.0
        assert edge_strength(nx.cycle_graph(4), 0, 1) == 0.0

    def test_missing_edge(self) -> None:
        """Descriptors require an existing edge."""
        with pytest.raises(MissingEdge):
            edge_strength(nx.path_graph(3), 0, 2)
        with pytest.raises(MissingEdge):
            degree_attributes(nx.path_graph(3), 0, 2)


# =============================================================================
# TestPprSimilarity
# =============================================================================


class TestPprSimilarity:
    """Tests for ppr_vector() and ppr_similarity()."""

    def test_vector_is_distribution(self, two_cliques: nx.Graph) -> None:
        """PPR vectors are non-negative and sum to 1."""
        x = ppr_vector(two_cliques, 0)
        assert np.all(x >= 0)
        assert x.sum() == pytest.approx(1.0, abs=1e-6)

    def test_k2_oracle(self) -> None:
        """Matches an independent power iteration on a single edge."""
        g = nx.path_graph(2)
        expected = cosine(power_iteration_ppr(g, 0), power_iteration_ppr(g, 1))
        assert ppr_similarity(g, 0, 1) == pytest.approx(expected, abs=1e-6)

    def test_c4_edges_equal(self) -> None:
        """Every edge of a square has the oracle's similarity."""
        g = nx.cycle_graph(4)
        expected = cosine(power_iteration_ppr(g, 0), power_iteration_ppr(g, 1))
        for u, v in g.edges():
            assert ppr_similarity(g, u, v) == pytest.approx(expected, abs=1e-6)

    def test_symmetric(self, two_cliques: nx.Graph) -> None:
        """similarity(u, v) = similarity(v, u)."""
        assert ppr_similarity(two_cliques, 4, 5) == pytest.approx(ppr_similarity(two_cliques, 5, 4), abs=1e-12)

    def test_cache_matches_direct(self, two_cliques: nx.Graph) -> None:
        """Cached vectors give the same similarity as direct computation."""
        cache = PprCache(two_cliques)
        cache.warm(two_cliques.nodes)
        assert cache.similarity(0, 1) == pytest.approx(ppr_similarity(two_cliques, 0, 1), abs=1e-12)

    def test_bridge_less_similar_than_clique_edge(self, two_cliques: nx.Graph) -> None:
        """Endpoints of the joining edge share less neighbourhood mass than clique neighbours."""
        assert ppr_similarity(two_cliques, 4, 5) < ppr_similarity(two_cliques, 0, 1)
