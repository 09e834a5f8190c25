"""Tests for pipe grouping.

This module tests:
- kmeans(): hand examples, determinism, label ordering, degenerate input
- elbow_sweep() and shortlist_candidates(): sweep shape and candidate ranking
- hdbscan(): blob recovery, permutation invariance, duplicated rows, all-noise results
- build_line_graph(): orientation by mean flow
- louvain_linegraph() and vn_coarsen_linegraph(): community and coarsening properties
- grouping persistence and size summaries
"""

from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
import pytest

from roughcal.errors import DegenerateData, EmptyGraph, GroupingError
from roughcal.grouping import (
    build_line_graph,
    elbow_sweep,
    group_size_summary,
    hdbscan,
    kmeans,
    louvain_linegraph,
    read_grouping_csv,
    shortlist_candidates,
    vn_coarsen_linegraph,
    write_grouping_csv,
)
from roughcal.hydraulics import simulate_eps
from roughcal.models import DesignMatrix, ElbowReport, ElbowRow, Grouping, Junction, LineGraph, Network, Pipe, Reservoir
from roughcal.types import GroupingMethod


def design(points: list[list[float]]) -> DesignMatrix:
    ids = [f"P{i}" for i in range(len(points))]
    frame = pd.DataFrame(points, index=pd.Index(ids, name="pipe_id"), columns=[f"c{j}" for j in range(len(points[0]))])
    return DesignMatrix(frame, {c: c for c in frame.columns})


def line_graph(g: nx.Graph) -> LineGraph:
    return LineGraph(nx.relabel_nodes(g, lambda n: f"P{n}").to_directed())


def partition(grouping: Grouping) -> set[frozenset]:
    return {frozenset(members) for members in grouping.groups().values()}


def purity(grouping: Grouping, truth: np.ndarray) -> float:
    labels = grouping.label_array()
    correct = 0
    for label in set(labels) - {-1}:
        correct += np.bincount(truth[labels == label]).max()
    return correct / len(truth)


# =============================================================================
# TestKMeans
# =============================================================================


class TestKMeans:
    """Tests for kmeans()."""

    def test_two_pairs(self) -> None:
        """Two far-apart pairs split cleanly with inertia 1."""
        x = design([[0, 0], [0, 1], [100, 0], [100, 1]])
        grouping, inertia = kmeans(x, 2, seed=0)

        assert inertia == pytest.approx(1.0)
        assert partition(grouping) == {frozenset({"P0", "P1"}), frozenset({"P2", "P3"})}

    def test_k_equals_rows(self) -> None:
        """One point per cluster leaves zero inertia."""
        _, inertia = kmeans(design([[0, 0], [1, 5], [3, 2], [7, 7]]), 4)
        assert inertia == pytest.approx(0.0)

    def test_labels_ordered_by_size(self) -> None:
        """Label 0 is the largest cluster."""
        x = design([[0, 0], [0, 1], [1, 0], [100, 0]])
        grouping, _ = kmeans(x, 2)

        assert grouping.labels == {"P0": 0, "P1": 0, "P2": 0, "P3": 1}

    def test_deterministic(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """A fixed seed gives identical labels."""
        x, _ = blobs
        assert kmeans(x, 5, seed=3)[0].labels == kmeans(x, 5, seed=3)[0].labels

    def test_beats_random_assignment(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """Inertia is no worse than any random-assignment baseline."""
        x, _ = blobs
        _, inertia = kmeans(x, 5, seed=0)
        rng = np.random.default_rng(0)
        values = x.values
        for _ in range(1000):
            labels = rng.integers(0, 5, len(values))
            baseline = sum(
                ((values[labels == c] - values[labels == c].mean(axis=0)) ** 2).sum()
                for c in range(5)
                if np.any(labels == c)
            )
            assert inertia <= baseline

    def test_too_few_distinct_rows(self) -> None:
        """Fewer distinct rows than k is degenerate."""
        with pytest.raises(DegenerateData):
            kmeans(design([[0, 0], [0, 0], [1, 1], [1, 1]]), 3)

    def test_k_out_of_range(self) -> None:
        with pytest.raises(DegenerateData):
            kmeans(design([[0, 0], [1, 1]]), 3)


# =============================================================================
# TestElbow - Sweep and Shortlist
# =============================================================================


def row(k: int, sc: float, dbi: float) -> ElbowRow:
    return ElbowRow(k=k, inertia=100.0 / k, sc=sc, dbi=dbi)


class TestElbow:
    """Tests for elbow_sweep() and shortlist_candidates()."""

    def test_inertia_decreasing(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """Inertia falls as k grows across the sweep."""
        x, _ = blobs
        report = elbow_sweep(x, k_min=2, k_max=8, step=1)
        inertias = [r.inertia for r in report.rows]

        assert report.ks == list(range(2, 9))
        assert all(a > b for a, b in zip(inertias, inertias[1:]))

    def test_single_k(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """k_min = k_max yields one row with scores."""
        x, _ = blobs
        report = elbow_sweep(x, k_min=3, k_max=3)

        assert report.ks == [3]
        assert report.rows[0].sc is not None and report.rows[0].sc > 0.8

    def test_gap_recorded(self) -> None:
        """Infeasible k is a gap, not a failure."""
        report = elbow_sweep(design([[0, 0], [0, 1], [5, 5], [5, 6]]), k_min=2, k_max=5, step=1)

        assert report.ks == [2, 3, 4, 5]
        assert report.rows[-1].error is not None
        assert report.rows[0].error is None

    def test_invalid_grid(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        with pytest.raises(ValueError):
            elbow_sweep(blobs[0], k_min=9, k_max=3)

    def test_shortlist(self) -> None:
        """Best by SC then DBI, baseline when swept, smallest k near the best."""
        report = ElbowReport(
            (row(11, 0.50, 1.00), row(13, 0.60, 0.84), row(15, 0.60, 0.80), row(27, 0.58, 0.92),
             ElbowRow(k=29, inertia=None, sc=None, dbi=None, error="gap"))
        )
        assert shortlist_candidates(report, baseline_k=27) == {
            "best": 15,
            "second_best": 13,
            "baseline": 27,
            "smallest_comparable": 13,
        }

    def test_shortlist_without_baseline(self) -> None:
        """An unswept baseline is omitted."""
        shortlist = shortlist_candidates(ElbowReport((row(11, 0.5, 1.0),)), baseline_k=27)
        assert shortlist == {"best": 11, "smallest_comparable": 11}

    def test_shortlist_needs_scores(self) -> None:
        with pytest.raises(GroupingError):
            shortlist_candidates(ElbowReport((ElbowRow(k=3, inertia=None, sc=None, dbi=None, error="gap"),)))


# =============================================================================
# TestHdbscan
# =============================================================================


class TestHdbscan:
    """Tests for hdbscan()."""

    def test_recovers_blobs(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """Three separated blobs come back as three clusters with high purity."""
        x, truth = blobs
        grouping = hdbscan(x)

        assert grouping.n_groups == 3
        assert purity(grouping, truth) >= 0.95

    def test_permutation_invariant(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """Shuffling rows changes only label names."""
        x, _ = blobs
        order = np.random.default_rng(1).permutation(len(x))
        shuffled = DesignMatrix(x.frame.iloc[order], x.provenance)

        assert partition(hdbscan(shuffled)) == partition(hdbscan(x))
        assert set(hdbscan(shuffled).noise) == set(hdbscan(x).noise)

    def test_duplicated_single_blob(self) -> None:
        """One equidistant blob stacked three times is a single cluster without noise."""
        blob = (0.1 * np.eye(8)).tolist()
        grouping = hdbscan(design(blob * 3))

        assert grouping.n_groups == 1
        assert grouping.noise == []

    def test_duplicates_share_label(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        x, _ = blobs
        doubled = design(x.values.tolist() * 2)
        labels = hdbscan(doubled).label_array()

        np.testing.assert_array_equal(labels[: len(x)], labels[len(x) :])

    @pytest.mark.parametrize("seed", [0, 4])
    def test_uniform_noise(self, seed: int) -> None:
        """Uniform points in a box are (nearly) all noise and still form a Grouping."""
        points = np.random.default_rng(seed).uniform(size=(30, 2))
        grouping = hdbscan(design(points.tolist()))

        assert len(grouping.noise) >= 0.8 * len(grouping)
        grouping.validate(grouping.pipe_ids)

    def test_identical_rows(self) -> None:
        with pytest.raises(DegenerateData):
            hdbscan(design([[1, 1]] * 10))

    def test_too_few_distinct_rows(self) -> None:
        with pytest.raises(DegenerateData, match="distinct rows"):
            hdbscan(design([[0, 0], [1, 1], [2, 2]] * 4))

    def test_too_few_rows(self) -> None:
        with pytest.raises(DegenerateData):
            hdbscan(design([[0, 0], [1, 1], [2, 2]]))


# =============================================================================
# TestLineGraph
# =============================================================================


class TestLineGraph:
    """Tests for build_line_graph()."""

    def test_single_pipe(self, single_pipe: Network) -> None:
        """One pipe, no adjacency."""
        lg = build_line_graph(single_pipe, simulate_eps(single_pipe))
        assert (lg.graph.number_of_nodes(), lg.graph.number_of_edges()) == (1, 0)

    def test_forward_path(self) -> None:
        """Flow R1 → J1 → J2 gives the single edge P1 → P2."""
        net = Network(
            (Junction("J1", 0.0, 0.0), Junction("J2", 0.0, 10.0)),
            (Reservoir("R1", 50.0),),
            (Pipe("P1", "R1", "J1", 500.0, 200.0, 0.5), Pipe("P2", "J1", "J2", 500.0, 200.0, 0.5)),
        )
        lg = build_line_graph(net, simulate_eps(net))
        assert set(lg.graph.edges) == {("P1", "P2")}

    def test_reversed_pipe(self) -> None:
        """A pipe drawn against the flow is oriented by its negative mean flow."""
        net = Network(
            (Junction("J1", 0.0, 0.0), Junction("J2", 0.0, 10.0)),
            (Reservoir("R1", 50.0),),
            (Pipe("P1", "R1", "J1", 500.0, 200.0, 0.5), Pipe("P2", "J2", "J1", 500.0, 200.0, 0.5)),
        )
        lg = build_line_graph(net, simulate_eps(net))
        assert set(lg.graph.edges) == {("P1", "P2")}

    def test_zero_flow_is_bidirectional(self) -> None:
        """A dead-end pipe with no flow points both ways."""
        net = Network(
            (Junction("J1", 0.0, 10.0), Junction("J2", 0.0, 0.0)),
            (Reservoir("R1", 50.0),),
            (Pipe("P1", "R1", "J1", 500.0, 200.0, 0.5), Pipe("P2", "J1", "J2", 500.0, 200.0, 0.5)),
        )
        lg = build_line_graph(net, simulate_eps(net))
        assert set(lg.graph.edges) == {("P1", "P2"), ("P2", "P1")}

    def test_two_loop_nodes(self, two_loop: Network) -> None:
        """Every calibratable pipe is a node."""
        lg = build_line_graph(two_loop, simulate_eps(two_loop))
        assert lg.pipe_ids == [p.id for p in two_loop.calibratable_pipes]


# =============================================================================
# TestLouvain
# =============================================================================


class TestLouvain:
    """Tests for louvain_linegraph()."""

    def test_two_cliques(self, two_cliques: nx.Graph) -> None:
        """Two 5-cliques joined by one edge split into their cliques."""
        grouping = louvain_linegraph(line_graph(two_cliques), resolution=1.0, seed=0)
        assert partition(grouping) == {
            frozenset(f"P{i}" for i in range(5)),
            frozenset(f"P{i}" for i in range(5, 10)),
        }

    def test_level_modularity_non_decreasing(self, two_cliques: nx.Graph) -> None:
        """Each aggregation level keeps or improves modularity, starting above the trivial partition."""
        grouping = louvain_linegraph(line_graph(two_cliques), resolution=1.0, seed=0)
        trace = grouping.params["level_modularity"]

        assert trace[-1] > 0.0
        assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))

    def test_single_node_is_noise(self) -> None:
        g = nx.DiGraph()
        g.add_node("P0")
        assert louvain_linegraph(LineGraph(g)).labels == {"P0": -1}

    def test_empty(self) -> None:
        with pytest.raises(EmptyGraph):
            louvain_linegraph(LineGraph(nx.DiGraph()))

    def test_resolution_positive(self, two_cliques: nx.Graph) -> None:
        with pytest.raises(ValueError):
            louvain_linegraph(line_graph(two_cliques), resolution=0.0)


# =============================================================================
# TestCoarsening
# =============================================================================


class TestCoarsening:
    """Tests for vn_coarsen_linegraph()."""

    def test_two_triangles(self) -> None:
        """Disjoint triangles become one group each."""
        g = nx.disjoint_union(nx.cycle_graph(3), nx.cycle_graph(3))
        grouping = vn_coarsen_linegraph(line_graph(g), reduction_ratio=0.66)

        assert partition(grouping) == {frozenset({"P0", "P1", "P2"}), frozenset({"P3", "P4", "P5"})}

    def test_minimal_reduction_still_merges_singletons(self) -> None:
        """With almost no reduction every pipe still ends up in a group of two or more."""
        grouping = vn_coarsen_linegraph(line_graph(nx.path_graph(6)), reduction_ratio=0.01)

        assert not grouping.noise
        assert min(len(m) for m in grouping.groups().values()) >= 2

    @pytest.mark.parametrize("seed", range(50))
    def test_random_connected_graphs(self, seed: int) -> None:
        """No singleton groups, and every group is connected in the line graph."""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        g = nx.connected_watts_strogatz_graph(n, 2 + 2 * int(rng.integers(0, 2)) if n > 4 else 2, 0.3, seed=seed)
        lg = line_graph(g)
        grouping = vn_coarsen_linegraph(lg, reduction_ratio=float(rng.uniform(0.5, 0.95)))
        undirected = lg.to_undirected()

        assert not grouping.noise
        for members in grouping.groups().values():
            assert len(members) >= 2
            assert nx.is_connected(undirected.subgraph(members))

    def test_isolated_pipe_is_noise(self) -> None:
        """A pipe with no neighbours cannot join a group."""
        g = nx.path_graph(3)
        g.add_node(3)
        grouping = vn_coarsen_linegraph(line_graph(g), reduction_ratio=0.5)
        assert grouping.noise == ["P3"]

    def test_ratio_bounds(self, two_cliques: nx.Graph) -> None:
        with pytest.raises(ValueError):
            vn_coarsen_linegraph(line_graph(two_cliques), reduction_ratio=1.0)


# =============================================================================
# TestGroupingRecords - Persistence and Summary
# =============================================================================


class TestGroupingRecords:
    """Tests for grouping CSV files and group_size_summary()."""

    def test_csv_round_trip(self, tmp_path: Path) -> None:
        grouping = Grouping({"P1": 0, "P2": 0, "P3": 1, "P4": -1}, GroupingMethod.HDBSCAN)
        path = tmp_path / "grouping.csv"
        write_grouping_csv(grouping, path)

        assert read_grouping_csv(path, GroupingMethod.HDBSCAN).labels == grouping.labels

    def test_summary(self) -> None:
        """Counts, quartiles and dominant groups."""
        grouping = Grouping({"a": 0, "b": 0, "c": 0, "d": 1, "e": -1}, GroupingMethod.KMEANS)
        summary = group_size_summary(grouping)

        assert summary["n_groups"] == 2
        assert summary["n_pipes"] == 5
        assert summary["noise"] == 1
        assert (summary["min"], summary["max"]) == (1, 3)
        assert summary["median"] == 2.0
        assert summary["dominant"] == [0]
