"""Tests for fit metrics, clustering validity and calibration descriptors.

This module tests:
- rmse() and ioa(): hand examples, symmetry, degenerate input
- station_fit(): per-station table
- silhouette(), davies_bouldin(), calinski_harabasz(), inertia_of(): brute-force recomputation
- acs(): variance-ratio counting
- boundary_index() and repeatability_index(): direct counts and permutation invariance
- rae_mape(): relative errors and the short-pipe filter
- DescriptorReport: JSON-safe serialization
"""

import itertools
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from roughcal.errors import ConstantObserved, LengthMismatch, TooFewClusters, ZeroNormalizer, ZeroReference
from roughcal.metrics import (
    DescriptorReport,
    acs,
    acs_from_variances,
    boundary_index,
    calinski_harabasz,
    cluster_validity,
    davies_bouldin,
    inertia_of,
    ioa,
    rae_mape,
    repeatability_index,
    rmse,
    silhouette,
    station_fit,
)
from roughcal.models import (
    AttributeMatrix,
    CalibrationRun,
    DecisionVariable,
    DecisionVariables,
    DesignMatrix,
    Grouping,
    Network,
    RunEnsemble,
)
from roughcal.types import AttributeKind, GroupingMethod


def design(points: list[list[float]]) -> DesignMatrix:
    ids = [f"P{i}" for i in range(len(points))]
    frame = pd.DataFrame(points, index=pd.Index(ids, name="pipe_id"), columns=["a", "b"])
    return DesignMatrix(frame, {"a": "a", "b": "b"})


def labelled(x: DesignMatrix, labels: list[int] | np.ndarray) -> Grouping:
    return Grouping(dict(zip(x.pipe_ids, (int(v) for v in labels))), GroupingMethod.KMEANS)


def ensemble(values: list[list[float]], lower: float = 1.0, upper: float = 2.0) -> RunEnsemble:
    n_dvs = len(values[0])
    dvs = DecisionVariables([DecisionVariable(k, (f"P{k}",), lower, upper) for k in range(n_dvs)])
    runs = [CalibrationRun(i, i, tuple(row), 1.0, 10, 0.0) for i, row in enumerate(values)]
    return RunEnsemble(runs, dvs)


# --- Naive recomputations ---


def naive_silhouette(values: np.ndarray, labels: np.ndarray) -> float:
    scores = []
    for i, (p, own) in enumerate(zip(values, labels)):
        same = [np.linalg.norm(p - q) for j, (q, lab) in enumerate(zip(values, labels)) if lab == own and j != i]
        if not same:
            scores.append(0.0)
            continue
        a = np.mean(same)
        b = min(
            np.mean([np.linalg.norm(p - q) for q, lab in zip(values, labels) if lab == other])
            for other in set(labels) - {own}
        )
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


def naive_centroids(values: np.ndarray, labels: np.ndarray) -> dict[int, np.ndarray]:
    return {lab: values[labels == lab].mean(axis=0) for lab in sorted(set(labels))}


def naive_davies_bouldin(values: np.ndarray, labels: np.ndarray) -> float:
    centroids = naive_centroids(values, labels)
    spread = {lab: np.mean([np.linalg.norm(p - centroids[lab]) for p in values[labels == lab]]) for lab in centroids}
    worst = [
        max((spread[i] + spread[j]) / np.linalg.norm(centroids[i] - centroids[j]) for j in centroids if j != i)
        for i in centroids
    ]
    return float(np.mean(worst))


def naive_inertia(values: np.ndarray, labels: np.ndarray) -> float:
    centroids = naive_centroids(values, labels)
    return float(sum(np.sum((p - centroids[lab]) ** 2) for p, lab in zip(values, labels)))


def naive_calinski_harabasz(values: np.ndarray, labels: np.ndarray) -> float:
    centroids = naive_centroids(values, labels)
    overall = values.mean(axis=0)
    between = sum(np.sum(labels == lab) * np.sum((c - overall) ** 2) for lab, c in centroids.items())
    k, n = len(centroids), len(values)
    return float((between / (k - 1)) / (naive_inertia(values, labels) / (n - k)))


# =============================================================================
# TestFitMetrics
# =============================================================================


class TestFitMetrics:
    """Tests for rmse(), ioa() and station_fit()."""

    def test_rmse_examples(self) -> None:
        assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
        assert rmse([1, 2, 3], [2, 3, 4]) == pytest.approx(1.0)
        assert rmse([5], [3]) == pytest.approx(2.0)

    def test_rmse_symmetric(self) -> None:
        assert rmse([1, 4, 2], [3, 0, 2]) == rmse([3, 0, 2], [1, 4, 2])

    def test_rmse_length_mismatch(self) -> None:
        with pytest.raises(LengthMismatch):
            rmse([1, 2], [1])
        with pytest.raises(LengthMismatch):
            rmse([], [])

    def test_ioa_examples(self) -> None:
        """Perfect fit 1, mean prediction 0, and a hand-computed partial fit."""
        assert ioa([1, 3], [1, 3]) == 1.0
        assert ioa([1, 3], [2, 2]) == pytest.approx(0.0)
        assert ioa([1, 3], [1, 2]) == pytest.approx(0.8)

    def test_ioa_not_symmetric(self) -> None:
        """Swapping observed and simulated changes the mean reference."""
        assert ioa([0, 2, 4], [1, 1, 2]) != pytest.approx(ioa([1, 1, 2], [0, 2, 4]))

    def test_ioa_constant_observed(self) -> None:
        with pytest.raises(ConstantObserved):
            ioa([2, 2, 2], [1, 2, 3])

    def test_ioa_needs_two_samples(self) -> None:
        with pytest.raises(LengthMismatch):
            ioa([1], [1])

    def test_station_fit(self) -> None:
        """One row per station; IOA undefined for constant observations."""
        table = station_fit({"J1": (np.array([1.0, 3.0]), np.array([1.0, 2.0])), "J2": (np.array([2.0, 2.0]), np.array([2.0, 3.0]))})

        assert table["station"].tolist() == ["J1", "J2"]
        assert table["ioa"].iloc[0] == pytest.approx(0.8)
        assert math.isnan(table["ioa"].iloc[1])
        assert table["rmse"].iloc[1] == pytest.approx(math.sqrt(0.5))


# =============================================================================
# TestClusterValidity
# =============================================================================


class TestClusterValidity:
    """Tests for SC, DBI, CHI and inertia."""

    def test_two_pairs_closed_form(self) -> None:
        """Pairs 100 apart with spread 1: DBI 0.01, CHI 20000, inertia 1."""
        x = design([[0, 0], [0, 1], [100, 0], [100, 1]])
        g = labelled(x, [0, 0, 1, 1])

        assert silhouette(x, g) > 0.9
        assert davies_bouldin(x, g) == pytest.approx(0.01)
        assert calinski_harabasz(x, g) == pytest.approx(20000.0)
        assert inertia_of(x, g) == pytest.approx(1.0)

    def test_duplicates(self) -> None:
        """Coincident members give zero inertia and zero DBI."""
        x = design([[0, 0], [0, 0], [5, 5], [5, 5]])
        g = labelled(x, [0, 0, 1, 1])

        assert inertia_of(x, g) == 0.0
        assert davies_bouldin(x, g) == 0.0

    def test_singletons(self) -> None:
        """One point per cluster scores 0 on SC."""
        x = design([[0, 0], [1, 1], [2, 2]])
        assert silhouette(x, labelled(x, [0, 1, 2])) == 0.0

    def test_brute_force(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """Library scores match naive double loops on 45 points."""
        full, truth = blobs
        x = DesignMatrix(full.frame.iloc[::2], full.provenance)
        labels = truth[::2]
        g = labelled(x, labels)
        values = x.values

        assert silhouette(x, g) == pytest.approx(naive_silhouette(values, labels), abs=1e-9)
        assert davies_bouldin(x, g) == pytest.approx(naive_davies_bouldin(values, labels), abs=1e-9)
        assert calinski_harabasz(x, g) == pytest.approx(naive_calinski_harabasz(values, labels), rel=1e-9)
        assert inertia_of(x, g) == pytest.approx(naive_inertia(values, labels), rel=1e-9)

    def test_noise_excluded(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        """Noise points do not enter any score."""
        x, truth = blobs
        labels = truth.copy()
        labels[:5] = -1
        kept = DesignMatrix(x.frame.iloc[5:], x.provenance)

        assert silhouette(x, labelled(x, labels)) == pytest.approx(silhouette(kept, labelled(kept, truth[5:])))

    def test_random_labels_near_zero(self) -> None:
        """Random labels on a single blob give SC close to zero."""
        rng = np.random.default_rng(0)
        x = design(rng.normal(0.0, 1.0, (40, 2)).tolist())
        for seed in range(20):
            labels = np.random.default_rng(seed).integers(0, 3, 40)
            assert abs(silhouette(x, labelled(x, labels))) < 0.2

    def test_merging_clusters_lowers_chi(self, blobs: tuple[DesignMatrix, np.ndarray]) -> None:
        x, truth = blobs
        merged = np.where(truth == 2, 1, truth)
        assert calinski_harabasz(x, labelled(x, merged)) < calinski_harabasz(x, labelled(x, truth))

    def test_too_few_clusters(self) -> None:
        x = design([[0, 0], [1, 1], [2, 2]])
        with pytest.raises(TooFewClusters):
            silhouette(x, labelled(x, [0, 0, -1]))

    def test_cluster_validity_reports_undefined(self) -> None:
        """Undefined scores are None rather than errors."""
        x = design([[0, 0], [1, 1], [2, 2]])
        scores = cluster_validity(x, labelled(x, [0, 1, 2]), with_inertia=True)

        assert scores["sc"] == 0.0
        assert scores["chi"] is None
        assert scores["inertia"] == 0.0


# =============================================================================
# TestAcs
# =============================================================================


class TestAcs:
    """Tests for acs() and acs_from_variances()."""

    @pytest.fixture
    def matrix(self) -> AttributeMatrix:
        frame = pd.DataFrame(
            {"steady": [0.0, 0.0, 1.0, 1.0], "mixed": [0.0, 1.0, 0.0, 1.0], "kind": ["x", "x", "y", "y"]},
            index=pd.Index(["P0", "P1", "P2", "P3"], name="pipe_id"),
        )
        kinds = {"steady": AttributeKind.NUMERIC, "mixed": AttributeKind.NUMERIC, "kind": AttributeKind.CATEGORICAL}
        return AttributeMatrix(frame, kinds)

    def test_constant_and_dominant(self, matrix: AttributeMatrix) -> None:
        """Within-cluster constants score 1; the attribute setting the normalizer scores 0."""
        g = Grouping({"P0": 0, "P1": 0, "P2": 1, "P3": 1}, GroupingMethod.KMEANS)
        assert acs(matrix, g) == {"steady": 1.0, "mixed": 0.0, "kind": 1.0}

    def test_direct_count(self) -> None:
        """Ratios {0.05, 0.9} against a maximum of 1 give 0.5."""
        variances = pd.DataFrame({"a": [0.05, 0.9], "b": [1.0, 0.2]})
        assert acs_from_variances(variances) == {"a": 0.5, "b": 0.0}

    def test_all_constant(self, matrix: AttributeMatrix) -> None:
        """Every variance zero leaves no normalizer."""
        g = Grouping({"P0": 0, "P1": 1, "P2": 2, "P3": 3}, GroupingMethod.KMEANS)
        with pytest.raises(ZeroNormalizer):
            acs(matrix, g)

    def test_noise_not_a_cluster(self, matrix: AttributeMatrix) -> None:
        g = Grouping({"P0": 0, "P1": 0, "P2": -1, "P3": -1}, GroupingMethod.HDBSCAN)
        assert acs(matrix, g) == {"steady": 1.0, "mixed": 0.0, "kind": 1.0}


# =============================================================================
# TestEnsembleDescriptors - Boundary and Repeatability
# =============================================================================


class TestEnsembleDescriptors:
    """Tests for boundary_index() and repeatability_index()."""

    def test_bi_examples(self) -> None:
        assert boundary_index(ensemble([[1.0, 2.0], [2.0, 1.0]])) == 1.0
        assert boundary_index(ensemble([[1.5, 1.2]])) == 0.0
        assert boundary_index(ensemble([[1.0, 1.5]])) == 0.5

    def test_ri_examples(self) -> None:
        """Identical runs 1, scattered runs 0, and a hand-counted mode."""
        assert repeatability_index(ensemble([[3.0]] * 5)) == 1.0
        assert repeatability_index(ensemble([[1.0], [2.0], [4.0], [8.0], [16.0]])) == 0.0
        assert repeatability_index(ensemble([[10.0], [10.5], [10.9], [20.0], [30.0]])) == pytest.approx(0.5)

    def test_permutation_invariance(self) -> None:
        """Reordering runs or DVs does not change BI or RI."""
        values = [[1.0, 10.0], [1.05, 10.5], [2.0, 30.0], [1.5, 10.2]]
        base_bi = boundary_index(ensemble(values))
        base_ri = repeatability_index(ensemble(values))
        for order in itertools.permutations(range(len(values))):
            shuffled = [values[i] for i in order]
            assert boundary_index(ensemble(shuffled)) == base_bi
            assert repeatability_index(ensemble(shuffled)) == pytest.approx(base_ri)
        swapped = [row[::-1] for row in values]
        assert repeatability_index(ensemble(swapped)) == pytest.approx(base_ri)

    def test_ri_needs_two_runs(self) -> None:
        with pytest.raises(ValueError):
            repeatability_index(ensemble([[1.0]]))


# =============================================================================
# TestRaeMape
# =============================================================================


class TestRaeMape:
    """Tests for rae_mape()."""

    def test_identical(self, two_loop: Network) -> None:
        reference = {p.id: p.roughness for p in two_loop.pipes}
        rae, mape = rae_mape(reference, reference, two_loop)

        assert (rae == 0.0).all()
        assert mape == 0.0

    def test_single_pipe(self, two_loop: Network) -> None:
        rae, mape = rae_mape({"P1": 1.5}, {"P1": 1.0}, two_loop)
        assert rae["P1"] == pytest.approx(0.5)
        assert mape == pytest.approx(0.5)

    def test_short_pipe_excluded(self, two_loop: Network) -> None:
        """Pipes shorter than 50 m do not count."""
        net = two_loop.with_pipes({"P1": replace(two_loop.pipe("P1"), length=30.0)})
        rae, mape = rae_mape({"P1": 1.5, "P2": 0.75}, {"P1": 1.0, "P2": 0.5}, net)

        assert list(rae.index) == ["P2"]
        assert mape == pytest.approx(0.5)

    def test_nothing_qualifies(self, two_loop: Network) -> None:
        rae, mape = rae_mape({"P9": 1.0}, {"P9": 1.0}, two_loop)
        assert rae.empty
        assert math.isnan(mape)

    def test_zero_reference(self, two_loop: Network) -> None:
        with pytest.raises(ZeroReference):
            rae_mape({"P1": 1.0}, {"P1": 0.0}, two_loop)


# =============================================================================
# TestDescriptorReport
# =============================================================================


class TestDescriptorReport:
    """Tests for DescriptorReport serialization."""

    def test_non_finite_become_null(self, tmp_path: Path) -> None:
        report = DescriptorReport(acs={"diameter": 0.5}, bi=np.float64(0.25), ri=None, mape=float("nan"))
        path = tmp_path / "descriptors.json"
        report.write_json(path)
        data = json.loads(path.read_text())

        assert data["bi"] == 0.25
        assert data["mape"] is None
        assert data["acs"] == {"diameter": 0.5}
