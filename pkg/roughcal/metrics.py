"""
Fit metrics, clustering validity scores and calibration-quality descriptors.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score, silhouette_score

from .attributes import encode_features
from .constants import NOISE
from .errors import (
    ConstantObserved,
    LengthMismatch,
    TooFewClusters,
    ZeroNormalizer,
    ZeroReference,
)
from .models import AttributeMatrix, DesignMatrix, Grouping, Network, RunEnsemble
from .utils import json_safe

LOGGER = logging.getLogger(__name__)

ACS_THRESHOLD = 0.1
BI_TOLERANCE = 1e-6
RI_TOLERANCE = 0.10
RAE_MIN_LENGTH = 50.0  # m


# --- Fit ---


def _paired(observed: Sequence[float], simulated: Sequence[float], minimum: int) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray(observed, dtype=float)
    sim = np.asarray(simulated, dtype=float)
    if obs.shape != sim.shape:
        raise LengthMismatch(f"Observed has {obs.size} values, simulated has {sim.size}")
    if obs.size < minimum:
        raise LengthMismatch(f"At least {minimum} paired values required, got {obs.size}")
    return obs, sim


def rmse(observed: Sequence[float], simulated: Sequence[float]) -> float:
    obs, sim = _paired(observed, simulated, 1)
    return float(np.sqrt(np.mean((sim - obs) ** 2)))


def ioa(observed: Sequence[float], simulated: Sequence[float]) -> float:
    """Willmott's index of agreement, d = 1 − Σ(P−O)² / Σ(|P−Ō| + |O−Ō|)²."""
    obs, sim = _paired(observed, simulated, 2)
    mean = obs.mean()
    if np.allclose(obs, mean, rtol=0.0, atol=1e-12):
        raise ConstantObserved("Index of agreement is undefined for a constant observed series")
    potential = np.sum((np.abs(sim - mean) + np.abs(obs - mean)) ** 2)
    return float(1.0 - np.sum((sim - obs) ** 2) / potential)


def station_fit(aligned: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> pd.DataFrame:
    """Per-station RMSE and IOA from (observed, simulated) pairs; IOA is NaN for constant observations."""
    rows = []
    for station, (obs, sim) in aligned.items():
        try:
            agreement = ioa(obs, sim)
        except (ConstantObserved, LengthMismatch):
            agreement = float("nan")
        rows.append({"station": station, "rmse": rmse(obs, sim), "ioa": agreement})
    return pd.DataFrame(rows, columns=["station", "rmse", "ioa"])


# --- Clustering validity ---


def _clustered(x: DesignMatrix, g: Grouping) -> tuple[np.ndarray, np.ndarray]:
    """Design rows and labels with noise removed; requires ≥ 2 groups."""
    labels = g.label_array(x.pipe_ids)
    keep = labels != NOISE
    values, labels = x.values[keep], labels[keep]
    if len(np.unique(labels)) < 2:
        raise TooFewClusters(f"At least 2 non-noise groups required, got {len(np.unique(labels))}")
    return values, labels


def _all_singletons(labels: np.ndarray) -> bool:
    return len(np.unique(labels)) == len(labels)


def silhouette(x: DesignMatrix, g: Grouping) -> float:
    values, labels = _clustered(x, g)
    if _all_singletons(labels):
        return 0.0
    return float(silhouette_score(values, labels))


def davies_bouldin(x: DesignMatrix, g: Grouping) -> float:
    values, labels = _clustered(x, g)
    if _all_singletons(labels):
        return 0.0
    return float(davies_bouldin_score(values, labels))


def calinski_harabasz(x: DesignMatrix, g: Grouping) -> float:
    values, labels = _clustered(x, g)
    if _all_singletons(labels):
        raise TooFewClusters("Calinski-Harabasz needs fewer groups than points")
    return float(calinski_harabasz_score(values, labels))


def inertia_of(x: DesignMatrix, g: Grouping) -> float:
    values, labels = _clustered(x, g)
    total = 0.0
    for label in np.unique(labels):
        members = values[labels == label]
        total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def cluster_validity(x: DesignMatrix, g: Grouping, with_inertia: bool = False) -> dict[str, Optional[float]]:
    """SC, DBI, CHI (and inertia) with None for scores undefined on this grouping."""
    scores: dict[str, Optional[float]] = {}
    scorers = {"sc": silhouette, "dbi": davies_bouldin, "chi": calinski_harabasz}
    if with_inertia:
        scorers["inertia"] = inertia_of
    for name, scorer in scorers.items():
        try:
            scores[name] = scorer(x, g)
        except TooFewClusters as e:
            LOGGER.warning(f"{name.upper()} undefined: {e}")
            scores[name] = None
    return scores


# --- Descriptors ---


def attribute_variances(m: AttributeMatrix, g: Grouping) -> pd.DataFrame:
    """
    Per-cluster population variance of each attribute (rows: clusters, columns: attributes).

    Computed on the encoded matrix; a categorical attribute's variance is the mean
    over its one-hot columns.
    """
    design = encode_features(m)
    labels = pd.Series(g.label_array(design.pipe_ids), index=design.frame.index)
    clustered = design.frame[labels != NOISE]
    column_variances = clustered.groupby(labels[labels != NOISE]).var(ddof=0)
    sources = pd.Series(design.provenance)
    per_attribute = column_variances.T.groupby(sources.reindex(column_variances.columns).to_numpy()).mean().T
    return per_attribute[[c for c in m.columns if c in per_attribute.columns]]


def acs_from_variances(variances: pd.DataFrame, threshold: float = ACS_THRESHOLD) -> dict[str, float]:
    """Share of clusters whose variance ratio against the global maximum is within the threshold."""
    if variances.empty:
        raise ZeroNormalizer("No clusters to score")
    normalizer = float(variances.to_numpy().max())
    if normalizer <= 0:
        raise ZeroNormalizer("Every attribute is constant within every cluster")
    ratios = variances / normalizer
    return {str(attr): float((ratios[attr] <= threshold).mean()) for attr in variances.columns}


def acs(m: AttributeMatrix, g: Grouping, threshold: float = ACS_THRESHOLD) -> dict[str, float]:
    return acs_from_variances(attribute_variances(m, g), threshold)


def boundary_index(e: RunEnsemble, tol_rel: float = BI_TOLERANCE) -> float:
    roughness = e.roughness_matrix()
    if roughness.size == 0:
        raise ValueError("Boundary index needs at least one run and one decision variable")
    lower, upper = e.dvs.lower, e.dvs.upper
    tolerance = tol_rel * (upper - lower)
    at_bound = (np.abs(roughness - lower) <= tolerance) | (np.abs(roughness - upper) <= tolerance)
    return float(at_bound.mean())


def _modal_count(values: np.ndarray, tol: float) -> tuple[float, int]:
    best_value, best_count = float("nan"), -1
    for v in np.sort(values):
        count = int(np.sum(np.abs(values - v) <= tol * abs(v)))
        if count > best_count:
            best_value, best_count = float(v), count
    return best_value, best_count


def repeatability_index(e: RunEnsemble, tol: float = RI_TOLERANCE) -> float:
    roughness = e.roughness_matrix()
    n_runs, n_dvs = roughness.shape
    if n_runs < 2:
        raise ValueError(f"Repeatability index needs at least 2 runs, got {n_runs}")
    if n_dvs == 0:
        raise ValueError("Repeatability index needs at least one decision variable")
    scores = [(_modal_count(roughness[:, k], tol)[1] - 1) / (n_runs - 1) for k in range(n_dvs)]
    return float(np.mean(scores))


def rae_mape(
    calibrated: Mapping[str, float],
    reference: Mapping[str, float],
    net: Network,
    min_length: float = RAE_MIN_LENGTH,
) -> tuple[pd.Series, float]:
    """
    Relative absolute error per pipe and their mean.

    Only pipes with a calibrated value, a reference value and length ≥ min_length count.
    """
    errors: dict[str, float] = {}
    for pipe_id, value in calibrated.items():
        pipe = net.pipe(pipe_id)
        if pipe is None or pipe.length < min_length or pipe_id not in reference:
            continue
        ref = reference[pipe_id]
        if ref <= 0:
            raise ZeroReference(f"Reference roughness for pipe '{pipe_id}' must be positive, got {ref}")
        errors[pipe_id] = abs(value - ref) / ref
    rae = pd.Series(errors, name="rae", dtype=float)
    rae.index.name = "pipe_id"
    if rae.empty:
        LOGGER.warning("No pipes qualified for RAE; MAPE is undefined")
        return rae, float("nan")
    return rae, float(rae.mean())


def write_rae_csv(rae: pd.Series, path: str | Path) -> None:
    rae.to_csv(path, index_label="pipe_id")


@dataclass
class DescriptorReport:
    acs: dict[str, float] = field(default_factory=dict)
    bi: Optional[float] = None
    ri: Optional[float] = None
    mape: Optional[float] = None
    rae: dict[str, float] = field(default_factory=dict)
    stations: list[dict] = field(default_factory=list)
    clustering: dict[str, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return json_safe(asdict(self))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
