"""
roughcal - Group-wise roughness calibration for water distribution networks

Darcy-Weisbach extended-period hydraulics, per-pipe hydraulic and graph
attributes, pipe grouping (k-means, HDBSCAN, Louvain, variation-neighbourhood
coarsening) and Shuffled Complex Evolution calibration of group roughness,
with fit metrics and calibration-quality descriptors.
"""

__version__ = "0.3.0"
__author__ = "roughcal contributors"
__license__ = "MIT"

# Direct imports - no lazy loading magic
from .constants import (
    BoundsPolicy,
    GroupingConfig,
    PipelineConfig,
    PreprocessingConfig,
    SceOptions,
    SolverOptions,
    settings,
)
from .types import AttributeKind, GroupingMethod, PipeRole, PipeStatus, Termination
from .errors import (
    CalibrationError,
    GraphError,
    GroupingError,
    HydraulicsError,
    MetricsError,
    NetworkError,
    PipelineError,
    RoughcalError,
    StageError,
)
from .models import (
    AttributeMatrix,
    DecisionVariables,
    DesignMatrix,
    Grouping,
    MeasurementBook,
    Network,
    RunEnsemble,
    SimulationResult,
)
from .network import load_measurements, merge_metadata, parse_inp, read_inp, to_inp
from .hydraulics import HydraulicSolver, simulate_eps, solve_steady
from .attributes import build_attribute_matrix, encode_features
from .grouping import elbow_sweep, hdbscan, kmeans, louvain_linegraph, vn_coarsen_linegraph
from .sce import SceResult, sce_minimize
from .calibration import ObjectiveSpec, build_decision_variables, calibrate_ensemble
from .metrics import DescriptorReport, acs, boundary_index, ioa, rae_mape, repeatability_index, rmse
from .preprocessing import preprocess_measurements
from .pipeline import Pipeline, RunReport, Stage, run_pipeline

__all__ = [
    # Package metadata
    "__version__",
    "__author__",
    "__license__",
    # Configuration
    "settings",
    "PipelineConfig",
    "GroupingConfig",
    "PreprocessingConfig",
    "BoundsPolicy",
    "SceOptions",
    "SolverOptions",
    # Enums
    "AttributeKind",
    "GroupingMethod",
    "PipeRole",
    "PipeStatus",
    "Termination",
    # Errors
    "RoughcalError",
    "NetworkError",
    "HydraulicsError",
    "GraphError",
    "GroupingError",
    "CalibrationError",
    "MetricsError",
    "PipelineError",
    "StageError",
    # Core models
    "Network",
    "SimulationResult",
    "AttributeMatrix",
    "DesignMatrix",
    "Grouping",
    "DecisionVariables",
    "RunEnsemble",
    # Collection types
    "MeasurementBook",
    # Network model
    "parse_inp",
    "read_inp",
    "to_inp",
    "merge_metadata",
    "load_measurements",
    # Hydraulics
    "HydraulicSolver",
    "solve_steady",
    "simulate_eps",
    # Attributes and grouping
    "build_attribute_matrix",
    "encode_features",
    "kmeans",
    "elbow_sweep",
    "hdbscan",
    "louvain_linegraph",
    "vn_coarsen_linegraph",
    # Calibration
    "sce_minimize",
    "SceResult",
    "ObjectiveSpec",
    "build_decision_variables",
    "calibrate_ensemble",
    # Metrics
    "rmse",
    "ioa",
    "acs",
    "boundary_index",
    "repeatability_index",
    "rae_mape",
    "DescriptorReport",
    # Pipeline
    "preprocess_measurements",
    "Stage",
    "Pipeline",
    "RunReport",
    "run_pipeline",
]
