from typing import Any


class RoughcalError(Exception):
    """Base exception for all roughcal failures."""

    pass


# --- Network model ---


class NetworkError(RoughcalError):
    """Base exception for network parsing and validation failures."""

    pass


class MalformedLine(NetworkError):
    def __init__(self, section: str, line_no: int, text: str, reason: str = "") -> None:
        self.section = section
        self.line_no = line_no
        self.text = text
        detail = f": {reason}" if reason else ""
        super().__init__(f"Malformed line {line_no} in [{section}] '{text.strip()}'{detail}")


class DanglingReference(NetworkError):
    pass


class DuplicateId(NetworkError):
    pass


class InvalidNetwork(NetworkError):
    pass


class UnknownPipeId(NetworkError):
    pass


class InvalidRole(NetworkError):
    pass


class MeasurementError(NetworkError):
    pass


class NonMonotonicTimestamps(MeasurementError):
    pass


class NegativeWeight(MeasurementError):
    pass


# --- Hydraulics ---


class HydraulicsError(RoughcalError):
    """Base exception for hydraulic simulation failures."""

    pass


class SingularSystem(HydraulicsError):
    pass


class NotConverged(HydraulicsError):
    def __init__(self, message: str, best: Any = None) -> None:
        self.best = best
        super().__init__(message)


class ClosedPipe(HydraulicsError):
    pass


class PatternTooShort(HydraulicsError):
    pass


class StepFailure(HydraulicsError):
    def __init__(self, step_index: int, cause: Exception) -> None:
        self.step_index = step_index
        self.cause = cause
        super().__init__(f"Hydraulic step {step_index} failed: {cause}")


# --- Graph and attributes ---


class GraphError(RoughcalError):
    pass


class NoConvergence(GraphError):
    pass


class MissingEdge(GraphError):
    pass


# --- Grouping ---


class GroupingError(RoughcalError):
    pass


class DegenerateData(GroupingError):
    pass


class EmptyGraph(GroupingError):
    pass


class InvalidGrouping(GroupingError):
    pass


# --- Calibration ---


class CalibrationError(RoughcalError):
    pass


class EmptyGroup(CalibrationError):
    pass


class InvertedBounds(CalibrationError):
    pass


class ObjectiveSpecError(CalibrationError):
    pass


# --- Metrics ---


class MetricsError(RoughcalError):
    pass


class LengthMismatch(MetricsError):
    pass


class ConstantObserved(MetricsError):
    pass


class TooFewClusters(MetricsError):
    pass


class ZeroNormalizer(MetricsError):
    pass


class ZeroReference(MetricsError):
    pass


# --- Pipeline ---


class PipelineError(RoughcalError):
    pass


class ConfigError(PipelineError):
    pass


class EmptyAfterScreening(PipelineError):
    pass


class StaleArtifact(PipelineError):
    pass


class StageError(PipelineError):
    def __init__(self, stage: str, cause: Exception) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed with {type(cause).__name__}: {cause}")
