from enum import Enum


class PipeStatus(Enum):
    OPEN = "OPEN"
    CLOSED = "CLOSED"
    CV = "CV"


class PipeRole(Enum):
    TRANSMISSION = "transmission"
    DISTRIBUTION = "distribution"


class AttributeKind(Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"


class GroupingMethod(Enum):
    KMEANS = "kmeans"
    KMEANS_NG = "kmeans_ng"
    HDBSCAN = "hdbscan"
    HDBSCAN_NG = "hdbscan_ng"
    LOUVAIN = "louvain"
    VN = "vn"

    @property
    def is_reduced(self) -> bool:
        """Variants clustering on hydraulic attributes only."""
        return self in (GroupingMethod.KMEANS_NG, GroupingMethod.HDBSCAN_NG)

    @property
    def is_clustering(self) -> bool:
        return self not in (GroupingMethod.LOUVAIN, GroupingMethod.VN)


class ElementKind(Enum):
    HEAD = "head"
    PRESSURE = "pressure"
    FLOW = "flow"


class Termination(Enum):
    MAX_CALLS = "max_calls"
    TARGET_REACHED = "target_reached"
    CONVERGED = "converged"
