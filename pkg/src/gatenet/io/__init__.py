"""Cytometry data handling: tables, FCS reading, transforms, hierarchy."""

from .fcs import parse_fcs
from .hierarchy import (
    ConsensusResult,
    HierarchySpec,
    HierarchyStage,
    StageDataset,
    consensus_labels,
    derive_subdataset,
)
from .tables import (
    LABEL_COLUMN,
    DatasetStats,
    EventTable,
    LabeledSample,
    MarkerPanel,
    dataset_stats,
    load_sample_csv,
    save_sample_csv,
)
from .transforms import FittedTransform, TransformSpec, apply_transform, fit_transform

__all__ = [
    "LABEL_COLUMN",
    "ConsensusResult",
    "DatasetStats",
    "EventTable",
    "FittedTransform",
    "HierarchySpec",
    "HierarchyStage",
    "LabeledSample",
    "MarkerPanel",
    "StageDataset",
    "TransformSpec",
    "apply_transform",
    "consensus_labels",
    "dataset_stats",
    "derive_subdataset",
    "fit_transform",
    "load_sample_csv",
    "parse_fcs",
    "save_sample_csv",
]
