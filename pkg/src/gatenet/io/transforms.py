"""Marker-intensity transforms.

Three kinds: ``none``, ``asinh`` (arcsinh of intensity over a cofactor,
the usual compensation-friendly compression for cytometry), and
``zscore``. Z-score statistics are fitted on training events only and
then applied unchanged everywhere else; fitting on anything that later
ends up in a validation fold is a split-hygiene bug, so the fitted
object is explicit rather than hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .tables import EventTable

KINDS = ("none", "asinh", "zscore")


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "none"
    cofactor: float = 5.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown transform {self.kind!r}, expected one of {KINDS}")
        if self.kind == "asinh" and self.cofactor <= 0:
            raise ConfigError(f"asinh cofactor must be positive, got {self.cofactor}")


@dataclass(frozen=True)
class FittedTransform:
    spec: TransformSpec
    mean: np.ndarray = None  # per marker, zscore only
    std: np.ndarray = None


def fit_transform(spec, train_tables):
    """Fit on pooled training events. Only zscore has state to fit."""
    if spec.kind != "zscore":
        return FittedTransform(spec=spec)
    if not train_tables:
        raise DataError("zscore transform needs at least one training sample")
    pooled = np.concatenate([t.values for t in train_tables], axis=0)
    if pooled.shape[0] < 2:
        raise DataError("zscore transform needs at least two training events")
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    flat = np.flatnonzero(std == 0.0)
    if flat.size:
        marker = train_tables[0].panel.markers[flat[0]]
        raise DataError(f"marker {marker!r} is constant in training data, zscore undefined")
    return FittedTransform(spec=spec, mean=mean, std=std)


def apply_transform(fitted, table):
    """Return a new table; the input is never modified."""
    if fitted.spec.kind == "none":
        return EventTable(table.panel, table.values.copy())
    if fitted.spec.kind == "asinh":
        return EventTable(table.panel, np.arcsinh(table.values / fitted.spec.cofactor))
    return EventTable(table.panel, (table.values - fitted.mean) / fitted.std)
