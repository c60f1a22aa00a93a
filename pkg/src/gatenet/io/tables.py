"""Event tables, labeled samples, and CSV round-tripping.

A sample is a matrix of marker intensities plus optional per-event
integer class labels. CSV files carry one header row with the marker
names and, when labels are present, a final ``label`` column. Floats
are written in shortest round-trip form, so save followed by load is
lossless.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import DataError

LABEL_COLUMN = "label"


@dataclass(frozen=True)
class MarkerPanel:
    """Ordered, unique marker names shared by all samples of a dataset."""

    markers: tuple

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(str(m) for m in self.markers))
        if not self.markers:
            raise DataError("marker panel is empty")
        if any(not m for m in self.markers):
            raise DataError("marker panel contains an empty name")
        if len(set(self.markers)) != len(self.markers):
            raise DataError(f"marker panel has duplicate names: {self.markers}")

    def __len__(self):
        return len(self.markers)

    def index_of(self, name):
        try:
            return self.markers.index(name)
        except ValueError:
            raise DataError(f"unknown marker {name!r}; panel has {self.markers}") from None


@dataclass
class EventTable:
    """Float64 intensity matrix [n_events, n_markers]."""

    panel: MarkerPanel
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"event values must be 2-d, got shape {self.values.shape}")
        if self.values.shape[1] != len(self.panel):
            raise DataError(
                f"{self.values.shape[1]} value columns for {len(self.panel)} markers"
            )

    @property
    def n_events(self):
        return self.values.shape[0]


@dataclass
class LabeledSample:
    """One measured sample: events plus optional per-event class labels."""

    sample_id: str
    table: EventTable
    labels: np.ndarray = None
    class_names: tuple = None

    def __post_init__(self):
        if self.class_names is not None:
            self.class_names = tuple(str(c) for c in self.class_names)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.table.n_events,):
                raise DataError(
                    f"sample {self.sample_id!r}: {self.labels.shape[0] if self.labels.ndim else 0} "
                    f"labels for {self.table.n_events} events"
                )
            if self.labels.size and self.labels.min() < 0:
                raise DataError(f"sample {self.sample_id!r}: negative class label")
            if self.class_names is not None and self.labels.size:
                if self.labels.max() >= len(self.class_names):
                    raise DataError(
                        f"sample {self.sample_id!r}: label {int(self.labels.max())} "
                        f"out of range for {len(self.class_names)} classes"
                    )

    @property
    def n_events(self):
        return self.table.n_events

    def with_events(self, values, labels):
        return replace(
            self,
            table=EventTable(self.table.panel, values),
            labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        )


@dataclass(frozen=True)
class DatasetStats:
    """Cohort summary in the style of a dataset table."""

    n_samples: int
    n_markers: int
    n_classes: int
    events_mean: float
    events_std: float
    class_counts: tuple
    minority_class: int
    minority_fraction_mean: float
    minority_fraction_std: float


def _fmt(v):
    return repr(float(v))


def save_sample_csv(path, sample):
    """Write one sample; includes the label column when labels exist."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(sample.table.panel.markers)
        if sample.labels is not None:
            header.append(LABEL_COLUMN)
        writer.writerow(header)
        for i, row in enumerate(sample.table.values):
            out = [_fmt(v) for v in row]
            if sample.labels is not None:
                out.append(str(int(sample.labels[i])))
            writer.writerow(out)


def load_sample_csv(path, class_names=None, sample_id=None):
    """Read a sample written by save_sample_csv (or any compatible CSV)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        has_labels = bool(header) and header[-1] == LABEL_COLUMN
        markers = header[:-1] if has_labels else header
        panel = MarkerPanel(tuple(markers))
        values = []
        labels = [] if has_labels else None
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} cells, header has {len(header)}"
                )
            parsed = []
            for col_name, cell in zip(markers, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}, column {col_name!r}: "
                        f"non-numeric value {cell!r}"
                    ) from None
            values.append(parsed)
            if has_labels:
                try:
                    labels.append(int(row[-1]))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}, column 'label': "
                        f"non-integer value {row[-1]!r}"
                    ) from None
    table = EventTable(panel, np.asarray(values, dtype=np.float64).reshape(-1, len(panel)))
    return LabeledSample(
        sample_id=sample_id if sample_id is not None else path.stem,
        table=table,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        class_names=class_names,
    )


def dataset_stats(samples):
    """Summarize a labeled cohort; needs at least one labeled sample."""
    if not samples:
        raise DataError("cannot summarize an empty dataset")
    if any(s.labels is None for s in samples):
        raise DataError("dataset statistics need labeled samples")
    n_classes = max(
        (len(s.class_names) for s in samples if s.class_names is not None), default=0
    )
    if n_classes == 0:
        n_classes = int(max(s.labels.max() for s in samples if s.labels.size)) + 1
    counts = np.zeros(n_classes, dtype=np.int64)
    for s in samples:
        counts += np.bincount(s.labels, minlength=n_classes)
    minority = int(np.argmin(counts))
    fracs = np.array(
        [np.mean(s.labels == minority) if s.n_events else 0.0 for s in samples]
    )
    sizes = np.array([s.n_events for s in samples], dtype=np.float64)
    return DatasetStats(
        n_samples=len(samples),
        n_markers=len(samples[0].table.panel),
        n_classes=n_classes,
        events_mean=float(sizes.mean()),
        events_std=float(sizes.std(ddof=1)) if len(samples) > 1 else 0.0,
        class_counts=tuple(int(c) for c in counts),
        minority_class=minority,
        minority_fraction_mean=float(fracs.mean()),
        minority_fraction_std=float(fracs.std(ddof=1)) if len(samples) > 1 else 0.0,
    )
