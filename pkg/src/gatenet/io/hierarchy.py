"""Population hierarchy and per-stage dataset derivation.

Samples carry labels at the finest (leaf) population level. A gating
stage classifies the events of one parent population into its child
populations, so deriving a stage dataset means: keep events whose leaf
label descends from the stage's parent, relabel each to the child it
passes through, and optionally collect unlisted in-parent events into a
remainder class. The root stage (parent None) keeps every event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError


@dataclass(frozen=True)
class HierarchyStage:
    """One gating step: split the parent population into child classes."""

    name: str
    parent: str  # None for the root stage
    classes: tuple
    remainder: str = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ConfigError(f"stage {self.name!r} has no classes")
        names = self.classes + ((self.remainder,) if self.remainder else ())
        if len(set(names)) != len(names):
            raise ConfigError(f"stage {self.name!r} has duplicate class names")

    @property
    def class_names(self):
        return self.classes + ((self.remainder,) if self.remainder else ())


@dataclass(frozen=True)
class HierarchySpec:
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        seen = set()
        for stage in self.stages:
            if stage.name in seen:
                raise ConfigError(f"duplicate stage name {stage.name!r}")
            seen.add(stage.name)
        parents = {}
        for stage in self.stages:
            for child in stage.class_names:
                if child in parents:
                    raise ConfigError(
                        f"population {child!r} is classified by more than one stage"
                    )
                parents[child] = stage.parent
        object.__setattr__(self, "_parent_of", parents)

    def stage(self, name):
        for s in self.stages:
            if s.name == name:
                return s
        raise ConfigError(f"unknown stage {name!r}; have {[s.name for s in self.stages]}")

    def ancestry(self, population):
        """Population and its ancestors, leaf first, ending at a root child."""
        chain = [population]
        node = population
        while True:
            if node not in self._parent_of:
                raise DataError(f"population {node!r} does not appear in the hierarchy")
            parent = self._parent_of[node]
            if parent is None:
                return chain
            chain.append(parent)
            node = parent


@dataclass(frozen=True)
class StageDataset:
    """Samples relabeled for one stage, plus what was filtered away."""

    stage: HierarchyStage
    samples: tuple
    n_dropped_events: int
    dropped_samples: tuple  # sample ids that had no in-parent events


def derive_subdataset(samples, hierarchy, stage_name):
    """Filter and relabel leaf-labeled samples for one gating stage."""
    stage = hierarchy.stage(stage_name)
    class_index = {name: i for i, name in enumerate(stage.class_names)}
    remainder_idx = class_index.get(stage.remainder) if stage.remainder else None

    out = []
    dropped_events = 0
    dropped_samples = []
    for sample in samples:
        if sample.labels is None or sample.class_names is None:
            raise DataError(f"sample {sample.sample_id!r} has no leaf labels")
        new_labels = np.full(sample.n_events, -1, dtype=np.int64)
        keep = np.zeros(sample.n_events, dtype=bool)
        for leaf_idx, leaf_name in enumerate(sample.class_names):
            mask = sample.labels == leaf_idx
            if not mask.any():
                continue
            chain = hierarchy.ancestry(leaf_name)
            if stage.parent is not None and stage.parent not in chain:
                continue
            target = next((p for p in chain if p in class_index), None)
            if target is None:
                if remainder_idx is None:
                    dropped_events += int(mask.sum())
                    continue
                new_labels[mask] = remainder_idx
            else:
                new_labels[mask] = class_index[target]
            keep |= mask
        if not keep.any():
            dropped_samples.append(sample.sample_id)
            continue
        derived = sample.with_events(sample.table.values[keep], new_labels[keep])
        derived.class_names = stage.class_names
        out.append(derived)
    return StageDataset(
        stage=stage,
        samples=tuple(out),
        n_dropped_events=dropped_events,
        dropped_samples=tuple(dropped_samples),
    )


@dataclass(frozen=True)
class ConsensusResult:
    labels: np.ndarray
    tie_count: int


def consensus_labels(label_arrays):
    """Per-event majority vote; ties resolve to the lowest class index."""
    if not label_arrays:
        raise DataError("consensus needs at least one label array")
    arrays = [np.asarray(a, dtype=np.int64) for a in label_arrays]
    n = arrays[0].shape[0]
    for a in arrays:
        if a.shape != (n,):
            raise DataError(
                f"label arrays disagree on length: {[x.shape[0] for x in arrays]}"
            )
    if n == 0:
        return ConsensusResult(labels=np.zeros(0, dtype=np.int64), tie_count=0)
    n_classes = int(max(a.max() for a in arrays)) + 1
    counts = np.zeros((n, n_classes), dtype=np.int64)
    rows = np.arange(n)
    for a in arrays:
        np.add.at(counts, (rows, a), 1)
    winners = counts.argmax(axis=1)  # argmax takes the lowest index on ties
    top = counts[rows, winners]
    ties = int(((counts == top[:, None]).sum(axis=1) > 1).sum())
    return ConsensusResult(labels=winners.astype(np.int64), tie_count=ties)
