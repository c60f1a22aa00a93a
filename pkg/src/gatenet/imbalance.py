"""Class-imbalance handling: effective-number weights, focal loss, samplers.

The effective number of samples of a class with n examples is
(1 - beta^n) / (1 - beta); weights are its reciprocal scaled by (1 - beta)
and then normalized so they sum to the number of classes. beta close to 1
approaches inverse-frequency weighting, beta = 0 gives uniform weights.

The same weighting drives the event sampler, with each event's
probability divided by its class count so that the probability mass of a
whole class is proportional to the class weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, DataError, EmptyContextError

PROB_FLOOR = 1e-12  # clamp for log(p); clamped events count as saturated


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights, normalized to sum to the class count."""

    per_class: np.ndarray
    beta: float


def effective_number_weights(counts, beta):
    """Weights inversely proportional to each class's effective sample count.

    Classes with zero events get weight zero and do not take part in the
    normalization mass, but still count toward the normalization target.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ConfigError(f"counts must be a non-empty 1-d array, got shape {counts.shape}")
    if counts.min() < 0:
        raise DataError("negative class count")
    if not counts.any():
        raise DataError("all class counts are zero, weights undefined")
    if not 0.0 <= beta < 1.0:
        raise ConfigError(f"beta must lie in [0, 1), got {beta}")
    raw = np.zeros(counts.size, dtype=np.float64)
    present = counts > 0
    if beta == 0.0:
        raw[present] = 1.0
    else:
        raw[present] = (1.0 - beta) / (1.0 - beta ** counts[present].astype(np.float64))
    weights = raw * (counts.size / raw.sum())
    return ClassWeights(per_class=weights, beta=float(beta))


def _per_event_weights(labels, class_weights, n_classes):
    if class_weights is None:
        return np.ones(labels.size, dtype=np.float64)
    w = np.asarray(class_weights.per_class, dtype=np.float64)
    if w.size < n_classes:
        raise ConfigError(f"{w.size} class weights for {n_classes} model classes")
    return w[labels]


def focal_loss(probs, labels, class_weights=None, gamma=5.0):
    """Mean of w_y * (1 - p_y)^gamma * (-log p_y) over the batch.

    probs is a [N, C] tensor of class probabilities. Returns the scalar
    loss tensor and the number of events whose true-class probability
    fell below the clamp floor. gamma = 0 reduces exactly to weighted
    cross entropy.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    labels = np.asarray(labels, dtype=np.int64)
    p = nn.gather_rows(probs, labels)
    n_saturated = int(np.sum(p.data < PROB_FLOOR))
    p = nn.clamp(p, lo=PROB_FLOOR)
    w = _per_event_weights(labels, class_weights, probs.data.shape[1])
    terms = nn.mul(nn.mul(w, nn.power(nn.sub(1.0, p), gamma)), nn.neg(nn.log(p)))
    return nn.mean_all(terms), n_saturated


def cross_entropy(probs, labels, class_weights=None):
    """Mean weighted negative log-likelihood; same clamping as focal_loss."""
    labels = np.asarray(labels, dtype=np.int64)
    p = nn.clamp(nn.gather_rows(probs, labels), lo=PROB_FLOOR)
    w = _per_event_weights(labels, class_weights, probs.data.shape[1])
    return nn.mean_all(nn.mul(w, nn.neg(nn.log(p))))


class EventSampler:
    """Infinite, seeded stream of training-event indices with replacement.

    Each event is drawn with probability proportional to
    weight(class) / count(class), so a class's total probability mass is
    proportional to its effective-number weight: beta = 0 plays classes
    equally often, beta closer to 1 pushes hard toward rare classes.
    """

    def __init__(self, labels, beta, seed):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise DataError("event sampler needs a non-empty 1-d label array")
        counts = np.bincount(labels)
        weights = effective_number_weights(counts, beta)
        per_event = weights.per_class[labels] / counts[labels]
        self.labels = labels
        self.beta = float(beta)
        self.probabilities = per_event / per_event.sum()
        self._rng = np.random.default_rng(seed)

    @property
    def n_events(self):
        return self.labels.size

    def draw(self, batch_size):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {batch_size}")
        return self._rng.choice(
            self.n_events, size=batch_size, replace=True, p=self.probabilities
        )


def context_sampler(n_events, k, rng):
    """Indices of k same-sample context events for one presentation.

    Uniform without replacement when the sample has at least k events,
    uniform with replacement otherwise.
    """
    if k < 1:
        raise ConfigError(f"context size must be positive, got {k}")
    if n_events < 1:
        raise EmptyContextError("cannot draw context from a sample with no events")
    if n_events >= k:
        return rng.choice(n_events, size=k, replace=False)
    return rng.integers(0, n_events, size=k)
