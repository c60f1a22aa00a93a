"""Training loop and single-sample prediction.

Stopping rule: train for min(max_iters, ceil(max_epochs * n_events /
batch_size)) iterations, where an epoch is n_events draws from the
(with-replacement) event sampler. On small datasets the batch size
shrinks so that at least min_iters_small_data iterations fit inside the
epoch budget.

Every quantity fitted from data (transform statistics, class counts,
sampler weights, batchnorm running statistics) comes from the training
samples alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError
from .imbalance import EventSampler, context_sampler, effective_number_weights, focal_loss
from .io.transforms import TransformSpec, apply_transform, fit_transform
from .model import (
    BaselineConfig,
    GateNetConfig,
    forward_baseline,
    forward_gatenet,
    init_baseline,
    init_gatenet,
    load_checkpoint,
    save_checkpoint,
)
from .nn import AdamState, OneCycleSchedule, adam_step, backward, no_grad, zero_grads

PREDICT_CHUNK = 256  # events per forward pass at inference


def combine_seed(base, *parts):
    """Stable derived seed for a (base, part, ...) coordinate."""
    return int(np.random.SeedSequence([int(base), *map(int, parts)]).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    max_iters: int = 5000
    max_epochs: int = 10
    min_iters_small_data: int = 50
    max_lr: float = 0.002
    warmup_fraction: float = 0.25
    start_div: float = 25.0
    final_div: float = 1e4
    gamma: float = 5.0
    beta_loss: float = 0.99
    beta_sampling: float = 0.999
    use_class_weights: bool = True
    use_balanced_sampling: bool = True
    n_context_draws: int = 1
    transform: TransformSpec = TransformSpec("none")
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "max_iters", "max_epochs", "min_iters_small_data"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_lr <= 0:
            raise ConfigError(f"max_lr must be positive, got {self.max_lr}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        for name in ("beta_loss", "beta_sampling"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.n_context_draws < 1:
            raise ConfigError("n_context_draws must be positive")


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    saturation_counts: list = field(default_factory=list)
    batch_size: int = 0
    planned_iterations: int = 0
    n_train_events: int = 0

    def to_dict(self):
        return {
            "schema_version": 1,
            "batch_size": self.batch_size,
            "planned_iterations": self.planned_iterations,
            "n_train_events": self.n_train_events,
            "losses": self.losses,
            "lrs": self.lrs,
            "saturation_counts": self.saturation_counts,
        }


@dataclass
class TrainedModel:
    """Everything needed to classify new samples consistently."""

    model: object  # ModelParams
    transform: object  # FittedTransform
    markers: tuple
    class_names: tuple

    def save(self, path, extra=None):
        bundle = {
            "markers": list(self.markers),
            "class_names": list(self.class_names),
            "transform": {
                "kind": self.transform.spec.kind,
                "cofactor": self.transform.spec.cofactor,
                "mean": None if self.transform.mean is None else self.transform.mean.tolist(),
                "std": None if self.transform.std is None else self.transform.std.tolist(),
            },
            "user": extra or {},
        }
        save_checkpoint(path, self.model, extra=bundle)

    @classmethod
    def load(cls, path):
        from .io.transforms import FittedTransform

        model, extra = load_checkpoint(path)
        spec = TransformSpec(
            kind=extra["transform"]["kind"], cofactor=extra["transform"]["cofactor"]
        )
        mean = extra["transform"]["mean"]
        std = extra["transform"]["std"]
        fitted = FittedTransform(
            spec=spec,
            mean=None if mean is None else np.asarray(mean, dtype=np.float64),
            std=None if std is None else np.asarray(std, dtype=np.float64),
        )
        return cls(
            model=model,
            transform=fitted,
            markers=tuple(extra["markers"]),
            class_names=tuple(extra["class_names"]),
        )


def effective_batch_size(n_train_events, cfg):
    """Shrink the batch so min_iters_small_data iterations fit in the epoch cap."""
    if n_train_events < 1:
        raise DataError(f"need at least one training event, got {n_train_events}")
    adaptive = n_train_events * cfg.max_epochs // cfg.min_iters_small_data
    return max(1, min(cfg.batch_size, adaptive))


def planned_iterations(n_train_events, batch_size, cfg):
    """min(max_iters, iterations needed to reach max_epochs)."""
    by_epochs = math.ceil(cfg.max_epochs * n_train_events / batch_size)
    return max(1, min(cfg.max_iters, by_epochs))


class _UniformSampler:
    """Plain uniform-over-events stream, the no-rebalancing control."""

    def __init__(self, n_events, seed):
        self.n_events = n_events
        self._rng = np.random.default_rng(seed)

    def draw(self, batch_size):
        return self._rng.integers(0, self.n_events, size=batch_size)


def _validate_training_set(train_samples, n_classes):
    if not train_samples:
        raise DataError("training needs at least one sample")
    markers = train_samples[0].table.panel.markers
    class_names = None
    for s in train_samples:
        if s.labels is None:
            raise DataError(f"sample {s.sample_id!r} has no labels")
        if s.n_events < 1:
            raise DataError(f"sample {s.sample_id!r} has no events")
        if s.table.panel.markers != markers:
            raise DataError(
                f"sample {s.sample_id!r} panel {s.table.panel.markers} does not "
                f"match {markers}"
            )
        if s.labels.size and s.labels.max() >= n_classes:
            raise DataError(
                f"sample {s.sample_id!r} has label {int(s.labels.max())} but the "
                f"model has {n_classes} classes"
            )
        if s.class_names is not None:
            class_names = s.class_names
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(n_classes))
    return markers, class_names


def train(model_config, train_samples, cfg):
    """Fit a model on labeled samples. Returns (TrainedModel, TrainHistory)."""
    is_gatenet = isinstance(model_config, GateNetConfig)
    if not is_gatenet and not isinstance(model_config, BaselineConfig):
        raise ConfigError(f"unknown model config type {type(model_config).__name__}")
    markers, class_names = _validate_training_set(train_samples, model_config.n_classes)
    if len(markers) != model_config.n_markers:
        raise ConfigError(
            f"model expects {model_config.n_markers} markers, data has {len(markers)}"
        )

    fitted = fit_transform(cfg.transform, [s.table for s in train_samples])
    tables = [apply_transform(fitted, s.table).values for s in train_samples]
    x_all = np.concatenate(tables, axis=0)
    y_all = np.concatenate([s.labels for s in train_samples])
    sizes = np.array([t.shape[0] for t in tables])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    sample_of = np.repeat(np.arange(len(tables)), sizes)
    n_events = x_all.shape[0]

    counts = np.bincount(y_all, minlength=model_config.n_classes)
    weights = (
        effective_number_weights(counts, cfg.beta_loss) if cfg.use_class_weights else None
    )
    if cfg.use_balanced_sampling:
        sampler = EventSampler(y_all, beta=cfg.beta_sampling, seed=combine_seed(cfg.seed, 1))
    else:
        sampler = _UniformSampler(n_events, seed=combine_seed(cfg.seed, 1))
    ctx_rng = np.random.default_rng(combine_seed(cfg.seed, 2))

    if is_gatenet:
        model = init_gatenet(model_config, seed=combine_seed(cfg.seed, 0))
    else:
        model = init_baseline(model_config, seed=combine_seed(cfg.seed, 0))

    batch_size = effective_batch_size(n_events, cfg)
    planned = planned_iterations(n_events, batch_size, cfg)
    schedule = OneCycleSchedule(
        total_steps=planned,
        max_lr=cfg.max_lr,
        warmup_fraction=cfg.warmup_fraction,
        start_div=cfg.start_div,
        final_div=cfg.final_div,
    )
    adam = AdamState.for_params(model.params)
    history = TrainHistory(
        batch_size=batch_size, planned_iterations=planned, n_train_events=n_events
    )

    k = model_config.context_size if is_gatenet else None
    for it in range(planned):
        idx = sampler.draw(batch_size)
        events = x_all[idx]
        lr = schedule.lr_at(it)
        if is_gatenet:
            ctx_idx = np.empty((batch_size, k), dtype=np.intp)
            for row, event_index in enumerate(idx):
                s = sample_of[event_index]
                ctx_idx[row] = offsets[s] + context_sampler(int(sizes[s]), k, ctx_rng)
            contexts = x_all[ctx_idx]
            probs = forward_gatenet(model, events, contexts, mode="train")
        else:
            probs = forward_baseline(model, events, mode="train")
        loss, n_sat = focal_loss(probs, y_all[idx], class_weights=weights, gamma=cfg.gamma)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it} (lr={lr:.3e}, "
                f"{n_sat} saturated events in the batch)",
                iteration=it,
            )
        zero_grads(model.params)
        backward(loss)
        try:
            adam_step(model.params, adam, lr=lr)
        except TrainingDivergedError as err:
            raise TrainingDivergedError(
                f"iteration {it} (lr={lr:.3e}): {err}",
                param_name=err.param_name,
                iteration=it,
            ) from err
        history.losses.append(loss_value)
        history.lrs.append(lr)
        history.saturation_counts.append(n_sat)

    trained = TrainedModel(
        model=model, transform=fitted, markers=markers, class_names=class_names
    )
    return trained, history


@dataclass
class PredictionResult:
    labels: np.ndarray
    probs: np.ndarray


def predict_sample(trained, sample, n_context_draws=1, rng=None):
    """Classify every event of one sample.

    Context events are drawn from the sample itself; probabilities are
    averaged over n_context_draws independent draws. rng may be a seed
    or a Generator (consumed in event order, draw by draw).
    """
    if n_context_draws < 1:
        raise ConfigError("n_context_draws must be positive")
    if sample.table.panel.markers != trained.markers:
        raise DataError(
            f"sample {sample.sample_id!r} panel {sample.table.panel.markers} does not "
            f"match the training panel {trained.markers}"
        )
    rng = np.random.default_rng(rng)
    x = apply_transform(trained.transform, sample.table).values
    n = x.shape[0]
    if n == 0:
        return PredictionResult(
            labels=np.zeros(0, dtype=np.int64),
            probs=np.zeros((0, trained.model.config.n_classes)),
        )
    model = trained.model
    total = np.zeros((n, model.config.n_classes))
    with no_grad():
        if model.kind == "gatenet":
            k = model.config.context_size
            for _ in range(n_context_draws):
                for start in range(0, n, PREDICT_CHUNK):
                    stop = min(start + PREDICT_CHUNK, n)
                    ctx_idx = np.stack(
                        [context_sampler(n, k, rng) for _ in range(stop - start)]
                    )
                    probs = forward_gatenet(
                        model, x[start:stop], x[ctx_idx], mode="eval"
                    )
                    total[start:stop] += probs.data
        else:
            for start in range(0, n, PREDICT_CHUNK):
                stop = min(start + PREDICT_CHUNK, n)
                total[start:stop] = forward_baseline(model, x[start:stop], mode="eval").data
            total *= n_context_draws  # context draws are a no-op without contexts
    probs = total / n_context_draws
    return PredictionResult(labels=np.argmax(probs, axis=1).astype(np.int64), probs=probs)
