"""Confusion-matrix metrics, cross-validation, expert agreement, learning curves.

Split hygiene: every data-derived statistic (transform fit, class
counts, sampler weights, batchnorm running stats) is computed inside
train() from the training fold only; validation samples are only ever
touched by predict_sample.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, TrainingDivergedError
from .training import combine_seed, predict_sample, train

RESULTS_SCHEMA_VERSION = 1
WORKERS_ENV_VAR = "GATENET_WORKERS"


def confusion_matrix(true_labels, predicted_labels, n_classes):
    """Counts[i, j] = events with true class i predicted as j."""
    true_labels = np.asarray(true_labels)
    predicted_labels = np.asarray(predicted_labels)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise DataError(
            f"label arrays must be 1-d and equal length, got {true_labels.shape} "
            f"and {predicted_labels.shape}"
        )
    for name, arr in (("true", true_labels), ("predicted", predicted_labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} labels outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true_labels, predicted_labels), 1)
    return cm


@dataclass(frozen=True)
class F1Report:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_f1: float
    unweighted_f1: float

    def to_dict(self):
        return {
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "weighted_f1": self.weighted_f1,
            "unweighted_f1": self.unweighted_f1,
        }


def f1_scores(cm):
    """Per-class precision/recall/F1 plus support-weighted and plain means.

    Classes with zero support (no true events) are excluded from both
    averages; undefined ratios inside a class score as 0.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got shape {cm.shape}")
    if cm.sum() < 1:
        raise DataError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    present = support > 0
    weighted = float((support[present] / support[present].sum() * f1[present]).sum())
    unweighted = float(f1[present].mean())
    return F1Report(
        precision=precision,
        recall=recall,
        f1=f1,
        support=cm.sum(axis=1),
        weighted_f1=weighted,
        unweighted_f1=unweighted,
    )


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple
    val_ids: tuple


def kfold_split(sample_ids, k, seed):
    """Shuffled k-fold split over whole samples; larger folds come first."""
    sample_ids = list(sample_ids)
    if len(set(sample_ids)) != len(sample_ids):
        raise DataError("sample ids must be unique")
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    if len(sample_ids) < k:
        raise DataError(f"cannot split {len(sample_ids)} samples into {k} folds")
    order = np.random.default_rng(seed).permutation(len(sample_ids))
    shuffled = [sample_ids[i] for i in order]
    base, rem = divmod(len(shuffled), k)
    splits = []
    start = 0
    for fold in range(k):
        size = base + (1 if fold < rem else 0)
        val = tuple(shuffled[start : start + size])
        train_ids = tuple(shuffled[:start] + shuffled[start + size :])
        splits.append(FoldSplit(fold_index=fold, train_ids=train_ids, val_ids=val))
        start += size
    return splits


@dataclass
class SampleScore:
    fold_index: int
    sample_id: str
    report: F1Report


@dataclass
class FoldResult:
    fold_index: int
    report: F1Report  # from the fold's pooled confusion matrix
    sample_scores: list
    confusion: np.ndarray


@dataclass
class CVResult:
    folds: list
    mean_unweighted_f1: float
    std_unweighted_f1: float
    mean_weighted_f1: float
    std_weighted_f1: float

    @property
    def sample_scores(self):
        return [s for fold in self.folds for s in fold.sample_scores]

    def to_dict(self):
        return {
            "schema_version": RESULTS_SCHEMA_VERSION,
            "mean_unweighted_f1": self.mean_unweighted_f1,
            "std_unweighted_f1": self.std_unweighted_f1,
            "mean_weighted_f1": self.mean_weighted_f1,
            "std_weighted_f1": self.std_weighted_f1,
            "folds": [
                {
                    "fold_index": f.fold_index,
                    "pooled": f.report.to_dict(),
                    "confusion": f.confusion.tolist(),
                    "samples": [
                        {"sample_id": s.sample_id, **s.report.to_dict()}
                        for s in f.sample_scores
                    ],
                }
                for f in self.folds
            ],
        }


def _fold_seed(cfg, fold_index):
    return combine_seed(cfg.seed, 100 + fold_index)


def _run_fold(model_config, samples_by_id, split, cfg, train_ids=None):
    """Train on the fold's training samples, score each validation sample."""
    train_ids = split.train_ids if train_ids is None else train_ids
    fold_cfg = replace(cfg, seed=_fold_seed(cfg, split.fold_index))
    try:
        trained, _ = train(model_config, [samples_by_id[i] for i in train_ids], fold_cfg)
    except TrainingDivergedError as err:
        raise TrainingDivergedError(
            f"fold {split.fold_index}: {err}", iteration=err.iteration
        ) from err
    n_classes = model_config.n_classes
    pooled = np.zeros((n_classes, n_classes), dtype=np.int64)
    sample_scores = []
    for j, sid in enumerate(split.val_ids):
        sample = samples_by_id[sid]
        pred = predict_sample(
            trained,
            sample,
            n_context_draws=cfg.n_context_draws,
            rng=combine_seed(fold_cfg.seed, 7, j),
        )
        cm = confusion_matrix(sample.labels, pred.labels, n_classes)
        pooled += cm
        sample_scores.append(
            SampleScore(fold_index=split.fold_index, sample_id=sid, report=f1_scores(cm))
        )
    return FoldResult(
        fold_index=split.fold_index,
        report=f1_scores(pooled),
        sample_scores=sample_scores,
        confusion=pooled,
    )


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV_VAR)
    return max(1, int(env)) if env else 1


def _map_folds(jobs, workers):
    """Run fold jobs serially or in a process pool; order preserved."""
    n_workers = _worker_count(workers)
    if n_workers == 1 or len(jobs) <= 1:
        return [_run_fold(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
        return list(pool.map(_run_fold_star, jobs))


def _run_fold_star(job):
    return _run_fold(*job)


def _index_samples(samples):
    by_id = {}
    for s in samples:
        if s.sample_id in by_id:
            raise DataError(f"duplicate sample id {s.sample_id!r}")
        by_id[s.sample_id] = s
    return by_id


def cross_validate(samples, model_config, cfg, k=5, workers=None):
    """k-fold cross-validation over whole samples."""
    by_id = _index_samples(samples)
    splits = kfold_split([s.sample_id for s in samples], k, seed=cfg.seed)
    folds = _map_folds([(model_config, by_id, sp, cfg) for sp in splits], workers)
    unweighted = [f.report.unweighted_f1 for f in folds]
    weighted = [f.report.weighted_f1 for f in folds]
    return CVResult(
        folds=folds,
        mean_unweighted_f1=float(np.mean(unweighted)),
        std_unweighted_f1=float(np.std(unweighted, ddof=1)),
        mean_weighted_f1=float(np.mean(weighted)),
        std_weighted_f1=float(np.std(weighted, ddof=1)),
    )


@dataclass
class ExpertScore:
    expert_index: int
    sample_scores: list  # F1Report per sample, vs consensus of the others
    median_unweighted_f1: float
    q25_unweighted_f1: float
    q75_unweighted_f1: float


@dataclass
class ExpertEvalResult:
    experts: list

    def to_dict(self):
        return {
            "schema_version": RESULTS_SCHEMA_VERSION,
            "experts": [
                {
                    "expert_index": e.expert_index,
                    "median_unweighted_f1": e.median_unweighted_f1,
                    "q25_unweighted_f1": e.q25_unweighted_f1,
                    "q75_unweighted_f1": e.q75_unweighted_f1,
                    "samples": [r.to_dict() for r in e.sample_scores],
                }
                for e in self.experts
            ],
        }


def expert_loo_eval(expert_labels, n_classes):
    """Score each expert against the consensus of all other experts.

    expert_labels: per expert, a list of per-sample label arrays (all
    experts labeled the same samples in the same order).
    """
    from .io.hierarchy import consensus_labels

    if len(expert_labels) < 3:
        raise DataError(
            f"leave-one-out expert evaluation needs at least 3 experts, "
            f"got {len(expert_labels)}"
        )
    n_samples = len(expert_labels[0])
    for e, per_sample in enumerate(expert_labels):
        if len(per_sample) != n_samples:
            raise DataError(f"expert {e} labeled {len(per_sample)} samples, expected {n_samples}")
    experts = []
    for e, per_sample in enumerate(expert_labels):
        reports = []
        for s in range(n_samples):
            others = [expert_labels[o][s] for o in range(len(expert_labels)) if o != e]
            consensus = consensus_labels(others)
            cm = confusion_matrix(consensus.labels, per_sample[s], n_classes)
            reports.append(f1_scores(cm))
        scores = [r.unweighted_f1 for r in reports]
        experts.append(
            ExpertScore(
                expert_index=e,
                sample_scores=reports,
                median_unweighted_f1=float(np.median(scores)),
                q25_unweighted_f1=float(np.percentile(scores, 25)),
                q75_unweighted_f1=float(np.percentile(scores, 75)),
            )
        )
    return ExpertEvalResult(experts=experts)


@dataclass
class LearningCurvePoint:
    n_train: int
    folds: list  # FoldResult per fold at this training-set size
    median_unweighted_f1: float  # over per-sample scores, pooled across folds
    q25_unweighted_f1: float
    q75_unweighted_f1: float
    mean_pooled_unweighted_f1: float  # over per-fold pooled scores


@dataclass
class LearningCurveResult:
    points: list

    def to_dict(self):
        return {
            "schema_version": RESULTS_SCHEMA_VERSION,
            "points": [
                {
                    "n_train": p.n_train,
                    "median_unweighted_f1": p.median_unweighted_f1,
                    "q25_unweighted_f1": p.q25_unweighted_f1,
                    "q75_unweighted_f1": p.q75_unweighted_f1,
                    "mean_pooled_unweighted_f1": p.mean_pooled_unweighted_f1,
                    "folds": [
                        {
                            "fold_index": f.fold_index,
                            "pooled": f.report.to_dict(),
                            "samples": [
                                {"sample_id": s.sample_id, **s.report.to_dict()}
                                for s in f.sample_scores
                            ],
                        }
                        for f in p.folds
                    ],
                }
                for p in self.points
            ],
        }


def learning_curve(samples, model_config, cfg, n_train_list=(2, 5, 10, 20, "all"), k=5,
                   workers=None):
    """F1 vs number of training samples, on shared CV folds.

    At each size, every fold's training set is subsampled uniformly
    without replacement; validation folds stay fixed. A size equal to
    the full fold training set reproduces cross_validate exactly.
    """
    by_id = _index_samples(samples)
    splits = kfold_split([s.sample_id for s in samples], k, seed=cfg.seed)
    full_size = min(len(sp.train_ids) for sp in splits)
    sizes = []
    for n in n_train_list:
        if n == "all":
            sizes.append("all")
            continue
        n = int(n)
        if n < 1:
            raise ConfigError(f"training-set size must be positive, got {n}")
        if n > full_size:
            raise ConfigError(
                f"training-set size {n} exceeds the {full_size} samples available "
                f"per fold at k={k}"
            )
        sizes.append(n)

    points = []
    for requested in sizes:
        jobs = []
        for sp in splits:
            if requested == "all" or requested == len(sp.train_ids):
                subset = sp.train_ids  # no subsampling: identical to cross_validate
            else:
                rng = np.random.default_rng(
                    combine_seed(cfg.seed, 200, sp.fold_index, requested)
                )
                chosen = np.sort(rng.choice(len(sp.train_ids), size=requested, replace=False))
                subset = tuple(sp.train_ids[i] for i in chosen)
            jobs.append((model_config, by_id, sp, cfg, subset))
        folds = _map_folds(jobs, workers)
        per_sample = [s.report.unweighted_f1 for f in folds for s in f.sample_scores]
        points.append(
            LearningCurvePoint(
                n_train=full_size if requested == "all" else requested,
                folds=folds,
                median_unweighted_f1=float(np.median(per_sample)),
                q25_unweighted_f1=float(np.percentile(per_sample, 25)),
                q75_unweighted_f1=float(np.percentile(per_sample, 75)),
                mean_pooled_unweighted_f1=float(
                    np.mean([f.report.unweighted_f1 for f in folds])
                ),
            )
        )
    return LearningCurveResult(points=points)
