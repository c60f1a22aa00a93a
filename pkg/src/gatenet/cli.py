"""Command-line interface.

Commands: train, predict, cv, learning-curve, expert-eval, synth,
sweep, bench. Settings come from defaults, then an INI config file
(--config), then command-line flags, in that order. Every command
writes a manifest.json capturing the resolved settings, seed, and
SHA-256 digests of its inputs, so a run is reproducible from the
manifest alone.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric failure (training divergence).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, GatenetError, TrainingDivergedError
from .evaluation import (
    WORKERS_ENV_VAR,
    cross_validate,
    expert_loo_eval,
    learning_curve,
)
from .io.tables import LABEL_COLUMN, load_sample_csv, save_sample_csv
from .io.transforms import TransformSpec
from .model import BaselineConfig, GateNetConfig, forward_gatenet, init_gatenet
from .synth import benchmark_preset, generate_dataset, load_spec, save_spec
from .training import TrainConfig, TrainedModel, predict_sample, train

MANIFEST_VERSION = 1

SWEEP_PARAMETERS = ("gamma", "beta_loss", "beta_sampling", "max_lr", "K")

# built-in default settings; the config file and flags override these
DEFAULTS = {
    "model": {
        "kind": "gatenet",
        "event_filters": "1024 512 256",
        "context_filters": "64 48",
        "hidden": "1024 512 256 32",
        "head_hidden": "32",
        "context_size": "1000",
    },
    "train": {
        "batch_size": "1024",
        "max_iters": "5000",
        "max_epochs": "10",
        "min_iters_small_data": "50",
        "max_lr": "0.002",
        "gamma": "5.0",
        "beta_loss": "0.99",
        "beta_sampling": "0.999",
        "use_class_weights": "true",
        "use_balanced_sampling": "true",
        "transform": "zscore",
        "cofactor": "5.0",
        "seed": "0",
    },
    "eval": {
        "k": "5",
        "n_train_list": "2 5 10 20 all",
        "n_context_draws": "1",
    },
    "predict": {
        "plot_pairs": "",
    },
}


# --- small utilities --------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_call(path, writer):
    """Run writer(tmp_path), then rename tmp_path over path."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, payload):
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir, command, settings, inputs, outputs, seed):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "seed": seed,
        "settings": settings,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    _write_json(Path(out_dir) / "manifest.json", manifest)


# --- config resolution ------------------------------------------------------

def _resolve_settings(config_path, overrides):
    """defaults <- config file <- command-line overrides."""
    settings = {section: dict(values) for section, values in DEFAULTS.items()}
    if config_path:
        cp = configparser.ConfigParser()
        if not cp.read(config_path, encoding="utf-8"):
            raise DataError(f"cannot read config file {config_path}")
        for section in cp.sections():
            if section not in settings:
                raise ConfigError(
                    f"unknown config section [{section}] in {config_path}; "
                    f"expected one of {sorted(settings)}"
                )
            for key, value in cp[section].items():
                if key not in settings[section]:
                    raise ConfigError(
                        f"unknown setting {key!r} in [{section}] of {config_path}"
                    )
                settings[section][key] = value
    for (section, key), value in overrides.items():
        if value is not None:
            settings[section][key] = str(value)
    return settings


def _parse_int_list(text):
    return tuple(int(v) for v in str(text).split())


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _model_config(settings, n_markers, n_classes):
    section = settings["model"]
    kind = section["kind"]
    if kind == "gatenet":
        return GateNetConfig(
            n_markers=n_markers,
            n_classes=n_classes,
            event_filters=_parse_int_list(section["event_filters"]),
            context_filters=_parse_int_list(section["context_filters"]),
            head_hidden=int(section["head_hidden"]),
            context_size=int(section["context_size"]),
        )
    if kind == "baseline":
        return BaselineConfig(
            n_markers=n_markers,
            n_classes=n_classes,
            hidden=_parse_int_list(section["hidden"]),
        )
    raise ConfigError(f"unknown model kind {kind!r}, expected gatenet or baseline")


def _train_config(settings):
    section = settings["train"]
    return TrainConfig(
        batch_size=int(section["batch_size"]),
        max_iters=int(section["max_iters"]),
        max_epochs=int(section["max_epochs"]),
        min_iters_small_data=int(section["min_iters_small_data"]),
        max_lr=float(section["max_lr"]),
        gamma=float(section["gamma"]),
        beta_loss=float(section["beta_loss"]),
        beta_sampling=float(section["beta_sampling"]),
        use_class_weights=_parse_bool(section["use_class_weights"]),
        use_balanced_sampling=_parse_bool(section["use_balanced_sampling"]),
        n_context_draws=int(settings["eval"]["n_context_draws"]),
        transform=TransformSpec(
            kind=section["transform"], cofactor=float(section["cofactor"])
        ),
        seed=int(section["seed"]),
    )


# --- data loading -----------------------------------------------------------

def _expand_data_paths(paths):
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            inside = sorted(p.glob("*.csv"))
            if not inside:
                raise DataError(f"directory {p} contains no .csv files")
            files.extend(inside)
        elif p.exists():
            files.append(p)
        else:
            raise DataError(f"no such data file: {p}")
    return files


def _load_labeled_samples(paths, class_names=None):
    samples = []
    for path in _expand_data_paths(paths):
        sample = load_sample_csv(path, class_names=class_names)
        if sample.labels is None:
            raise DataError(f"{path}: missing label column {LABEL_COLUMN!r}")
        samples.append(sample)
    return samples


def _infer_class_names(samples, explicit):
    if explicit:
        return tuple(explicit.split(","))
    for s in samples:
        if s.class_names is not None:
            return s.class_names
    n = int(max(s.labels.max() for s in samples if s.labels.size)) + 1
    return tuple(f"class_{i}" for i in range(n))


# --- commands ---------------------------------------------------------------

def cmd_train(args):
    settings = _resolve_settings(args.config, {
        ("train", "seed"): args.seed,
        ("train", "max_lr"): args.max_lr,
        ("train", "gamma"): args.gamma,
        ("train", "transform"): args.transform,
        ("model", "kind"): args.kind,
        ("model", "context_size"): args.context_size,
        ("model", "event_filters"): args.event_filters,
        ("model", "context_filters"): args.context_filters,
        ("model", "hidden"): args.hidden,
        ("model", "head_hidden"): args.head_hidden,
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _expand_data_paths(args.data)
    samples = _load_labeled_samples(args.data, class_names=None)
    class_names = _infer_class_names(samples, args.class_names)
    samples = _load_labeled_samples(args.data, class_names=class_names)
    cfg = _train_config(settings)
    model_config = _model_config(
        settings, n_markers=len(samples[0].table.panel), n_classes=len(class_names)
    )
    trained, history = train(model_config, samples, cfg)
    checkpoint = out / "model.gatenet"
    _atomic_call(checkpoint, lambda tmp: trained.save(tmp))
    _write_json(out / "history.json", history.to_dict())
    _write_manifest(
        out, "train", settings, files, [checkpoint, out / "history.json"],
        seed=cfg.seed,
    )
    print(f"trained {model_config.__class__.__name__} for "
          f"{history.planned_iterations} iterations "
          f"(final loss {history.losses[-1]:.6f}) -> {checkpoint}")
    return 0


def _parse_plot_pairs(text, markers):
    pairs = []
    for token in str(text).replace(",", " ").split():
        parts = token.split(":")
        if len(parts) != 2:
            raise ConfigError(f"plot pair {token!r} must look like markerA:markerB")
        for m in parts:
            if m not in markers:
                raise ConfigError(f"plot pair {token!r} names unknown marker {m!r}")
        pairs.append((parts[0], parts[1]))
    return pairs


def _write_prediction_csv(path, pred, class_names):
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["event_index", "predicted_class", "predicted_index"]
                + [f"prob_{c}" for c in class_names]
            )
            for i in range(pred.labels.shape[0]):
                w.writerow(
                    [i, class_names[pred.labels[i]], int(pred.labels[i])]
                    + [repr(float(p)) for p in pred.probs[i]]
                )
    _atomic_call(path, writer)


def _write_plot_csv(path, sample, labels, class_names, pair):
    ix = sample.table.panel.index_of(pair[0])
    iy = sample.table.panel.index_of(pair[1])
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["marker_x", "marker_y", "predicted_class"])
            for i in range(labels.shape[0]):
                w.writerow([
                    repr(float(sample.table.values[i, ix])),
                    repr(float(sample.table.values[i, iy])),
                    class_names[labels[i]],
                ])
    _atomic_call(path, writer)


def _load_pipeline(path):
    """Ordered hierarchy of checkpoints for full-pipeline inference.

    INI file: one [stage <name>] section per stage, each with a
    `checkpoint` and (except the root) `parent = <stage>:<class>`.
    """
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise DataError(f"cannot read pipeline file {path}")
    stages = []
    names = set()
    for section in cp.sections():
        if not section.startswith("stage "):
            raise ConfigError(f"unexpected section [{section}] in {path}")
        name = section[len("stage "):]
        body = cp[section]
        if "checkpoint" not in body:
            raise ConfigError(f"stage {name!r} in {path} needs a checkpoint")
        parent = body.get("parent")
        if parent is not None:
            parts = parent.split(":")
            if len(parts) != 2:
                raise ConfigError(
                    f"stage {name!r}: parent must look like stage:class, got {parent!r}"
                )
            if parts[0] not in names:
                raise ConfigError(
                    f"stage {name!r}: parent stage {parts[0]!r} not defined above it"
                )
            parent = (parts[0], parts[1])
        elif stages:
            raise ConfigError(f"stage {name!r}: only the first stage may omit parent")
        stages.append((name, parent, TrainedModel.load(body["checkpoint"])))
        names.add(name)
    if not stages:
        raise ConfigError(f"pipeline file {path} defines no stages")
    return stages


def _predict_pipeline(stages, sample, rng):
    """Feed predicted parent populations into child models."""
    n = sample.n_events
    final = np.array([""] * n, dtype=object)
    stage_of = np.array([""] * n, dtype=object)
    for name, parent, trained in stages:
        if parent is None:
            rows = np.arange(n)
        else:
            parent_stage, parent_class = parent
            rows = np.flatnonzero((stage_of == parent_stage) & (final == parent_class))
        if rows.size == 0:
            continue
        sub = sample.with_events(sample.table.values[rows], None)
        pred = predict_sample(trained, sub, rng=rng)
        for local, row in enumerate(rows):
            final[row] = trained.class_names[pred.labels[local]]
            stage_of[row] = name
    return final, stage_of


def cmd_predict(args):
    settings = _resolve_settings(args.config, {
        ("predict", "plot_pairs"): args.plot_pairs,
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _expand_data_paths(args.data)
    outputs = []
    seed = args.seed if args.seed is not None else 0
    inputs = list(files)
    if args.pipeline:
        inputs.append(Path(args.pipeline))
        stages = _load_pipeline(args.pipeline)
        for path in files:
            sample = load_sample_csv(path)
            final, stage_of = _predict_pipeline(
                stages, sample, np.random.default_rng([seed, 0])
            )
            dest = out / f"{sample.sample_id}.labels.csv"
            def writer(tmp, sample=sample, final=final, stage_of=stage_of):
                with open(tmp, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["event_index", "predicted_class", "stage"])
                    for i in range(sample.n_events):
                        w.writerow([i, final[i], stage_of[i]])
            _atomic_call(dest, writer)
            outputs.append(dest)
            print(f"{sample.sample_id}: {sample.n_events} events -> {dest}")
    else:
        if not args.checkpoint:
            raise ConfigError("predict needs --checkpoint (or --pipeline)")
        inputs.append(Path(args.checkpoint))
        trained = TrainedModel.load(args.checkpoint)
        pairs = _parse_plot_pairs(settings["predict"]["plot_pairs"], trained.markers)
        for i, path in enumerate(files):
            sample = load_sample_csv(path)
            pred = predict_sample(
                trained, sample, n_context_draws=int(settings["eval"]["n_context_draws"]),
                rng=np.random.default_rng([seed, i]),
            )
            dest = out / f"{sample.sample_id}.labels.csv"
            _write_prediction_csv(dest, pred, trained.class_names)
            outputs.append(dest)
            for pair in pairs:
                plot = out / f"{sample.sample_id}.plot.{pair[0]}-{pair[1]}.csv"
                _write_plot_csv(plot, sample, pred.labels, trained.class_names, pair)
                outputs.append(plot)
            print(f"{sample.sample_id}: {sample.n_events} events -> {dest}")
    _write_manifest(out, "predict", settings, inputs, outputs, seed=seed)
    return 0


def _cv_settings_and_samples(args):
    settings = _resolve_settings(args.config, {
        ("train", "seed"): args.seed,
        ("train", "max_lr"): args.max_lr,
        ("train", "gamma"): args.gamma,
        ("train", "transform"): args.transform,
        ("model", "kind"): args.kind,
        ("model", "context_size"): args.context_size,
        ("model", "event_filters"): args.event_filters,
        ("model", "context_filters"): args.context_filters,
        ("model", "hidden"): args.hidden,
        ("model", "head_hidden"): args.head_hidden,
        ("eval", "k"): args.k,
    })
    files = _expand_data_paths(args.data)
    samples = _load_labeled_samples(args.data)
    class_names = _infer_class_names(samples, args.class_names)
    samples = _load_labeled_samples(args.data, class_names=class_names)
    cfg = _train_config(settings)
    model_config = _model_config(
        settings, n_markers=len(samples[0].table.panel), n_classes=len(class_names)
    )
    return settings, files, samples, cfg, model_config


def cmd_cv(args):
    settings, files, samples, cfg, model_config = _cv_settings_and_samples(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = cross_validate(
        samples, model_config, cfg, k=int(settings["eval"]["k"]), workers=args.workers
    )
    _write_json(out / "cv.json", result.to_dict())
    rows = ["fold,unweighted_f1,weighted_f1"]
    for fold in result.folds:
        rows.append(
            f"{fold.fold_index},{fold.report.unweighted_f1!r},{fold.report.weighted_f1!r}"
        )
    rows.append(f"mean,{result.mean_unweighted_f1!r},{result.mean_weighted_f1!r}")
    rows.append(f"std,{result.std_unweighted_f1!r},{result.std_weighted_f1!r}")
    _atomic_write_text(out / "cv.csv", "\n".join(rows) + "\n")
    _write_manifest(
        out, "cv", settings, files, [out / "cv.json", out / "cv.csv"], seed=cfg.seed
    )
    print(
        f"cv: unweighted F1 {result.mean_unweighted_f1:.4f} "
        f"± {result.std_unweighted_f1:.4f}, weighted {result.mean_weighted_f1:.4f} "
        f"± {result.std_weighted_f1:.4f}"
    )
    return 0


def cmd_learning_curve(args):
    settings, files, samples, cfg, model_config = _cv_settings_and_samples(args)
    if args.sizes:
        sizes = tuple(
            ("all" if tok == "all" else int(tok)) for tok in args.sizes.split(",")
        )
    else:
        sizes = tuple(
            ("all" if tok == "all" else int(tok))
            for tok in settings["eval"]["n_train_list"].split()
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = learning_curve(
        samples, model_config, cfg, n_train_list=sizes,
        k=int(settings["eval"]["k"]), workers=args.workers,
    )
    _write_json(out / "learning_curve.json", result.to_dict())
    rows = ["n_train,median_unweighted_f1,q25,q75,mean_pooled_unweighted_f1"]
    for p in result.points:
        rows.append(
            f"{p.n_train},{p.median_unweighted_f1!r},{p.q25_unweighted_f1!r},"
            f"{p.q75_unweighted_f1!r},{p.mean_pooled_unweighted_f1!r}"
        )
    _atomic_write_text(out / "learning_curve.csv", "\n".join(rows) + "\n")
    _write_manifest(
        out, "learning-curve", settings, files,
        [out / "learning_curve.json", out / "learning_curve.csv"], seed=cfg.seed,
    )
    for p in result.points:
        print(
            f"n_train={p.n_train}: median unweighted F1 {p.median_unweighted_f1:.4f} "
            f"[{p.q25_unweighted_f1:.4f}, {p.q75_unweighted_f1:.4f}]"
        )
    return 0


def cmd_expert_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    expert_dirs = [Path(d) for d in args.expert]
    if len(expert_dirs) < 3:
        raise DataError(
            f"expert evaluation needs at least 3 --expert directories, "
            f"got {len(expert_dirs)}"
        )
    names = None
    for d in expert_dirs:
        if not d.is_dir():
            raise DataError(f"--expert {d} is not a directory")
        found = sorted(p.name for p in d.glob("*.csv"))
        if not found:
            raise DataError(f"expert directory {d} contains no .csv files")
        if names is None:
            names = found
        elif found != names:
            raise DataError(
                f"expert directory {d} holds {found}, expected the same files "
                f"as {expert_dirs[0]}: {names}"
            )
    files = []
    expert_labels = []
    for d in expert_dirs:
        per_sample = []
        for name in names:
            path = d / name
            files.append(path)
            sample = load_sample_csv(path)
            if sample.labels is None:
                raise DataError(f"{path}: missing label column {LABEL_COLUMN!r}")
            per_sample.append(sample.labels)
        expert_labels.append(per_sample)
    n_classes = args.n_classes or int(
        max(arr.max() for per in expert_labels for arr in per if arr.size)
    ) + 1
    result = expert_loo_eval(expert_labels, n_classes=n_classes)
    _write_json(out / "expert_eval.json", result.to_dict())
    _write_manifest(
        out, "expert-eval", {"n_classes": n_classes}, files,
        [out / "expert_eval.json"], seed=0,
    )
    for e in result.experts:
        print(
            f"expert {e.expert_index} ({expert_dirs[e.expert_index].name}): "
            f"median unweighted F1 {e.median_unweighted_f1:.4f} "
            f"[{e.q25_unweighted_f1:.4f}, {e.q75_unweighted_f1:.4f}]"
        )
    return 0


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = []
    if args.spec:
        spec = load_spec(args.spec)
        inputs.append(Path(args.spec))
    elif args.preset:
        spec = benchmark_preset(
            args.preset,
            n_samples=args.n_samples if args.n_samples else 20,
            seed=args.seed if args.seed is not None else 0,
            events_median=args.events_median if args.events_median else 2000.0,
        )
    else:
        raise ConfigError("synth needs --preset or --spec")
    dataset = generate_dataset(spec)
    outputs = []
    for sample in dataset.samples:
        dest = out / f"{sample.sample_id}.csv"
        _atomic_call(dest, lambda tmp, s=sample: save_sample_csv(tmp, s))
        outputs.append(dest)
    spec_copy = out / "dataset.synth.ini"
    _atomic_call(spec_copy, lambda tmp: save_spec(tmp, spec))
    outputs.append(spec_copy)
    effects = {
        "note": "generator ground truth; not an input to training or evaluation",
        "samples": [
            {
                "sample_index": e.sample_index,
                "shift": e.shift.tolist(),
                "gains": e.gains.tolist(),
                "jitter": {k: v.tolist() for k, v in e.jitter.items()},
            }
            for e in dataset.effects
        ],
    }
    _write_json(out / "effects.json", effects)
    outputs.append(out / "effects.json")
    _write_manifest(out, "synth", {"spec": str(args.spec or args.preset)},
                    inputs, outputs, seed=spec.seed)
    print(f"wrote {len(dataset.samples)} samples to {out}")
    return 0


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"unknown sweep parameter {args.param!r}; choose from {SWEEP_PARAMETERS}"
        )
    settings, files, samples, cfg, model_config = _cv_settings_and_samples(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = args.values.split(",")
    results = []
    for raw in values:
        if args.param == "K":
            if not isinstance(model_config, GateNetConfig):
                raise ConfigError("sweeping K requires the gatenet model kind")
            point_model = GateNetConfig(
                n_markers=model_config.n_markers,
                n_classes=model_config.n_classes,
                event_filters=model_config.event_filters,
                context_filters=model_config.context_filters,
                head_hidden=model_config.head_hidden,
                context_size=int(raw),
            )
            point_cfg = cfg
        else:
            point_model = model_config
            point_cfg = replace(cfg, **{args.param: float(raw)})
        res = cross_validate(
            samples, point_model, point_cfg, k=int(settings["eval"]["k"]),
            workers=args.workers,
        )
        results.append((raw, res))
        print(
            f"{args.param}={raw}: unweighted F1 {res.mean_unweighted_f1:.4f} "
            f"± {res.std_unweighted_f1:.4f}"
        )
    payload = {
        "schema_version": 1,
        "parameter": args.param,
        "points": [
            {
                "value": raw,
                "mean_unweighted_f1": res.mean_unweighted_f1,
                "std_unweighted_f1": res.std_unweighted_f1,
                "mean_weighted_f1": res.mean_weighted_f1,
                "std_weighted_f1": res.std_weighted_f1,
            }
            for raw, res in results
        ],
    }
    _write_json(out / "sweep.json", payload)
    rows = [f"{args.param},mean_unweighted_f1,std_unweighted_f1"]
    for raw, res in results:
        rows.append(f"{raw},{res.mean_unweighted_f1!r},{res.std_unweighted_f1!r}")
    _atomic_write_text(out / "sweep.csv", "\n".join(rows) + "\n")
    _write_manifest(
        out, "sweep", settings, files, [out / "sweep.json", out / "sweep.csv"],
        seed=cfg.seed,
    )
    return 0


def cmd_bench(args):
    settings = _resolve_settings(args.config, {
        ("model", "context_size"): args.context_size,
        ("model", "event_filters"): args.event_filters,
        ("model", "context_filters"): args.context_filters,
        ("model", "head_hidden"): args.head_hidden,
    })
    n_events = args.events
    seed = args.seed if args.seed is not None else 0
    spec = benchmark_preset("separable", n_samples=1, seed=seed,
                            events_median=float(n_events))
    from .synth import generate_sample

    sample, _ = generate_sample(spec, 0)
    model_config = _model_config(settings, n_markers=4, n_classes=3)
    if not isinstance(model_config, GateNetConfig):
        raise ConfigError("bench measures the gatenet model")
    model = init_gatenet(model_config, seed=seed)
    x = sample.table.values
    k = model_config.context_size
    rng = np.random.default_rng(seed)
    from .nn import no_grad

    chunk = 256
    start_time = time.perf_counter()
    with no_grad():
        for start in range(0, x.shape[0], chunk):
            stop = min(start + chunk, x.shape[0])
            ctx = x[rng.integers(0, x.shape[0], size=(stop - start, k))]
            forward_gatenet(model, x[start:stop], ctx, mode="eval")
    elapsed = time.perf_counter() - start_time
    rate = x.shape[0] / elapsed
    print(
        f"bench: {x.shape[0]} events, K={k}, filters "
        f"{model_config.event_filters}/{model_config.context_filters}: "
        f"{rate:.0f} events/s ({1e6 / rate:.0f} us/event)"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "bench.json", {
            "schema_version": 1,
            "n_events": int(x.shape[0]),
            "context_size": int(k),
            "elapsed_seconds": elapsed,
            "events_per_second": rate,
        })
        _write_manifest(out, "bench", settings, [], [out / "bench.json"], seed=seed)
    return 0


# --- argument parsing -------------------------------------------------------

def _add_common_model_flags(p):
    p.add_argument("--config", help="INI settings file")
    p.add_argument("--seed", type=int, help="training seed override")
    p.add_argument("--kind", choices=("gatenet", "baseline"), help="model kind")
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--transform", choices=("none", "asinh", "zscore"))
    p.add_argument("--context-size", dest="context_size", type=int,
                   help="context events per classified event (K)")
    p.add_argument("--event-filters", dest="event_filters",
                   help="space-separated filter sizes for the event block")
    p.add_argument("--context-filters", dest="context_filters",
                   help="space-separated filter sizes for the context block")
    p.add_argument("--hidden", help="space-separated baseline hidden sizes")
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.add_argument("--class-names", dest="class_names",
                   help="comma-separated class names (else inferred)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gatenet",
        description="Automated cytometry gating with context-aware neural networks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model on labeled CSV samples")
    p.add_argument("--data", nargs="+", required=True,
                   help="labeled sample CSVs or directories of them")
    p.add_argument("--out", required=True, help="output directory")
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify events of unseen samples")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="trained model file")
    p.add_argument("--pipeline",
                   help="INI of [stage ...] checkpoints for hierarchical gating")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--plot-pairs", dest="plot_pairs",
                   help="markerA:markerB pairs for plot-data CSVs")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int,
                   help=f"fold workers (or set {WORKERS_ENV_VAR})")
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("learning-curve", help="F1 vs number of training samples")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--sizes", help="comma-separated training-set sizes, e.g. 2,5,10,all")
    p.add_argument("--workers", type=int)
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_learning_curve)

    p = sub.add_parser("expert-eval",
                       help="score each expert against the consensus of the others")
    p.add_argument("--expert", action="append", required=True,
                   help="directory of one expert's labeled CSVs (repeat >= 3 times)")
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.set_defaults(func=cmd_expert_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", help="separable, batch_hard or rare_class")
    p.add_argument("--spec", help="dataset spec INI file")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--events-median", dest="events_median", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="cross-validate over one parameter's values")
    p.add_argument("--param", required=True,
                   help=f"one of {', '.join(SWEEP_PARAMETERS)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int)
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="inference throughput on synthetic data")
    p.add_argument("--events", type=int, default=2000)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--context-size", dest="context_size", type=int)
    p.add_argument("--event-filters", dest="event_filters")
    p.add_argument("--context-filters", dest="context_filters")
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except TrainingDivergedError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return 4
    except GatenetError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
