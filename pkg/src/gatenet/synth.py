"""Synthetic flow-cytometry data with controllable batch effects.

Each sample gets its own affine distortion (per-marker additive shift
and multiplicative gain) plus a small per-population mean jitter, so a
classifier that pools raw intensities across samples degrades while a
within-sample view of the data stays cleanly separable.

Ground truth about the distortions lives in SampleEffects objects,
a type nothing in training or evaluation accepts — results can only
use the labels carried by the samples themselves.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .io.tables import EventTable, LabeledSample, MarkerPanel

SPEC_FILE_SUFFIX = ".synth.ini"


def _as_vector(x, n, what):
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (n,):
        raise ConfigError(f"{what} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite")
    return arr


@dataclass(frozen=True)
class PopulationSpec:
    name: str
    frequency: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ConfigError("population name must be non-empty")
        if not 0.0 < self.frequency <= 1.0:
            raise ConfigError(
                f"population {self.name!r}: frequency must lie in (0, 1], "
                f"got {self.frequency}"
            )
        mean = np.asarray(self.mean, dtype=np.float64)
        if mean.ndim != 1 or mean.size < 1:
            raise ConfigError(f"population {self.name!r}: mean must be a 1-d vector")
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise ConfigError(
                f"population {self.name!r}: covariance shape {cov.shape} does not "
                f"match mean of length {mean.size}"
            )
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ConfigError(f"population {self.name!r}: covariance is not symmetric")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < -1e-10 * max(1.0, eigvals.max()):
            raise ConfigError(
                f"population {self.name!r}: covariance is not positive semidefinite "
                f"(smallest eigenvalue {eigvals.min():.3e})"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def n_markers(self):
        return self.mean.size


@dataclass(frozen=True)
class BatchEffectSpec:
    shift_scale: float = 0.0  # per-marker additive shift ~ Normal(0, shift_scale)
    gain_low: float = 1.0  # per-marker gain ~ Uniform(gain_low, gain_high)
    gain_high: float = 1.0
    population_jitter: float = 0.0  # per-population mean jitter ~ Normal(0, .)

    def __post_init__(self):
        if self.shift_scale < 0:
            raise ConfigError(f"shift_scale must be non-negative, got {self.shift_scale}")
        if not 0.0 < self.gain_low <= self.gain_high:
            raise ConfigError(
                f"gain range must satisfy 0 < low <= high, got "
                f"({self.gain_low}, {self.gain_high})"
            )
        if self.population_jitter < 0:
            raise ConfigError(
                f"population_jitter must be non-negative, got {self.population_jitter}"
            )


@dataclass(frozen=True)
class SynthDatasetSpec:
    markers: tuple
    populations: tuple
    batch_effect: BatchEffectSpec = BatchEffectSpec()
    n_samples: int = 1
    events_median: float = 2000.0  # events per sample ~ LogNormal
    events_dispersion: float = 0.0  # sigma of log event count
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(self, "populations", tuple(self.populations))
        if not self.populations:
            raise ConfigError("need at least one population")
        names = [p.name for p in self.populations]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate population names in {names}")
        m = len(self.markers)
        for p in self.populations:
            if p.n_markers != m:
                raise ConfigError(
                    f"population {p.name!r} has {p.n_markers} markers, panel has {m}"
                )
        total = sum(p.frequency for p in self.populations)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"population frequencies sum to {total!r}, expected 1")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be positive, got {self.n_samples}")
        if self.events_median < 1:
            raise ConfigError(f"events_median must be >= 1, got {self.events_median}")
        if self.events_dispersion < 0:
            raise ConfigError(
                f"events_dispersion must be non-negative, got {self.events_dispersion}"
            )

    @property
    def panel(self):
        return MarkerPanel(self.markers)

    @property
    def class_names(self):
        return tuple(p.name for p in self.populations)


@dataclass(frozen=True)
class SampleEffects:
    """True per-sample distortion. Deliberately not accepted anywhere else."""

    sample_index: int
    shift: np.ndarray
    gains: np.ndarray
    jitter: dict  # population name -> mean offset applied this sample


@dataclass(frozen=True)
class SynthDataset:
    spec: SynthDatasetSpec
    samples: tuple
    effects: tuple


def generate_sample(spec, sample_index, rng=None):
    """Draw one sample. Returns (LabeledSample, SampleEffects).

    Draw order (fixed for reproducibility): event count, shift, gains,
    per-population jitter, per-event labels, per-population event
    matrices. The same (spec.seed, sample_index) always yields the same
    sample when rng is omitted.
    """
    if not 0 <= sample_index:
        raise ConfigError(f"sample_index must be non-negative, got {sample_index}")
    if rng is None:
        rng = np.random.default_rng([spec.seed, sample_index])
    m = len(spec.markers)
    eff = spec.batch_effect

    n_events = max(1, int(round(spec.events_median * np.exp(
        spec.events_dispersion * rng.standard_normal()))))
    shift = eff.shift_scale * rng.standard_normal(m)
    gains = rng.uniform(eff.gain_low, eff.gain_high, size=m)
    jitter = {
        p.name: eff.population_jitter * rng.standard_normal(m) for p in spec.populations
    }

    freqs = np.array([p.frequency for p in spec.populations])
    labels = rng.choice(len(spec.populations), size=n_events, p=freqs / freqs.sum())
    values = np.empty((n_events, m))
    for ci, p in enumerate(spec.populations):
        rows = np.flatnonzero(labels == ci)
        if rows.size == 0:
            continue
        values[rows] = rng.multivariate_normal(
            p.mean + jitter[p.name], p.covariance, size=rows.size,
            check_valid="ignore", method="eigh",
        )
    values = values * gains + shift

    sample = LabeledSample(
        sample_id=f"synth-{sample_index:03d}",
        table=EventTable(panel=spec.panel, values=values),
        labels=labels.astype(np.int64),
        class_names=spec.class_names,
    )
    return sample, SampleEffects(
        sample_index=sample_index, shift=shift, gains=gains, jitter=jitter
    )


def generate_dataset(spec):
    samples = []
    effects = []
    for i in range(spec.n_samples):
        sample, eff = generate_sample(spec, i)
        samples.append(sample)
        effects.append(eff)
    return SynthDataset(spec=spec, samples=tuple(samples), effects=tuple(effects))


# --- benchmark presets ----------------------------------------------------

def _preset_separable(n_samples, seed, events_median):
    """Well-separated populations, mild batch effect: trivially gateable."""
    eye = np.eye(4)
    return SynthDatasetSpec(
        markers=("m1", "m2", "m3", "m4"),
        populations=(
            PopulationSpec("alpha", 0.5, np.array([0.0, 0.0, 0.0, 0.0]), eye),
            PopulationSpec("beta", 0.3, np.array([10.0, 0.0, 0.0, 0.0]), eye),
            PopulationSpec("gamma", 0.2, np.array([0.0, 10.0, 0.0, 0.0]), eye),
        ),
        batch_effect=BatchEffectSpec(
            shift_scale=0.25, gain_low=0.9, gain_high=1.1, population_jitter=0.05
        ),
        n_samples=n_samples,
        events_median=events_median,
        events_dispersion=0.1,
        seed=seed,
    )


def _preset_batch_hard(n_samples, seed, events_median):
    """Cleanly separable within a sample, badly misaligned across samples.

    Class means sit 6 units apart with unit variance, while per-sample
    shifts of scale 3 move whole samples by amounts comparable to the
    class separation itself.
    """
    eye = np.eye(4)
    return SynthDatasetSpec(
        markers=("m1", "m2", "m3", "m4"),
        populations=(
            PopulationSpec("alpha", 0.45, np.array([0.0, 0.0, 0.0, 0.0]), eye),
            PopulationSpec("beta", 0.35, np.array([6.0, 0.0, 0.0, 0.0]), eye),
            PopulationSpec("gamma", 0.20, np.array([0.0, 6.0, 0.0, 0.0]), eye),
        ),
        batch_effect=BatchEffectSpec(
            shift_scale=3.0, gain_low=0.7, gain_high=1.4, population_jitter=0.3
        ),
        n_samples=n_samples,
        events_median=events_median,
        events_dispersion=0.1,
        seed=seed,
    )


def _preset_rare_class(n_samples, seed, events_median):
    """Binary data with a 0.1% minority class and a mild batch effect."""
    eye = np.eye(4)
    return SynthDatasetSpec(
        markers=("m1", "m2", "m3", "m4"),
        populations=(
            PopulationSpec("bulk", 0.999, np.array([0.0, 0.0, 0.0, 0.0]), eye),
            PopulationSpec("rare", 0.001, np.array([8.0, 0.0, 0.0, 0.0]), eye),
        ),
        batch_effect=BatchEffectSpec(
            shift_scale=0.5, gain_low=0.9, gain_high=1.1, population_jitter=0.1
        ),
        n_samples=n_samples,
        events_median=events_median,
        events_dispersion=0.1,
        seed=seed,
    )


_PRESETS = {
    "separable": _preset_separable,
    "batch_hard": _preset_batch_hard,
    "rare_class": _preset_rare_class,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def benchmark_preset(name, n_samples=20, seed=0, events_median=2000.0):
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}, choose from {PRESET_NAMES}")
    return _PRESETS[name](n_samples=n_samples, seed=seed, events_median=events_median)


# --- plain-text spec files ------------------------------------------------
#
# INI layout:
#   [dataset]     markers, n_samples, events_median, events_dispersion, seed
#   [batch_effect] shift_scale, gain_low, gain_high, population_jitter
#   [population <name>] frequency, mean, covariance
#
# mean is a whitespace-separated vector; covariance is one of
#   eye <s>          -> s * identity
#   diag <d1 .. dM>  -> diagonal
#   full <M*M vals>  -> row-major matrix

def _format_floats(arr):
    return " ".join(repr(float(v)) for v in np.asarray(arr).ravel())


def save_spec(path, spec):
    cp = configparser.ConfigParser()
    cp["dataset"] = {
        "markers": " ".join(spec.markers),
        "n_samples": str(spec.n_samples),
        "events_median": repr(spec.events_median),
        "events_dispersion": repr(spec.events_dispersion),
        "seed": str(spec.seed),
    }
    eff = spec.batch_effect
    cp["batch_effect"] = {
        "shift_scale": repr(eff.shift_scale),
        "gain_low": repr(eff.gain_low),
        "gain_high": repr(eff.gain_high),
        "population_jitter": repr(eff.population_jitter),
    }
    for p in spec.populations:
        cp[f"population {p.name}"] = {
            "frequency": repr(p.frequency),
            "mean": _format_floats(p.mean),
            "covariance": "full " + _format_floats(p.covariance),
        }
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def _parse_covariance(text, m, name):
    parts = text.split()
    if not parts:
        raise ConfigError(f"population {name!r}: empty covariance")
    kind, values = parts[0], parts[1:]
    try:
        floats = [float(v) for v in values]
    except ValueError as err:
        raise ConfigError(f"population {name!r}: bad covariance value: {err}") from None
    if kind == "eye":
        if len(floats) != 1:
            raise ConfigError(f"population {name!r}: 'eye' takes one scale value")
        return floats[0] * np.eye(m)
    if kind == "diag":
        if len(floats) != m:
            raise ConfigError(f"population {name!r}: 'diag' needs {m} values")
        return np.diag(floats)
    if kind == "full":
        if len(floats) != m * m:
            raise ConfigError(f"population {name!r}: 'full' needs {m * m} values")
        return np.array(floats).reshape(m, m)
    raise ConfigError(
        f"population {name!r}: unknown covariance form {kind!r} "
        f"(expected eye, diag or full)"
    )


def load_spec(path):
    cp = configparser.ConfigParser()
    read = cp.read(path, encoding="utf-8")
    if not read:
        raise DataError(f"cannot read spec file {path}")
    try:
        ds = cp["dataset"]
        markers = tuple(ds["markers"].split())
        eff_section = cp["batch_effect"] if cp.has_section("batch_effect") else {}
        effect = BatchEffectSpec(
            shift_scale=float(eff_section.get("shift_scale", 0.0)),
            gain_low=float(eff_section.get("gain_low", 1.0)),
            gain_high=float(eff_section.get("gain_high", 1.0)),
            population_jitter=float(eff_section.get("population_jitter", 0.0)),
        )
        populations = []
        for section in cp.sections():
            if not section.startswith("population "):
                continue
            name = section[len("population "):]
            body = cp[section]
            populations.append(
                PopulationSpec(
                    name=name,
                    frequency=float(body["frequency"]),
                    mean=np.array([float(v) for v in body["mean"].split()]),
                    covariance=_parse_covariance(
                        body["covariance"], len(markers), name
                    ),
                )
            )
        return SynthDatasetSpec(
            markers=markers,
            populations=tuple(populations),
            batch_effect=effect,
            n_samples=int(ds.get("n_samples", 1)),
            events_median=float(ds.get("events_median", 2000.0)),
            events_dispersion=float(ds.get("events_dispersion", 0.0)),
            seed=int(ds.get("seed", 0)),
        )
    except KeyError as err:
        raise DataError(f"spec file {path} is missing required key {err}") from None
    except ValueError as err:
        raise DataError(f"spec file {path} has a bad value: {err}") from None
