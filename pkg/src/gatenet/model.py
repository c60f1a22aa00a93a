"""Context-aware gating network, its context-free baseline, and checkpoints.

The context network classifies one event at a time, but every forward
pass also sees K events drawn from the same sample. The event and the
context events run through separate stacks of pointwise convolutions
(batchnorm and ReLU after each); the context stack is average-pooled
over the K events and concatenated onto the event features before the
dense head. Because the convolutions are 1x1, a whole batch can ride
through the event stack as the length axis, and all B*K context events
through the context stack at once.

Eval-mode pooling uses exactly rounded row sums, so eval predictions
are invariant to context order at the bit level.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, CorruptFileError, EmptyContextError, UnsupportedFormatError
from .nn import BatchNormState, Param

CHECKPOINT_VERSION = 1


def _check_positive(name, value):
    if int(value) != value or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class GateNetConfig:
    n_markers: int
    n_classes: int
    event_filters: tuple = (1024, 512, 256)
    context_filters: tuple = (64, 48)
    head_hidden: int = 32
    context_size: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "event_filters", tuple(int(f) for f in self.event_filters))
        object.__setattr__(self, "context_filters", tuple(int(f) for f in self.context_filters))
        _check_positive("n_markers", self.n_markers)
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if not self.event_filters or not self.context_filters:
            raise ConfigError("filter lists must not be empty")
        for f in self.event_filters + self.context_filters:
            _check_positive("filter width", f)
        _check_positive("head_hidden", self.head_hidden)
        _check_positive("context_size", self.context_size)


@dataclass(frozen=True)
class BaselineConfig:
    n_markers: int
    n_classes: int
    hidden: tuple = (1024, 512, 256, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        _check_positive("n_markers", self.n_markers)
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if not self.hidden:
            raise ConfigError("hidden widths must not be empty")
        for h in self.hidden:
            _check_positive("hidden width", h)


@dataclass
class ModelParams:
    """Trainable parameters plus batchnorm running statistics."""

    kind: str  # "gatenet" or "baseline"
    config: object
    params: list
    bn_states: dict

    def named(self):
        return {p.name: p for p in self.params}

    @property
    def n_trainable(self):
        return sum(p.data.size for p in self.params)


def _rng_initializer(seed):
    rng = np.random.default_rng(seed)

    def init(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return init


def _zeros_initializer(shape, fan_in):
    return np.zeros(shape)


class _Builder:
    def __init__(self, init_w):
        self.init_w = init_w
        self.params = []
        self.bn_states = {}

    def linear(self, prefix, n_out, n_in):
        self.params.append(Param(f"{prefix}.w", self.init_w((n_out, n_in), n_in)))
        self.params.append(Param(f"{prefix}.b", self.init_w((n_out,), n_in)))

    def bn(self, prefix, channels):
        self.params.append(Param(f"{prefix}.gamma", np.ones(channels)))
        self.params.append(Param(f"{prefix}.beta", np.zeros(channels)))
        self.bn_states[prefix] = BatchNormState.for_channels(channels)


def _build_gatenet(config, init_w):
    b = _Builder(init_w)
    c_in = config.n_markers
    for i, f in enumerate(config.event_filters):
        b.linear(f"event.{i}.conv", f, c_in)
        b.bn(f"event.{i}.bn", f)
        c_in = f
    c_in = config.n_markers
    for i, f in enumerate(config.context_filters):
        b.linear(f"context.{i}.conv", f, c_in)
        b.bn(f"context.{i}.bn", f)
        c_in = f
    combined = config.event_filters[-1] + config.context_filters[-1]
    b.linear("head.fc1", config.head_hidden, combined)
    b.bn("head.bn1", config.head_hidden)
    b.linear("head.fc2", config.n_classes, config.head_hidden)
    b.bn("head.bn2", config.n_classes)
    return ModelParams(kind="gatenet", config=config, params=b.params, bn_states=b.bn_states)


def _build_baseline(config, init_w):
    b = _Builder(init_w)
    c_in = config.n_markers
    for i, width in enumerate(config.hidden):
        b.linear(f"mlp.{i}.fc", width, c_in)
        b.bn(f"mlp.{i}.bn", width)
        c_in = width
    b.linear("out.fc", config.n_classes, c_in)
    b.bn("out.bn", config.n_classes)
    return ModelParams(kind="baseline", config=config, params=b.params, bn_states=b.bn_states)


def init_gatenet(config, seed):
    """Fresh parameters, uniform in +-1/sqrt(fan_in), deterministic in seed."""
    return _build_gatenet(config, _rng_initializer(seed))


def init_baseline(config, seed):
    return _build_baseline(config, _rng_initializer(seed))


def _validate_mode(mode):
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


def forward_gatenet(model, events, contexts, mode="eval"):
    """Class probabilities [B, n_classes] for B events with their contexts.

    events: [B, n_markers]; contexts: [B, K, n_markers], K >= 1. Train
    mode updates batchnorm running statistics and needs B >= 2.
    """
    _validate_mode(mode)
    cfg = model.config
    events = np.asarray(events, dtype=np.float64)
    contexts = np.asarray(contexts, dtype=np.float64)
    if events.ndim != 2 or events.shape[1] != cfg.n_markers:
        raise ValueError(
            f"events: expected [B, {cfg.n_markers}], got {events.shape}"
        )
    n_batch = events.shape[0]
    if contexts.ndim != 3 or contexts.shape[0] != n_batch or contexts.shape[2] != cfg.n_markers:
        raise ValueError(
            f"contexts: expected [{n_batch}, K, {cfg.n_markers}], got {contexts.shape}"
        )
    k = contexts.shape[1]
    if k == 0:
        raise EmptyContextError("contexts have K == 0 events")
    p = model.named()
    states = model.bn_states
    exact = mode == "eval"

    def conv_bn_relu(x, prefix):
        x = nn.pointwise_conv1d(x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"])
        t = nn.batchnorm(
            nn.transpose(x),
            p[f"{prefix}.bn.gamma"],
            p[f"{prefix}.bn.beta"],
            states[f"{prefix}.bn"],
            mode,
        )
        return nn.transpose(nn.relu(t))

    x = nn.Tensor(events.T)
    for i in range(len(cfg.event_filters)):
        x = conv_bn_relu(x, f"event.{i}")

    c = nn.Tensor(contexts.reshape(n_batch * k, cfg.n_markers).T)
    for i in range(len(cfg.context_filters)):
        c = conv_bn_relu(c, f"context.{i}")
    pooled = nn.segment_mean(c, n_batch, exact=exact)

    h = nn.transpose(nn.concat([x, pooled], axis=0))
    h = nn.dense(h, p["head.fc1.w"], p["head.fc1.b"])
    h = nn.relu(nn.batchnorm(h, p["head.bn1.gamma"], p["head.bn1.beta"], states["head.bn1"], mode))
    h = nn.dense(h, p["head.fc2.w"], p["head.fc2.b"])
    h = nn.batchnorm(h, p["head.bn2.gamma"], p["head.bn2.beta"], states["head.bn2"], mode)
    return nn.softmax(h)


def forward_baseline(model, events, mode="eval"):
    """Context-free MLP on single events: [B, n_markers] -> [B, n_classes]."""
    _validate_mode(mode)
    cfg = model.config
    events = np.asarray(events, dtype=np.float64)
    if events.ndim != 2 or events.shape[1] != cfg.n_markers:
        raise ValueError(f"events: expected [B, {cfg.n_markers}], got {events.shape}")
    p = model.named()
    states = model.bn_states
    h = nn.Tensor(events)
    for i in range(len(cfg.hidden)):
        h = nn.dense(h, p[f"mlp.{i}.fc.w"], p[f"mlp.{i}.fc.b"])
        h = nn.relu(
            nn.batchnorm(h, p[f"mlp.{i}.bn.gamma"], p[f"mlp.{i}.bn.beta"], states[f"mlp.{i}.bn"], mode)
        )
    h = nn.dense(h, p["out.fc.w"], p["out.fc.b"])
    h = nn.batchnorm(h, p["out.bn.gamma"], p["out.bn.beta"], states["out.bn"], mode)
    return nn.softmax(h)


def forward(model, events, contexts=None, mode="eval"):
    """Dispatch on model kind; contexts are required only for gatenet."""
    if model.kind == "gatenet":
        if contexts is None:
            raise ConfigError("gatenet forward needs contexts")
        return forward_gatenet(model, events, contexts, mode=mode)
    return forward_baseline(model, events, mode=mode)


def _npy_bytes(arr):
    buf = io.BytesIO()
    np.lib.format.write_array(
        buf, np.ascontiguousarray(arr, dtype="<f8"), version=(1, 0)
    )
    return buf.getvalue()


def _read_npy(zf, name):
    try:
        payload = zf.read(name)
    except KeyError:
        raise CorruptFileError(f"checkpoint is missing array {name!r}") from None
    arr = np.lib.format.read_array(io.BytesIO(payload))
    return np.asarray(arr, dtype=np.float64)


def save_checkpoint(path, model, extra=None):
    """Write a self-describing archive; identical models give identical bytes."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "bn": {
            name: {"eps": st.eps, "momentum": st.momentum}
            for name, st in model.bn_states.items()
        },
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:

        def write(name, payload):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload)

        write("meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for p in model.params:
            write(f"params/{p.name}.npy", _npy_bytes(p.data))
        for name, st in model.bn_states.items():
            write(f"bn/{name}.mean.npy", _npy_bytes(st.running_mean))
            write(f"bn/{name}.var.npy", _npy_bytes(st.running_var))


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes. Returns (model, extra)."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as err:
        raise CorruptFileError(f"{path}: not a readable checkpoint: {err}") from None
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise CorruptFileError(f"{path}: checkpoint has no meta.json") from None
        except json.JSONDecodeError as err:
            raise CorruptFileError(f"{path}: meta.json is invalid: {err}") from None
        version = meta.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise UnsupportedFormatError(
                f"{path}: checkpoint format {version!r} not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        kind = meta.get("kind")
        try:
            if kind == "gatenet":
                config = GateNetConfig(**meta["config"])
                model = _build_gatenet(config, _zeros_initializer)
            elif kind == "baseline":
                config = BaselineConfig(**meta["config"])
                model = _build_baseline(config, _zeros_initializer)
            else:
                raise CorruptFileError(f"{path}: unknown model kind {kind!r}")
        except (TypeError, KeyError) as err:
            raise CorruptFileError(f"{path}: bad config block: {err}") from None

        expected = {f"params/{p.name}.npy" for p in model.params}
        expected |= {f"bn/{n}.{s}.npy" for n in model.bn_states for s in ("mean", "var")}
        expected.add("meta.json")
        actual = set(zf.namelist())
        if actual != expected:
            raise CorruptFileError(
                f"{path}: archive members do not match the declared model "
                f"(missing {sorted(expected - actual)}, unexpected {sorted(actual - expected)})"
            )

        for p in model.params:
            arr = _read_npy(zf, f"params/{p.name}.npy")
            if arr.shape != p.data.shape:
                raise CorruptFileError(
                    f"{path}: array {p.name} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr
            p.grad = np.zeros_like(arr)
        for name, st in model.bn_states.items():
            bn_meta = meta.get("bn", {}).get(name, {})
            st.eps = float(bn_meta.get("eps", st.eps))
            st.momentum = float(bn_meta.get("momentum", st.momentum))
            mean = _read_npy(zf, f"bn/{name}.mean.npy")
            var = _read_npy(zf, f"bn/{name}.var.npy")
            if mean.shape != st.running_mean.shape or var.shape != st.running_var.shape:
                raise CorruptFileError(f"{path}: batchnorm arrays for {name} have wrong shape")
            st.running_mean = mean
            st.running_var = var
    return model, meta.get("extra", {})
