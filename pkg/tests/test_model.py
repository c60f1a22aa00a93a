"""Model construction, forward invariants, and checkpoint round-trips."""

import hashlib
import zipfile

import numpy as np
import pytest

from gatenet import nn
from gatenet.errors import (
    ConfigError,
    CorruptFileError,
    EmptyContextError,
    UnsupportedFormatError,
)
from gatenet.imbalance import focal_loss
from gatenet.model import (
    BaselineConfig,
    GateNetConfig,
    forward,
    forward_baseline,
    forward_gatenet,
    init_baseline,
    init_gatenet,
    load_checkpoint,
    save_checkpoint,
)
from gatenet.nn import backward, no_grad, zero_grads

from helpers import max_rel_err

SMALL = GateNetConfig(
    n_markers=3,
    n_classes=2,
    event_filters=(6, 5, 4),
    context_filters=(5, 3),
    head_hidden=4,
    context_size=6,
)


def small_inputs(seed=0, n_batch=4, k=6, n_markers=3):
    rng = np.random.default_rng(seed)
    events = rng.normal(size=(n_batch, n_markers))
    contexts = rng.normal(size=(n_batch, k, n_markers))
    return events, contexts


def linear_size(n_out, n_in):
    return n_out * n_in + n_out


def gatenet_param_count(cfg):
    total = 0
    c_in = cfg.n_markers
    for f in cfg.event_filters:
        total += linear_size(f, c_in) + 2 * f
        c_in = f
    c_in = cfg.n_markers
    for f in cfg.context_filters:
        total += linear_size(f, c_in) + 2 * f
        c_in = f
    combined = cfg.event_filters[-1] + cfg.context_filters[-1]
    total += linear_size(cfg.head_hidden, combined) + 2 * cfg.head_hidden
    total += linear_size(cfg.n_classes, cfg.head_hidden) + 2 * cfg.n_classes
    return total


class TestInit:
    def test_deterministic_in_seed(self):
        a = init_gatenet(SMALL, seed=5)
        b = init_gatenet(SMALL, seed=5)
        for pa, pb in zip(a.params, b.params):
            assert pa.name == pb.name
            assert np.array_equal(pa.data, pb.data)
        c = init_gatenet(SMALL, seed=6)
        assert any(
            not np.array_equal(pa.data, pc.data) for pa, pc in zip(a.params, c.params)
        )

    def test_trainable_param_count(self):
        model = init_gatenet(SMALL, seed=0)
        assert model.n_trainable == gatenet_param_count(SMALL)

    def test_default_architecture_size(self):
        cfg = GateNetConfig(n_markers=12, n_classes=8)
        assert init_gatenet(cfg, seed=0).n_trainable == gatenet_param_count(cfg)

    def test_weights_respect_fan_in_bound(self):
        model = init_gatenet(SMALL, seed=1)
        w = model.named()["event.0.conv.w"]
        bound = 1.0 / np.sqrt(SMALL.n_markers)
        assert np.all(np.abs(w.data) <= bound)
        assert w.data.std() > 0

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            GateNetConfig(n_markers=0, n_classes=2)
        with pytest.raises(ConfigError):
            GateNetConfig(n_markers=3, n_classes=1)
        with pytest.raises(ConfigError):
            GateNetConfig(n_markers=3, n_classes=2, event_filters=())
        with pytest.raises(ConfigError):
            BaselineConfig(n_markers=2, n_classes=2, hidden=(0,))


class TestForward:
    def test_output_is_a_distribution(self):
        model = init_gatenet(SMALL, seed=2)
        events, contexts = small_inputs()
        probs = forward_gatenet(model, events, contexts, mode="eval")
        assert probs.data.shape == (4, 2)
        assert np.all(probs.data > 0) and np.all(probs.data < 1)
        assert np.max(np.abs(probs.data.sum(axis=1) - 1.0)) < 1e-12

    def test_eval_is_context_permutation_invariant_bitwise(self):
        model = init_gatenet(SMALL, seed=3)
        events, contexts = small_inputs(seed=1)
        rng = np.random.default_rng(9)
        shuffled = contexts[:, rng.permutation(contexts.shape[1]), :]
        a = forward_gatenet(model, events, contexts, mode="eval").data
        b = forward_gatenet(model, events, shuffled, mode="eval").data
        assert np.array_equal(a, b)

    def test_eval_is_invariant_to_context_duplication(self):
        model = init_gatenet(SMALL, seed=4)
        events, contexts = small_inputs(seed=2)
        doubled = np.concatenate([contexts, contexts], axis=1)
        a = forward_gatenet(model, events, contexts, mode="eval").data
        b = forward_gatenet(model, events, doubled, mode="eval").data
        assert np.array_equal(a, b)

    def test_eval_rows_are_independent(self):
        model = init_gatenet(SMALL, seed=5)
        events, contexts = small_inputs(seed=3)
        base = forward_gatenet(model, events, contexts, mode="eval").data
        contexts2 = contexts.copy()
        contexts2[2] = np.random.default_rng(11).normal(size=contexts2[2].shape)
        moved = forward_gatenet(model, events, contexts2, mode="eval").data
        assert np.array_equal(base[[0, 1, 3]], moved[[0, 1, 3]])
        assert not np.array_equal(base[2], moved[2])

    def test_train_mode_updates_running_stats(self):
        model = init_gatenet(SMALL, seed=6)
        events, contexts = small_inputs(seed=4)
        before = model.bn_states["event.0.bn"].running_mean.copy()
        forward_gatenet(model, events, contexts, mode="train")
        assert not np.array_equal(before, model.bn_states["event.0.bn"].running_mean)

    def test_eval_mode_leaves_running_stats_alone(self):
        model = init_gatenet(SMALL, seed=6)
        events, contexts = small_inputs(seed=4)
        before = model.bn_states["event.0.bn"].running_mean.copy()
        forward_gatenet(model, events, contexts, mode="eval")
        assert np.array_equal(before, model.bn_states["event.0.bn"].running_mean)

    def test_empty_context_rejected(self):
        model = init_gatenet(SMALL, seed=7)
        events, _ = small_inputs()
        with pytest.raises(EmptyContextError):
            forward_gatenet(model, events, np.zeros((4, 0, 3)), mode="eval")

    def test_shape_mismatch_names_expectation(self):
        model = init_gatenet(SMALL, seed=8)
        events, contexts = small_inputs()
        with pytest.raises(ValueError, match=r"expected \[B, 3\]"):
            forward_gatenet(model, events[:, :2], contexts, mode="eval")
        with pytest.raises(ValueError, match="contexts"):
            forward_gatenet(model, events, contexts[:2], mode="eval")

    def test_train_mode_needs_two_events(self):
        model = init_gatenet(SMALL, seed=9)
        events, contexts = small_inputs(n_batch=1)
        with pytest.raises(ValueError, match="N >= 2"):
            forward_gatenet(model, events, contexts, mode="train")

    def test_single_event_eval_works(self):
        model = init_gatenet(SMALL, seed=10)
        events, contexts = small_inputs(n_batch=1)
        probs = forward_gatenet(model, events, contexts, mode="eval")
        assert probs.data.shape == (1, 2)

    def test_bad_mode(self):
        model = init_gatenet(SMALL, seed=11)
        events, contexts = small_inputs()
        with pytest.raises(ConfigError, match="mode"):
            forward_gatenet(model, events, contexts, mode="predict")


class TestBaseline:
    def test_output_distribution_and_row_independence(self):
        cfg = BaselineConfig(n_markers=3, n_classes=4, hidden=(8, 6, 5, 4))
        model = init_baseline(cfg, seed=12)
        rng = np.random.default_rng(13)
        events = rng.normal(size=(6, 3))
        probs = forward_baseline(model, events, mode="eval").data
        assert probs.shape == (6, 4)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12
        solo = forward_baseline(model, events[2:3], mode="eval").data
        assert np.allclose(solo, probs[2:3], atol=1e-12)

    def test_dispatch_helper(self):
        cfg = BaselineConfig(n_markers=3, n_classes=2, hidden=(4,))
        model = init_baseline(cfg, seed=14)
        events, contexts = small_inputs()
        assert forward(model, events).data.shape == (4, 2)
        gmodel = init_gatenet(SMALL, seed=15)
        assert forward(gmodel, events, contexts).data.shape == (4, 2)
        with pytest.raises(ConfigError, match="contexts"):
            forward(gmodel, events)


class TestFullModelGradients:
    def test_backward_matches_finite_differences(self):
        cfg = GateNetConfig(
            n_markers=2,
            n_classes=2,
            event_filters=(4, 3),
            context_filters=(3, 2),
            head_hidden=3,
            context_size=4,
        )
        model = init_gatenet(cfg, seed=16)
        rng = np.random.default_rng(17)
        events = rng.normal(size=(3, 2))
        contexts = rng.normal(size=(3, 4, 2))
        labels = rng.integers(0, 2, size=3)

        def loss_tensor():
            probs = forward_gatenet(model, events, contexts, mode="eval")
            return focal_loss(probs, labels, gamma=5.0)[0]

        def loss_value():
            with no_grad():
                return loss_tensor().item()

        zero_grads(model.params)
        backward(loss_tensor())
        h = 1e-6
        worst = 0.0
        for p in model.params:
            flat = p.data.ravel()
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_value()
                flat[i] = orig - h
                fm = loss_value()
                flat[i] = orig
                num[i] = (fp - fm) / (2 * h)
            worst = max(worst, max_rel_err(p.grad.ravel(), num))
        assert worst < 1e-6, f"worst rel err {worst:.2e}"


class TestCheckpoint:
    def _trained_ish_model(self):
        model = init_gatenet(SMALL, seed=18)
        events, contexts = small_inputs(seed=5)
        for _ in range(3):
            forward_gatenet(model, events, contexts, mode="train")
        return model

    def test_round_trip_preserves_predictions_bitwise(self, tmp_path):
        model = self._trained_ish_model()
        events, contexts = small_inputs(seed=6)
        before = forward_gatenet(model, events, contexts, mode="eval").data
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, extra={"note": "round trip"})
        loaded, extra = load_checkpoint(path)
        assert extra == {"note": "round trip"}
        assert loaded.config == model.config
        after = forward_gatenet(loaded, events, contexts, mode="eval").data
        assert np.array_equal(before, after)

    def test_identical_saves_have_identical_digests(self, tmp_path):
        model = self._trained_ish_model()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, model)
        save_checkpoint(p2, model)
        d1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        d2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert d1 == d2

    def test_baseline_round_trip(self, tmp_path):
        cfg = BaselineConfig(n_markers=2, n_classes=3, hidden=(5, 4))
        model = init_baseline(cfg, seed=19)
        path = tmp_path / "baseline.ckpt"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        events = np.random.default_rng(20).normal(size=(4, 2))
        assert np.array_equal(
            forward_baseline(model, events).data, forward_baseline(loaded, events).data
        )

    def test_unknown_version_rejected(self, tmp_path):
        model = init_gatenet(SMALL, seed=21)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        with zipfile.ZipFile(path) as zf:
            names = zf.namelist()
            payloads = {n: zf.read(n) for n in names}
        payloads["meta.json"] = payloads["meta.json"].replace(
            b'"format_version": 1', b'"format_version": 99'
        )
        with zipfile.ZipFile(path, "w") as zf:
            for n in names:
                zf.writestr(n, payloads[n])
        with pytest.raises(UnsupportedFormatError, match="99"):
            load_checkpoint(path)

    def test_missing_member_rejected(self, tmp_path):
        model = init_gatenet(SMALL, seed=22)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        with zipfile.ZipFile(path) as zf:
            keep = {n: zf.read(n) for n in zf.namelist() if "head.fc2.w" not in n}
        with zipfile.ZipFile(path, "w") as zf:
            for n, payload in keep.items():
                zf.writestr(n, payload)
        with pytest.raises(CorruptFileError, match="head.fc2.w"):
            load_checkpoint(path)

    def test_not_a_zip_rejected(self, tmp_path):
        path = tmp_path / "noise.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CorruptFileError):
            load_checkpoint(path)
