"""Tables, CSV round-trips, transforms, and dataset statistics."""

import numpy as np
import pytest

from gatenet.errors import ConfigError, DataError
from gatenet.io import (
    EventTable,
    LabeledSample,
    MarkerPanel,
    TransformSpec,
    apply_transform,
    dataset_stats,
    fit_transform,
    load_sample_csv,
    save_sample_csv,
)


def make_sample(values, labels=None, sample_id="s1", markers=None, class_names=None):
    values = np.asarray(values, dtype=np.float64)
    markers = markers or tuple(f"m{i}" for i in range(values.shape[1]))
    return LabeledSample(
        sample_id=sample_id,
        table=EventTable(MarkerPanel(markers), values),
        labels=labels,
        class_names=class_names,
    )


class TestPanelAndTable:
    def test_duplicate_marker_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            MarkerPanel(("CD4", "CD4"))

    def test_empty_panel_rejected(self):
        with pytest.raises(DataError, match="empty"):
            MarkerPanel(())

    def test_index_of_unknown_marker(self):
        panel = MarkerPanel(("CD4", "CD8"))
        assert panel.index_of("CD8") == 1
        with pytest.raises(DataError, match="CD3"):
            panel.index_of("CD3")

    def test_column_count_mismatch(self):
        with pytest.raises(DataError, match="columns"):
            EventTable(MarkerPanel(("a", "b")), np.zeros((3, 3)))

    def test_label_length_mismatch(self):
        with pytest.raises(DataError, match="labels"):
            make_sample(np.zeros((3, 2)), labels=[0, 1])

    def test_label_out_of_range(self):
        with pytest.raises(DataError, match="out of range"):
            make_sample(np.zeros((2, 2)), labels=[0, 2], class_names=("x", "y"))


class TestCsvRoundTrip:
    def test_lossless_with_labels(self, tmp_path):
        rng = np.random.default_rng(30)
        values = np.concatenate(
            [
                rng.normal(scale=1e6, size=(5, 3)),
                [[1 / 3, 2 / 3, 1e-300], [np.pi, -0.0, 12345.6789]],
            ]
        )
        sample = make_sample(values, labels=[0, 1, 2, 0, 1, 2, 0])
        path = tmp_path / "roundtrip.csv"
        save_sample_csv(path, sample)
        loaded = load_sample_csv(path)
        assert loaded.table.panel.markers == sample.table.panel.markers
        assert np.array_equal(loaded.table.values, values)
        assert np.array_equal(loaded.labels, sample.labels)
        assert loaded.sample_id == "roundtrip"

    def test_unlabeled_file(self, tmp_path):
        sample = make_sample([[1.0, 2.0]])
        path = tmp_path / "plain.csv"
        save_sample_csv(path, sample)
        loaded = load_sample_csv(path)
        assert loaded.labels is None
        assert np.array_equal(loaded.table.values, [[1.0, 2.0]])

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("m0,m1\n1.0,2.0\n3.0,oops\n")
        with pytest.raises(DataError, match=r"row 3, column 'm1'"):
            load_sample_csv(path)

    def test_bad_label_cell(self, tmp_path):
        path = tmp_path / "bad_label.csv"
        path.write_text("m0,label\n1.0,zero\n")
        with pytest.raises(DataError, match="label"):
            load_sample_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("m0,m1\n1.0\n")
        with pytest.raises(DataError, match="row 2"):
            load_sample_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_sample_csv(path)


class TestTransforms:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown transform"):
            TransformSpec(kind="logicle")

    def test_none_returns_copy(self):
        table = EventTable(MarkerPanel(("a",)), [[1.0], [2.0]])
        out = apply_transform(fit_transform(TransformSpec("none"), [table]), table)
        assert np.array_equal(out.values, table.values)
        assert out.values is not table.values

    def test_asinh_values(self):
        table = EventTable(MarkerPanel(("a",)), [[0.0], [150.0], [-150.0]])
        fitted = fit_transform(TransformSpec("asinh", cofactor=150.0), [table])
        out = apply_transform(fitted, table)
        assert out.values[0, 0] == 0.0
        assert np.allclose(out.values[:, 0], np.arcsinh(table.values[:, 0] / 150.0))

    def test_asinh_needs_positive_cofactor(self):
        with pytest.raises(ConfigError, match="cofactor"):
            TransformSpec("asinh", cofactor=0.0)

    def test_zscore_standardizes_training_pool(self):
        rng = np.random.default_rng(31)
        t1 = EventTable(MarkerPanel(("a", "b")), rng.normal(3.0, 2.0, size=(50, 2)))
        t2 = EventTable(MarkerPanel(("a", "b")), rng.normal(-1.0, 0.5, size=(70, 2)))
        fitted = fit_transform(TransformSpec("zscore"), [t1, t2])
        pooled = np.concatenate(
            [apply_transform(fitted, t1).values, apply_transform(fitted, t2).values]
        )
        assert np.allclose(pooled.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(pooled.std(axis=0), 1.0, atol=1e-12)

    def test_zscore_applies_training_stats_to_new_data(self):
        train = EventTable(MarkerPanel(("a",)), [[0.0], [2.0]])
        fitted = fit_transform(TransformSpec("zscore"), [train])
        out = apply_transform(fitted, EventTable(MarkerPanel(("a",)), [[101.0]]))
        assert np.allclose(out.values, [[(101.0 - 1.0) / 1.0]])

    def test_zscore_constant_marker_named_in_error(self):
        table = EventTable(MarkerPanel(("CD4", "CD8")), [[1.0, 7.0], [2.0, 7.0]])
        with pytest.raises(DataError, match="CD8"):
            fit_transform(TransformSpec("zscore"), [table])


class TestDatasetStats:
    def test_hand_computed_summary(self):
        s1 = make_sample(np.zeros((4, 2)), labels=[0, 0, 0, 1], class_names=("a", "b"))
        s2 = make_sample(np.zeros((6, 2)), labels=[0, 0, 1, 0, 0, 0], class_names=("a", "b"))
        stats = dataset_stats([s1, s2])
        assert stats.n_samples == 2
        assert stats.n_markers == 2
        assert stats.n_classes == 2
        assert stats.events_mean == 5.0
        assert np.isclose(stats.events_std, np.std([4, 6], ddof=1))
        assert stats.class_counts == (8, 2)
        assert stats.minority_class == 1
        expected = np.array([0.25, 1 / 6])
        assert np.isclose(stats.minority_fraction_mean, expected.mean())
        assert np.isclose(stats.minority_fraction_std, expected.std(ddof=1))

    def test_needs_labels(self):
        with pytest.raises(DataError, match="label"):
            dataset_stats([make_sample(np.zeros((2, 2)))])

    def test_needs_samples(self):
        with pytest.raises(DataError, match="empty"):
            dataset_stats([])
