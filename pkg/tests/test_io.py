import json

import numpy as np
import pytest

from smoothot.core import GroupedDataset
from smoothot.errors import FormatError, ValidationError, VersionError
from smoothot.fairness import ClassifierSpec
from smoothot.io import (
    FORMAT_VERSION,
    load_classifier,
    load_model,
    read_csv,
    read_json,
    read_predictions,
    save_classifier,
    save_model,
    write_csv,
    write_json,
)
from smoothot.smooth_map import transform
from smoothot.synthetic import evaluation_grid


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestCsv:
    def test_grouped(self, tmp_path):
        ds = read_csv(write(tmp_path / "a.csv", "x1,x2,s\n0,1,0\n2,3,1\n4,5,0\n"), sensitive_col="s")
        assert isinstance(ds, GroupedDataset)
        assert ds.features.points.shape == (3, 2)
        np.testing.assert_array_equal(ds.sensitive, [0, 1, 0])

    def test_plain(self, tmp_path):
        ds = read_csv(write(tmp_path / "a.csv", "a,b\n1.5,2\n"))
        np.testing.assert_array_equal(ds.points, [[1.5, 2.0]])

    def test_sensitive_out_of_range(self, tmp_path):
        with pytest.raises(ValidationError, match="row 3"):
            read_csv(write(tmp_path / "a.csv", "x,s\n0,0\n1,2\n"), sensitive_col="s")

    def test_empty(self, tmp_path):
        with pytest.raises(ValidationError, match="empty"):
            read_csv(write(tmp_path / "a.csv", ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(ValidationError):
            read_csv(write(tmp_path / "a.csv", "x,y\n"))

    def test_non_numeric_reports_position(self, tmp_path):
        with pytest.raises(ValidationError, match=r"row 3, column 'y'"):
            read_csv(write(tmp_path / "a.csv", "x,y\n0,1\n2,abc\n"))

    def test_missing_sensitive_column(self, tmp_path):
        with pytest.raises(ValidationError, match="missing"):
            read_csv(write(tmp_path / "a.csv", "x,y\n0,1\n"), sensitive_col="s")

    def test_round_trip_is_exact(self, tmp_path):
        pts = np.random.default_rng(0).normal(size=(50, 3)) * 1e3
        write_csv(tmp_path / "p.csv", pts)
        np.testing.assert_array_equal(read_csv(tmp_path / "p.csv").points, pts)

    def test_predictions(self, tmp_path):
        path = write(tmp_path / "p.csv", "h_original,h_counterfactual\n0,1\n1,1\n")
        h0, h1 = read_predictions(path, m=2)
        np.testing.assert_array_equal(h0, [0, 1])
        np.testing.assert_array_equal(h1, [1, 1])
        with pytest.raises(ValidationError):
            read_predictions(path, m=3)


class TestJson:
    def test_version_check(self, tmp_path):
        write_json(tmp_path / "d.json", {"a": 1}, "report")
        doc = json.loads((tmp_path / "d.json").read_text())
        doc["format_version"] = FORMAT_VERSION + 1
        (tmp_path / "d.json").write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            read_json(tmp_path / "d.json")

    def test_wrong_kind(self, tmp_path):
        write_json(tmp_path / "d.json", {"a": 1}, "report")
        with pytest.raises(FormatError):
            read_json(tmp_path / "d.json", "model")

    def test_non_finite_becomes_null(self, tmp_path):
        write_json(tmp_path / "d.json", {"a": float("nan"), "b": np.float64(2.5)}, "report")
        doc = read_json(tmp_path / "d.json")
        assert doc["a"] is None and doc["b"] == 2.5


class TestModelFiles:
    def test_round_trip_bit_exact(self, tmp_path, small_maps):
        fmap = small_maps[1]
        save_model(fmap, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        for name in ("sources", "targets", "psi"):
            np.testing.assert_array_equal(getattr(back, name), getattr(fmap, name))
        assert (back.eps0, back.smoothing) == (fmap.eps0, fmap.smoothing)
        grid = evaluation_grid([-1.5, -1.5], [2.0, 2.0], 10)
        np.testing.assert_array_equal(transform(back, grid).points, transform(fmap, grid).points)

    def test_save_is_deterministic(self, tmp_path, small_maps):
        save_model(small_maps[0], tmp_path / "a.json")
        save_model(small_maps[0], tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_truncated(self, tmp_path, small_maps):
        save_model(small_maps[0], tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(text[: len(text) // 2])
        with pytest.raises(FormatError):
            load_model(tmp_path / "m.json")

    def test_missing_field(self, tmp_path, small_maps):
        write_json(tmp_path / "m.json", {"sources": [[0.0]]}, "model")
        with pytest.raises(FormatError):
            load_model(tmp_path / "m.json")


class TestClassifierFiles:
    def test_round_trip(self, tmp_path):
        clf = ClassifierSpec.linear([0.25, -1.0], 0.1, [1e-3, 2.0], -0.7)
        save_classifier(clf, tmp_path / "c.json")
        back = load_classifier(tmp_path / "c.json")
        pts = np.random.default_rng(3).normal(size=(20, 2))
        for s in (0, 1):
            np.testing.assert_array_equal(back.predict(pts, s), clf.predict(pts, s))

    def test_external_not_stored(self, tmp_path):
        with pytest.raises(ValidationError):
            save_classifier(ClassifierSpec.external([0], [1]), tmp_path / "c.json")
