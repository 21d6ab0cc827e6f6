"""CLI plumbing: config schema, exit codes, artifact emission.

Heavy end-to-end commands (fit/ablate at full budget) are covered by the
acceptance suite; here every fit runs a tiny iteration count.
"""

import json

import numpy as np
import pytest

from reliefsdf.cli import ConfigError, RunConfig, main
from reliefsdf.fields import load_field
from reliefsdf.geometry import load_obj

TINY = {
    "learning_rate": 0.05,
    "iterations": 30,
    "n_samples": 1024,
    "batch_size": 128,
    "camera_resolution": 64,
    "pixel_scale": 64.0,
    "map_resolution": 16,
    "extraction_resolution": 24,
    "metric_points": 1000,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


class TestRunConfig:
    def test_roundtrip(self):
        cfg = RunConfig(iterations=12, seed=42)
        assert RunConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys: bogus"):
            RunConfig.from_json('{"bogus": 1}')

    def test_non_object_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_json("[1, 2]")

    def test_invalid_json_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_json("{nope}")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_json('{"iterations": 0}')


class TestFixturesCommand:
    def test_writes_six_watertight_meshes(self, tmp_path):
        out = tmp_path / "fx"
        assert main(["fixtures", "--out", str(out)]) == 0
        objs = sorted(p.name for p in out.glob("*.obj"))
        assert len(objs) == 6
        for p in out.glob("*.obj"):
            assert load_obj(p).is_edge_manifold()

    def test_uncreatable_out_dir(self, tmp_path):
        # a path component that is a regular file; mkdir cannot succeed
        # (works even as root, unlike chmod-based read-only directories)
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["fixtures", "--out", str(blocker / "sub")]) == 2


class TestFitExtractEval:
    @pytest.fixture(scope="class")
    def fit_dir(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("fit")
        cfg = out / "config.json"
        cfg.write_text(json.dumps(TINY))
        rc = main(["fit", "sphere", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        return out

    def test_fit_artifacts(self, fit_dir):
        assert (fit_dir / "field.d2im").is_file()
        csv = (fit_dir / "loss.csv").read_text()
        assert csv.startswith("iteration,l_base,l_sdf,l_lap,total")
        assert len(csv.strip().split("\n")) == TINY["iterations"] + 1
        load_field(fit_dir / "field.d2im")  # parses back

    def test_extract_from_field(self, fit_dir, tmp_path, tiny_config):
        out = tmp_path / "ex"
        rc = main(["extract", str(fit_dir / "field.d2im"),
                   "--config", tiny_config, "--out", str(out)])
        assert rc == 0
        mesh = load_obj(out / "extracted.obj")
        assert len(mesh.triangles) > 0

    def test_extract_missing_field(self, tmp_path):
        assert main(["extract", str(tmp_path / "nope.d2im"), "--out", str(tmp_path)]) == 2

    def test_extract_corrupt_field(self, tmp_path):
        bad = tmp_path / "bad.d2im"
        bad.write_bytes(b"XXXX" + b"\0" * 32)
        assert main(["extract", str(bad), "--out", str(tmp_path)]) == 2

    def test_eval_same_mesh(self, tmp_path, tiny_config):
        fx = tmp_path / "fx"
        main(["fixtures", "--out", str(fx)])
        out = tmp_path / "ev"
        cube = str(fx / "cube.obj")
        rc = main(["eval", cube, cube, "--config", tiny_config, "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["cd"] < 0.05
        assert doc["iou"] == 1.0

    def test_eval_missing_mesh(self, tmp_path):
        assert main(["eval", "nope.obj", "nope.obj", "--out", str(tmp_path)]) == 2

    def test_fit_unknown_shape(self, tmp_path):
        assert main(["fit", "not-a-fixture.obj", "--out", str(tmp_path)]) == 2


class TestExtractEmptyField:
    def test_all_positive_field_warns_exit_zero(self, tmp_path, capsys):
        from reliefsdf.fields import BaseField, DisentangledField, DisplacementMap, save_field
        from reliefsdf.geometry import Camera

        cam = Camera.front_on(pixel_scale=32.0, resolution=(32, 32))
        df = DisentangledField(
            base=BaseField.constant(1.0, 4),
            front=DisplacementMap.zeros(cam, 8),
            back=DisplacementMap.zeros(cam, 8),
            camera=cam,
        )
        path = tmp_path / "pos.d2im"
        save_field(path, df)
        rc = main(["extract", str(path), "-n", "16", "--out", str(tmp_path)])
        assert rc == 0
        assert "no zero crossing" in capsys.readouterr().err


class TestTransferCommand:
    def test_transfer_runs(self, tmp_path, tiny_config):
        fit_out = tmp_path / "f"
        rc = main(["fit", "cube", "--config", tiny_config, "--out", str(fit_out)])
        assert rc == 0
        boxes = tmp_path / "boxes.json"
        boxes.write_text(json.dumps({
            "parts": [{"name": "all",
                       "target": {"min": [-0.3, -0.3, -0.3], "max": [0.3, 0.3, 0.3]},
                       "source": {"min": [-0.3, -0.3, -0.3], "max": [0.3, 0.3, 0.3]}}]
        }))
        out = tmp_path / "t"
        field = str(fit_out / "field.d2im")
        rc = main(["transfer", field, field, str(boxes),
                   "--config", tiny_config, "--out", str(out)])
        assert rc == 0
        assert (out / "transferred.obj").is_file()

    def test_bad_boxes_json(self, tmp_path, tiny_config):
        fit_out = tmp_path / "f"
        main(["fit", "cube", "--config", tiny_config, "--out", str(fit_out)])
        boxes = tmp_path / "boxes.json"
        boxes.write_text("{\"parts\": [{}]}")
        field = str(fit_out / "field.d2im")
        assert main(["transfer", field, field, str(boxes), "--out", str(tmp_path)]) == 2


class TestAblateCommand:
    def test_tiny_ablation_csv(self, tmp_path, tiny_config):
        out = tmp_path / "ab"
        rc = main(["ablate", "cube", "--config", tiny_config, "--out", str(out)])
        assert rc == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert lines[0] == "arm,CD,IoU,ECD-3D,ECD-2D"
        assert [ln.split(",")[0] for ln in lines[1:]] == [
            "full", "no_lap", "no_back", "baseline"
        ]


class TestSeedOverride:
    def test_seed_flag_changes_fit(self, tmp_path, tiny_config):
        a = tmp_path / "a"
        b = tmp_path / "b"
        main(["fit", "cube", "--config", tiny_config, "--seed", "1", "--out", str(a)])
        main(["fit", "cube", "--config", tiny_config, "--seed", "2", "--out", str(b)])
        fa = load_field(a / "field.d2im")
        fb = load_field(b / "field.d2im")
        assert not np.array_equal(fa.base.values, fb.base.values)
