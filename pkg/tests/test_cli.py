"""Command line behavior: artifact layout, exit codes, determinism.

Commands run in-process through main() so coverage tools see them; the
entry point itself is exercised once through the interpreter.
"""
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from aublend import cli
from aublend.errors import ConfigError, FormatError, ValidationError
from aublend.formats import load_bundle, load_obj, load_offsets, save_offsets
from aublend.mesh import AUActivation, OffsetSequence, compose, compose_animated
from aublend.service import emotion_offset
from aublend.facs import get_registry
from aublend.synth import with_grid_topology

V = 64


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    assert cli.main(["synth", "10", "--seed", "4", "--vertex-count", str(V),
                     "--poses", "3", "--out", str(root / "ds")]) == 0
    rng = np.random.default_rng(9)
    offsets = rng.normal(scale=1e-3, size=(4, V, 3)).astype(np.float32)
    save_offsets(OffsetSequence(offsets.astype(np.float64), 30.0),
                 root / "ds" / "hello.auos")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "seed": 1, "token_dim": 8,
                               "codebook_size": 8, "layers": 1, "heads": 2,
                               "mlp_ratio": 2, "tcn_channels": 8, "style_dim": 8}))
    cfg2 = root / "cfg2.json"
    cfg2.write_text(json.dumps({"epochs": 2, "seed": 2}))
    assert cli.main(["train", "codebook", "--data", str(root / "ds"),
                     "--out", str(root / "models"), "--config", str(cfg)]) == 0
    assert cli.main(["train", "styleblend", "--data", str(root / "ds"),
                     "--out", str(root / "models"), "--config", str(cfg2)]) == 0
    return root


class TestSynth:

    def test_dataset_layout(self, workspace):
        ds = workspace / "ds"
        bundles = sorted(p.name for p in ds.glob("*.aubd"))
        assert len(bundles) == 10
        assert (ds / "split.txt").is_file()
        assert (ds / "manifest.txt").is_file()

    def test_split_counts(self, workspace):
        rows = (workspace / "ds" / "split.txt").read_text().splitlines()
        parts = [r.split("\t")[0] for r in rows]
        assert (parts.count("train"), parts.count("val"), parts.count("test")) == (8, 1, 1)

    def test_manifest_covers_bundles_and_split(self, workspace):
        rows = (workspace / "ds" / "manifest.txt").read_text().splitlines()
        names = [r.split("\t")[0] for r in rows]
        assert "split.txt" in names
        assert sum(n.endswith(".aubd") for n in names) == 10
        for row in rows:
            name, digest = row.split("\t")
            assert cli._sha256(workspace / "ds" / name) == digest

    def test_same_seed_same_manifest(self, workspace, tmp_path):
        assert cli.main(["synth", "10", "--seed", "4", "--vertex-count", str(V),
                         "--poses", "3", "--out", str(tmp_path / "again")]) == 0
        assert (tmp_path / "again" / "manifest.txt").read_bytes() == \
               (workspace / "ds" / "manifest.txt").read_bytes()

    def test_different_seed_differs(self, workspace, tmp_path):
        assert cli.main(["synth", "10", "--seed", "5", "--vertex-count", str(V),
                         "--poses", "3", "--out", str(tmp_path / "other")]) == 0
        assert (tmp_path / "other" / "manifest.txt").read_bytes() != \
               (workspace / "ds" / "manifest.txt").read_bytes()


class TestDatasetDir:

    def test_roundtrip(self, workspace):
        ds = cli.read_dataset_dir(workspace / "ds")
        assert len(ds.bundles) == 10
        assert len(ds.split.train) == 8
        for bundle in ds.bundles.values():
            assert bundle.template.topology is not None
            assert len(bundle.annotated_poses) == 3

    def test_missing_split_file(self, tmp_path):
        with pytest.raises(FormatError, match="split.txt"):
            cli.read_dataset_dir(tmp_path)

    def test_split_names_missing_bundle(self, tmp_path):
        (tmp_path / "split.txt").write_text("train\tghost\n")
        with pytest.raises(FormatError, match="ghost"):
            cli.read_dataset_dir(tmp_path)

    def test_malformed_split_row(self, tmp_path):
        (tmp_path / "split.txt").write_text("train identity_0000\n")
        with pytest.raises(FormatError, match="expected"):
            cli.read_dataset_dir(tmp_path)

    def test_unknown_split_name(self, tmp_path):
        (tmp_path / "split.txt").write_text("holdout\tx\n")
        with pytest.raises(FormatError, match="holdout"):
            cli.read_dataset_dir(tmp_path)


class TestActivationGrammar:

    def test_inline_tokens(self):
        act = cli.parse_activation_text("AU12=1.0, AU4=0.25")
        assert act.weights == {12: 1.0, 4: 0.25}

    def test_newline_separated(self):
        act = cli.parse_activation_text("AU1=0.5\nAU2=0.75\n")
        assert act.weights == {1: 0.5, 2: 0.75}

    def test_empty_text_is_neutral(self):
        assert cli.parse_activation_text("") .weights == {}
        assert cli.parse_activation_text(" \n ").weights == {}

    def test_garbage_token_listed(self):
        with pytest.raises(ValidationError, match="smile"):
            cli.parse_activation_text("AU12=1.0, smile")

    def test_duplicate_au_rejected(self):
        with pytest.raises(ValidationError, match="twice"):
            cli.parse_activation_text("AU12=0.2,AU12=0.3")

    def test_out_of_range_weight_rejected(self):
        with pytest.raises(ValidationError):
            cli.parse_activation_text("AU12=1.5")


class TestTrainSettings:

    def test_defaults_per_stage(self):
        _, cfg = cli.load_train_settings(None, "codebook")
        assert (cfg.epochs, cfg.lr) == (200, 1e-4)
        _, cfg = cli.load_train_settings(None, "styleblend")
        assert (cfg.epochs, cfg.lr) == (400, 1e-5)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"vertex_count": 64}')
        with pytest.raises(ConfigError, match="comes from the dataset"):
            cli.load_train_settings(str(p), "codebook")

    def test_styleblend_rejects_architecture_keys(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"token_dim": 8}')
        with pytest.raises(ConfigError, match="inherits"):
            cli.load_train_settings(str(p), "styleblend")

    def test_dilations_list_becomes_tuple(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"dilations": [1, 2]}')
        hp_kwargs, _ = cli.load_train_settings(str(p), "codebook")
        assert hp_kwargs["dilations"] == (1, 2)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            cli.load_train_settings(str(p), "codebook")


class TestCompose:

    def test_empty_activation_writes_template(self, workspace, tmp_path):
        out = tmp_path / "t.obj"
        assert cli.main(["compose", "--data", str(workspace / "ds"),
                         "--identity", "identity_0000", "--out", str(out)]) == 0
        bundle = with_grid_topology(load_bundle(workspace / "ds" / "identity_0000.aubd"))
        mesh = load_obj(out)
        assert mesh.positions.shape == (V, 3)
        # template was written through the same 9-digit formatter
        assert np.allclose(mesh.positions, bundle.template.positions, atol=1e-8)
        assert np.array_equal(mesh.topology, bundle.template.topology)

    def test_matches_library_compose(self, workspace, tmp_path):
        out = tmp_path / "s.obj"
        assert cli.main(["compose", "--data", str(workspace / "ds"),
                         "--identity", "identity_0001",
                         "--activation", "AU12=1.0,AU4=0.3",
                         "--out", str(out)]) == 0
        bundle = with_grid_topology(load_bundle(workspace / "ds" / "identity_0001.aubd"))
        expected = compose(bundle, AUActivation({12: 1.0, 4: 0.3}))
        got = load_obj(out)
        assert np.allclose(got.positions, expected.positions, atol=1e-8)

    def test_activation_file(self, workspace, tmp_path):
        f = tmp_path / "act.txt"
        f.write_text("AU12=1.0\nAU4=0.3\n")
        a, b = tmp_path / "a.obj", tmp_path / "b.obj"
        assert cli.main(["compose", "--data", str(workspace / "ds"),
                         "--identity", "identity_0001",
                         "--activation-file", str(f), "--out", str(a)]) == 0
        assert cli.main(["compose", "--data", str(workspace / "ds"),
                         "--identity", "identity_0001",
                         "--activation", "AU12=1.0,AU4=0.3", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestPredict:

    def test_artifacts_and_determinism(self, workspace, tmp_path):
        a, b = tmp_path / "p1", tmp_path / "p2"
        for out in (a, b):
            assert cli.main(["predict", "--data", str(workspace / "ds"),
                             "--models", str(workspace / "models"),
                             "--out", str(out)]) == 0
        assert len(list(a.glob("*_pred.aubd"))) == 10
        assert (a / "indices.txt").read_bytes() == (b / "indices.txt").read_bytes()
        assert (a / "manifest.txt").read_bytes() == (b / "manifest.txt").read_bytes()

    def test_single_identity_filter(self, workspace, tmp_path):
        out = tmp_path / "one"
        assert cli.main(["predict", "--data", str(workspace / "ds"),
                         "--models", str(workspace / "models"),
                         "--identity", "identity_0003", "--out", str(out)]) == 0
        assert [p.name for p in out.glob("*_pred.aubd")] == ["identity_0003_pred.aubd"]

    def test_unknown_identity(self, workspace, tmp_path, capsys):
        rc = cli.main(["predict", "--data", str(workspace / "ds"),
                       "--models", str(workspace / "models"),
                       "--identity", "nobody", "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "nobody" in capsys.readouterr().err

    def test_predicted_bundle_loads(self, workspace, tmp_path):
        out = tmp_path / "p"
        cli.main(["predict", "--data", str(workspace / "ds"),
                  "--models", str(workspace / "models"),
                  "--identity", "identity_0000", "--out", str(out)])
        bundle = load_bundle(out / "identity_0000_pred.aubd")
        assert bundle.identity_id == "identity_0000"
        assert len(bundle.annotated_poses) == 0


class TestAnimate:

    def test_frames_match_library(self, workspace, tmp_path):
        out = tmp_path / "anim"
        assert cli.main(["animate", "--data", str(workspace / "ds"),
                         "--identity", "identity_0002", "--speech", "hello",
                         "--emotion", "happiness", "--intensity", "0.5",
                         "--out", str(out)]) == 0
        files = sorted(out.glob("frame_*.obj"))
        assert len(files) == 4
        bundle = with_grid_topology(load_bundle(workspace / "ds" / "identity_0002.aubd"))
        offset = emotion_offset(bundle, get_registry(), "happiness", 0.5)
        speech = load_offsets(workspace / "ds" / "hello.auos")
        frames = compose_animated(bundle, speech,
                                  OffsetSequence(offset[None, :, :], speech.frame_rate))
        for f, expected in zip(files, frames):
            assert np.allclose(load_obj(f).positions, expected.positions, atol=1e-8)

    def test_zero_intensity_is_speech_only(self, workspace, tmp_path):
        out = tmp_path / "anim0"
        assert cli.main(["animate", "--data", str(workspace / "ds"),
                         "--identity", "identity_0002", "--speech", "hello",
                         "--emotion", "anger", "--intensity", "0.0",
                         "--out", str(out)]) == 0
        bundle = load_bundle(workspace / "ds" / "identity_0002.aubd")
        speech = load_offsets(workspace / "ds" / "hello.auos")
        for t, f in enumerate(sorted(out.glob("frame_*.obj"))):
            expected = bundle.template.positions + speech.offsets[t]
            assert np.allclose(load_obj(f).positions, expected, atol=1e-8)

    def test_unknown_speech(self, workspace, tmp_path, capsys):
        rc = cli.main(["animate", "--data", str(workspace / "ds"),
                       "--identity", "identity_0002", "--speech", "mystery",
                       "--emotion", "happiness", "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_bad_emotion(self, workspace, tmp_path, capsys):
        rc = cli.main(["animate", "--data", str(workspace / "ds"),
                       "--identity", "identity_0002", "--speech", "hello",
                       "--emotion", "joyful", "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "joyful" in capsys.readouterr().err


class TestEval:

    def test_oracle_reconstruction_is_exact(self, workspace, tmp_path):
        report = tmp_path / "r.txt"
        assert cli.main(["eval", "--data", str(workspace / "ds"), "--oracle",
                         "--out", str(report)]) == 0
        rows = dict(line.split("\t") for line in report.read_text().splitlines())
        assert rows["predictor"] == "oracle"
        assert rows["mse_single"] == "0"
        assert rows["mse_multi"] == "0"
        assert rows["lve"] == "0"

    def test_model_report_rows(self, workspace, tmp_path):
        report = tmp_path / "r.txt"
        assert cli.main(["eval", "--data", str(workspace / "ds"),
                         "--models", str(workspace / "models"),
                         "--out", str(report)]) == 0
        rows = dict(line.split("\t") for line in report.read_text().splitlines())
        assert rows["predictor"] == "model"
        assert float(rows["mse_single"]) > 0.0
        assert "vlve" in rows and "fdd" in rows

    def test_rerun_writes_identical_report(self, workspace, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        for out in (a, b):
            assert cli.main(["eval", "--data", str(workspace / "ds"),
                             "--models", str(workspace / "models"),
                             "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_needs_predictor_choice(self, workspace, tmp_path, capsys):
        rc = cli.main(["eval", "--data", str(workspace / "ds"),
                       "--out", str(tmp_path / "r.txt")])
        assert rc == 1
        assert "--oracle" in capsys.readouterr().err


class TestExportAugment:

    def test_layout_and_labels(self, workspace, tmp_path):
        out = tmp_path / "aug"
        assert cli.main(["export-augment", "--data", str(workspace / "ds"),
                         "--per-identity", "2", "--seed", "3",
                         "--out", str(out)]) == 0
        rows = (out / "manifest.txt").read_text().splitlines()
        assert len(rows) == 20
        for row in rows:
            ident, name, bits = row.split("\t")
            assert (out / name).is_file()
            assert len(bits) == 32 and set(bits) <= {"0", "1"}

    def test_deterministic(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert cli.main(["export-augment", "--data", str(workspace / "ds"),
                             "--per-identity", "2", "--seed", "3",
                             "--out", str(out)]) == 0
        assert (a / "manifest.txt").read_bytes() == (b / "manifest.txt").read_bytes()


class TestExitCodes:

    def test_no_command_is_usage_error(self):
        assert cli.main([]) == 1

    def test_help_exits_clean(self, capsys):
        assert cli.main(["--help"]) == 0

    def test_missing_required_argument(self):
        assert cli.main(["synth", "10"]) == 1

    def test_missing_data_dir(self, tmp_path, capsys):
        rc = cli.main(["train", "codebook", "--data", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "m")])
        assert rc == 2

    def test_divergence_maps_to_runtime_failure(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"epochs": 2, "lr": 1e200, "token_dim": 8,
                                   "codebook_size": 8, "layers": 1, "heads": 2,
                                   "mlp_ratio": 2, "tcn_channels": 8, "style_dim": 8}))
        with np.errstate(all="ignore"):
            rc = cli.main(["train", "codebook", "--data", str(workspace / "ds"),
                           "--out", str(tmp_path / "m"), "--config", str(cfg)])
        assert rc == 3
        assert "epoch" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "aublend.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "synth" in proc.stdout
