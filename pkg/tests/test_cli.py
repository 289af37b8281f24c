"""CLI tests: subcommand behavior, exit codes, manifests, determinism."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from driftnet.cli import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, dispatch
from driftnet.forest import load_model
from driftnet.synth import (
    DriftEvent,
    SynthConfig,
    config_to_dict,
)

CLI_CATALOG = ("amazon_echo", "google_nest", "qrio_hub", "tp_link_camera")


def cli_config(seed: int = 6161) -> SynthConfig:
    return SynthConfig(
        n_homes=3,
        n_days=7,
        train_days=5,
        class_catalog=CLI_CATALOG,
        spatial_sigma=0.1,
        drift_events=(DriftEvent(day=5, affected_classes=("amazon_echo",), magnitude=0.8),),
        master_seed=seed,
        flows_per_home_per_day=40.0,
    )


FOREST_FLAGS = ["--trees", "8", "--max-depth", "10"]
EVAL_FLAGS = [
    "--runs", "2", "--seen", "1",
    "--window-days", "3", "--min-window-records", "1",
] + FOREST_FLAGS


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(config_to_dict(cli_config())))
    return path


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory, config_file):
    out = tmp_path_factory.mktemp("data") / "ds"
    code = dispatch(["generate", "--config", str(config_file), "--out", str(out)])
    assert code == EXIT_OK
    return out


def tree_bytes(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


class TestGenerate:
    def test_writes_homes_and_manifest(self, dataset_dir):
        names = sorted(p.name for p in dataset_dir.iterdir())
        assert names == ["h01.csv", "h02.csv", "h03.csv", "manifest.json"]
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seed"] == 6161
        assert manifest["master_seed"] == 6161
        assert set(manifest["format_versions"]) == {"flow_csv", "model", "manifest"}

    def test_regeneration_is_byte_identical(self, tmp_path, config_file, dataset_dir):
        out = tmp_path / "again"
        assert dispatch(["generate", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
        assert tree_bytes(out) == tree_bytes(dataset_dir)

    def test_seed_flag_overrides_config(self, tmp_path, config_file, dataset_dir):
        out = tmp_path / "reseeded"
        code = dispatch([
            "generate", "--config", str(config_file), "--seed", "777", "--out", str(out),
        ])
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["master_seed"] == 777
        assert (out / "h01.csv").read_bytes() != (dataset_dir / "h01.csv").read_bytes()

    def test_missing_config_file(self, tmp_path):
        code = dispatch([
            "generate", "--config", str(tmp_path / "absent.json"),
            "--out", str(tmp_path / "out"),
        ])
        assert code == EXIT_DATA

    def test_malformed_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert dispatch(["generate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
        unknown = tmp_path / "unknown.json"
        unknown.write_text(json.dumps({"n_homse": 3}))
        assert dispatch(["generate", "--config", str(unknown), "--out", str(tmp_path / "o")]) == EXIT_DATA


class TestTrain:
    def test_global_mode(self, tmp_path, dataset_dir):
        out = tmp_path / "models"
        code = dispatch([
            "train", "--data", str(dataset_dir), "--mode", "global",
            "--out", str(out), *FOREST_FLAGS,
        ])
        assert code == EXIT_OK
        model = load_model((out / "global.model").read_bytes())
        assert model.context_id == "global"
        assert model.class_catalog == tuple(sorted(CLI_CATALOG))
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["mode"] == "global"
        assert manifest["models"] == ["global.model"]
        assert manifest["train_days"] == 5

    def test_context_mode_all_homes(self, tmp_path, dataset_dir):
        out = tmp_path / "models"
        code = dispatch([
            "train", "--data", str(dataset_dir), "--mode", "context",
            "--out", str(out), *FOREST_FLAGS,
        ])
        assert code == EXIT_OK
        names = sorted(p.name for p in out.iterdir())
        assert names == ["h01.model", "h02.model", "h03.model", "manifest.json"]
        model = load_model((out / "h02.model").read_bytes())
        assert model.context_id == "h02"
        assert model.training_window == (0, 4)

    def test_context_mode_single_home(self, tmp_path, dataset_dir):
        out = tmp_path / "models"
        code = dispatch([
            "train", "--data", str(dataset_dir), "--mode", "context",
            "--home", "h03", "--out", str(out), *FOREST_FLAGS,
        ])
        assert code == EXIT_OK
        assert sorted(p.name for p in out.iterdir()) == ["h03.model", "manifest.json"]

    def test_unknown_home(self, tmp_path, dataset_dir):
        code = dispatch([
            "train", "--data", str(dataset_dir), "--mode", "context",
            "--home", "h99", "--out", str(tmp_path / "m"), *FOREST_FLAGS,
        ])
        assert code == EXIT_DATA

    def test_manifest_less_dataset_needs_train_days(self, tmp_path, dataset_dir):
        bare = tmp_path / "bare"
        bare.mkdir()
        for csv in dataset_dir.glob("*.csv"):
            (bare / csv.name).write_bytes(csv.read_bytes())
        args = ["train", "--data", str(bare), "--mode", "global",
                "--out", str(tmp_path / "m"), *FOREST_FLAGS]
        assert dispatch(args) == EXIT_DATA
        assert dispatch(args + ["--train-days", "5"]) == EXIT_OK

    def test_training_is_deterministic(self, tmp_path, dataset_dir):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert dispatch([
                "train", "--data", str(dataset_dir), "--mode", "global",
                "--out", str(out), *FOREST_FLAGS,
            ]) == EXIT_OK
        assert tree_bytes(outs[0]) == tree_bytes(outs[1])

    def test_bad_forest_flags(self, tmp_path, dataset_dir):
        code = dispatch([
            "train", "--data", str(dataset_dir), "--mode", "global",
            "--out", str(tmp_path / "m"), "--trees", "0",
        ])
        assert code == EXIT_DATA


class TestEvaluate:
    def test_writes_report_tree(self, tmp_path, dataset_dir):
        out = tmp_path / "report"
        code = dispatch([
            "evaluate", "--data", str(dataset_dir), "--out", str(out), *EVAL_FLAGS,
        ])
        assert code == EXIT_OK
        assert (out / "table3.csv").is_file()
        assert (out / "table4.csv").is_file()
        assert (out / "summary.txt").is_file()
        assert list((out / "traces").glob("*.csv"))
        lines = (out / "table3.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 + 1  # header, two runs, average row
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "evaluate"
        assert manifest["runs"] == 2 and manifest["seen"] == 1
        assert manifest["policy"] == "combined_dynamic"
        assert manifest["train_days"] == 5 and manifest["test_days"] == 2

    def test_score_distribution_policy(self, tmp_path, dataset_dir):
        out = tmp_path / "report"
        code = dispatch([
            "evaluate", "--data", str(dataset_dir), "--out", str(out),
            "--policy", "score_distribution", *EVAL_FLAGS,
        ])
        assert code == EXIT_OK
        assert json.loads((out / "manifest.json").read_text())["policy"] == "score_distribution"

    def test_unknown_policy_is_usage_error(self, tmp_path, dataset_dir):
        code = dispatch([
            "evaluate", "--data", str(dataset_dir), "--out", str(tmp_path / "r"),
            "--policy", "psychic",
        ])
        assert code == EXIT_USAGE

    def test_seen_must_leave_unseen_homes(self, tmp_path, dataset_dir):
        code = dispatch([
            "evaluate", "--data", str(dataset_dir), "--out", str(tmp_path / "r"),
            "--runs", "1", "--seen", "3", *FOREST_FLAGS,
        ])
        assert code == EXIT_DATA

    def test_thread_count_does_not_change_artifacts(self, tmp_path, dataset_dir, monkeypatch):
        outs = []
        for threads, name in (("1", "t1"), ("3", "t3")):
            monkeypatch.setenv("DRIFTNET_THREADS", threads)
            out = tmp_path / name
            assert dispatch([
                "evaluate", "--data", str(dataset_dir), "--out", str(out), *EVAL_FLAGS,
            ]) == EXIT_OK
            outs.append(out)
        assert tree_bytes(outs[0]) == tree_bytes(outs[1])


class TestReport:
    def test_writes_decay_and_matrix(self, tmp_path, dataset_dir):
        out = tmp_path / "report"
        code = dispatch([
            "report", "--data", str(dataset_dir), "--out", str(out), *FOREST_FLAGS,
        ])
        assert code == EXIT_OK
        decay_lines = (out / "temporal_decay.csv").read_text().splitlines()
        assert decay_lines[0] == "home_id,train_accuracy,test_accuracy,decay"
        assert len(decay_lines) == 4
        matrix_lines = (out / "spatial_matrix.csv").read_text().splitlines()
        assert matrix_lines[0] == "home_id,m_h01,m_h02,m_h03"
        assert json.loads((out / "manifest.json").read_text())["command"] == "report"


class TestSelftest:
    def test_all_checks_pass(self, capsys):
        assert dispatch(["selftest"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("ok   ") == 6
        assert "FAIL" not in out

    def test_list_enumerates_checks(self, capsys):
        assert dispatch(["selftest", "--list"]) == EXIT_OK
        names = capsys.readouterr().out.split()
        assert names == [
            "featurizer-oracle", "forest-determinism", "forest-separation",
            "model-roundtrip", "selector-argmax", "histogram-metric",
        ]

    def test_valid_model_file(self, tmp_path, dataset_dir, capsys):
        models = tmp_path / "m"
        dispatch(["train", "--data", str(dataset_dir), "--mode", "global",
                  "--out", str(models), *FOREST_FLAGS])
        capsys.readouterr()
        assert dispatch(["selftest", "--model-file", str(models / "global.model")]) == EXIT_OK
        assert "ok   model-file" in capsys.readouterr().out

    def test_corrupt_model_file(self, tmp_path, dataset_dir, capsys):
        models = tmp_path / "m"
        dispatch(["train", "--data", str(dataset_dir), "--mode", "global",
                  "--out", str(models), *FOREST_FLAGS])
        path = models / "global.model"
        path.write_bytes(path.read_bytes()[:200])
        capsys.readouterr()
        assert dispatch(["selftest", "--model-file", str(path)]) == EXIT_DATA
        assert "FAIL model-file" in capsys.readouterr().out

    def test_missing_model_file(self, tmp_path):
        assert dispatch(["selftest", "--model-file", str(tmp_path / "no.model")]) == EXIT_DATA


class TestExitCodes:
    def test_no_subcommand(self):
        assert dispatch([]) == EXIT_USAGE

    def test_unknown_subcommand(self):
        assert dispatch(["transmogrify"]) == EXIT_USAGE

    def test_unknown_flag(self, dataset_dir):
        assert dispatch(["generate", "--wat", "--out", "x"]) == EXIT_USAGE

    def test_missing_required_flag(self):
        assert dispatch(["generate"]) == EXIT_USAGE

    def test_missing_data_directory(self, tmp_path):
        code = dispatch([
            "train", "--data", str(tmp_path / "absent"), "--mode", "global",
            "--out", str(tmp_path / "m"),
        ])
        assert code == EXIT_DATA

    def test_exit_code_constants(self):
        assert (EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL) == (0, 1, 2, 3)


class TestInputImmutability:
    def test_commands_do_not_mutate_dataset(self, tmp_path, dataset_dir):
        before = tree_bytes(dataset_dir)
        dispatch(["train", "--data", str(dataset_dir), "--mode", "context",
                  "--out", str(tmp_path / "m"), *FOREST_FLAGS])
        dispatch(["evaluate", "--data", str(dataset_dir),
                  "--out", str(tmp_path / "r"), *EVAL_FLAGS])
        dispatch(["report", "--data", str(dataset_dir),
                  "--out", str(tmp_path / "q"), *FOREST_FLAGS])
        assert tree_bytes(dataset_dir) == before


class TestConsoleScript:
    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "driftnet.cli", "selftest", "--list"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert "featurizer-oracle" in proc.stdout

    def test_installed_script_usage_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "driftnet.cli", "transmogrify"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 1
        assert "usage" in proc.stderr.lower()

    def test_console_script_on_path(self):
        proc = subprocess.run(
            ["driftnet", "selftest", "--list"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert "histogram-metric" in proc.stdout
