import csv
import json
import subprocess
import sys

import pytest

from fusewake.cli import run_cli
from fusewake.config import CONFIG_VERSION, ConfigError, RunConfig, load_config
from fusewake.pipeline import PATHS

SUBCOMMANDS = ("generate", "train", "eval", "stream", "bench")


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


class TestLoadConfig:
    def test_empty_object_defaults(self, tmp_path):
        assert load_config(write_json(tmp_path / "c.json", {})) == RunConfig()

    def test_none_defaults(self):
        assert load_config(None) == RunConfig()

    def test_negative_window(self, tmp_path):
        with pytest.raises(ConfigError, match="window_s must be positive"):
            load_config(write_json(tmp_path / "c.json", {"window_s": -1}))

    def test_unknown_key_named(self, tmp_path):
        with pytest.raises(ConfigError, match="windw_s"):
            load_config(write_json(tmp_path / "c.json", {"windw_s": 30}))

    def test_malformed(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{oops")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(p)

    def test_version(self, tmp_path):
        assert RunConfig().version == CONFIG_VERSION
        with pytest.raises(ConfigError, match="version"):
            load_config(write_json(tmp_path / "c.json", {"version": "other/2"}))

    def test_partial_override(self, tmp_path):
        cfg = load_config(write_json(tmp_path / "c.json", {"stride_s": 10, "select_k": 6}))
        assert (cfg.stride_s, cfg.select_k, cfg.window_s) == (10, 6, 60.0)

    @pytest.mark.parametrize(
        "override,message",
        [
            ({"stride_s": 90}, "stride_s"),
            ({"split_ratios": [0.7, 0.2, 0.2]}, "sum to 1"),
            ({"patience": 300}, "patience"),
            ({"evr_target": 1.5}, "evr_target"),
            ({"bands": {"alpha": [8, 13]}}, "bands"),
        ],
    )
    def test_invariants(self, tmp_path, override, message):
        with pytest.raises(ConfigError, match=message):
            load_config(write_json(tmp_path / "c.json", override))

    def test_train_config_mirrors_fields(self):
        cfg = RunConfig(learning_rate=0.02, hidden_units=8, seed=3)
        t = cfg.train()
        assert (t.learning_rate, t.hidden_units, t.seed) == (0.02, 8, 3)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """generate -> train -> eval once for the module."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run_cli(["generate", "--seed", "5", "--sessions", "12", "--subjects", "6", "--duration", "150", "--out", str(data)]) == 0
    assert run_cli(["train", "--data", str(data), "--out", str(root / "model.json")]) == 0
    assert run_cli(["eval", "--model", str(root / "model.json"), "--data", str(data), "--report", str(root / "report")]) == 0
    return root


class TestCli:
    def test_generate_deterministic(self, tmp_path):
        args = ["generate", "--seed", "42", "--sessions", "4", "--subjects", "2", "--duration", "120"]
        assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
        assert run_cli(args + ["--out", str(tmp_path / "b")]) == 0
        a = sorted((tmp_path / "a").iterdir())
        b = sorted((tmp_path / "b").iterdir())
        assert len(a) == 4
        assert [p.name for p in a] == [p.name for p in b]
        assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))

    def test_eval_report_rows(self, workspace):
        rows = list(csv.DictReader((workspace / "report.csv").open()))
        assert [r["path"] for r in rows] == list(PATHS)
        for r in rows:
            assert set(r) >= {"accuracy", "precision", "recall", "f1", "auc", "tp", "fp", "tn", "fn"}
            assert r["accuracy"] != ""
            tp, fp, fn = int(r["tp"]), int(r["fp"]), int(r["fn"])
            # undefined ratios are left blank rather than reported as 0
            assert (r["precision"] == "") == (tp + fp == 0)
            assert (r["recall"] == "") == (tp + fn == 0)
        doc = json.loads((workspace / "report.json").read_text())
        assert set(doc["paths"]) == set(PATHS)
        assert "fusion_average" in doc["auxiliary"]

    def test_eval_prints_paths(self, workspace, capsys):
        run_cli(["eval", "--model", str(workspace / "model.json"), "--data", str(workspace / "data"), "--report", str(workspace / "r2")])
        out = capsys.readouterr().out.splitlines()
        assert [line.split()[0] for line in out] == list(PATHS)

    def test_train_deterministic(self, workspace, tmp_path):
        assert run_cli(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "m.json")]) == 0
        assert (tmp_path / "m.json").read_bytes() == (workspace / "model.json").read_bytes()

    def test_stream_lines(self, workspace, capsys):
        session = sorted((workspace / "data").iterdir())[0]
        assert run_cli(["stream", "--model", str(workspace / "model.json"), "--session", str(session), "--fast"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 19  # (150 - 60) / 5 + 1 windows
        for line in lines:
            rec = json.loads(line)
            assert list(rec) == ["t_us", "s_vision", "s_physio", "s_fused", "alarm"]
            assert isinstance(rec["alarm"], bool)

    def test_bench(self, workspace, capsys):
        session = sorted((workspace / "data").iterdir())[0]
        assert run_cli(["bench", "--model", str(workspace / "model.json"), "--session", str(session)]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["mean_ms"] <= stats["p95_ms"] <= stats["max_ms"]

    @pytest.mark.parametrize("sub", SUBCOMMANDS)
    def test_help_exits_zero(self, sub, capsys):
        assert run_cli([sub, "--help"]) == 0

    def test_top_level_help(self):
        assert run_cli(["--help"]) == 0

    def test_unknown_subcommand(self, capsys):
        assert run_cli(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_missing_required(self, capsys):
        assert run_cli(["generate", "--seed", "1"]) == 1

    def test_no_command(self, capsys):
        assert run_cli([]) == 1

    def test_data_errors(self, workspace, tmp_path, capsys):
        assert run_cli(["stream", "--model", str(workspace / "model.json"), "--session", str(tmp_path / "nope.jsonl")]) == 2
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        assert run_cli(["stream", "--model", str(workspace / "model.json"), "--session", str(bad)]) == 2
        cfg = write_json(tmp_path / "c.json", {"windw_s": 3})
        assert run_cli(["train", "--data", str(workspace / "data"), "--config", str(cfg), "--out", str(tmp_path / "m.json")]) == 2
        assert "windw_s" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "fusewake", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "generate" in proc.stdout
