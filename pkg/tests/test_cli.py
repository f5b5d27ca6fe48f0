"""End-to-end tests of the command-line interface."""

import json

import numpy as np
import pytest

from rffpsr.cli import main, parse_horizons
from rffpsr.evaluation import read_report


def run(argv):
    return main(argv)


class TestParsing:
    def test_range_syntax(self):
        assert parse_horizons("1..10") == list(range(1, 11))

    def test_comma_syntax(self):
        assert parse_horizons("1,3,7") == [1, 3, 7]

    def test_unknown_flag_exits_one(self, capsys):
        assert run(["simulate", "--bogus"]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_subcommand_exits_one(self):
        assert run([]) == 1


class TestPipeline:
    @pytest.fixture(scope="class")
    def data_dir(self, tmp_path_factory):
        d = tmp_path_factory.mktemp("cli") / "data"
        code = run(
            ["simulate", "--system", "benchmark", "--n-traj", "12",
             "--len", "40", "--seed", "3", "--out", str(d)]
        )
        assert code == 0
        return d

    def test_simulate_creates_files(self, data_dir):
        assert (data_dir / "manifest.json").exists()
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert len(manifest["trajectories"]) == 12
        for entry in manifest["trajectories"]:
            assert (data_dir / entry["file"]).exists()

    def test_train_eval_smoke(self, data_dir, tmp_path):
        model_path = tmp_path / "model.json"
        code = run(
            ["train", "--data", str(data_dir), "--out", str(model_path),
             "--s1", "joint", "--k", "4", "--history", "5", "--rff", "60",
             "--pca", "5", "--lambda1", "0.05", "--lambda2", "0.05", "--seed", "0"]
        )
        assert code == 0 and model_path.exists()
        results = tmp_path / "results.csv"
        code = run(
            ["eval", "--data", str(data_dir), "--model", str(model_path),
             "--out", str(results), "--horizons", "1..4"]
        )
        assert code == 0
        report = read_report(results)
        model_rows = [r for r in report.rows if r.method == "model"]
        assert [r.horizon for r in model_rows] == [1, 2, 3, 4]
        assert "dataset_hash" in report.metadata

    def test_arx_and_multi_model_eval(self, data_dir, tmp_path):
        arx_path = tmp_path / "arx.json"
        assert run(
            ["arx", "--data", str(data_dir), "--out", str(arx_path), "--k", "4",
             "--history", "5", "--rff", "60", "--pca", "5", "--lambda1", "0.05",
             "--seed", "0"]
        ) == 0
        model_path = tmp_path / "m.json"
        assert run(
            ["train", "--data", str(data_dir), "--out", str(model_path), "--s1",
             "cond", "--k", "4", "--history", "5", "--rff", "60", "--pca", "5",
             "--lambda1", "0.05", "--lambda2", "0.05", "--seed", "0"]
        ) == 0
        results = tmp_path / "both.csv"
        assert run(
            ["eval", "--data", str(data_dir), "--model", str(model_path),
             str(arx_path), "--out", str(results), "--horizons", "1,2"]
        ) == 0
        report = read_report(results)
        methods = {r.method for r in report.rows}
        assert methods == {"m", "arx", "mean"}

    def test_refine_smoke(self, data_dir, tmp_path):
        model_path = tmp_path / "m0.json"
        assert run(
            ["train", "--data", str(data_dir), "--out", str(model_path), "--k", "4",
             "--history", "5", "--rff", "60", "--pca", "5", "--lambda1", "0.05",
             "--lambda2", "0.05", "--seed", "0"]
        ) == 0
        refined = tmp_path / "m1.json"
        log = tmp_path / "log.csv"
        assert run(
            ["refine", "--data", str(data_dir), "--model", str(model_path),
             "--out", str(refined), "--log", str(log), "--max-epochs", "3"]
        ) == 0
        assert refined.exists() and log.exists()
        assert log.read_text().startswith("epoch,step_size")

    def test_config_file_precedence(self, data_dir, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"k": 4, "history": 5, "rff": 60, "pca": 5,
                                      "lambda1": 0.05, "lambda2": 0.05}))
        out = tmp_path / "cfgmodel.json"
        assert run(
            ["train", "--data", str(data_dir), "--out", str(out),
             "--config", str(config), "--seed", "0"]
        ) == 0
        doc = json.loads(out.read_text())
        assert doc["spec"]["k"] == 4  # from config file
        # CLI flag overrides the config file
        out2 = tmp_path / "cfgmodel2.json"
        assert run(
            ["train", "--data", str(data_dir), "--out", str(out2),
             "--config", str(config), "--k", "3", "--seed", "0"]
        ) == 0
        assert json.loads(out2.read_text())["spec"]["k"] == 3

    def test_missing_data_exits_two(self, tmp_path, capsys):
        assert run(["train", "--data", str(tmp_path / "nope"), "--out",
                    str(tmp_path / "m.json"), "--lambda1", "0.1", "--lambda2", "0.1"]) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_model_file_exits_two(self, data_dir, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"kind": "mystery"}')
        assert run(["eval", "--data", str(data_dir), "--model", str(bad),
                    "--out", str(tmp_path / "r.csv")]) == 2
