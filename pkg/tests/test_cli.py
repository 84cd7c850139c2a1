import json
from pathlib import Path

import pytest

from fedload.cli import main
from fedload.config import build_config, load_config
from fedload.errors import ConfigError

QUICK_TOML = """\
seed = 3
mode = "federated"
output_dir = "{out}"
clusters = 2

[data.synthetic]
households = 5
days = 30

[federation]
rounds = 5
clients_per_round = 1.0
local_epochs = 1
"""


class TestConfig:
    def test_empty_config_resolves_paper_defaults(self):
        cfg, warnings = build_config({})
        assert warnings == []
        assert cfg.window == 336
        assert cfg.clusters == 18
        assert cfg.outlier_low == 0.09
        assert cfg.outlier_high == 1.35
        assert cfg.split_fraction == 0.6
        assert cfg.federation.rounds == 20
        assert cfg.federation.batch_size == 12
        assert cfg.federation.client_lr == 0.01
        assert cfg.federation.server_lr == 1.0

    def test_zero_clusters_rejected(self):
        with pytest.raises(ConfigError):
            build_config({"clusters": 0})

    def test_unknown_key_warns_not_errors(self):
        cfg, warnings = build_config({"clusters": 2, "frobnicate": True})
        assert cfg.clusters == 2
        assert any("frobnicate" in w for w in warnings)

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            build_config({"mode": "quantum"})

    def test_csv_and_synthetic_conflict(self):
        with pytest.raises(ConfigError):
            build_config({"data": {"csv": "x.csv", "synthetic": {}}})

    def test_toml_and_json_agree(self, tmp_path):
        toml_path = tmp_path / "c.toml"
        toml_path.write_text('clusters = 3\n[federation]\nrounds = 7\n')
        json_path = tmp_path / "c.json"
        json_path.write_text('{"clusters": 3, "federation": {"rounds": 7}}')
        a, _ = load_config(toml_path)
        b, _ = load_config(json_path)
        assert a.resolved() == b.resolved()

    def test_config_hash_stable(self):
        a, _ = build_config({"clusters": 4})
        b, _ = build_config({"clusters": 4})
        assert a.content_hash() == b.content_hash()
        c, _ = build_config({"clusters": 5})
        assert c.content_hash() != a.content_hash()


class TestCliValidate:
    def test_validate_empty_prints_defaults(self, capsys):
        assert main(["validate"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["window"] == 336
        assert out["federation"]["rounds"] == 20

    def test_validate_bad_config_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("clusters = 0\n")
        assert main(["validate", str(bad)]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.toml")]) == 1


class TestCliSynth:
    def test_synth_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "synth.csv"
        assert main(["synth", str(out), "--households", "2", "--days", "2"]) == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "LCLid,stdorToU,DateTime,KWH/hh"
        assert len(lines) == 1 + 2 * 2 * 48


class TestCliRun:
    def write_config(self, tmp_path, out_name="out"):
        path = tmp_path / "quick.toml"
        path.write_text(QUICK_TOML.format(out=tmp_path / out_name))
        return path, tmp_path / out_name

    def test_quickstart_outputs(self, tmp_path):
        config, out = self.write_config(tmp_path)
        assert main(["run", str(config)]) == 0
        for name in (
            "audit.json", "clusters.csv", "households.csv", "metrics.csv",
            "metrics.json", "predictions.csv", "manifest.json",
            "rounds_cluster00.jsonl",
        ):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_sha256"]
        checkpoints = list((out / "checkpoints").rglob("round_*.model"))
        assert checkpoints

    def test_lean_skips_checkpoints(self, tmp_path):
        config, out = self.write_config(tmp_path)
        assert main(["run", str(config), "--lean"]) == 0
        assert not (out / "checkpoints").exists()

    def test_determinism_byte_identical_metrics(self, tmp_path):
        config, out = self.write_config(tmp_path)
        assert main(["run", str(config), "--output-dir", str(tmp_path / "a")]) == 0
        assert main(["run", str(config), "--output-dir", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b

    def test_too_few_households_exit_2(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(
            'output_dir = "%s"\nclusters = 18\n[data.synthetic]\nhouseholds = 3\ndays = 30\n'
            % (tmp_path / "out")
        )
        assert main(["run", str(path)]) == 2

    def test_run_from_csv(self, tmp_path):
        csv_path = tmp_path / "data.csv"
        assert main(["synth", str(csv_path), "--households", "5", "--days", "30"]) == 0
        config = tmp_path / "csv.toml"
        config.write_text(
            f'output_dir = "{tmp_path / "csvout"}"\nclusters = 2\n'
            f'[data]\ncsv = "{csv_path}"\n'
            '[federation]\nrounds = 2\nclients_per_round = 1.0\n'
        )
        assert main(["run", str(config)]) == 0
        metrics = json.loads((tmp_path / "csvout" / "metrics.json").read_text())
        # a user-supplied CSV triggers the reference regression check
        assert "reference_check" in metrics


class TestCliReport:
    def test_report_recomputes_metrics(self, tmp_path):
        config = tmp_path / "quick.toml"
        out = tmp_path / "out"
        config.write_text(QUICK_TOML.format(out=out))
        assert main(["run", str(config)]) == 0
        target = tmp_path / "metrics2.csv"
        assert main(
            ["report", str(out / "predictions.csv"), str(out / "households.csv"),
             "-o", str(target)]
        ) == 0
        assert target.exists()
        assert target.read_text().startswith("cluster,type,month,n,mae,rmse")
