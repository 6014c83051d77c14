"""Exit codes, output layering, and file emission of the command line."""

from __future__ import annotations

import csv
import json

import pytest

from quditqkd import cli
from quditqkd.distill import DistillParams
from quditqkd.netrun import RoleReport


def run_cli(*argv: str) -> int:
    return cli.main(list(argv))


class TestSimulate:
    def test_clean_session_exits_zero(self, capsys):
        code = run_cli("simulate", "--rounds", "400", "--seed", "0")
        out = capsys.readouterr().out
        assert code == 0
        assert "verdict: continue" in out
        assert "e_b:" in out

    def test_condition_failure_exits_two(self, capsys):
        code = run_cli(
            "simulate", "--channel", "full_dephase", "--rounds", "4000", "--seed", "2"
        )
        out = capsys.readouterr().out
        assert code == 2
        assert "verdict: abort" in out

    def test_insufficient_sift_exits_one(self, capsys):
        code = run_cli("simulate", "--n", "4", "--rounds", "3", "--seed", "0")
        assert code == 1
        assert "status:" in capsys.readouterr().out

    def test_bad_channel_exits_one(self, capsys):
        code = run_cli("simulate", "--channel", "nonsense")
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_json_dash_is_pure_json(self, capsys):
        code = run_cli("simulate", "--rounds", "400", "--json", "-")
        out = capsys.readouterr().out
        assert code == 0
        blob = json.loads(out)
        assert blob["config"]["rounds"] == 400
        assert blob["stats"]["rounds"] == 400

    def test_json_file_alongside_human_output(self, tmp_path, capsys):
        target = tmp_path / "stats.json"
        code = run_cli("simulate", "--rounds", "400", "--json", str(target))
        out = capsys.readouterr().out
        assert code == 0
        assert "verdict:" in out
        blob = json.loads(target.read_text())
        assert blob["stats"]["rounds"] == 400

    def test_round_log_csv(self, tmp_path):
        target = tmp_path / "rounds.csv"
        code = run_cli("simulate", "--rounds", "400", "--round-log", str(target))
        assert code == 0
        with open(target, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:3] == ["round", "i", "j"]
        assert len(rows) == 401


class TestAnalyze:
    def test_unitary_report(self, capsys):
        code = run_cli("analyze", "--channel", "z_flip:0.3")
        out = capsys.readouterr().out
        assert code == 0
        assert "e_b: 0.15" in out
        assert "error matrix:" in out

    def test_intercept_report_json(self, capsys):
        code = run_cli("analyze", "--channel", "partial_intercept:0.4", "--json", "-")
        blob = json.loads(capsys.readouterr().out)
        assert code == 0
        assert blob["kind"] == "intercept"
        assert blob["e_b"] == 0.2


class TestDistill:
    def test_auto_params_feasible(self, capsys):
        code = run_cli(
            "distill", "--matrix", "0.75,0.05,0.05,0.15", "--auto-params"
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "selected: k=3 r=327" in out

    def test_auto_params_infeasible_exits_two(self, capsys):
        code = run_cli("distill", "--matrix", "0.3,0.3,0.2,0.2", "--auto-params")
        out = capsys.readouterr().out
        assert code == 2
        assert "no feasible parameters" in out

    def test_matrix_and_channel_conflict(self, capsys):
        code = run_cli(
            "distill", "--matrix", "1,0,0,0", "--channel", "identity", "--k", "1",
            "--r", "3",
        )
        assert code == 1
        assert "not both" in capsys.readouterr().err

    def test_neither_source_rejected(self, capsys):
        code = run_cli("distill", "--k", "1", "--r", "3")
        assert code == 1

    def test_manual_params_without_selection(self, capsys):
        code = run_cli("distill", "--channel", "z_flip:0.3", "--k", "1", "--r", "3")
        out = capsys.readouterr().out
        assert code == 0
        assert "params: k=1 r=3" in out
        assert "x_fail:" in out

    def test_manual_needs_both_k_and_r(self, capsys):
        code = run_cli("distill", "--channel", "z_flip:0.3", "--k", "1")
        assert code == 1

    def test_count_runs_sampled_labels(self, capsys):
        code = run_cli(
            "distill", "--matrix", "0.9,0.02,0.03,0.05", "--k", "1", "--r", "3",
            "--count", "2000", "--seed", "5", "--json", "-",
        )
        blob = json.loads(capsys.readouterr().out)
        assert code == 0
        assert blob["run"]["input_length"] == 2000
        assert blob["manual"]["k"] == 1


class TestThreshold:
    def test_scan_with_files(self, tmp_path, capsys):
        csv_path = tmp_path / "scan.csv"
        json_path = tmp_path / "scan.json"
        code = run_cli(
            "threshold", "--grid", "1000", "--csv", str(csv_path),
            "--json", str(json_path),
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "e_max = 0.499000" in out
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1002
        blob = json.loads(json_path.read_text())
        assert blob["e_max"] == pytest.approx(0.499)

    def test_bad_grid_exits_one(self, capsys):
        code = run_cli("threshold", "--grid", "10")
        assert code == 1


class TestVerify:
    def test_all_suites_pass(self, capsys):
        code = run_cli("verify", "--samples", "30")
        out = capsys.readouterr().out
        assert code == 0
        assert "conjugation: 768/768 ok" in out
        assert "all checks passed" in out


class TestNetrunWiring:
    def test_flags_reach_role_config(self, monkeypatch, capsys):
        seen = {}

        def fake_run_role(cfg):
            seen["cfg"] = cfg
            return RoleReport(role=cfg.role)

        monkeypatch.setattr(cli, "run_role", fake_run_role)
        code = run_cli(
            "netrun", "--role", "alice", "--connect-bob", "127.0.0.1:9",
            "--rounds", "123", "--seed", "7", "--k", "2", "--r", "5",
            "--channel", "z_flip:0.1",
        )
        assert code == 0
        cfg = seen["cfg"]
        assert cfg.role == "alice"
        assert cfg.connect_bob == "127.0.0.1:9"
        assert cfg.session.rounds == 123
        assert cfg.session.seed == 7
        assert cfg.session.channel == "z_flip:0.1"
        assert cfg.params == DistillParams(2, 5)

    def test_report_exit_code_propagates(self, monkeypatch, capsys):
        monkeypatch.setattr(
            cli,
            "run_role",
            lambda cfg: RoleReport(role="bob", status="insufficient-sift", exit_code=1),
        )
        code = run_cli("netrun", "--role", "bob", "--listen", "127.0.0.1:9")
        assert code == 1
        assert "status: insufficient-sift" in capsys.readouterr().out

    def test_missing_role_rejected(self, capsys):
        code = run_cli("netrun", "--listen", "127.0.0.1:9")
        assert code == 1
        assert "needs --role" in capsys.readouterr().err


class TestConfigLayering:
    def test_flags_beat_file_beats_builtin(self, tmp_path, capsys):
        cfg = tmp_path / "defaults.json"
        cfg.write_text(json.dumps({"rounds": 50, "seed": 3}))
        code = run_cli(
            "simulate", "--config", str(cfg), "--rounds", "400", "--json", "-"
        )
        blob = json.loads(capsys.readouterr().out)
        assert code == 0
        merged = blob["config"]
        assert merged["rounds"] == 400  # flag wins
        assert merged["seed"] == 3  # file wins over builtin 0
        assert merged["n"] == 2  # builtin survives

    def test_no_strict_flag_overrides(self, capsys):
        code = run_cli("simulate", "--rounds", "200", "--no-strict", "--json", "-")
        blob = json.loads(capsys.readouterr().out)
        assert code == 0
        assert blob["config"]["condition_strict"] is False

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "defaults.json"
        cfg.write_text(json.dumps({"banana": 1}))
        code = run_cli("simulate", "--config", str(cfg))
        assert code == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_config_must_be_object(self, tmp_path, capsys):
        cfg = tmp_path / "defaults.json"
        cfg.write_text("[1, 2]")
        code = run_cli("simulate", "--config", str(cfg))
        assert code == 1

    def test_malformed_config_json(self, tmp_path, capsys):
        cfg = tmp_path / "defaults.json"
        cfg.write_text("{oops")
        code = run_cli("simulate", "--config", str(cfg))
        assert code == 1
