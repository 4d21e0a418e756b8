import csv
import json

import pytest

from beliefplan.cli import (
    AGGREGATE_FILE,
    CONFIG_FILE,
    NOMINAL_FILE,
    REPORT_FILE,
    ROLLOUT_DIR,
    ROLLOUT_SUMMARY_FILE,
    TIMING_FILE,
    main,
    nominal_csv_columns,
    parse_config,
)
from beliefplan.domains import make_planar_nav
from beliefplan.errors import ConfigError


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


LQG = {"domain": "lqg", "params": {"n": 2, "m": 1, "horizon": 12}, "rollout": {"seeds": 3}}


class TestConfig:
    def test_defaults_are_filled(self):
        cfg = parse_config({"domain": "hand_eye"})
        assert cfg.schedule == [10.0, 1.0, 0.3, 0.05]
        assert cfg.params["eta"] == 0.05
        assert cfg.solver["max_iterations"] == 500
        assert cfg.rollout.seeds == 20

    def test_round_trip(self):
        cfg = parse_config({"domain": "planar_nav", "params": {"horizon": 30}})
        again = parse_config(json.loads(json.dumps(cfg.to_dict())))
        assert again.to_dict() == cfg.to_dict()

    @pytest.mark.parametrize("raw,field", [
        ({"domain": "maze"}, "domain"),
        ({"domain": "lqg", "params": {"q": 1}}, "params"),
        ({"domain": "lqg", "solver": {"iterations": 3}}, "solver"),
        ({"domain": "hand_eye", "schedule": [1.0, -2.0]}, "schedule"),
        ({"domain": "lqg", "schedule": [1.0]}, "schedule"),
        ({"domain": "lqg", "rollout": {"seeds": 0}}, "rollout.seeds"),
        ({"domain": "planar_nav", "rollout": {"obstacle_shift": 0.2}}, "obstacle_shift"),
        ({"domain": "lqg", "colour": "red"}, "unknown field"),
        ({"domain": "planar_nav", "params": {"start": [20.0, 1.0]}}, "params"),
    ])
    def test_field_diagnostics(self, raw, field):
        with pytest.raises(ConfigError, match=field):
            parse_config(raw)


class TestCommands:
    def test_check(self, tmp_path, capsys):
        assert main(["check", str(write_config(tmp_path, LQG))]) == 0
        echoed = json.loads(capsys.readouterr().out)
        assert echoed["schema_version"] == 1
        assert echoed["params"]["horizon"] == 12

    def test_malformed_json_reports_line(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "domain": "lqg",\n  "params": {,}\n}')
        assert main(["check", str(path)]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["solve", str(tmp_path / "nope.json")]) == 2

    def test_rollout_without_report(self, tmp_path):
        path = write_config(tmp_path, LQG)
        assert main(["rollout", str(path), "--out", str(tmp_path / "empty")]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["solve", str(write_config(tmp_path, LQG)), "--out", str(blocker / "sub")]) == 3

    def test_solve_and_rollout_artifacts(self, tmp_path):
        path = write_config(tmp_path, LQG)
        out = tmp_path / "out"
        assert main(["solve", str(path), "--out", str(out)]) == 0
        report = json.loads((out / REPORT_FILE).read_text())
        assert report["schema_version"] == 1
        assert report["converged"] is True
        assert len(report["stages"]) == 1
        assert len(report["nominal_actions"]) == 11
        assert json.loads((out / TIMING_FILE).read_text())["wall_time"] > 0
        with (out / NOMINAL_FILE).open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "t" and len(rows) == 13

        assert main(["rollout", str(path), "--out", str(out), "--seed", "10"]) == 0
        files = sorted(p.name for p in (out / ROLLOUT_DIR).iterdir())
        assert files == [f"nominal_seed{s:05d}.json" for s in (10, 11, 12)]
        with (out / AGGREGATE_FILE).open() as fh:
            agg = list(csv.DictReader(fh))
        assert [int(r["seed"]) for r in agg] == [10, 11, 12]
        summary = json.loads((out / ROLLOUT_SUMMARY_FILE).read_text())
        assert summary["noiseless_replay_deviation"] < 1e-6

    def test_echoed_config_reproduces_outputs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["solve", str(write_config(tmp_path, LQG)), "--out", str(out1)]) == 0
        assert main(["rollout", str(write_config(tmp_path, LQG)), "--out", str(out1)]) == 0
        echoed = out1 / CONFIG_FILE
        assert main(["solve", str(echoed), "--out", str(out2)]) == 0
        assert main(["rollout", str(echoed), "--out", str(out2)]) == 0
        for name in (REPORT_FILE, NOMINAL_FILE, CONFIG_FILE, AGGREGATE_FILE, ROLLOUT_SUMMARY_FILE):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_stages_override(self, tmp_path, monkeypatch):
        cfg = {"domain": "hand_eye", "params": {"horizon": 6}, "solver": {"max_iterations": 2}}
        path = write_config(tmp_path, cfg, "he.json")
        monkeypatch.setenv("BELIEFPLAN_OUTPUT_ROOT", str(tmp_path / "root"))
        assert main(["solve", str(path), "--stages", "1,0.5"]) == 0
        report = json.loads((tmp_path / "root" / "he" / REPORT_FILE).read_text())
        assert [s["stage_value"] for s in report["stages"]] == [1.0, 0.5]
        assert len(report["layout"]) == 3 and report["layout"]["size"] == 23

    def test_bad_stages_flag(self, tmp_path):
        path = write_config(tmp_path, {"domain": "hand_eye"})
        assert main(["check", str(path), "--stages", "1,x"]) == 2


def test_csv_column_order():
    cols = nominal_csv_columns(make_planar_nav())
    assert cols == ["t", "mean_0", "mean_1", "var_0", "var_1", "free_weight", "action_0", "action_1"]
