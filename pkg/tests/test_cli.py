import json
import subprocess
import sys
from pathlib import Path

import pytest

from hydromeasure.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE, main
from hydromeasure.scenario import load_config, run_scenario, validate_config, ScenarioParseError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

SMALL_FREE = {
    "name": "small_free",
    "seed": 3,
    "grid": {"axes": [{"n": 128, "x_min": -12.8, "x_max": 12.6}]},
    "initial_state": {"factors": [{"preset": "gaussian", "x0": 0.0, "sigma0": 1.0, "k": 0.5}]},
    "hamiltonian": {"potential": {"preset": "free"}},
    "evolution": {"dt": 0.005, "n_steps": 40, "snapshot_every": 10},
    "trajectories": {"count": 20, "mode": "density"},
    "stages": ["evolve", "trajectories"],
}

SMALL_MEASURE = {
    "name": "small_measure",
    "seed": 8,
    "measurement": {
        "system": {"axis": {"n": 16, "x_min": 0.0, "period": 6.283185307179586}, "eigenvalues": [0.0, 1.0],
                   "eigenfunctions": [{"preset": "plane_wave", "m": 0}, {"preset": "plane_wave", "m": 1}]},
        "apparatus": {"axis": {"n": 64, "x_min": -12.0, "x_max": 12.0},
                      "pointers": [{"preset": "gaussian", "x0": -5.0, "sigma0": 0.5},
                                   {"preset": "gaussian", "x0": 5.0, "sigma0": 0.5}]},
        "p": [0.25, 0.75],
        "kraus": {"sigma": 1.0},
    },
    "stages": ["measure", "consistency", "weak"],
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def metrics(out):
    return dict(line.split() for line in (Path(out) / "metrics.txt").read_text().splitlines())


class TestValidate:
    def test_well_formed(self, tmp_path, capsys):
        assert main(["validate", "--config", write(tmp_path, SMALL_MEASURE)]) == EXIT_OK
        assert validate_config(SMALL_MEASURE) == []

    @pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.json")))
    def test_shipped_scenarios(self, name):
        assert validate_config(load_config(SCENARIOS / name)) == []

    def test_probabilities_must_sum_to_one(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(SMALL_MEASURE))
        cfg["measurement"]["p"] = [0.5, 0.6]
        assert main(["validate", "--config", write(tmp_path, cfg)]) == EXIT_INVALID
        assert "measurement.p" in capsys.readouterr().out

    def test_non_positive_sigma(self):
        cfg = json.loads(json.dumps(SMALL_MEASURE))
        cfg["measurement"]["kraus"]["sigma"] = [1.0, 0.0]
        assert any("measurement.kraus.sigma" in e for e in validate_config(cfg))

    def test_lists_every_violation(self):
        cfg = json.loads(json.dumps(SMALL_MEASURE))
        cfg["measurement"]["p"] = [0.5, 0.6]
        cfg["measurement"]["kraus"]["sigma"] = -1.0
        assert len(validate_config(cfg)) >= 2

    def test_parse_error_position(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "name": "x",\n  "seed": \n}')
        with pytest.raises(ScenarioParseError) as info:
            load_config(path)
        assert info.value.line == 4
        assert main(["validate", "--config", str(path)]) == EXIT_PARSE


class TestRun:
    def test_evolve_only(self, tmp_path):
        out = tmp_path / "out"
        assert main(["evolve", "--config", write(tmp_path, SMALL_FREE), "--out", str(out), "--quiet"]) == EXIT_OK
        m = metrics(out)
        assert float(m["evolve.norm_drift"]) < 1e-10
        assert len(list((out / "snapshots").glob("snapshot_*.txt"))) == 5

    def test_all_stages_with_sources(self, tmp_path):
        out = tmp_path / "out"
        assert main(["all", "--config", write(tmp_path, SMALL_FREE), "--out", str(out), "--quiet"]) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["sources"]) == set(summary["metrics"])
        assert int(metrics(out)["trajectories.order_preserved"]) == 1
        assert (out / "trajectories.txt").exists()

    def test_measurement_stages(self, tmp_path):
        out = tmp_path / "out"
        assert main(["all", "--config", write(tmp_path, SMALL_MEASURE), "--out", str(out), "--quiet"]) == EXIT_OK
        m = metrics(out)
        assert int(m["consistency.consistent"]) == 1
        assert float(m["consistency.max_deviation"]) < 1e-3
        assert float(m["weak.A_B_probability_gap"]) < 1e-12
        assert float(m["weak.A.purity_E_0"]) == pytest.approx(1, abs=1e-10)
        assert float(m["weak.B.purity_E_0"]) < 0.99

    def test_seed_override_recorded(self, tmp_path):
        out = tmp_path / "out"
        assert main(["measure", "--config", write(tmp_path, SMALL_MEASURE), "--out", str(out), "--seed", "41",
                     "--quiet"]) == EXIT_OK
        assert json.loads((out / "summary.json").read_text())["seed"] == 41

    def test_bit_identical_reruns(self, tmp_path):
        cfg = write(tmp_path, SMALL_MEASURE)
        for d in ("a", "b"):
            assert main(["all", "--config", cfg, "--out", str(tmp_path / d), "--quiet"]) == EXIT_OK
        assert (tmp_path / "a" / "metrics.txt").read_bytes() == (tmp_path / "b" / "metrics.txt").read_bytes()

    def test_invalid_config_refused(self, tmp_path):
        cfg = json.loads(json.dumps(SMALL_MEASURE))
        cfg["measurement"]["p"] = [1.0, 1.0]
        assert main(["all", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_INVALID

    def test_numerical_failure_has_stage_context(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(SMALL_MEASURE))
        # pointers overlap, so the weak scheme A refuses to run
        cfg["measurement"]["apparatus"]["pointers"][1]["x0"] = -4.5
        assert main(["weak", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "--quiet"]) == \
            EXIT_NUMERICAL
        assert "weak" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["validate", "--config", str(tmp_path / "nope.json")]) == EXIT_INVALID

    def test_run_scenario_api(self, tmp_path):
        res = run_scenario(write(tmp_path, SMALL_MEASURE), tmp_path / "o", stages=("consistency",))
        assert res.metrics["consistency.consistent"] == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hydromeasure", "validate", "--config",
                           str(SCENARIOS / "weak_contrast.json")], capture_output=True, text=True)
    assert proc.returncode == 0 and "valid" in proc.stdout
