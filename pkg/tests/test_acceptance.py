"""
Acceptance tests: the shipped runs end to end

The full runs take minutes; they are marked slow and need --run-slow.
"""

import json
from types import SimpleNamespace

import pytest

from krf_lab import runner
from krf_lab.cli import shipped_configs
from krf_lab.config import parse_config
from krf_lab.persistence import RunDirectory
from krf_lab.runner import accept, expected_met, orchestrate

CONVERGED = {"converged": True, "blowup": False}
OBSTRUCTED = {"converged": False, "blowup": {"p": 2.0, "onset": 4.0, "flagged_p": [2.0, 3.0]}}


def _config(stem):
    (path,) = [p for p in shipped_configs() if p.stem == stem]
    return parse_config(path)


class TestAcceptSuite:
    """Test the acceptance driver without flow runs"""

    def test_identities_and_calibration(self, tmp_path):
        """Test the suite writes acceptance.json and passes without runs"""
        result = accept([], tmp_path, identity_trials=1, runs=False)
        assert result["passed"]
        assert result["identities"]["count"] == 22
        assert result["calibration"]["passed"]
        assert result["runs"] == {}
        assert json.loads((tmp_path / "acceptance.json").read_text()) == result


class TestExpectedOutcomes:
    """Test the per-configuration outcome expectations"""

    @pytest.mark.parametrize("stem", ["cp1_converge", "cp1xcp1_converge"])
    def test_kahler_einstein_runs(self, stem):
        """Test the Kähler-Einstein runs must converge without a flagged exponent"""
        assert expected_met(stem, CONVERGED)
        assert not expected_met(stem, OBSTRUCTED)
        assert not expected_met(stem, {"converged": False, "blowup": False})

    def test_obstructed_run(self):
        """Test the blow-up of CP^2 must keep moving and flag I_2"""
        assert expected_met("bl1cp2_obstruction", OBSTRUCTED)
        assert not expected_met("bl1cp2_obstruction", CONVERGED)
        assert not expected_met("bl1cp2_obstruction", {"converged": False, "blowup": False})
        wrong_p = {"converged": False, "blowup": {"p": 3.0, "flagged_p": [3.0]}}
        assert not expected_met("bl1cp2_obstruction", wrong_p)

    def test_unlisted_configuration(self):
        """Test a configuration without an expectation only needs its checks"""
        assert expected_met("my_run", OBSTRUCTED)

    @pytest.mark.parametrize("bl_report, passed", [(OBSTRUCTED, True), (CONVERGED, False)])
    def test_accept_gates_on_expectations(self, tmp_path, monkeypatch, bl_report, passed):
        """Test accept fails when a run exits cleanly but misses its expected outcome"""
        reports = {
            "cp1_converge": CONVERGED,
            "cp1xcp1_converge": CONVERGED,
            "bl1cp2_obstruction": bl_report,
        }

        def fake_orchestrate(config, target):
            RunDirectory(target, create=True).write_json("report.json", reports[target.name])
            return 0

        monkeypatch.setattr(runner, "orchestrate", fake_orchestrate)
        monkeypatch.setattr(
            runner, "run_suite", lambda trials: [SimpleNamespace(rel_residual=0.0, passed=True)]
        )
        monkeypatch.setattr(runner.mis, "calibrate", lambda: {"passed": True})

        result = accept(shipped_configs(), tmp_path, identity_trials=1)
        assert result["passed"] is passed
        assert result["runs"]["bl1cp2_obstruction"]["expected_met"] is passed
        assert result["runs"]["cp1_converge"]["expected_met"]
        assert all(r["exit"] == 0 for r in result["runs"].values())


@pytest.mark.slow
class TestShippedRuns:
    """Test the shipped configurations end to end"""

    def test_cp1_converges(self, tmp_path):
        """Test the CP^1 run converges in the normalized gauge"""
        assert orchestrate(_config("cp1_converge"), tmp_path / "cp1") == 0
        report = RunDirectory(tmp_path / "cp1").read_json("report.json")
        assert report["gauge"] == "normalized"
        assert report["converged"]
        assert report["blowup"] is False
        assert report["checks_passed"]

    def test_cp1xcp1_converges(self, tmp_path):
        """Test the CP^1 x CP^1 run converges from a random start"""
        assert orchestrate(_config("cp1xcp1_converge"), tmp_path / "quadric") == 0
        report = RunDirectory(tmp_path / "quadric").read_json("report.json")
        assert report["converged"]

    def test_blowup_does_not_converge(self, tmp_path):
        """Test the blow-up of CP^2 keeps moving and flags I_2"""
        orchestrate(_config("bl1cp2_obstruction"), tmp_path / "bl")
        run = RunDirectory(tmp_path / "bl")
        report = run.read_json("report.json")
        assert not report["converged"]
        assert report["blowup"]["p"] == 2.0
        mis = run.read_json("mis.json")
        assert mis["control"]["passed"]
