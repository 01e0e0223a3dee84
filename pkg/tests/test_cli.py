"""
Tests for the krf-lab command-line interface
"""

import json

import pytest

from krf_lab.cli import build_parser, main, shipped_configs
from krf_lab.persistence import RunDirectory

SMALL_RUN = """
[model]
name = "cp1"
grid = 65

[flow]
t_end = 2.0
snapshot_every = 0.5

[diagnostics]
cadence = 0.5
lambda_every = 0

[run]
phi0 = "sech"
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_RUN)
    return path


@pytest.fixture
def flowed(tmp_path, small_config, capsys):
    """A run directory after ``run-flow``."""
    out = tmp_path / "run"
    assert main(["run-flow", "--config", str(small_config), "--output", str(out)]) == 0
    capsys.readouterr()
    return out


def _stderr_record(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestParser:
    """Test argument parsing"""

    def test_subcommand_required(self):
        """Test a missing subcommand is a usage error"""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_number_lists(self):
        """Test comma-separated exponents and dimensions"""
        args = build_parser().parse_args(["mis-scan", "run", "--p", "1,1.5,2"])
        assert args.p == (1.0, 1.5, 2.0)
        args = build_parser().parse_args(["verify-identities", "--n", "2"])
        assert args.n == (2,)

    def test_run_flow_sources_exclusive(self):
        """Test --config and --resume cannot be combined"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run-flow", "--config", "a.toml", "--resume", "run"])

    def test_shipped_configs(self):
        """Test the acceptance configurations ship with the package"""
        names = [p.stem for p in shipped_configs()]
        assert names == ["bl1cp2_obstruction", "cp1_converge", "cp1xcp1_converge"]


class TestCommands:
    """Test individual subcommands"""

    def test_model_info(self, capsys):
        """Test model-info prints the model summary as JSON"""
        assert main(["model-info", "bl1cp2", "--grid", "65"]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["name"] == "bl1cp2"
        assert info["volume"] == pytest.approx(4.0)
        assert info["kahler_einstein_expected"] is False

    def test_verify_identities(self, tmp_path, capsys):
        """Test a small identity run writes its summary"""
        out = tmp_path / "ids.json"
        argv = ["verify-identities", "--ids", "DIFF,BK", "--n", "1", "--trials", "2"]
        assert main(argv + ["--out", str(out)]) == 0
        summary = json.loads(out.read_text())
        assert summary["passed"]
        assert sorted(summary["identities"]) == ["BK", "DIFF"]
        assert summary["identities"]["DIFF"]["count"] == 2

    def test_broken_config(self, tmp_path, capsys):
        """Test a config error exits with 2 and a JSON record on stderr"""
        path = tmp_path / "broken.toml"
        path.write_text('[model]\nname = "cp1"\ngrid = 100\n')
        assert main(["run-flow", "--config", str(path), "--output", str(tmp_path / "r")]) == 2
        record = _stderr_record(capsys)
        assert record["error"] == "ConfigError"
        assert record["stage"] == "parse"
        assert record["field"] == "model.grid"
        assert record["line"] == 3
        assert record["status"] == -5

    def test_missing_run_directory(self, tmp_path, capsys):
        """Test a missing run directory fails on its config echo"""
        assert main(["report", str(tmp_path / "nowhere")]) == 2
        record = _stderr_record(capsys)
        assert record["error"] == "ConfigError"
        assert record["stage"] == "parse"


class TestPipeline:
    """Test the stage commands on a short run"""

    def test_run_flow_outputs(self, flowed):
        """Test run-flow writes the echo, trace and snapshots"""
        run = RunDirectory(flowed)
        assert run.has("run.toml")
        assert run.has("trace.csv")
        assert [e.t for e in run.snapshots()] == [0.0, 0.5, 1.0, 1.5, 2.0]
        assert run.status()["run-flow"]["status"] == 0
        assert not run.has(".lock")

    def test_stages(self, flowed, capsys):
        """Test diagnose, mis-scan and report run in order"""
        assert main(["diagnose", str(flowed)]) == 0
        diagnosed = json.loads(capsys.readouterr().out)
        assert diagnosed["gauge"] == "provisional"

        assert main(["mis-scan", str(flowed), "--p", "1,2"]) == 0
        scanned = json.loads(capsys.readouterr().out)
        assert scanned["blowup"] == []

        assert main(["report", str(flowed), "--no-plots"]) in (0, 1)
        report = RunDirectory(flowed).read_json("report.json")
        assert report["model"] == "cp1"
        assert report["t_final"] == pytest.approx(2.0)
        assert report["blowup"] is False
        assert set(report["status"]) >= {"run-flow", "normalize", "diagnose", "mis-scan"}

    def test_mis_scan_needs_diagnose(self, flowed, capsys):
        """Test mis-scan before diagnose is refused"""
        assert main(["mis-scan", str(flowed)]) == 2
        assert _stderr_record(capsys)["error"] == "MissingDataError"

    def test_locked_directory(self, flowed, capsys):
        """Test a second writer is refused"""
        (flowed / ".lock").write_text("1")
        assert main(["diagnose", str(flowed)]) == 2
        record = _stderr_record(capsys)
        assert record["error"] == "RunIOError"
        assert record["stage"] == "diagnose"

    def test_resume(self, flowed, capsys):
        """Test resuming extends the run to a new final time"""
        assert main(["run-flow", "--resume", str(flowed), "--t-end", "3.0"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["t_final"] == pytest.approx(3.0)
        run = RunDirectory(flowed)
        assert run.snapshots()[-1].t == pytest.approx(3.0)
        assert "t_end = 3.0" in run.file("run.toml").read_text()
