"""
Tests for TOML run configuration parsing and validation
"""

import pytest

from krf_lab._exceptions import ConfigError
from krf_lab.config import (
    T_END_MAX,
    RunConfig,
    parse_config,
    parse_config_text,
    to_toml,
    worker_count,
    write_echo,
)
from krf_lab.mis_detector import DEFAULT_P_LIST

MINIMAL = '[model]\nname = "cp1"\n'


class TestDefaults:
    """Test defaults and complete files"""

    def test_minimal_file(self):
        """Test a model name alone is a complete configuration"""
        config = parse_config_text(MINIMAL)
        assert config == RunConfig()
        assert config.model.grid == 513
        assert config.flow.mu == 1.0
        assert config.mis.p_list == DEFAULT_P_LIST
        assert config.run.phi0 == "zero"

    def test_empty_file(self):
        """Test an empty file falls back to every default"""
        assert parse_config_text("") == RunConfig()

    def test_full_file(self):
        """Test values from every section are applied"""
        text = """
[model]
name = "bl1cp2"
L = 8
grid = 129
reference = "fubini_study"

[flow]
t_end = 50
scheme = "rk2"
adaptive = false

[diagnostics]
cadence = 0.5
lambda_every = 0

[mis]
p_list = [1, 2, 4]

[run]
seed = 7
phi0 = "random"
"""
        config = parse_config_text(text)
        assert config.model.name == "bl1cp2"
        assert config.model.L == 8.0
        assert isinstance(config.model.L, float)
        assert config.flow.scheme == "rk2"
        assert config.flow.adaptive is False
        assert config.flow.t_end == 50.0
        assert config.diagnostics.lambda_every == 0.0
        assert config.mis.p_list == (1.0, 2.0, 4.0)
        assert config.run.seed == 7


class TestValidation:
    """Test errors carry the field path and line number"""

    def test_grid_not_power_of_two(self):
        """Test grid = 100 is refused with its field and line"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text('[model]\nname = "cp1"\ngrid = 100\n')
        assert exc_info.value.field == "model.grid"
        assert exc_info.value.line == 3
        assert exc_info.value.stage == "parse"

    def test_grid_too_small(self):
        """Test grid = 33 is refused although it is 2^k + 1"""
        with pytest.raises(ConfigError, match="65"):
            parse_config_text("[model]\ngrid = 33\n")

    def test_unknown_key(self):
        """Test an unknown key names the allowed keys"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text("[flow]\nt_end = 5\ndt = 0.1\n")
        assert exc_info.value.field == "flow.dt"
        assert exc_info.value.line == 3
        assert "t_end" in exc_info.value.message

    def test_unknown_section(self):
        """Test an unknown table is refused"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text(MINIMAL + "\n[plots]\nstyle = 1\n")
        assert exc_info.value.field == "plots"
        assert exc_info.value.line == 4

    def test_wrong_type(self):
        """Test a string where a number is expected"""
        with pytest.raises(ConfigError, match="expected a number") as exc_info:
            parse_config_text('[model]\nL = "eight"\n')
        assert exc_info.value.field == "model.L"

    def test_integer_for_float_is_accepted(self):
        """Test integers are accepted for float fields but not the reverse"""
        assert parse_config_text("[flow]\nt_end = 5\n").flow.t_end == 5.0
        with pytest.raises(ConfigError, match="expected an integer"):
            parse_config_text("[model]\ngrid = 129.0\n")

    def test_t_end_limit(self):
        """Test t_end above the maximum is refused"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text(f"[flow]\nt_end = {T_END_MAX + 1}\n")
        assert exc_info.value.field == "flow.t_end"

    def test_eigenvalue_monitor_needs_mu_one(self):
        """Test mu != 1 with the eigenvalue monitor enabled is refused"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text("[flow]\nmu = 0.5\n")
        assert exc_info.value.field == "diagnostics.lambda_every"
        config = parse_config_text("[flow]\nmu = 0.5\n[diagnostics]\nlambda_every = 0\n")
        assert config.flow.mu == 0.5

    def test_flow_settings_anchor_to_section(self):
        """Test integrator validation errors point at the [flow] table"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text('\n[flow]\nscheme = "euler"\n')
        assert exc_info.value.field == "flow"
        assert exc_info.value.line == 2

    @pytest.mark.parametrize(
        "text, field",
        [
            ('[model]\nname = "cp3"\n', "model.name"),
            ('[model]\nreference = "kahler"\n', "model.reference"),
            ("[model]\nL = 4\n", "model.L"),
            ("[diagnostics]\ncadence = 0\n", "diagnostics.cadence"),
            ("[mis]\np_list = [0, 2]\n", "mis.p_list"),
            ("[mis]\nblowup_ratio = 1\n", "mis.blowup_ratio"),
            ('[run]\nphi0 = "gaussian"\n', "run.phi0"),
            ("[run]\nseed = -1\n", "run.seed"),
        ],
    )
    def test_out_of_range(self, text, field):
        """Test each range check reports its field"""
        with pytest.raises(ConfigError) as exc_info:
            parse_config_text(text)
        assert exc_info.value.field == field

    def test_syntax_error(self):
        """Test invalid TOML reports a line number"""
        with pytest.raises(ConfigError, match="invalid TOML") as exc_info:
            parse_config_text('[model]\nname = "cp1"\ngrid = \n')
        assert exc_info.value.line == 3

    def test_missing_file(self, tmp_path):
        """Test an unreadable path raises ConfigError"""
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "missing.toml")


class TestEcho:
    """Test the config echo written into run directories"""

    def test_echo_reparses(self, tmp_path):
        """Test the echo parses back to the same configuration"""
        config = parse_config_text(
            '[model]\nname = "cp2"\ngrid = 65\n[mis]\np_list = [1.5, 3]\n[run]\nseed = 3\n'
        )
        path = write_echo(config, tmp_path / "run.toml")
        assert parse_config(path) == config

    def test_echo_is_complete(self):
        """Test every section and field is written"""
        text = to_toml(RunConfig())
        for section in ("[model]", "[flow]", "[diagnostics]", "[mis]", "[run]"):
            assert section in text
        assert "tail_tol" in text


class TestWorkerCount:
    """Test the thread cap"""

    def test_default(self, monkeypatch):
        """Test the default is at least one"""
        monkeypatch.delenv("KRF_LAB_THREADS", raising=False)
        assert worker_count() >= 1

    def test_env(self, monkeypatch):
        """Test KRF_LAB_THREADS overrides the default"""
        monkeypatch.setenv("KRF_LAB_THREADS", "3")
        assert worker_count() == 3

    @pytest.mark.parametrize("raw", ["0", "many", "-2"])
    def test_invalid_env(self, monkeypatch, raw):
        """Test a non-positive or non-integer cap raises ConfigError"""
        monkeypatch.setenv("KRF_LAB_THREADS", raw)
        with pytest.raises(ConfigError):
            worker_count()
