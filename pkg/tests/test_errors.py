"""
Tests for error handling
"""

import json

import pytest

import krf_lab
from krf_lab._exceptions import status_code_for


class TestExceptionClasses:
    """Test exception class hierarchy and attributes"""

    def test_krf_error_base(self):
        """Test KRFError base class"""
        err = krf_lab.KRFError("test error", -1)
        assert err.message == "test error"
        assert err.status_code == -1
        assert "test error" in str(err)
        assert "(status=-1)" in str(err)

    def test_krf_error_default_status(self):
        """Test KRFError with default status code"""
        err = krf_lab.KRFError("test error")
        assert err.status_code == -1
        assert err.stage is None

    def test_invalid_configuration_inherits_value_error(self):
        """Test InvalidConfigurationError inherits from both KRFError and ValueError"""
        err = krf_lab.InvalidConfigurationError("bad value")
        assert isinstance(err, krf_lab.KRFError)
        assert isinstance(err, ValueError)
        assert err.status_code == -2

    def test_config_error_carries_field_and_line(self):
        """Test ConfigError records the field path, line and parse stage"""
        err = krf_lab.ConfigError("must be 2^k + 1", field="model.grid", line=4)
        assert err.field == "model.grid"
        assert err.line == 4
        assert err.stage == "parse"
        assert err.status_code == -5
        assert "model.grid (line 4)" in str(err)
        assert isinstance(err, ValueError)

    def test_unsupported_errors_inherit_not_implemented(self):
        """Test dimension and model errors inherit from NotImplementedError"""
        assert isinstance(krf_lab.UnsupportedDimensionError("n=3"), NotImplementedError)
        assert isinstance(krf_lab.UnsupportedModelError("dp6"), NotImplementedError)

    def test_run_io_error_inherits_os_error(self):
        """Test RunIOError inherits from OSError and keeps the path"""
        err = krf_lab.RunIOError("cannot write", path="/tmp/x")
        assert isinstance(err, OSError)
        assert err.path == "/tmp/x"
        assert err.status_code == -16

    def test_lookup_errors(self):
        """Test missing-data style errors inherit from LookupError"""
        assert isinstance(krf_lab.MissingDataError("no column"), LookupError)
        assert isinstance(krf_lab.NoCauchySubfamilyError("no family"), LookupError)

    def test_step_collapse_keeps_time(self):
        """Test StepCollapseError records the collapse time"""
        err = krf_lab.StepCollapseError("dt below dt_min", t=3.5)
        assert err.t == 3.5
        assert err.status_code == -10

    def test_to_record_is_json_ready(self):
        """Test to_record() produces a JSON-serializable dict"""
        err = krf_lab.ConfigError("bad", field="flow.t_end", line=7)
        record = err.to_record()
        assert record["error"] == "ConfigError"
        assert record["status"] == -5
        assert record["stage"] == "parse"
        assert record["field"] == "flow.t_end"
        json.dumps(record)


class TestRaiseForStatus:
    """Test raise_for_status function"""

    def test_success_does_not_raise(self):
        """Test that success status codes do not raise"""
        krf_lab.raise_for_status(0)
        krf_lab.raise_for_status(1)

    @pytest.mark.parametrize(
        "code, exc",
        [
            (-1, krf_lab.KRFError),
            (-2, krf_lab.InvalidConfigurationError),
            (-3, krf_lab.NonPositiveMetricError),
            (-4, krf_lab.NotReflexiveError),
            (-5, krf_lab.ConfigError),
            (-6, krf_lab.UnsupportedDimensionError),
            (-7, krf_lab.UnsupportedModelError),
            (-8, krf_lab.DegenerateHessianError),
            (-9, krf_lab.UnboundedRicciPotentialError),
            (-10, krf_lab.StepCollapseError),
            (-11, krf_lab.TailNotConvergedError),
            (-12, krf_lab.EigSolverError),
            (-13, krf_lab.FitFailureError),
            (-14, krf_lab.NoCauchySubfamilyError),
            (-15, krf_lab.MissingDataError),
            (-16, krf_lab.RunIOError),
        ],
    )
    def test_code_maps_to_class(self, code, exc):
        """Test that each status code raises its exception class"""
        with pytest.raises(exc) as exc_info:
            krf_lab.raise_for_status(code)
        assert type(exc_info.value) is exc
        assert exc_info.value.status_code == code

    def test_unknown_error_raises_krf_error(self):
        """Test that unknown negative codes raise KRFError"""
        with pytest.raises(krf_lab.KRFError) as exc_info:
            krf_lab.raise_for_status(-99)
        assert exc_info.value.status_code == -99

    def test_context_included_in_message(self):
        """Test that context is included in error message"""
        with pytest.raises(krf_lab.KRFError) as exc_info:
            krf_lab.raise_for_status(-11, "during normalize")
        assert "during normalize" in str(exc_info.value)

    def test_status_code_for(self):
        """Test status_code_for maps exceptions back to codes"""
        assert status_code_for(None) == 0
        assert status_code_for(krf_lab.EigSolverError("x")) == -12
        assert status_code_for(RuntimeError("x")) == -1


class TestExceptionExports:
    """Test that exception classes are properly exported"""

    def test_exceptions_in_all(self):
        """Test all exception classes are in __all__"""
        for name in [
            "KRFError",
            "ConfigError",
            "StepCollapseError",
            "TailNotConvergedError",
            "NoCauchySubfamilyError",
            "raise_for_status",
        ]:
            assert name in krf_lab.__all__
            assert hasattr(krf_lab, name)
