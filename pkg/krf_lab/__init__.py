"""KRF Lab - numerical Kähler-Ricci flow laboratory on toric Fano models.

The package integrates the normalized Kähler-Ricci flow written as a
parabolic real Monge-Ampère equation in the log-affine chart of a toric
Fano manifold, monitors the classical a priori estimates along the way and
looks for multiplier-ideal-sheaf concentration when the flow does not
converge.

Models (toric_models):
    - build_model(name, L, grid, reference): cp1, cp2, cp1xcp1, bl1cp2
    - model_info(model): facets, vertices, volume, barycenter
    - chart_consistency(model): grid quantities vs. chart calculus

Chart calculus (identities):
    - run_suite(ids, n_values, trials, seed): tensor identity residuals
    - IDENTITY_IDS: DIFF, NABLA3, LATER, ID1, BK, COMMUTE, EXPLICIT1,
      HDOT, GENERAL_HEAT, KRF_SPECIAL, PARA_C3

Flow (flow_engine):
    - FlowConfig, make_state(model, phi, t, dt), run_flow(model, config, phi0)
    - resume(...), normalize_c0(trajectory), regauge(...)

Diagnostics (diagnostics, functionals):
    - record(state, model): one DiagnosticsRecord
    - lambda_min(state, model): first eigenvalue of the weighted Laplacian
    - evaluate(state, model): J, F0, F and nu
    - check_inequalities(samples, records): monotonicity and sandwich checks

Multiplier ideal detection (mis_detector):
    - lp_scan(model, snapshots, p_list): integrals of exp(-p phi)
    - extract_limit(...), exponent_estimate(...), calibrate()

Runs (config, runner, persistence, plots):
    - parse_config(path): TOML run configuration
    - orchestrate(config, output): every stage into one run directory
    - accept(configs, output): acceptance suite

Error handling:
    Every failure raises a KRFError subclass carrying a negative status
    code and the pipeline stage; raise_for_status(code) maps codes back to
    exception classes.

Logging:
    - set_log_level(level): level of the ``krf_lab`` logger
    - set_log_callback(callable): forward log records to ``callable(level, message)``
"""

import logging
import sys

from ._exceptions import (
    ConfigError,
    DegenerateHessianError,
    EigSolverError,
    FitFailureError,
    InvalidConfigurationError,
    KRFError,
    MissingDataError,
    NoCauchySubfamilyError,
    NonPositiveMetricError,
    NotReflexiveError,
    RunIOError,
    StepCollapseError,
    TailNotConvergedError,
    UnboundedRicciPotentialError,
    UnsupportedDimensionError,
    UnsupportedModelError,
    raise_for_status,
)
from ._version import get_version
from .config import RunConfig, parse_config, parse_config_text
from .diagnostics import DiagnosticsRecord, lambda_min, record
from .flow_engine import FlowConfig, make_state, normalize_c0, regauge, resume, run_flow
from .functionals import check_inequalities, evaluate
from .identities import IDENTITY_IDS, run_suite, verify_identity
from .mis_detector import calibrate, exponent_estimate, extract_limit, lp_scan
from .runner import accept, orchestrate
from .toric_models import MODEL_NAMES, build_model, chart_consistency, model_info

__version__ = get_version()

# Core exports list (for documentation)
_CORE_EXPORTS = [
    # Models
    "MODEL_NAMES",
    "build_model",
    "model_info",
    "chart_consistency",
    # Chart calculus
    "IDENTITY_IDS",
    "run_suite",
    "verify_identity",
    # Flow
    "FlowConfig",
    "make_state",
    "run_flow",
    "resume",
    "normalize_c0",
    "regauge",
    # Diagnostics and functionals
    "DiagnosticsRecord",
    "record",
    "lambda_min",
    "evaluate",
    "check_inequalities",
    # Multiplier ideal detection
    "lp_scan",
    "extract_limit",
    "exponent_estimate",
    "calibrate",
    # Runs
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "orchestrate",
    "accept",
    # Exceptions
    "KRFError",
    "InvalidConfigurationError",
    "NonPositiveMetricError",
    "NotReflexiveError",
    "ConfigError",
    "UnsupportedDimensionError",
    "UnsupportedModelError",
    "DegenerateHessianError",
    "UnboundedRicciPotentialError",
    "StepCollapseError",
    "TailNotConvergedError",
    "EigSolverError",
    "FitFailureError",
    "NoCauchySubfamilyError",
    "MissingDataError",
    "RunIOError",
    "raise_for_status",
    # Logging
    "set_log_level",
    "set_log_callback",
]

__all__ = _CORE_EXPORTS

_logger = logging.getLogger("krf_lab")
_logger.addHandler(logging.NullHandler())
_stream_handler = None
_callback_handler = None


def set_log_level(level) -> None:
    """Set the level of the ``krf_lab`` logger and attach a stderr handler once."""
    global _stream_handler
    if _stream_handler is None:
        _stream_handler = logging.StreamHandler()
        _stream_handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        _logger.addHandler(_stream_handler)
    else:
        # setStream() flushes the old stream, which may already be closed
        _stream_handler.stream = sys.stderr
    _logger.setLevel(level)


class _CallbackHandler(logging.Handler):
    def __init__(self, callback):
        super().__init__()
        self.callback = callback

    def emit(self, record):
        try:
            self.callback(record.levelno, self.format(record))
        except Exception:
            self.handleError(record)


def set_log_callback(callback) -> None:
    """Forward ``krf_lab`` log records to ``callback(level, message)``.

    Pass ``None`` to remove a previously installed callback.
    """
    global _callback_handler
    if _callback_handler is not None:
        _logger.removeHandler(_callback_handler)
        _callback_handler = None
    if callback is None:
        return
    if not callable(callback):
        raise TypeError("callback must be callable or None")
    _callback_handler = _CallbackHandler(callback)
    _logger.addHandler(_callback_handler)
