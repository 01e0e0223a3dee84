"""krf-lab exception classes for structured error handling."""

__all__ = [
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
    "status_code_for",
]


class KRFError(Exception):
    """Base exception for krf-lab errors.

    Attributes:
        status_code: The krf-lab status code that identifies the failure class.
        message: Human-readable error message.
        stage: Pipeline stage the error was raised in, when known
            (``"parse"``, ``"run-flow"``, ``"normalize"``, ...).
    """

    status = -1

    def __init__(self, message: str, status_code: int = None, stage: str = None):
        if status_code is None:
            status_code = type(self).status
        self.status_code = status_code
        self.message = message
        self.stage = stage
        super().__init__(f"{message} (status={status_code})")

    def to_record(self) -> dict:
        """JSON-ready error record written by the CLI and the orchestrator."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "status": self.status_code,
            "stage": self.stage,
        }


class InvalidConfigurationError(KRFError, ValueError):
    """Raised when inputs describe an invalid configuration.

    Corresponds to KRF_ERROR_INVALID (-2).
    """

    status = -2


class NonPositiveMetricError(InvalidConfigurationError):
    """Raised when a chart metric is not positive definite at the evaluation point.

    Corresponds to KRF_ERROR_NONPOSITIVE_METRIC (-3).
    An eigenvalue of the reference or evolving metric is <= 1e-12, so the
    test configuration is not a Kähler configuration.
    """

    status = -3


class NotReflexiveError(InvalidConfigurationError):
    """Raised when polytope data fails the reflexivity predicate.

    Corresponds to KRF_ERROR_NOT_REFLEXIVE (-4).
    """

    status = -4


class ConfigError(InvalidConfigurationError):
    """Raised when a run configuration fails validation.

    Corresponds to KRF_ERROR_CONFIG (-5).

    Attributes:
        field: Dotted path of the offending field (``"model.grid"``).
        line: 1-based source line of the field, or None if it cannot be located.
    """

    status = -5

    def __init__(self, message: str, field: str = "", line: int = None):
        self.field = field
        self.line = line
        where = field
        if line is not None:
            where = f"{field} (line {line})" if field else f"line {line}"
        text = f"{where}: {message}" if where else message
        super().__init__(text, stage="parse")

    def to_record(self) -> dict:
        record = super().to_record()
        record["field"] = self.field
        record["line"] = self.line
        return record


class UnsupportedDimensionError(KRFError, NotImplementedError):
    """Raised when a chart computation is requested outside n in {1, 2}.

    Corresponds to KRF_ERROR_UNSUPPORTED_DIMENSION (-6).
    """

    status = -6


class UnsupportedModelError(KRFError, NotImplementedError):
    """Raised when a model, reference or operation combination is not available.

    Corresponds to KRF_ERROR_UNSUPPORTED_MODEL (-7).
    This also guards operations that only make sense for mu = 1 geometries.
    """

    status = -7


class DegenerateHessianError(KRFError):
    """Raised when D^2(psi_0 + phi) loses positivity on the grid.

    Corresponds to KRF_ERROR_DEGENERATE_HESSIAN (-8).
    Inside the flow engine this triggers step rejection rather than failure.
    """

    status = -8


class UnboundedRicciPotentialError(KRFError):
    """Raised when the reference Ricci potential is not stable under box growth.

    Corresponds to KRF_ERROR_UNBOUNDED_RICCI_POTENTIAL (-9).
    """

    status = -9


class StepCollapseError(KRFError):
    """Raised when the adaptive step size falls below dt_min.

    Corresponds to KRF_ERROR_STEP_COLLAPSE (-10).
    This indicates loss of Kähler positivity that the grid cannot resolve.

    Attributes:
        t: Flow time at which the collapse happened.
    """

    status = -10

    def __init__(self, message: str, t: float = float("nan"), stage: str = None):
        self.t = t
        super().__init__(message, stage=stage)


class TailNotConvergedError(KRFError):
    """Raised when the gauge integral tail exceeds its tolerance.

    Corresponds to KRF_ERROR_TAIL_NOT_CONVERGED (-11).
    Consider increasing t_end or the normalization horizon.
    """

    status = -11


class EigSolverError(KRFError):
    """Raised when the sparse eigensolver fails to converge.

    Corresponds to KRF_ERROR_EIGSOLVER (-12).
    """

    status = -12


class FitFailureError(KRFError):
    """Raised when an exponent fit has R^2 below the acceptance threshold.

    Corresponds to KRF_ERROR_FIT_FAILURE (-13).
    """

    status = -13


class NoCauchySubfamilyError(KRFError, LookupError):
    """Raised when no L^1-Cauchy family of snapshots can be found.

    Corresponds to KRF_ERROR_NO_CAUCHY_SUBFAMILY (-14).
    """

    status = -14


class MissingDataError(KRFError, LookupError):
    """Raised when a run directory lacks a required series or column.

    Corresponds to KRF_ERROR_MISSING_DATA (-15).
    """

    status = -15


class RunIOError(KRFError, OSError):
    """Raised when reading or writing a run artifact fails.

    Corresponds to KRF_ERROR_IO (-16).

    Attributes:
        path: The file or directory involved.
    """

    status = -16

    def __init__(self, message: str, path=None, stage: str = None):
        self.path = None if path is None else str(path)
        text = f"{path}: {message}" if path is not None else message
        super().__init__(text, stage=stage)


# Mapping from status codes to exception classes
_STATUS_TO_EXCEPTION = {
    -1: KRFError,
    -2: InvalidConfigurationError,
    -3: NonPositiveMetricError,
    -4: NotReflexiveError,
    -5: ConfigError,
    -6: UnsupportedDimensionError,
    -7: UnsupportedModelError,
    -8: DegenerateHessianError,
    -9: UnboundedRicciPotentialError,
    -10: StepCollapseError,
    -11: TailNotConvergedError,
    -12: EigSolverError,
    -13: FitFailureError,
    -14: NoCauchySubfamilyError,
    -15: MissingDataError,
    -16: RunIOError,
}


def status_code_for(exc: BaseException) -> int:
    """Return the status code recorded for an exception (0 for None)."""
    if exc is None:
        return 0
    if isinstance(exc, KRFError):
        return exc.status_code
    return -1


def raise_for_status(status_code: int, context: str = "") -> None:
    """Raise an appropriate exception if status_code indicates an error.

    Args:
        status_code: A krf-lab status code, as stored in ``status.json``.
        context: Optional context string to include in the error message.

    Raises:
        KRFError: Or an appropriate subclass based on the status code.

    Example:
        >>> raise_for_status(status["run-flow"]["status"], "during run-flow")
    """
    if status_code >= 0:
        return  # Success

    exception_class = _STATUS_TO_EXCEPTION.get(status_code, KRFError)
    error_msg = f"krf-lab error code {status_code} ({exception_class.__name__})"
    if context:
        error_msg = f"{context}: {error_msg}"

    if exception_class is ConfigError:
        raise ConfigError(error_msg)
    if exception_class is RunIOError:
        raise RunIOError(error_msg)
    if exception_class is StepCollapseError:
        raise StepCollapseError(error_msg)
    raise exception_class(error_msg, status_code)
