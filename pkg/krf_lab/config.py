"""TOML run configuration.

A run file has up to five tables::

    [model]        name, L, grid, reference
    [flow]         FlowConfig fields (mu, dt_init, t_end, scheme, ...)
    [diagnostics]  cadence, A, lambda_every, lambda_k
    [mis]          p_list, blowup_ratio, escalation, cauchy_tol, min_r2
    [run]          seed, output, phi0, amplitude

Every field has a default, so ``[model] name = "cp1"`` is a complete file.
Validation errors carry the dotted field path and, when the key is present
in the source, its line number.
"""

import logging
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli_w

from ._exceptions import ConfigError, InvalidConfigurationError
from ._loader import load_toml_reader
from .flow_engine import FlowConfig
from .mis_detector import DEFAULT_P_LIST
from .toric_models import MODEL_NAMES, REFERENCE_KINDS

logger = logging.getLogger(__name__)

__all__ = [
    "ModelConfig",
    "DiagnosticsConfig",
    "MisConfig",
    "RunSettings",
    "RunConfig",
    "PROFILES",
    "T_END_MAX",
    "parse_config",
    "parse_config_text",
    "to_toml",
    "write_echo",
    "worker_count",
]

PROFILES = ("zero", "sech", "random")
T_END_MAX = 200.0
THREADS_ENV = "KRF_LAB_THREADS"


@dataclass(frozen=True)
class ModelConfig:
    name: str = "cp1"
    L: float = 8.0
    grid: int = 513
    reference: str = "bergman"


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Diagnostics cadence and constants.

    ``lambda_every = 0`` disables the eigenvalue monitor.
    """

    cadence: float = 0.1
    A: float = 10.0
    lambda_every: float = 1.0
    lambda_k: int = 6


@dataclass(frozen=True)
class MisConfig:
    p_list: tuple = DEFAULT_P_LIST
    blowup_ratio: float = 10.0
    escalation: float = 2.0
    cauchy_tol: float = 0.05
    min_r2: float = 0.9


@dataclass(frozen=True)
class RunSettings:
    """Run-level settings: seed, output directory and initial profile."""

    seed: int = 0
    output: str = "runs/default"
    phi0: str = "zero"
    amplitude: float = 0.3


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    mis: MisConfig = field(default_factory=MisConfig)
    run: RunSettings = field(default_factory=RunSettings)


_SECTIONS = {
    "model": ModelConfig,
    "flow": FlowConfig,
    "diagnostics": DiagnosticsConfig,
    "mis": MisConfig,
    "run": RunSettings,
}


def _locate(text: str, section: str, key: str = None):
    """1-based line of ``key`` inside ``[section]`` (or of the header itself)."""
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    for number, line in enumerate(text.splitlines(), start=1):
        match = header.match(line)
        if match:
            current = match.group(1)
            if key is None and current == section:
                return number
            continue
        if current == section and key is not None:
            if re.match(rf"^\s*{re.escape(key)}\s*=", line):
                return number
    return None


def _coerce(value, default, path: str, line):
    """Convert a TOML value to the type of the dataclass default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", field=path, line=line)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", field=path, line=line)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=path, line=line)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", field=path, line=line)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"expected a list of numbers, got {value!r}", field=path, line=line)
        return tuple(float(v) for v in value)
    return value


def _section(cls, data: dict, name: str, text: str):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", field=name, line=_locate(text, name))
    defaults = {f.name: f.default for f in fields(cls)}
    values = {}
    for key, value in data.items():
        path = f"{name}.{key}"
        line = _locate(text, name, key)
        if key not in defaults:
            raise ConfigError(f"unknown key (allowed: {sorted(defaults)})", field=path, line=line)
        values[key] = _coerce(value, defaults[key], path, line)
    try:
        return cls(**values)
    except InvalidConfigurationError as e:
        # FlowConfig validates itself; anchor its message to the section
        raise ConfigError(e.message, field=name, line=_locate(text, name)) from e


def _is_power_of_two_plus_one(n: int) -> bool:
    m = n - 1
    return m > 0 and (m & (m - 1)) == 0


def _validate(config: RunConfig, text: str) -> None:
    def fail(path: str, message: str):
        section, key = path.split(".", 1)
        raise ConfigError(message, field=path, line=_locate(text, section, key))

    model = config.model
    if model.name not in MODEL_NAMES:
        fail("model.name", f"unknown model {model.name!r}; available: {list(MODEL_NAMES)}")
    if model.reference not in REFERENCE_KINDS:
        fail("model.reference", f"must be one of {list(REFERENCE_KINDS)}")
    if model.L < 6:
        fail("model.L", f"box half-width must be >= 6, got {model.L}")
    if not _is_power_of_two_plus_one(model.grid) or model.grid < 65:
        fail("model.grid", f"grid must be 2^k + 1 >= 65 for centered stencils, got {model.grid}")
    if config.flow.t_end > T_END_MAX:
        fail("flow.t_end", f"t_end must be <= {T_END_MAX:g}, got {config.flow.t_end}")
    if config.flow.mu != 1.0 and config.diagnostics.lambda_every > 0:
        fail("diagnostics.lambda_every", "the eigenvalue monitor needs mu = 1; set it to 0")
    if not config.diagnostics.cadence > 0:
        fail("diagnostics.cadence", "cadence must be > 0")
    if config.diagnostics.lambda_every < 0:
        fail("diagnostics.lambda_every", "must be >= 0")
    if not config.mis.p_list or min(config.mis.p_list) <= 0:
        fail("mis.p_list", "exponents must be positive")
    if not config.mis.blowup_ratio > 1:
        fail("mis.blowup_ratio", "must be > 1")
    if not config.mis.escalation >= 1:
        fail("mis.escalation", "must be >= 1")
    if config.run.phi0 not in PROFILES:
        fail("run.phi0", f"must be one of {list(PROFILES)}")
    if not 0 <= config.run.seed < 2**64:
        fail("run.seed", "seed must be a 64-bit unsigned integer")


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate TOML text.

    Raises:
        ConfigError: On syntax errors, unknown keys, wrong types or values
            out of range.
    """
    toml = load_toml_reader()
    try:
        data = toml.loads(text)
    except toml.TOMLDecodeError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ConfigError(
            f"invalid TOML in {source}: {e}", line=int(match.group(1)) if match else None
        ) from e

    for name in data:
        if name not in _SECTIONS:
            raise ConfigError(
                f"unknown section (allowed: {sorted(_SECTIONS)})",
                field=name,
                line=_locate(text, name),
            )
    parts = {name: _section(cls, data.get(name, {}), name, text) for name, cls in _SECTIONS.items()}
    config = RunConfig(**parts)
    _validate(config, text)
    return config


def parse_config(path) -> RunConfig:
    """Parse a run configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    config = parse_config_text(text, source=str(path))
    logger.debug("parsed %s: %s", path, config)
    return config


def to_toml(config: RunConfig) -> str:
    """TOML text with every field filled in."""
    data = {}
    for name in _SECTIONS:
        section = asdict(getattr(config, name))
        data[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    return tomli_w.dumps(data)


def write_echo(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(to_toml(config))
    return path


def worker_count() -> int:
    """Thread cap from ``KRF_LAB_THREADS`` (default: CPU count)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return max(1, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from e
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value
