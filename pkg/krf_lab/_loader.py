"""Optional dependency loader with error handling for krf_lab."""

import importlib.util
import sys

__all__ = ["load_matplotlib", "load_toml_reader", "OptionalDependencyError"]


class OptionalDependencyError(ImportError):
    """Raised when an optional dependency group is not installed."""

    pass


def _module_available(name: str) -> bool:
    """Check if a module can be located without importing it."""
    return importlib.util.find_spec(name) is not None


def load_matplotlib():
    """Load matplotlib with the non-interactive Agg backend.

    The returned pyplot module is configured for byte-deterministic SVG
    output: fixed ``svg.hashsalt`` and no embedded font subsets that depend
    on the host.

    Returns:
        module: ``matplotlib.pyplot``

    Raises:
        ImportError: If matplotlib is installed but fails to load
        OptionalDependencyError: If matplotlib is not installed
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "krf-lab"
        matplotlib.rcParams["svg.fonttype"] = "none"
        import matplotlib.pyplot as plt

        return plt

    except ImportError as e:
        if _module_available("matplotlib"):
            # Installed but broken - this is an error
            raise ImportError(
                f"Failed to load matplotlib: {e}\n"
                "The package is installed but could not be imported. "
                "This may indicate a missing dependency or ABI incompatibility."
            ) from e
        else:
            raise OptionalDependencyError(
                "matplotlib is not installed. Run 'pip install krf-lab[viz]' to enable plots."
            ) from e


def load_toml_reader():
    """Return a module exposing ``load``/``loads`` for TOML.

    Uses ``tomllib`` on Python 3.11+ and the ``tomli`` backport otherwise.

    Raises:
        OptionalDependencyError: If neither module is available
    """
    if sys.version_info >= (3, 11):
        import tomllib

        return tomllib
    try:
        import tomli

        return tomli
    except ImportError as e:
        raise OptionalDependencyError(
            "tomli is required on Python < 3.11. Run 'pip install tomli'."
        ) from e
