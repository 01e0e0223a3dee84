"""Version lookup for the krf_lab package."""

from importlib.metadata import PackageNotFoundError, version

__all__ = ["get_version"]

DEV_VERSION = "0.0.0-dev"


def get_version() -> str:
    """Installed distribution version, or ``DEV_VERSION`` in a source checkout."""
    try:
        return version("krf-lab")
    except PackageNotFoundError:
        return DEV_VERSION
