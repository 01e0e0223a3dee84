"""SVG plots of a run directory.

Output is byte-deterministic for identical inputs: the SVG hash salt is
fixed, fonts are not embedded and the date metadata is dropped.  Next to the
SVG files, ``plots.json`` lists every figure with its plotted data, axis
limits and the SHA-256 of the written file.
"""

import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np

from ._exceptions import MissingDataError
from ._loader import load_matplotlib
from .persistence import RunDirectory

logger = logging.getLogger(__name__)

__all__ = ["SERIES_PLOTS", "FUNCTIONAL_PLOTS", "PLOT_MANIFEST", "emit_plots", "plot_checksum"]

PLOT_MANIFEST = "plots.json"

# (file stem, column, y label, log scale)
SERIES_PLOTS = (
    ("osc_phi", "osc_phi", "osc phi", False),
    ("sup_abs_phidot", "sup_abs_phidot", "sup |phi_t|", True),
    ("lambda_min", "lambda_min", "lambda_1", False),
)
FUNCTIONAL_PLOTS = (
    ("F", "F", "F", False),
    ("nu", "nu", "nu", False),
    ("J", "J", "J", False),
)


def _column(rows, name: str, source: str) -> np.ndarray:
    if not rows or name not in rows[0]:
        raise MissingDataError(f"column {name!r} missing from {source}")
    return np.array([float(r[name]) for r in rows])


def _limits(values: np.ndarray, log: bool):
    finite = values[np.isfinite(values)]
    if log:
        finite = finite[finite > 0]
    if finite.size == 0:
        return (1e-16, 1.0) if log else (-1.0, 1.0)
    lo, hi = float(finite.min()), float(finite.max())
    if log:
        return 10 ** math.floor(math.log10(lo)), 10 ** math.ceil(math.log10(hi) + 1e-12)
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def plot_checksum(path) -> str:
    """SHA-256 of a written plot."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _floats(values) -> list:
    return [float(v) for v in values]


def _save(plt, path: Path, times, curves, ylabel: str, log: bool) -> dict:
    """Draw one figure and return its manifest entry."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    values = np.concatenate([c for _, c in curves]) if curves else np.array([])
    for label, curve in curves:
        ax.plot(times, curve, label=label, linewidth=1.2)
    if log:
        ax.set_yscale("log")
    t0, t1 = float(times[0]), float(times[-1])
    xlim = (t0, t1 if t1 > t0 else t0 + 1.0)
    ylim = _limits(values, log)
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.grid(True, which="major", linewidth=0.4)
    if len(curves) > 1:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return {
        "file": path.name,
        "ylabel": ylabel,
        "log": log,
        "xlim": _floats(xlim),
        "ylim": _floats(ylim),
        "times": _floats(times),
        "curves": [{"label": label, "values": _floats(curve)} for label, curve in curves],
        "sha256": plot_checksum(path),
    }


def emit_plots(run_dir, out_dir=None) -> list:
    """Write SVG plots for the series, functionals and ``I_p`` traces of a run.

    Returns:
        list: Paths of the written SVG files (the manifest is not listed).

    Raises:
        MissingDataError: If ``series.csv`` or one of its plotted columns is absent.
        OptionalDependencyError: If matplotlib is not installed.
    """
    run = run_dir if isinstance(run_dir, RunDirectory) else RunDirectory(run_dir)
    out = Path(out_dir) if out_dir is not None else run.file("plots")
    out.mkdir(parents=True, exist_ok=True)

    series = run.read_csv("series.csv")
    times = _column(series, "t", "series.csv")
    columns = {name: _column(series, col, "series.csv") for name, col, _, _ in SERIES_PLOTS}

    plt = load_matplotlib()
    figures = []
    for name, _, label, log in SERIES_PLOTS:
        values = columns[name]
        if log:
            values = np.abs(values)
        figures.append(_save(plt, out / f"{name}.svg", times, [(label, values)], label, log))

    if run.has("functionals.csv"):
        rows = run.read_csv("functionals.csv")
        f_times = _column(rows, "t", "functionals.csv")
        for name, col, label, log in FUNCTIONAL_PLOTS:
            curve = _column(rows, col, "functionals.csv")
            figures.append(_save(plt, out / f"{name}.svg", f_times, [(label, curve)], label, log))

    if run.has("mis.json"):
        mis = run.read_json("mis.json")
        traces = mis.get("traces", [])
        if traces:
            t_p = np.asarray(traces[0]["times"])
            curves = [(f"p = {tr['p']:g}", np.asarray(tr["log_values"])) for tr in traces]
            figures.append(_save(plt, out / "log_I_p.svg", t_p, curves, "log I_p", False))

    (out / PLOT_MANIFEST).write_text(json.dumps({"figures": figures}, indent=2, sort_keys=True))
    logger.info("wrote %d plots to %s", len(figures), out)
    return [out / f["file"] for f in figures]
