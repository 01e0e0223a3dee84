"""Run directory layout and file formats.

A run directory holds::

    run.toml                 config echo
    snapshots/phi_t*.bin     grids (32-byte header + little-endian f64 data)
    snapshots/index.csv      file, t, dt, step per snapshot
    trace.csv                flow samples (provisional gauge)
    series.csv               diagnostics records (normalized gauge)
    functionals.csv          functional samples (normalized gauge)
    normalization.json       initial-constant normalization
    status.json              per-stage status records
    .lock                    present while a writer owns the directory

Grid header layout: int32 n, int32[2] dims (second is 1 when n = 1),
int32 reserved, float64 L, float64 t.
"""

import csv
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._exceptions import MissingDataError, RunIOError

logger = logging.getLogger(__name__)

__all__ = [
    "HEADER_DTYPE",
    "GridFile",
    "SnapshotEntry",
    "RunDirectory",
    "write_grid",
    "read_grid",
    "format_float",
]

HEADER_DTYPE = np.dtype(
    [("n", "<i4"), ("dims", "<i4", (2,)), ("reserved", "<i4"), ("L", "<f8"), ("t", "<f8")]
)
if HEADER_DTYPE.itemsize != 32:
    raise RunIOError(f"snapshot header must be 32 bytes, got {HEADER_DTYPE.itemsize}")

INDEX_COLUMNS = ("file", "t", "dt", "step")


@dataclass(frozen=True)
class GridFile:
    """Decoded grid file."""

    values: np.ndarray
    L: float
    t: float


@dataclass(frozen=True)
class SnapshotEntry:
    """One row of ``snapshots/index.csv``."""

    file: str
    t: float
    dt: float
    step: int


def format_float(x) -> str:
    """Shortest round-tripping text for a float (bit-identical CSV output)."""
    return repr(float(x))


def write_grid(path, values: np.ndarray, L: float, t: float) -> Path:
    """Write a 1D or 2D grid with the 32-byte header.

    Raises:
        RunIOError: On any filesystem failure.
    """
    path = Path(path)
    values = np.asarray(values, dtype="<f8")
    if values.ndim not in (1, 2):
        raise ValueError(f"grid must be 1D or 2D, got shape {values.shape}")
    dims = (values.shape[0], values.shape[1] if values.ndim == 2 else 1)
    header = np.array([(values.ndim, dims, 0, float(L), float(t))], dtype=HEADER_DTYPE)
    try:
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(values).tobytes())
    except OSError as e:
        raise RunIOError(f"cannot write grid: {e}", path=path) from e
    return path


def read_grid(path) -> GridFile:
    """Read a grid written by :func:`write_grid`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise RunIOError(f"cannot read grid: {e}", path=path) from e
    if len(raw) < HEADER_DTYPE.itemsize:
        raise RunIOError("truncated grid header", path=path)
    header = np.frombuffer(raw[: HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    n = int(header["n"])
    dims = tuple(int(d) for d in header["dims"])
    shape = dims[:n]
    data = np.frombuffer(raw[HEADER_DTYPE.itemsize :], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise RunIOError(f"grid payload has {data.size} values, header says {shape}", path=path)
    return GridFile(values=data.reshape(shape).copy(), L=float(header["L"]), t=float(header["t"]))


class RunDirectory:
    """Accessor for the files of one run."""

    def __init__(self, path, create: bool = False):
        self.path = Path(path)
        if create:
            try:
                (self.path / "snapshots").mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise RunIOError(f"cannot create run directory: {e}", path=self.path) from e
        elif not self.path.is_dir():
            raise RunIOError("run directory does not exist", path=self.path)

    def __repr__(self):
        return f"RunDirectory({str(self.path)!r})"

    def file(self, name: str) -> Path:
        return self.path / name

    @property
    def snapshot_dir(self) -> Path:
        return self.path / "snapshots"

    # ------------------------------------------------------------------
    # locking

    @contextmanager
    def lock(self):
        """Hold ``.lock`` for the duration of the block; refuse a second writer."""
        lock_path = self.file(".lock")
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            raise RunIOError("run directory is locked by another writer", path=lock_path) from e
        except OSError as e:
            raise RunIOError(f"cannot create lock: {e}", path=lock_path) from e
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield self
        finally:
            try:
                lock_path.unlink()
            except FileNotFoundError:
                pass

    # ------------------------------------------------------------------
    # snapshots

    @staticmethod
    def snapshot_name(t: float) -> str:
        return f"phi_t{t:011.5f}.bin"

    def write_snapshot(self, values: np.ndarray, L: float, t: float, dt: float, step: int) -> Path:
        """Write one snapshot grid and append its row to ``index.csv``."""
        name = self.snapshot_name(t)
        path = write_grid(self.snapshot_dir / name, values, L, t)
        index = self.snapshot_dir / "index.csv"
        new = not index.exists()
        try:
            with open(index, "a", newline="") as fh:
                writer = csv.writer(fh)
                if new:
                    writer.writerow(INDEX_COLUMNS)
                writer.writerow([name, format_float(t), format_float(dt), int(step)])
        except OSError as e:
            raise RunIOError(f"cannot update snapshot index: {e}", path=index) from e
        logger.debug("snapshot t=%g -> %s", t, path)
        return path

    def snapshots(self) -> list:
        """Snapshot index entries in time order."""
        index = self.snapshot_dir / "index.csv"
        if not index.exists():
            return []
        rows = self._read_rows(index)
        entries = [
            SnapshotEntry(r["file"], float(r["t"]), float(r["dt"]), int(r["step"])) for r in rows
        ]
        return sorted(entries, key=lambda e: e.t)

    def load_snapshot(self, entry: SnapshotEntry) -> GridFile:
        return read_grid(self.snapshot_dir / entry.file)

    def truncate_snapshots(self, t_max: float) -> None:
        """Drop index rows after ``t_max`` (used when resuming)."""
        kept = [e for e in self.snapshots() if e.t <= t_max + 1e-12]
        index = self.snapshot_dir / "index.csv"
        self.write_csv(
            index,
            [{"file": e.file, "t": e.t, "dt": e.dt, "step": e.step} for e in kept],
            INDEX_COLUMNS,
        )

    # ------------------------------------------------------------------
    # tables

    def write_csv(self, name, rows, columns) -> Path:
        path = Path(name) if isinstance(name, Path) else self.file(name)
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_cell(row[c]) for c in columns])
        except OSError as e:
            raise RunIOError(f"cannot write table: {e}", path=path) from e
        return path

    def read_csv(self, name) -> list:
        """Rows of a CSV file as dicts of floats (non-numeric cells kept as text)."""
        path = self.file(name)
        if not path.exists():
            raise MissingDataError(f"{name} not found in {self.path}")
        rows = self._read_rows(path)
        return [{k: _parse(v) for k, v in row.items()} for row in rows]

    @staticmethod
    def _read_rows(path: Path) -> list:
        try:
            with open(path, newline="") as fh:
                return list(csv.DictReader(fh))
        except OSError as e:
            raise RunIOError(f"cannot read table: {e}", path=path) from e

    def write_json(self, name: str, payload) -> Path:
        path = self.file(name)
        try:
            path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))
        except OSError as e:
            raise RunIOError(f"cannot write JSON: {e}", path=path) from e
        return path

    def read_json(self, name: str):
        path = self.file(name)
        if not path.exists():
            raise MissingDataError(f"{name} not found in {self.path}")
        try:
            return json.loads(path.read_text())
        except (OSError, ValueError) as e:
            raise RunIOError(f"cannot read JSON: {e}", path=path) from e

    def has(self, name: str) -> bool:
        return self.file(name).exists()

    # ------------------------------------------------------------------
    # stage status

    def update_status(self, stage: str, status: int = 0, error: dict = None) -> None:
        """Record the outcome of a pipeline stage in ``status.json``."""
        records = self.read_json("status.json") if self.has("status.json") else {}
        records[stage] = {"status": int(status), "error": error}
        self.write_json("status.json", records)

    def status(self) -> dict:
        return self.read_json("status.json") if self.has("status.json") else {}


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return value


def _parse(text: str):
    try:
        return float(text)
    except (TypeError, ValueError):
        return text


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"object of type {type(obj).__name__} is not JSON serializable")
