import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from src.core.errors import InputError
from src.domain.models import OptimizerKind, RunStatus
from src.domain.state import RunTrace, TraceRow

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
TRACE_COLUMNS = ("iter", "x", "y_noisy", "f_true", "best_true", "sigma", "sampled_value", "elapsed_ms")
INFO_GAIN_COLUMNS = ("t", "lam", "value", "min_eigenvalue")


def _format(value: float) -> str:
    return repr(float(value))


def _temp_for(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    return os.fdopen(fd, "w", encoding="utf-8", newline=""), Path(tmp)


def atomic_write_text(path: Path, text: str) -> Path:
    """Write to a sibling temp file, then rename over the final name."""
    path = Path(path)
    handle, tmp = _temp_for(path)
    try:
        with handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return path


def write_json(path: Path, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def trace_row_values(row: TraceRow) -> list[str]:
    return [
        str(row.iteration),
        ";".join(_format(v) for v in row.x),
        _format(row.y_noisy),
        _format(row.f_true),
        _format(row.best_true),
        _format(row.sigma),
        _format(row.sampled_value),
        f"{row.elapsed_ms:.3f}",
    ]


def write_rows(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return atomic_write_text(path, buffer.getvalue())


def write_trace(path: Path, trace: RunTrace) -> Path:
    return write_rows(path, TRACE_COLUMNS, (trace_row_values(row) for row in trace.rows))


class TraceWriter:
    """Streams trace rows to a hidden temp file and publishes it under the final name on close.

    An interrupted run leaves at most the temp file behind; the final name only ever
    holds a complete trace.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._handle = None
        self._tmp = None
        self._writer = None

    def __enter__(self) -> "TraceWriter":
        self._handle, self._tmp = _temp_for(self.path)
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(TRACE_COLUMNS)
        return self

    def write(self, row: TraceRow) -> None:
        self._writer.writerow(trace_row_values(row))
        self._handle.flush()

    def __exit__(self, exc_type, exc, tb) -> None:
        with self._handle:
            os.fsync(self._handle.fileno())
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            self._tmp.unlink(missing_ok=True)


def read_trace(
    path: Path,
    optimizer: OptimizerKind,
    objective: str,
    seed: int,
    maximize: bool = False,
) -> RunTrace:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != TRACE_COLUMNS:
            raise InputError(f"{path}: unexpected trace header {header}")
        rows = [
            TraceRow(
                iteration=int(record[0]),
                x=tuple(float(v) for v in record[1].split(";")),
                y_noisy=float(record[2]),
                f_true=float(record[3]),
                best_true=float(record[4]),
                sigma=float(record[5]),
                sampled_value=float(record[6]),
                elapsed_ms=float(record[7]),
            )
            for record in reader
        ]
    return RunTrace(optimizer, objective, seed, maximize, rows)


def write_kernel_matrix(path: Path, points, matrix) -> Path:
    """One row per point: its index, its coordinates and its row of the kernel matrix."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (points.shape[0], points.shape[0]):
        raise InputError(f"kernel matrix of shape {matrix.shape} does not match {points.shape[0]} points")
    columns = ("index", "x", *(f"k_{j}" for j in range(matrix.shape[0])))
    rows = (
        [str(i), ";".join(_format(v) for v in point), *(_format(v) for v in row)]
        for i, (point, row) in enumerate(zip(points, matrix))
    )
    return write_rows(path, columns, rows)


def write_info_gain(path: Path, reports: Iterable) -> Path:
    """Info-gain reports (t, lam, value, min_eigenvalue), one per row."""
    rows = ([str(r.t), _format(r.lam), _format(r.value), _format(r.min_eigenvalue)] for r in reports)
    return write_rows(path, INFO_GAIN_COLUMNS, rows)


class TraceStore:
    """Filesystem layout of one output directory.

    Traces live at <experiment>/<optimizer>[/<variant>]/seed-<n>.csv; a variant
    separates runs of one optimizer that differ in a swept setting.
    """

    def __init__(self, root: Path):
        self.root = Path(root)

    def experiment_dir(self, experiment: str) -> Path:
        return self.root / experiment

    def optimizer_dir(self, experiment: str, optimizer: OptimizerKind, variant: str | None = None) -> Path:
        directory = self.experiment_dir(experiment) / OptimizerKind(optimizer).value
        return directory / variant if variant else directory

    def trace_path(self, experiment: str, optimizer: OptimizerKind, seed: int, variant: str | None = None) -> Path:
        return self.optimizer_dir(experiment, optimizer, variant) / f"seed-{seed}.csv"

    def network_path(self, experiment: str, optimizer: OptimizerKind, seed: int, variant: str | None = None) -> Path:
        return self.trace_path(experiment, optimizer, seed, variant).with_suffix(".network.json")

    def precision_path(self, experiment: str, optimizer: OptimizerKind, seed: int, variant: str | None = None) -> Path:
        return self.trace_path(experiment, optimizer, seed, variant).with_suffix(".precision.json")

    def summary_path(self, experiment: str) -> Path:
        return self.experiment_dir(experiment) / "summary.json"

    def config_path(self, experiment: str) -> Path:
        return self.experiment_dir(experiment) / "config.json"

    @property
    def range_cache_path(self) -> Path:
        return self.root / "range_cache.json"

    def save_config(self, experiment: str, payload: dict) -> Path:
        return write_json(self.config_path(experiment), payload)

    def load_config(self, experiment: str) -> dict:
        path = self.config_path(experiment)
        if not path.exists():
            raise InputError(f"no config.json under {path.parent}")
        return read_json(path)

    def save_summary(self, experiment: str, payload: dict) -> Path:
        path = write_json(self.summary_path(experiment), payload)
        logger.info("summary written to %s", path)
        return path

    def load_summary(self, experiment: str) -> dict | None:
        path = self.summary_path(experiment)
        return read_json(path) if path.exists() else None

    def load_range_cache(self) -> list[dict]:
        path = self.range_cache_path
        return read_json(path) if path.exists() else []

    def save_range_cache(self, entries: list[dict]) -> Path:
        return write_json(self.range_cache_path, entries)

    def load_traces(
        self,
        experiment: str,
        optimizer: OptimizerKind,
        objective: str,
        seeds: Iterable[int],
        expected_rows: int | None = None,
        maximize: bool = False,
        variant: str | None = None,
    ) -> list[RunTrace]:
        """The traces of the given seeds; missing or short traces are marked failed."""
        optimizer = OptimizerKind(optimizer)
        traces = []
        for seed in seeds:
            path = self.trace_path(experiment, optimizer, seed, variant)
            if not path.exists():
                traces.append(RunTrace(optimizer, objective, seed, maximize, status=RunStatus.FAILED, error=f"missing {path.name}"))
                continue
            trace = read_trace(path, optimizer, objective, seed, maximize)
            if expected_rows is not None and len(trace) < expected_rows:
                trace.status = RunStatus.FAILED
                trace.error = f"trace has {len(trace)} of {expected_rows} rows"
            traces.append(trace)
        return traces

    def prune(self, experiment: str, keep: Iterable[Path]) -> list[Path]:
        """Delete per-seed files of an experiment outside keep, including abandoned temp files."""
        root = self.experiment_dir(experiment)
        if not root.is_dir():
            return []
        keep = {Path(p) for p in keep}
        removed = []
        for path in sorted([*root.rglob("seed-*"), *root.rglob(".seed-*.tmp")]):
            if path.is_file() and path not in keep:
                path.unlink()
                removed.append(path)
        for directory in sorted((p for p in root.rglob("*") if p.is_dir()), key=lambda p: len(p.parts), reverse=True):
            if not any(directory.iterdir()):
                directory.rmdir()
        if removed:
            logger.info("removed %d stale files under %s", len(removed), root)
        return removed


def finite_or_none(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None
