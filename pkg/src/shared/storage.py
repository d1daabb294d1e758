"""Artifact persistence: grid files, study tables and JSON reports.

GFN1 layout (little-endian): the magic bytes ``GFN1``, u32 n, u32 m, n f64
origin, n f64 extent, then m**n f64 values in row-major order.
"""
import csv
import logging
import os
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError

from deautoconv.errors import ArtifactError, StructuralError
from deautoconv.grid import GridFn, GridSpec, midpoints
from shared.models import ExperimentReport

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

GFN_MAGIC = b"GFN1"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -----------------------
# Grid files
# -----------------------
def write_gfn(path: PathLike, x: GridFn) -> Path:
    path = Path(path)
    _ensure_parent(path)
    spec = x.spec
    header = np.array([spec.dim, spec.cells], dtype=_U32).tobytes()
    geometry = np.array(spec.origin + spec.extent, dtype=_F64).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(GFN_MAGIC + header + geometry + x.values.astype(_F64).tobytes())
    except OSError as e:
        raise ArtifactError(f"cannot write grid file {path}", {"reason": e.strerror}) from e
    logger.info("Wrote %s (n=%d, cells=%d)", path, spec.dim, spec.cells)
    return path


def read_gfn(path: PathLike) -> GridFn:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactError(f"cannot read grid file {path}", {"reason": e.strerror}) from e
    if raw[:4] != GFN_MAGIC:
        raise ArtifactError(f"{path} is not a GFN1 grid file")
    if len(raw) < 12:
        raise ArtifactError(f"{path} is truncated", {"bytes": len(raw)})
    dim, cells = (int(v) for v in np.frombuffer(raw, dtype=_U32, count=2, offset=4))
    if dim < 1:
        raise ArtifactError(f"{path} declares no axes")
    geometry_end = 12 + 16 * dim
    expected = geometry_end + 8 * cells**dim
    if len(raw) != expected:
        raise ArtifactError(f"{path} has the wrong size for n={dim}, cells={cells}",
                            {"expected": expected, "got": len(raw)})
    geometry = np.frombuffer(raw, dtype=_F64, count=2 * dim, offset=12)
    values = np.frombuffer(raw, dtype=_F64, offset=geometry_end)
    try:
        spec = GridSpec(dim=dim, cells=cells, origin=tuple(geometry[:dim].tolist()),
                        extent=tuple(geometry[dim:].tolist()))
        return GridFn(spec=spec, values=values)
    except ValidationError as e:
        raise ArtifactError(f"{path} holds an invalid grid", {"reason": e.errors()[0]["msg"]}) from e


def write_grid_csv(path: PathLike, x: GridFn) -> Path:
    """One line per cell: ``i1,...,in,t1,...,tn,value``, no header."""
    path = Path(path)
    _ensure_parent(path)
    spec = x.spec
    coords = [np.broadcast_to(c, spec.shape).reshape(-1) for c in midpoints(spec)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for flat, idx in enumerate(np.ndindex(spec.shape)):
            writer.writerow(
                [str(i) for i in idx]
                + [repr(float(c[flat])) for c in coords]
                + [repr(float(x.values[flat]))]
            )
    logger.info("Wrote %s (%d cells)", path, spec.size)
    return path


def write_grid(path: PathLike, x: GridFn, fmt: str = "gfn") -> Path:
    if fmt == "gfn":
        return write_gfn(path, x)
    if fmt == "csv":
        return write_grid_csv(path, x)
    raise ArtifactError(f"unknown grid format '{fmt}'", {"choices": "gfn, csv"})


# -----------------------
# Reports and tables
# -----------------------
def write_report_json(path: PathLike, payload: Union[BaseModel, Sequence[BaseModel]]) -> Path:
    path = Path(path)
    _ensure_parent(path)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    elif not payload:
        text = "[]"
    else:
        text = TypeAdapter(List[type(payload[0])]).dump_json(list(payload), indent=2).decode()
    path.write_text(text + "\n")
    logger.info("Wrote %s", path)
    return path


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    _ensure_parent(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            count += 1
    logger.info("Wrote %s (%d rows)", path, count)
    return path


def column_name(report: ExperimentReport) -> str:
    return f"{report.case.value}_n{report.n}"


def _percent(value: float) -> str:
    return f"{100.0 * value:g}"


def write_table_csv(path: PathLike, reports: Sequence[ExperimentReport]) -> Path:
    """
    Error table with one row per noise level and one column per (case, n),
    entries are mean relative errors in percent, followed by a kappa row.

    All reports must share the same noise levels. When any cell failed, a
    warning row precedes the header.
    """
    if not reports:
        raise ArtifactError("no study reports to tabulate")
    levels = reports[0].levels
    for report in reports[1:]:
        if report.levels != levels:
            raise StructuralError("reports use different noise levels",
                                  {"left": column_name(reports[0]), "right": column_name(report)})

    path = Path(path)
    _ensure_parent(path)
    failures = sum(r.failures for r in reports)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if failures:
            writer.writerow(["# WARNING", f"{failures} cells failed and are excluded from the means"])
        writer.writerow(["delta_percent"] + [column_name(r) for r in reports])
        for li, level in enumerate(levels):
            row = [_percent(level)]
            for report in reports:
                mean = report.aggregates[li].mean_error
                row.append("" if mean is None else f"{100.0 * mean:.2f}")
            writer.writerow(row)
        writer.writerow(["kappa"] + ["" if r.kappa is None else f"{r.kappa:.2f}" for r in reports])
    logger.info("Wrote %s (%d levels, %d columns)", path, len(levels), len(reports))
    return path


def write_runs_csv(path: PathLike, reports: Sequence[ExperimentReport]) -> Path:
    """Every (level, run) cell of every report, then mean and std rows per level."""
    header = ["column", "delta_percent", "run", "seed", "rel_error", "alpha", "iterations", "failure"]

    def rows():
        for report in reports:
            name = column_name(report)
            for rec in report.records:
                yield [name, _percent(rec.level), rec.run, rec.seed, rec.rel_error, rec.alpha,
                       rec.iterations, rec.failure]
            for agg in report.aggregates:
                yield [name, _percent(agg.level), "mean", "", agg.mean_error, "", "", ""]
                yield [name, _percent(agg.level), "std", "", agg.std_error, "", "", ""]

    return write_rows(path, header, rows())
