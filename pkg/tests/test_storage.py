import json

import numpy as np
import pytest

from deautoconv.autoconv import autoconvolve
from deautoconv.errors import ArtifactError, StructuralError
from deautoconv.grid import GridFn, GridSpec
from deautoconv.phantoms import default_solution
from shared.models import DataCase, ExperimentReport, LevelAggregate, RunRecord
from shared.storage import (
    read_gfn,
    write_gfn,
    write_grid_csv,
    write_report_json,
    write_runs_csv,
    write_table_csv,
)


def _report(case: DataCase, errors, kappa=0.5, failures=0) -> ExperimentReport:
    levels = [0.1, 0.01, 0.001][: len(errors)]
    records = [RunRecord(level=lv, level_index=i, run=0, seed=i, rel_error=e, alpha=1e-4, iterations=10)
               for i, (lv, e) in enumerate(zip(levels, errors))]
    aggregates = [LevelAggregate(level=lv, mean_error=e, std_error=0.0, successes=1, failures=0)
                  for lv, e in zip(levels, errors)]
    return ExperimentReport(n=2, m=8, case=case, levels=levels, runs=1, seed0=0, records=records,
                            aggregates=aggregates, kappa=kappa, failures=failures)


def test_gfn_layout_and_reload(tmp_path):
    y = autoconvolve(default_solution(GridSpec.unit_cube(2, 6)), DataCase.FULL)
    path = write_gfn(tmp_path / "y.gfn", y)
    raw = path.read_bytes()
    assert raw[:4] == b"GFN1"
    assert np.frombuffer(raw, dtype="<u4", count=2, offset=4).tolist() == [2, 11]
    assert len(raw) == 12 + 2 * 2 * 8 + 11 * 11 * 8
    back = read_gfn(path)
    assert back.spec == y.spec
    assert np.array_equal(back.values, y.values)


def test_gfn_read_errors(tmp_path):
    with pytest.raises(ArtifactError):
        read_gfn(tmp_path / "missing.gfn")
    bad_magic = tmp_path / "bad.gfn"
    bad_magic.write_bytes(b"GFN2" + bytes(40))
    with pytest.raises(ArtifactError):
        read_gfn(bad_magic)
    good = write_gfn(tmp_path / "x.gfn", GridFn.zeros(GridSpec.unit_cube(1, 4)))
    truncated = tmp_path / "short.gfn"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ArtifactError):
        read_gfn(truncated)


def test_gfn_rejects_invalid_geometry(tmp_path):
    raw = bytearray(write_gfn(tmp_path / "x.gfn", GridFn.zeros(GridSpec.unit_cube(1, 4))).read_bytes())
    raw[20:28] = np.array([-1.0], dtype="<f8").tobytes()
    broken = tmp_path / "neg.gfn"
    broken.write_bytes(bytes(raw))
    with pytest.raises(ArtifactError):
        read_gfn(broken)


def test_grid_csv_lines(tmp_path):
    x = GridFn(spec=GridSpec.unit_cube(2, 2), values=[1.0, 2.0, 3.0, 4.0])
    lines = write_grid_csv(tmp_path / "x.csv", x).read_text().splitlines()
    assert lines == [
        "0,0,0.25,0.25,1.0",
        "0,1,0.25,0.75,2.0",
        "1,0,0.75,0.25,3.0",
        "1,1,0.75,0.75,4.0",
    ]


def test_table_csv_layout(tmp_path):
    reports = [_report(DataCase.FULL, [0.0985, 0.0231, 0.0048], 0.66),
               _report(DataCase.LIMITED, [0.1754, 0.0795, 0.027], None)]
    lines = write_table_csv(tmp_path / "t.csv", reports).read_text().splitlines()
    assert lines == [
        "delta_percent,full_n2,limited_n2",
        "10,9.85,17.54",
        "1,2.31,7.95",
        "0.1,0.48,2.70",
        "kappa,0.66,",
    ]


def test_table_csv_warning_banner_and_level_mismatch(tmp_path):
    lines = write_table_csv(tmp_path / "t.csv", [_report(DataCase.FULL, [0.1, 0.05, 0.01], failures=2)]) \
        .read_text().splitlines()
    assert lines[0].startswith("# WARNING,2 cells failed")
    with pytest.raises(StructuralError):
        write_table_csv(tmp_path / "u.csv", [_report(DataCase.FULL, [0.1, 0.05, 0.01]),
                                             _report(DataCase.LIMITED, [0.1, 0.05])])


def test_runs_csv_and_json_report(tmp_path):
    reports = [_report(DataCase.FULL, [0.1, 0.05, 0.01])]
    lines = write_runs_csv(tmp_path / "runs.csv", reports).read_text().splitlines()
    assert lines[0] == "column,delta_percent,run,seed,rel_error,alpha,iterations,failure"
    assert lines[1] == "full_n2,10,0,0,0.1,0.0001,10,"
    assert len(lines) == 1 + 3 + 2 * 3
    payload = json.loads(write_report_json(tmp_path / "r.json", reports).read_text())
    assert payload[0]["case"] == "full"
    assert payload[0]["kappa"] == 0.5
