import numpy as np
import pytest

from deautoconv.cli import main
from deautoconv.grid import GridFn, GridSpec
from shared.storage import read_gfn, write_gfn


def _values(out: str) -> dict:
    return dict(line.split("=", 1) for line in out.splitlines() if "=" in line)


# -------------------------
# forward
# -------------------------
def test_forward_writes_full_data_grid(tmp_path, capsys):
    out = tmp_path / "y.gfn"
    assert main(["forward", "--phantom", "product2d", "--case", "full", "--m", "50", "--out", str(out)]) == 0
    y = read_gfn(out)
    assert y.spec.dim == 2
    assert y.spec.cells == 99
    printed = _values(capsys.readouterr().out)
    assert float(printed["norm_x"]) > 0.0
    assert float(printed["norm_Fx"]) > 0.0


def test_forward_of_zero_grid(tmp_path, capsys):
    zero = write_gfn(tmp_path / "zero.gfn", GridFn.zeros(GridSpec.unit_cube(2, 8)))
    assert main(["forward", "--in", str(zero), "--case", "limited"]) == 0
    printed = _values(capsys.readouterr().out)
    assert float(printed["norm_x"]) == 0.0
    assert float(printed["norm_Fx"]) == 0.0


def test_forward_constant_matches_triangle(tmp_path):
    out = tmp_path / "tri.csv"
    assert main(["forward", "--phantom", "constant", "--n", "1", "--m", "50", "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",")
    s, value = rows[:, 1], rows[:, 2]
    assert rows.shape == (99, 3)
    np.testing.assert_allclose(value, np.where(s <= 1.0, s, 2.0 - s), rtol=0.0, atol=1e-12)


def test_forward_corrupt_input(tmp_path):
    bad = tmp_path / "bad.gfn"
    bad.write_bytes(b"not a grid")
    assert main(["forward", "--in", str(bad)]) == 2


def test_forward_dimension_mismatch():
    assert main(["forward", "--phantom", "product2d", "--n", "3", "--m", "8"]) == 2


# -------------------------
# solve
# -------------------------
def test_solve_from_the_exact_solution(capsys):
    code = main(["solve", "--phantom", "x1", "--m", "20", "--alpha", "1e-8", "--start", "xtrue",
                 "--grad-tol", "1e-6"])
    assert code == 0
    printed = _values(capsys.readouterr().out)
    assert float(printed["rel_error"]) <= 1e-8
    assert printed["stop_reason"] == "gradient"


def test_solve_from_data_file(tmp_path, capsys):
    data = tmp_path / "y.gfn"
    assert main(["forward", "--phantom", "x1", "--m", "16", "--case", "limited", "--out", str(data)]) == 0
    capsys.readouterr()
    out = tmp_path / "x.gfn"
    code = main(["solve", "--data", str(data), "--case", "limited", "--alpha", "1e-6", "--max-iters", "2000",
                 "--out", str(out)])
    assert code in (0, 3)
    x = read_gfn(out)
    assert x.spec == GridSpec.unit_cube(1, 16)
    assert np.all(x.values >= 0.0)


def test_solve_usage_errors(tmp_path):
    assert main(["solve", "--data", str(tmp_path / "missing.gfn"), "--alpha", "1e-3"]) == 2
    data = tmp_path / "y.gfn"
    main(["forward", "--phantom", "x1", "--m", "8", "--out", str(data)])
    assert main(["solve", "--data", str(data), "--alpha-opt"]) == 2
    assert main(["solve", "--phantom", "x1", "--m", "8"]) == 2
    assert main(["solve", "--data", str(data), "--case", "limited", "--alpha", "1e-3"]) == 2


def test_solve_reports_non_convergence():
    assert main(["solve", "--phantom", "x1", "--m", "20", "--alpha", "1e-3", "--max-iters", "1"]) == 3


def test_solve_alpha_opt_one_dimensional(capsys):
    code = main(["solve", "--phantom", "x1", "--m", "50", "--noise", "1", "--seed", "2", "--alpha-opt"])
    assert code == 0
    printed = _values(capsys.readouterr().out)
    assert float(printed["rel_error"]) < 0.10
    assert printed["stop_reason"] == "alpha_opt"


# -------------------------
# table1
# -------------------------
TABLE_ARGS = ["table1", "--n", "1", "--m", "8", "--runs", "1", "--levels", "10,5,1", "--case", "both",
              "--max-iters", "300", "--alpha-points", "6", "--no-timestamp"]


def test_table1_shape_and_determinism(tmp_path):
    first, second = tmp_path / "a" / "t.csv", tmp_path / "b" / "t.csv"
    assert main(TABLE_ARGS + ["--out", str(first), "--seed", "7"]) == 0
    assert main(TABLE_ARGS + ["--out", str(second), "--seed", "7", "--threads", "2"]) == 0
    lines = first.read_text().splitlines()
    assert lines[0] == "delta_percent,full_n1,limited_n1"
    assert [line.split(",")[0] for line in lines[1:]] == ["10", "5", "1", "kappa"]
    assert first.read_bytes() == second.read_bytes()
    assert (tmp_path / "a" / "t_runs.csv").read_bytes() == (tmp_path / "b" / "t_runs.csv").read_bytes()
    assert (tmp_path / "a" / "t.json").read_bytes() == (tmp_path / "b" / "t.json").read_bytes()


def test_table1_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DEAUTOCONV_THREADS", "not-a-number")
    assert main(TABLE_ARGS + ["--out", str(tmp_path / "t.csv")]) == 2


# -------------------------
# illposed
# -------------------------
def test_illposed_limited_series(capsys):
    assert main(["illposed", "--variant", "limited", "--n", "2", "--m", "50", "--r", "0.25", "--k", "5,10,25"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "k distance residual bound"
    rows = [list(map(float, line.split())) for line in lines[1:]]
    assert [r[0] for r in rows] == [5, 10, 25]
    assert all(r[1] == pytest.approx(0.25, rel=1e-5) for r in rows)
    assert rows[0][2] > rows[1][2] > rows[2][2]


def test_illposed_limited_rejects_k_not_dividing_m():
    assert main(["illposed", "--variant", "limited", "--m", "50", "--k", "7"]) == 2


def test_illposed_full_dump(tmp_path, capsys):
    code = main(["illposed", "--variant", "full", "--n", "1", "--m", "64", "--r", "0.125", "--k", "2,3",
                 "--dump", "--dump-dir", str(tmp_path), "--json", str(tmp_path / "series.json")])
    assert code == 0
    assert sorted(p.name for p in tmp_path.glob("*.gfn")) == [
        "full_dx_k2.gfn", "full_dx_k3.gfn", "full_dy_k2.gfn", "full_dy_k3.gfn",
    ]
    assert read_gfn(tmp_path / "full_dy_k3.gfn").spec.cells == 127
    assert (tmp_path / "series.json").exists()


# -------------------------
# check
# -------------------------
@pytest.mark.parametrize("argv", [
    ["check", "twofold", "--n", "2", "--m", "20", "--trials", "50"],
    ["check", "nonunique", "--n", "2", "--m", "50", "--q", "10"],
    ["check", "gradient", "--n", "2", "--m", "12", "--trials", "3"],
])
def test_check_commands_pass(argv, capsys):
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "FAIL" not in out


def test_check_bad_margin():
    assert main(["check", "nonunique", "--m", "20", "--q", "10"]) == 2


# -------------------------
# fresnel-table and config
# -------------------------
def test_fresnel_table(capsys):
    assert main(["fresnel-table", "--s-max", "2", "--points", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "s,S,C"
    assert lines[1] == "0.0,0.0,0.0"
    assert len(lines) == 4


def test_config_file_supplies_defaults_and_flags_override(tmp_path):
    cfg = tmp_path / "forward.env"
    cfg.write_text("phantom=constant\nn=1\nm=10\n")
    out = tmp_path / "y.csv"
    assert main(["forward", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 19
    assert main(["forward", "--config", str(cfg), "--m", "12", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 23


@pytest.mark.parametrize("content", ["bogus=1\n", "case=sideways\n"])
def test_config_file_errors(tmp_path, content):
    cfg = tmp_path / "bad.env"
    cfg.write_text(content)
    assert main(["forward", "--config", str(cfg)]) == 2
