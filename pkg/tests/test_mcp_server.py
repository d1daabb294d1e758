import pytest

pytest.importorskip("mcp")

from deautoconv_mcp.server import (  # noqa: E402
    CheckPayload,
    ForwardPayload,
    IllposedPayload,
    SolvePayload,
    forward_norms,
    fresnel_values,
    illposed_series,
    run_property_check,
    solve_synthetic,
)


def test_forward_norms_constant():
    result = forward_norms(ForwardPayload(phantom="constant", n=1, m=10))
    assert result["norm_x"] == pytest.approx(1.0)
    assert result["output_cells"] == 19


def test_forward_norms_reports_errors_as_data():
    result = forward_norms(ForwardPayload(phantom="product2d", n=1, m=10))
    assert result["error"] == "StructuralError"
    assert "product2d" in result["details"]


def test_solve_synthetic_fixed_alpha():
    result = solve_synthetic(SolvePayload(phantom="x1", m=16, noise_percent=1.0, alpha=1e-4, max_iters=500))
    assert set(result) == {"alpha", "iterations", "stop_reason", "rel_error"}
    assert result["alpha"] == 1e-4
    assert 0.0 < result["rel_error"] < 1.0


def test_illposed_series_tool():
    result = illposed_series(IllposedPayload(variant="limited", n=2, m=50, ks=[5, 10]))
    assert [p["k"] for p in result["points"]] == [5, 10]
    assert "fields" not in result


def test_property_check_tool():
    result = run_property_check(CheckPayload(name="adjoint", n=1, m=10, trials=2))
    assert result["passed"] is True
    assert result["failed"] == []


def test_fresnel_values_tool():
    assert fresnel_values([0.0])["S"] == [0.0]
    assert fresnel_values([-1.0])["error"] == "DomainError"
