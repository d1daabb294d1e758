import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deautoconv.autoconv import (
    OperatorPlan,
    autoconvolve,
    autoconvolve_naive,
    derivative_adjoint,
    derivative_apply,
    nonlinearity_residual,
    output_spec,
    support_inclusion_check,
)
from deautoconv.errors import NumericalError, StructuralError
from deautoconv.grid import GridFn, GridSpec, combine, inner, l2_norm, midpoints
from deautoconv.phantoms import phantom
from shared.models import DataCase, PhantomId

CASES = [DataCase.FULL, DataCase.LIMITED]


def _triangle(spec: GridSpec) -> np.ndarray:
    out = 1.0
    for s in midpoints(spec):
        out = out * np.where(s <= 1.0, s, 2.0 - s)
    return np.broadcast_to(out, spec.shape).reshape(-1)


def test_output_spec_full_and_limited():
    spec = GridSpec.unit_cube(2, 50)
    full = output_spec(spec, DataCase.FULL)
    assert full.cells == 99
    assert full.origin == (0.01, 0.01)
    assert full.extent == pytest.approx((1.98, 1.98))
    assert full.cell_volume == pytest.approx(spec.cell_volume)
    limited = output_spec(spec, DataCase.LIMITED)
    assert limited.cells == 50
    assert limited.extent == pytest.approx((1.0, 1.0))


@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("n,m", [(1, 8), (1, 16), (1, 32), (2, 8), (2, 16), (2, 32), (3, 8), (3, 16)])
def test_fft_matches_direct_summation(random_fn, n, m, case):
    for _ in range(5):
        x = random_fn(n, m)
        fast, slow = autoconvolve(x, case), autoconvolve_naive(x, case)
        assert fast.spec == slow.spec
        assert l2_norm(combine(1.0, fast, -1.0, slow)) <= 1e-10 * l2_norm(slow)


@pytest.mark.slow
@pytest.mark.parametrize("case", CASES)
def test_fft_matches_direct_summation_large_3d(random_fn, case):
    x = random_fn(3, 32)
    fast, slow = autoconvolve(x, case), autoconvolve_naive(x, case)
    assert l2_norm(combine(1.0, fast, -1.0, slow)) <= 1e-10 * l2_norm(slow)


@pytest.mark.parametrize("n,m", [(1, 50), (2, 50), (3, 20)])
def test_constant_one_gives_tensor_triangle(n, m):
    ones = phantom(PhantomId.CONSTANT, GridSpec.unit_cube(n, m))
    y = autoconvolve(ones, DataCase.FULL)
    np.testing.assert_allclose(y.values, _triangle(y.spec), rtol=0.0, atol=1e-12)
    y_lim = autoconvolve(ones, DataCase.LIMITED)
    np.testing.assert_allclose(y_lim.values, _triangle(y_lim.spec), rtol=0.0, atol=1e-12)


def test_limited_data_is_the_leading_block_of_full_data(random_fn):
    x = random_fn(2, 12)
    full = autoconvolve(x, DataCase.FULL).array
    limited = autoconvolve(x, DataCase.LIMITED).array
    np.testing.assert_array_equal(limited, full[:12, :12])


@pytest.mark.parametrize("case", CASES)
def test_operator_is_even(random_fn, case):
    x = random_fn(2, 16)
    np.testing.assert_allclose(autoconvolve(-x, case).values, autoconvolve(x, case).values, rtol=0.0, atol=1e-14)


@pytest.mark.parametrize("case", CASES)
def test_derivative_along_x_is_twice_the_image(random_fn, case):
    x = random_fn(2, 10)
    np.testing.assert_allclose(derivative_apply(x, x, case).values, 2.0 * autoconvolve(x, case).values,
                               rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("n,m", [(1, 17), (2, 9), (3, 6)])
def test_adjoint_dot_product(rng, n, m, case):
    spec = GridSpec.unit_cube(n, m)
    out = output_spec(spec, case)
    for _ in range(20):
        x = GridFn(spec=spec, values=rng.standard_normal(spec.size))
        d = GridFn(spec=spec, values=rng.standard_normal(spec.size))
        w = GridFn(spec=out, values=rng.standard_normal(out.size))
        lhs = inner(derivative_apply(x, d, case), w)
        rhs = inner(d, derivative_adjoint(x, w, case))
        assert abs(lhs - rhs) <= 1e-10 * l2_norm(derivative_apply(x, d, case)) * l2_norm(w)


def test_adjoint_rejects_data_on_the_wrong_grid(random_fn):
    x = random_fn(1, 8)
    w = GridFn.zeros(output_spec(x.spec, DataCase.LIMITED))
    with pytest.raises(StructuralError):
        derivative_adjoint(x, w, DataCase.FULL)


def test_operator_needs_the_unit_cube():
    spec = GridSpec(dim=1, cells=4, origin=(0.0,), extent=(2.0,))
    with pytest.raises(StructuralError):
        autoconvolve(GridFn.zeros(spec), DataCase.FULL)


@pytest.mark.parametrize("case", CASES)
def test_nonlinearity_identity_and_bound(random_fn, case):
    for _ in range(10):
        x, xt = random_fn(2, 10), random_fn(2, 10)
        lhs, rhs = nonlinearity_residual(x, xt, case)
        direct = l2_norm(autoconvolve(combine(1.0, xt, -1.0, x), case))
        assert lhs == pytest.approx(direct, rel=1e-12, abs=1e-14)
        assert lhs <= rhs


def test_support_of_point_masses():
    spec = GridSpec.unit_cube(2, 6)
    f = np.zeros(spec.shape)
    g = np.zeros(spec.shape)
    f[1, 2] = 1.0
    g[3, 0] = 2.0
    fn, gn = GridFn(spec=spec, values=f), GridFn(spec=spec, values=g)
    assert support_inclusion_check(fn, gn)
    y = autoconvolve(combine(1.0, fn, 1.0, gn), DataCase.FULL)
    assert np.count_nonzero(np.abs(y.array) > 1e-12) == 3


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.6))
@settings(max_examples=30, deadline=None)
def test_support_inclusion_on_sparse_functions(seed, density):
    gen = np.random.default_rng(seed)
    spec = GridSpec.unit_cube(2, 8)
    f = gen.standard_normal(spec.size) * (gen.random(spec.size) < density)
    g = gen.standard_normal(spec.size) * (gen.random(spec.size) < density)
    assert support_inclusion_check(GridFn(spec=spec, values=f), GridFn(spec=spec, values=g))


def test_direct_summation_by_hand():
    a, b = 1.5, -0.5
    x = GridFn(spec=GridSpec.unit_cube(1, 2), values=[a, b])
    y = autoconvolve_naive(x, DataCase.FULL)
    assert np.array_equal(y.values, 0.5 * np.array([a * a, 2 * a * b, b * b]))
    assert np.array_equal(autoconvolve_naive(x, DataCase.LIMITED).values, y.values[:2])


@pytest.mark.parametrize("case", CASES)
def test_derivative_is_linear_in_the_direction(random_fn, case):
    x, d1, d2 = random_fn(2, 12), random_fn(2, 12), random_fn(2, 12)
    a, b = 0.7, -2.5
    lhs = derivative_apply(x, combine(a, d1, b, d2), case)
    rhs = combine(a, derivative_apply(x, d1, case), b, derivative_apply(x, d2, case))
    assert l2_norm(combine(1.0, lhs, -1.0, rhs)) <= 1e-12 * l2_norm(rhs)


def test_limited_adjoint_of_a_point_mass_at_the_origin():
    x = GridFn(spec=GridSpec.unit_cube(1, 3), values=[1.0, 2.0, 3.0])
    w = GridFn(spec=output_spec(x.spec, DataCase.LIMITED), values=[1.0, 0.0, 0.0])
    z = derivative_adjoint(x, w, DataCase.LIMITED)
    assert z.values[0] == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert np.array_equal(z.values[1:], [0.0, 0.0])


@pytest.mark.parametrize("case", CASES)
def test_operator_plan_agrees_with_the_grid_operators(rng, random_fn, case):
    x = random_fn(2, 9)
    plan = OperatorPlan(x.spec, case)
    w = GridFn(spec=plan.out_spec, values=rng.standard_normal(plan.out_spec.size))
    spectrum = plan.spectrum(x.array)
    np.testing.assert_allclose(plan.forward(spectrum).ravel(), autoconvolve(x, case).values,
                               rtol=0.0, atol=1e-13)
    np.testing.assert_allclose(plan.adjoint(spectrum, w.array).ravel(),
                               derivative_adjoint(x, w, case).values, rtol=0.0, atol=1e-13)


@pytest.mark.parametrize("m", [10, 20, 40])
def test_discretization_of_the_smooth_density(m):
    # for s in [0,1]: (x1 * x1)(s) = 4/9 (s^3/6 + s^2 + s); the midpoint rule on
    # the quadratic integrand overshoots by exactly s h^2 / 27
    x = phantom(PhantomId.X1, GridSpec.unit_cube(1, m))
    y = autoconvolve(x, DataCase.LIMITED)
    s = midpoints(y.spec)[0]
    exact = 4.0 / 9.0 * (s**3 / 6.0 + s**2 + s)
    h = 1.0 / m
    np.testing.assert_allclose(y.values - exact, s * h * h / 27.0, rtol=0.0, atol=1e-14)


@pytest.mark.parametrize("operation", ["forward", "naive", "derivative", "adjoint"])
def test_overflow_is_a_numerical_error(operation):
    x = GridFn(spec=GridSpec.unit_cube(1, 8), values=np.full(8, 1e160))
    with pytest.raises(NumericalError):
        if operation == "forward":
            autoconvolve(x, DataCase.FULL)
        elif operation == "naive":
            autoconvolve_naive(x, DataCase.LIMITED)
        elif operation == "derivative":
            derivative_apply(x, x, DataCase.FULL)
        else:
            w = GridFn(spec=output_spec(x.spec, DataCase.FULL), values=np.full(15, 1e160))
            derivative_adjoint(x, w, DataCase.FULL)
