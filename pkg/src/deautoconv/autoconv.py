"""The discrete autoconvolution operator, its derivative and the derivative's adjoint.

Discrete model: ``F(x) = (prod h) * (x ⊛ x)`` where ``⊛`` is the full linear
convolution of the coefficient arrays. In the full data case the output has
``2m-1`` cells per axis on [0,2]^n, in the limited data case the first ``m``
of them on [0,1]^n. Output entry ``j`` sits at ``s = (j+1) h`` per axis.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sp_fft

from deautoconv.errors import NumericalError, StructuralError
from deautoconv.grid import GridFn, GridSpec, l2_norm
from shared.models import DataCase

logger = logging.getLogger(__name__)


# -------------------------
# Grids
# -------------------------
def output_spec(spec: GridSpec, case: DataCase) -> GridSpec:
    """Grid of F(x) for an input on ``spec``; midpoints fall on ``(j+1) h``."""
    cells = 2 * spec.cells - 1 if case is DataCase.FULL else spec.cells
    h = spec.mesh
    return GridSpec(
        dim=spec.dim,
        cells=cells,
        origin=tuple(0.5 * hj for hj in h),
        extent=tuple(cells * hj for hj in h),
    )


def _require_unit_cube(x: GridFn) -> None:
    if not x.spec.is_unit_cube():
        raise StructuralError("operator input must live on the unit cube", {"spec": x.spec})


def _require_same_spec(x: GridFn, d: GridFn) -> None:
    _require_unit_cube(x)
    if x.spec != d.spec:
        raise StructuralError("grid specs differ", {"left": x.spec, "right": d.spec})


def _restrict(full: np.ndarray, case: DataCase, m: int) -> np.ndarray:
    if case is DataCase.FULL:
        return full
    return full[(slice(0, m),) * full.ndim]


# -------------------------
# Convolution kernels
# -------------------------
# Below this size(x) * size(w) derivative_adjoint sums directly and its zeros are exact.
DIRECT_ADJOINT_MAX = 4096


def _convolve_fft(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution via zero-padded real FFTs."""
    out_shape = tuple(p + q - 1 for p, q in zip(a.shape, b.shape))
    fshape = tuple(sp_fft.next_fast_len(s, real=True) for s in out_shape)
    axes = tuple(range(a.ndim))
    spectrum = sp_fft.rfftn(a, fshape, axes=axes)
    if b is a:
        spectrum = spectrum * spectrum
    else:
        spectrum *= sp_fft.rfftn(b, fshape, axes=axes)
    full = sp_fft.irfftn(spectrum, fshape, axes=axes)
    return full[tuple(slice(0, s) for s in out_shape)]


def _convolve_direct(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution by shift-and-add, O(size(a) * size(b))."""
    out = np.zeros(tuple(p + q - 1 for p, q in zip(a.shape, b.shape)))
    for idx in np.ndindex(a.shape):
        coeff = a[idx]
        if coeff == 0.0:
            continue
        out[tuple(slice(i, i + s) for i, s in zip(idx, b.shape))] += coeff * b
    return out


# -------------------------
# Forward operator
# -------------------------
def _finite(spec: GridSpec, values: np.ndarray, operation: str) -> GridFn:
    """Wraps an operator result, refusing overflowed or undefined entries."""
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise NumericalError(f"{operation} produced non-finite values",
                             {"cells": bad, "of": int(values.size)})
    return GridFn(spec=spec, values=values)


def autoconvolve(x: GridFn, case: DataCase) -> GridFn:
    """F(x) = x * x in the given data case, FFT path."""
    _require_unit_cube(x)
    arr = x.array
    with np.errstate(over="ignore", invalid="ignore"):
        y = x.spec.cell_volume * _convolve_fft(arr, arr)
    return _finite(output_spec(x.spec, case), _restrict(y, case, x.spec.cells), "autoconvolve")


def autoconvolve_naive(x: GridFn, case: DataCase) -> GridFn:
    """Same contract as ``autoconvolve`` by direct summation; meant for small grids."""
    _require_unit_cube(x)
    arr = x.array
    with np.errstate(over="ignore", invalid="ignore"):
        y = x.spec.cell_volume * _convolve_direct(arr, arr)
    return _finite(output_spec(x.spec, case), _restrict(y, case, x.spec.cells),
                   "autoconvolve_naive")


def derivative_apply(x: GridFn, d: GridFn, case: DataCase) -> GridFn:
    """F'(x)d = 2 x * d."""
    _require_same_spec(x, d)
    with np.errstate(over="ignore", invalid="ignore"):
        y = 2.0 * x.spec.cell_volume * _convolve_fft(x.array, d.array)
    return _finite(output_spec(x.spec, case), _restrict(y, case, x.spec.cells),
                   "derivative_apply")


def derivative_adjoint(x: GridFn, w: GridFn, case: DataCase) -> GridFn:
    """
    Exact transpose of ``d -> derivative_apply(x, d, case)`` with respect to the
    discrete L2 inner products on both grids.

    The result is a cross-correlation of ``w`` with ``x``: entry ``i`` is
    ``2 * vol_Y * sum_j w[j] x[j - i]``. Small problems are summed directly, so
    entries whose sum is empty come out as exact zeros.
    """
    _require_unit_cube(x)
    out_spec = output_spec(x.spec, case)
    if w.spec != out_spec:
        raise StructuralError("adjoint argument is not on the operator's output grid",
                              {"expected": out_spec, "got": w.spec})
    m = x.spec.cells
    flipped = np.flip(x.array)
    convolve = _convolve_direct if x.spec.size * w.spec.size <= DIRECT_ADJOINT_MAX else _convolve_fft
    with np.errstate(over="ignore", invalid="ignore"):
        corr = convolve(w.array, flipped)[(slice(m - 1, 2 * m - 1),) * x.spec.dim]
        values = 2.0 * out_spec.cell_volume * corr
    return _finite(x.spec, values, "derivative_adjoint")


class OperatorPlan:
    """
    F, F' and F'^* on raw coefficient arrays of one input grid.

    All three share a single FFT size of ``next_fast_len(2m - 1)`` per axis, so
    the spectrum of an iterate is computed once and reused for the forward
    value and the gradient. Callers check finiteness themselves.
    """

    def __init__(self, spec: GridSpec, case: DataCase):
        if not spec.is_unit_cube():
            raise StructuralError("operator input must live on the unit cube", {"spec": spec})
        self.spec = spec
        self.case = case
        self.out_spec = output_spec(spec, case)
        m = spec.cells
        self.fshape = (sp_fft.next_fast_len(2 * m - 1, real=True),) * spec.dim
        self.axes = tuple(range(spec.dim))
        self._out = (slice(0, self.out_spec.cells),) * spec.dim
        self._in = (slice(0, m),) * spec.dim
        self._scale = 2.0 * self.out_spec.cell_volume

    def spectrum(self, a: np.ndarray) -> np.ndarray:
        return sp_fft.rfftn(a, self.fshape, axes=self.axes)

    def forward(self, spectrum: np.ndarray) -> np.ndarray:
        """F(x) from the spectrum of x."""
        full = sp_fft.irfftn(spectrum * spectrum, self.fshape, axes=self.axes)
        return self.spec.cell_volume * full[self._out]

    def adjoint(self, spectrum: np.ndarray, w: np.ndarray) -> np.ndarray:
        """F'(x)^* w as a circular cross-correlation; no wrap-around since fshape >= 2m - 1."""
        corr = sp_fft.irfftn(self.spectrum(w) * np.conj(spectrum), self.fshape, axes=self.axes)
        return self._scale * corr[self._in]


# -------------------------
# Identities
# -------------------------
def nonlinearity_residual(x: GridFn, xt: GridFn, case: DataCase) -> Tuple[float, float]:
    """
    Returns ``(||F(xt) - F(x) - F'(x)(xt - x)||_Y, ||xt - x||_X^2)``.

    The first value equals ``||F(xt - x)||_Y`` up to rounding and never exceeds
    the second.
    """
    _require_same_spec(x, xt)
    diff = GridFn(spec=x.spec, values=xt.values - x.values)
    remainder = (
        autoconvolve(xt, case).values
        - autoconvolve(x, case).values
        - derivative_apply(x, diff, case).values
    )
    lhs = l2_norm(GridFn(spec=output_spec(x.spec, case), values=remainder))
    return lhs, l2_norm(diff) ** 2


def support_inclusion_check(f: GridFn, g: GridFn, tol: Optional[float] = None) -> bool:
    """
    Verifies supp(f * g) ⊆ supp(f) + supp(g) on the index level.

    With ``tol=None`` the inputs are thresholded at exact zero and the output at
    ``1e-12 * max(vol * (|f| ⊛ |g|))``, the rounding scale of the FFT product.
    """
    _require_same_spec(f, g)
    vol = f.spec.cell_volume
    conv = vol * _convolve_fft(f.array, g.array)
    if tol is None:
        in_tol = 0.0
        out_tol = 1e-12 * float(np.max(vol * _convolve_fft(np.abs(f.array), np.abs(g.array))))
    else:
        in_tol = out_tol = tol
    mask_f = (np.abs(f.array) > in_tol).astype(np.float64)
    mask_g = (np.abs(g.array) > in_tol).astype(np.float64)
    sum_set = _convolve_fft(mask_f, mask_g) > 0.5
    outside = (np.abs(conv) > out_tol) & ~sum_set
    if np.any(outside):
        logger.debug("support inclusion violated at %d indices", int(np.count_nonzero(outside)))
        return False
    return True
