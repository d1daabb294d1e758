"""Exact solutions, perturbation sequences and Fresnel integrals."""
import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from deautoconv.errors import DomainError, ParameterError, StructuralError
from deautoconv.grid import GridFn, GridSpec, midpoints
from shared.models import PhantomId

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_DIMS = {
    PhantomId.X1: 1,
    PhantomId.X2: 1,
    PhantomId.X3: 1,
    PhantomId.PRODUCT2D: 2,
    PhantomId.PRODUCT3D: 3,
}


# -----------------------
# One-dimensional densities
# -----------------------
def x1(t: ArrayLike) -> ArrayLike:
    return 2.0 * (t + 1.0) / 3.0


def x2(t: ArrayLike) -> ArrayLike:
    return math.pi / (2.0 + math.pi) * (np.cos((t - 0.5) * math.pi) + 1.0)


def x3(t: ArrayLike) -> ArrayLike:
    # t = 1/2 takes the right branch
    return np.where(t < 0.5, 1.25, t)


FACTORS = (x1, x2, x3)
_SINGLE = {PhantomId.X1: x1, PhantomId.X2: x2, PhantomId.X3: x3}


def phantom_dim(pid: PhantomId) -> Optional[int]:
    """Number of arguments of a phantom; ``None`` for CONSTANT (any dimension)."""
    return _DIMS.get(pid)


def _evaluate(pid: PhantomId, coords: Sequence[ArrayLike]) -> ArrayLike:
    if pid is PhantomId.CONSTANT:
        return np.ones(np.broadcast_shapes(*(np.shape(c) for c in coords)))
    if pid in _SINGLE:
        return _SINGLE[pid](coords[0])
    out = 1.0
    for factor, t in zip(FACTORS, coords):
        out = out * factor(t)
    return out


def density(pid: PhantomId, t: Sequence[float]) -> float:
    """Value of a phantom at a point of its domain [0,1]^dim."""
    pid = PhantomId(pid)
    point = np.atleast_1d(np.asarray(t, dtype=np.float64))
    dim = phantom_dim(pid)
    if dim is not None and point.size != dim:
        raise DomainError(f"{pid.value} takes {dim} coordinates", {"got": point.size})
    if np.any(point < 0.0) or np.any(point > 1.0):
        raise DomainError("point outside the unit cube", {"t": point.tolist()})
    return float(_evaluate(pid, list(point)))


def phantom(pid: PhantomId, spec: GridSpec) -> GridFn:
    """A phantom sampled at the cell midpoints of a unit-cube grid."""
    pid = PhantomId(pid)
    dim = phantom_dim(pid)
    if dim is not None and dim != spec.dim:
        raise StructuralError(f"{pid.value} is {dim}-dimensional", {"grid_dim": spec.dim})
    if not spec.is_unit_cube():
        raise StructuralError("phantoms live on the unit cube", {"spec": spec})
    values = np.broadcast_to(_evaluate(pid, midpoints(spec)), spec.shape)
    return GridFn(spec=spec, values=values)


def default_solution(spec: GridSpec) -> GridFn:
    """x1 for n=1, x1*x2 for n=2, x1*x2*x3 for n=3, factors cycled beyond."""
    coords = midpoints(spec)
    values = 1.0
    for axis, t in enumerate(coords):
        values = values * FACTORS[axis % 3](t)
    return GridFn(spec=spec, values=np.broadcast_to(values, spec.shape))


# -----------------------
# Fresnel integrals
# -----------------------
_FRESNEL_SCALE = math.sqrt(2.0 / math.pi)


def _check_nonneg(s: ArrayLike) -> np.ndarray:
    arr = np.asarray(s, dtype=np.float64)
    if np.any(arr < 0.0):
        raise DomainError("Fresnel integrals are defined here for s >= 0 only")
    return arr


def fresnel_S(s: ArrayLike) -> ArrayLike:
    """S(s) = int_0^s sin(t^2) dt (unnormalized convention)."""
    arr = _check_nonneg(s)
    # scipy's S is int_0^z sin(pi t^2 / 2) dt
    value = special.fresnel(arr * _FRESNEL_SCALE)[0] / _FRESNEL_SCALE
    return float(value) if np.ndim(value) == 0 else value


def fresnel_C(s: ArrayLike) -> ArrayLike:
    """C(s) = int_0^s cos(t^2) dt (unnormalized convention)."""
    arr = _check_nonneg(s)
    value = special.fresnel(arr * _FRESNEL_SCALE)[1] / _FRESNEL_SCALE
    return float(value) if np.ndim(value) == 0 else value


def fresnel_running_integral(k: int, r: float, s: ArrayLike) -> ArrayLike:
    """int_0^s sqrt(2) r sin(k^2 t^2) dt = sqrt(2) r S(k s) / k."""
    return math.sqrt(2.0) * r * fresnel_S(k * np.asarray(s, dtype=np.float64)) / k


def fresnel_selfconvolution(k: int, r: float, s: ArrayLike) -> ArrayLike:
    """
    Closed form of (h_k * h_k)(s) on [0, 2] for h_k(t) = sqrt(2) r sin(k^2 t^2).

    For s <= 1 the integral runs over [0, s], beyond 1 over [s-1, 1]; both reduce
    to Fresnel integrals with upper limit ``k * min(s, 2-s) / sqrt(2)``.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0.0) or np.any(s_arr > 2.0):
        raise DomainError("self-convolution is supported on [0, 2]")
    width = np.minimum(s_arr, 2.0 - s_arr)
    c = 0.5 * k**2 * s_arr**2
    upper = k * width / math.sqrt(2.0)
    oscillating = math.sqrt(2.0) * k * s_arr * (
        fresnel_S(upper) * np.sin(c) - fresnel_C(upper) * np.cos(c)
    )
    numerator = np.sin(k**2 * s_arr * width) + oscillating
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(s_arr > 0.0, 2.0 * r**2 * numerator / (2.0 * k**2 * s_arr), 0.0)
    return float(value) if np.ndim(value) == 0 else value


# -----------------------
# Perturbation sequences
# -----------------------
def fresnel_perturbation(k: int, r: float, spec: GridSpec) -> GridFn:
    """sqrt(2) r sin(k^2 t_1^2), constant along the remaining axes."""
    if not spec.is_unit_cube():
        raise StructuralError("perturbations live on the unit cube", {"spec": spec})
    if k < 1:
        raise ParameterError("k must be a positive integer", {"k": k})
    t1 = midpoints(spec)[0]
    values = np.broadcast_to(math.sqrt(2.0) * r * np.sin(k**2 * t1**2), spec.shape)
    return GridFn(spec=spec, values=values)


def corner_perturbation(k: int, r: float, spec: GridSpec) -> GridFn:
    """k^(n/2) r on the corner cube [1-1/k, 1]^n, zero elsewhere; norm exactly r."""
    if not spec.is_unit_cube():
        raise StructuralError("perturbations live on the unit cube", {"spec": spec})
    if k < 3:
        raise ParameterError("corner perturbations need k >= 3", {"k": k})
    if spec.cells % k != 0:
        raise ParameterError("k must divide the number of cells", {"k": k, "cells": spec.cells})
    arr = np.zeros(spec.shape)
    arr[(slice(spec.cells - spec.cells // k, None),) * spec.dim] = k ** (spec.dim / 2.0) * r
    return GridFn(spec=spec, values=arr)
