"""Uniform n-dimensional grid functions with discrete L2 geometry.

A ``GridFn`` stores one value per cell in row-major order (axis 0 slowest).
The value at multi-index ``i`` represents the function at the cell midpoint
``origin + (i + 1/2) * h`` and is read as piecewise constant over the cell.
"""
import logging
import math
from typing import Callable, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from deautoconv.errors import StructuralError

logger = logging.getLogger(__name__)


# -----------------------
# Grid specification
# -----------------------
class GridSpec(BaseModel):
    """Dimension, resolution and domain of a uniform grid."""

    model_config = ConfigDict(frozen=True)

    dim: int = Field(..., ge=1, description="Number of axes n")
    cells: int = Field(..., ge=2, description="Cells per axis m")
    origin: Tuple[float, ...]
    extent: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_axes(self) -> "GridSpec":
        if len(self.origin) != self.dim or len(self.extent) != self.dim:
            raise ValueError("origin and extent must have one entry per axis")
        if any(not (e > 0 and math.isfinite(e)) for e in self.extent):
            raise ValueError("extent components must be positive and finite")
        return self

    @classmethod
    def unit_cube(cls, dim: int, cells: int) -> "GridSpec":
        return cls(dim=dim, cells=cells, origin=(0.0,) * dim, extent=(1.0,) * dim)

    @property
    def mesh(self) -> Tuple[float, ...]:
        return tuple(e / self.cells for e in self.extent)

    @property
    def cell_volume(self) -> float:
        # prod(extent) / cells**dim keeps the unit cube exact for integer sums
        return math.prod(self.extent) / self.cells**self.dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.cells,) * self.dim

    @property
    def size(self) -> int:
        return self.cells**self.dim

    def is_unit_cube(self) -> bool:
        return all(o == 0.0 for o in self.origin) and all(e == 1.0 for e in self.extent)


# -----------------------
# Grid functions
# -----------------------
class GridFn(BaseModel):
    """A real function discretized on a ``GridSpec``; immutable after construction."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: GridSpec
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_flat_array(cls, v):
        return np.array(v, dtype=np.float64, copy=True).reshape(-1)

    @model_validator(mode="after")
    def _check_values(self) -> "GridFn":
        if self.values.size != self.spec.size:
            raise ValueError(f"expected {self.spec.size} values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        self.values.flags.writeable = False
        return self

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFn":
        return cls(spec=spec, values=np.zeros(spec.size))

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the values with shape ``(cells,) * dim``."""
        return self.values.reshape(self.spec.shape)

    def __neg__(self) -> "GridFn":
        return GridFn(spec=self.spec, values=-self.values)


def _require_same_spec(x: GridFn, z: GridFn) -> None:
    if x.spec != z.spec:
        raise StructuralError("grid specs differ", {"left": x.spec, "right": z.spec})


def midpoints(spec: GridSpec) -> Tuple[np.ndarray, ...]:
    """Cell-midpoint coordinates per axis as sparse, broadcastable arrays."""
    axes = [o + (np.arange(spec.cells) + 0.5) * h for o, h in zip(spec.origin, spec.mesh)]
    return tuple(np.meshgrid(*axes, indexing="ij", sparse=True))


def sample(f: Callable[..., float], spec: GridSpec, vectorized: bool = True) -> GridFn:
    """
    Evaluates ``f`` at every cell midpoint.

    Args:
        f: function of ``spec.dim`` real arguments.
        spec: the grid to sample on.
        vectorized: whether ``f`` accepts broadcast numpy arrays. Scalar-only
            functions are wrapped with ``np.vectorize``.
    """
    coords = midpoints(spec)
    fn = f if vectorized else np.vectorize(f, otypes=[np.float64])
    values = np.broadcast_to(np.asarray(fn(*coords), dtype=np.float64), spec.shape)
    return GridFn(spec=spec, values=values)


def inner(x: GridFn, z: GridFn) -> float:
    """Discrete L2 inner product ``(prod h) * sum(x * z)``."""
    _require_same_spec(x, z)
    return float(np.dot(x.values, z.values)) * x.spec.cell_volume


def l2_norm(x: GridFn) -> float:
    """Midpoint-rule L2 norm."""
    return math.sqrt(float(np.dot(x.values, x.values)) * x.spec.cell_volume)


def combine(a: float, x: GridFn, b: float, z: GridFn) -> GridFn:
    """Returns ``a*x + b*z``."""
    _require_same_spec(x, z)
    return GridFn(spec=x.spec, values=a * x.values + b * z.values)


def project_nonneg(x: GridFn) -> GridFn:
    return GridFn(spec=x.spec, values=np.maximum(x.values, 0.0))


def support_indices(x: GridFn, tol: Optional[float] = 0.0) -> Set[Tuple[int, ...]]:
    """Multi-indices whose value exceeds ``tol`` in magnitude."""
    tol = 0.0 if tol is None else tol
    hits = np.argwhere(np.abs(x.array) > tol)
    return {tuple(int(i) for i in row) for row in hits}
