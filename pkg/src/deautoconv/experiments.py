"""Noise simulation, the error-versus-noise study, Hölder rate regression and
executable checks of the uniqueness and ill-posedness statements."""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from datetime import datetime, timezone
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from deautoconv.autoconv import autoconvolve, autoconvolve_naive, output_spec
from deautoconv.errors import DeautoconvError, DomainError, ParameterError
from deautoconv.grid import GridFn, GridSpec, combine, l2_norm, midpoints
from deautoconv.phantoms import FACTORS, corner_perturbation, default_solution, fresnel_perturbation
from deautoconv.regularize import default_alpha_grid, select_alpha_opt
from shared.models import (
    DataCase,
    ExperimentReport,
    IllposedPoint,
    IllposedSeries,
    LevelAggregate,
    NoiseSpec,
    RunRecord,
    TikhonovConfig,
)

logger = logging.getLogger(__name__)

# relative noise levels of the reference error table, as fractions
TABLE_LEVELS = (0.10, 0.08, 0.05, 0.02, 0.01, 0.008, 0.005, 0.002, 0.001, 0.0005)
# grid points without a new best error before the study ends an alpha sweep
SWEEP_PATIENCE = 4


# -----------------------
# Noise
# -----------------------
def generator(seed: int) -> np.random.Generator:
    """Counter-based generator used for every random draw of the harness."""
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(seed0: int, *key: int) -> int:
    """Independent 64-bit seed for a (level, run) cell or a check trial."""
    seq = np.random.SeedSequence(entropy=seed0, spawn_key=tuple(key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def add_noise(y: GridFn, spec: NoiseSpec) -> GridFn:
    """y + delta_rel * ||y|| * g / ||g|| with g white Gaussian noise."""
    if spec.delta_rel == 0.0:
        return y
    y_norm = l2_norm(y)
    if y_norm == 0.0:
        raise ParameterError("cannot scale relative noise for zero data", {"delta_rel": spec.delta_rel})
    g = GridFn(spec=y.spec, values=generator(spec.seed).standard_normal(y.spec.size))
    scale = spec.delta_rel * y_norm / l2_norm(g)
    return GridFn(spec=y.spec, values=y.values + scale * g.values)


# -----------------------
# Rates
# -----------------------
def estimate_holder(pairs: Sequence[Tuple[float, float]]) -> float:
    """Least-squares slope of log(error) against log(delta)."""
    if len(pairs) < 3:
        raise ParameterError("Hölder regression needs at least 3 noise levels", {"got": len(pairs)})
    deltas = np.array([p[0] for p in pairs], dtype=np.float64)
    errors = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.any(deltas <= 0.0) or np.any(errors <= 0.0):
        raise DomainError("noise levels and errors must be positive")
    return float(stats.linregress(np.log(deltas), np.log(errors)).slope)


def _solution_for(n: int, m: int) -> GridFn:
    if n not in (1, 2, 3):
        raise ParameterError("the rate study runs in dimension 1, 2 or 3", {"n": n})
    return default_solution(GridSpec.unit_cube(n, m))


class CellTask(NamedTuple):
    """Everything a worker process needs to run one (level, run) cell."""

    n: int
    m: int
    case: DataCase
    level: float
    level_index: int
    run: int
    seed: int
    alpha_points: int
    max_iters: int
    grad_tol: float
    xbar_value: float
    nonneg: Optional[bool]
    patience: Optional[int]


@lru_cache(maxsize=8)
def _study_problem(n: int, m: int, case: DataCase, xbar_value: float, nonneg: Optional[bool],
                   max_iters: int, grad_tol: float) -> Tuple[GridFn, GridFn, TikhonovConfig]:
    xdagger = _solution_for(n, m)
    cfg_base = TikhonovConfig(
        alpha=1.0,
        xbar=GridFn(spec=xdagger.spec, values=np.full(xdagger.spec.size, xbar_value)),
        case=case,
        nonneg=nonneg,
        max_iters=max_iters,
        grad_tol=grad_tol,
    )
    return xdagger, autoconvolve(xdagger, case), cfg_base


def run_cell(task: CellTask) -> RunRecord:
    """One noisy draw and its oracle-regularized solution; failures end up in the record."""
    record = RunRecord(level=task.level, level_index=task.level_index, run=task.run, seed=task.seed)
    try:
        xdagger, y, cfg_base = _study_problem(task.n, task.m, task.case, task.xbar_value,
                                              task.nonneg, task.max_iters, task.grad_tol)
        ydelta = add_noise(y, NoiseSpec(delta_rel=task.level, seed=task.seed))
        choice = select_alpha_opt(ydelta, xdagger, cfg_base,
                                  default_alpha_grid(ydelta, task.alpha_points),
                                  patience=task.patience)
    except DeautoconvError as e:
        logger.warning("cell level=%g run=%d failed: %s", task.level, task.run, e)
        return record.model_copy(update={"failure": str(e)})
    rel_error = choice.error / l2_norm(xdagger)
    logger.debug("cell level=%g run=%d error=%.4f%%", task.level, task.run, 100.0 * rel_error)
    return record.model_copy(update={
        "rel_error": rel_error,
        "alpha": choice.alpha,
        "iterations": choice.iterations,
    })


def run_rate_study(
    n: int,
    case: DataCase,
    m: int,
    levels: Optional[Sequence[float]] = None,
    runs: int = 10,
    seed0: int = 0,
    *,
    workers: int = 1,
    alpha_points: int = 24,
    max_iters: int = 5000,
    grad_tol: float = 1e-8,
    xbar_value: float = 0.5,
    nonneg: Optional[bool] = None,
    patience: Optional[int] = SWEEP_PATIENCE,
    timestamp: bool = True,
) -> ExperimentReport:
    """
    Relative errors of oracle-regularized solutions for x_dagger = product
    density, for every (noise level, run) cell.

    Cells are independent. With ``workers > 1`` they run in a process pool; the
    report is ordered by (level, run) and does not depend on the number of
    workers.
    """
    levels = list(TABLE_LEVELS if levels is None else levels)
    if not levels:
        raise ParameterError("at least one noise level is required")
    if runs < 1:
        raise ParameterError("runs must be positive", {"runs": runs})
    if workers < 1:
        raise ParameterError("workers must be positive", {"workers": workers})
    case = DataCase(case)
    _solution_for(n, m)  # rejects unsupported n before any worker starts
    started = time.perf_counter()
    logger.info("rate study: n=%d m=%d case=%s levels=%d runs=%d workers=%d",
                n, m, case.value, len(levels), runs, workers)

    tasks = [
        CellTask(n, m, case, float(levels[li]), li, ri, derive_seed(seed0, li, ri),
                 alpha_points, max_iters, grad_tol, xbar_value, nonneg, patience)
        for li in range(len(levels))
        for ri in range(runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run_cell, task): task for task in tasks}
            records = [future.result() for future in as_completed(futures)]
    else:
        records = [run_cell(task) for task in tasks]
    records.sort(key=lambda r: (r.level_index, r.run))

    aggregates = []
    for li, level in enumerate(levels):
        errs = [r.rel_error for r in records if r.level_index == li and r.rel_error is not None]
        failed = sum(1 for r in records if r.level_index == li and r.failure is not None)
        aggregates.append(LevelAggregate(
            level=float(level),
            mean_error=float(np.mean(errs)) if errs else None,
            std_error=float(np.std(errs, ddof=1)) if len(errs) > 1 else (0.0 if errs else None),
            successes=len(errs),
            failures=failed,
        ))

    failures = sum(a.failures for a in aggregates)
    if failures:
        logger.warning("%d of %d cells failed and are excluded from the aggregates", failures, len(tasks))

    pairs = [(a.level, a.mean_error) for a in aggregates
             if a.mean_error is not None and a.level > 0.0 and a.mean_error > 0.0]
    kappa, note = None, None
    if len(pairs) >= 3:
        kappa = estimate_holder(pairs)
    else:
        note = f"Hölder regression needs at least 3 noise levels with results, got {len(pairs)}"
        logger.warning(note)

    return ExperimentReport(
        n=n,
        m=m,
        case=case,
        levels=[float(v) for v in levels],
        runs=runs,
        seed0=seed0,
        records=records,
        aggregates=aggregates,
        kappa=kappa,
        kappa_note=note,
        failures=failures,
        wall_time=time.perf_counter() - started if timestamp else None,
        timestamp=datetime.now(timezone.utc) if timestamp else None,
    )


# -----------------------
# Uniqueness
# -----------------------
def check_twofoldness(x: GridFn, case: DataCase) -> float:
    """||F(x) - F(-x)||_Y; x and -x produce the same data."""
    diff = autoconvolve(x, case).values - autoconvolve(-x, case).values
    return l2_norm(GridFn(spec=output_spec(x.spec, case), values=diff))


def _vanishing_solution(spec: GridSpec, q: int) -> GridFn:
    """Product density squeezed onto [q/m, 1]^n, zero on the first q cells per axis."""
    eps = q / spec.cells
    values = 1.0
    for axis, t in enumerate(midpoints(spec)):
        u = (t - eps) / (1.0 - eps)
        values = values * np.where(u > 0.0, FACTORS[axis % 3](np.clip(u, 0.0, 1.0)), 0.0)
    return GridFn(spec=spec, values=np.broadcast_to(values, spec.shape))


def check_nonuniqueness(n: int, m: int, q: int, seed: int, violate: bool = False) -> Tuple[float, float]:
    """
    Builds x_dagger >= 0 vanishing on the first q cells per axis and a random
    nonnegative h living on the last q cells per axis, and returns
    ``(||F(x_dagger + h) - F(x_dagger)||_limited, ||h||)``.

    With ``violate=True`` x_dagger does not vanish near the origin and the
    residual becomes positive.
    """
    if q < 1 or 2 * q >= m:
        raise ParameterError("need 1 <= q < m/2", {"q": q, "m": m})
    spec = GridSpec.unit_cube(n, m)
    xdagger = default_solution(spec) if violate else _vanishing_solution(spec, q)

    block = (slice(m - q, None),) * n
    h_arr = np.zeros(spec.shape)
    h_arr[block] = generator(seed).uniform(0.5, 1.5, size=(q,) * n)
    h_arr *= l2_norm(xdagger) / math.sqrt(float(np.sum(h_arr**2)) * spec.cell_volume)
    h = GridFn(spec=spec, values=h_arr)

    # the direct path adds identical products in identical order for both images
    perturbed = autoconvolve_naive(combine(1.0, xdagger, 1.0, h), DataCase.LIMITED)
    base = autoconvolve_naive(xdagger, DataCase.LIMITED)
    residual = l2_norm(combine(1.0, perturbed, -1.0, base))
    return residual, l2_norm(h)


# -----------------------
# Ill-posedness
# -----------------------
def demo_illposed_limited(
    n: int,
    m: int,
    r: float,
    ks: Sequence[int],
    xdagger: Optional[GridFn] = None,
    keep_fields: bool = False,
) -> IllposedSeries:
    """Corner perturbations: distance stays r, image residual decays below r||x||/k^(n/2)."""
    if r < 0.0:
        raise ParameterError("r must be nonnegative", {"r": r})
    spec = GridSpec.unit_cube(n, m)
    xdagger = default_solution(spec) if xdagger is None else xdagger
    y = autoconvolve(xdagger, DataCase.LIMITED)
    x_norm = l2_norm(xdagger)

    points = []
    fields = {}
    for k in ks:
        h = corner_perturbation(k, r, spec)
        yk = autoconvolve(combine(1.0, xdagger, 1.0, h), DataCase.LIMITED)
        dy = combine(1.0, yk, -1.0, y)
        points.append(IllposedPoint(
            k=k,
            distance=l2_norm(h),
            residual=l2_norm(dy),
            bound=r * x_norm / k ** (n / 2.0),
        ))
        logger.debug("limited k=%d residual=%.3e", k, points[-1].residual)
        if keep_fields:
            fields[k] = (h, dy)
    return IllposedSeries(variant=DataCase.LIMITED, n=n, m=m, r=r, points=points, fields=fields)


def resolution_needed(k: int) -> int:
    """Cells per axis needed to resolve sin(k^2 t^2) on [0, 1]."""
    return math.ceil(10.0 * k**2 / math.pi)


def demo_illposed_full(
    n: int,
    m: int,
    r: float,
    ks: Sequence[int],
    xdagger: Optional[GridFn] = None,
    keep_fields: bool = False,
) -> IllposedSeries:
    """Fresnel perturbations: distance stays in (r/2, r) while F(x_k) -> F(x_dagger)."""
    if r < 0.0:
        raise ParameterError("r must be nonnegative", {"r": r})
    spec = GridSpec.unit_cube(n, m)
    xdagger = default_solution(spec) if xdagger is None else xdagger
    y = autoconvolve(xdagger, DataCase.FULL)

    points: List[IllposedPoint] = []
    warnings: List[str] = []
    fields = {}
    for k in ks:
        needed = resolution_needed(k)
        if m < needed:
            msg = f"k={k}: m={m} under-resolves sin(k^2 t^2), results are aliased (need m >= {needed})"
            logger.warning(msg)
            warnings.append(msg)
        h = fresnel_perturbation(k, r, spec)
        yk = autoconvolve(combine(1.0, xdagger, 1.0, h), DataCase.FULL)
        dy = combine(1.0, yk, -1.0, y)
        points.append(IllposedPoint(k=k, distance=l2_norm(h), residual=l2_norm(dy)))
        if keep_fields:
            fields[k] = (h, dy)
    return IllposedSeries(variant=DataCase.FULL, n=n, m=m, r=r, points=points,
                          warnings=warnings, fields=fields)
