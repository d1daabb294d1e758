"""Tikhonov regularization of the autoconvolution equation.

The regularized solution minimizes ``||F(x) - y_delta||_Y^2 + alpha ||x - xbar||_X^2``
over all grid functions, or over the nonnegative ones when ``cfg.nonneg`` is set.
"""
import logging
import math
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from deautoconv.autoconv import OperatorPlan, autoconvolve, derivative_adjoint, output_spec
from deautoconv.errors import NumericalError, ParameterError, SolverError, StructuralError
from deautoconv.grid import GridFn, combine, l2_norm
from shared.models import AlphaSelection, AlphaTrial, SolveResult, TikhonovConfig

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
STATIONARY_STOPS = ("gradient", "stagnation")


class _Solve(NamedTuple):
    alpha: float
    error: float
    x: GridFn
    iterations: int
    stationary: bool


def _check_specs(x: GridFn, ydelta: GridFn, cfg: TikhonovConfig) -> None:
    if x.spec != cfg.xbar.spec:
        raise StructuralError("iterate and reference element live on different grids",
                              {"x": x.spec, "xbar": cfg.xbar.spec})
    expected = output_spec(x.spec, cfg.case)
    if ydelta.spec != expected:
        raise StructuralError(f"data does not live on the {cfg.case.value} data grid",
                              {"expected": expected, "got": ydelta.spec})


def _misfit(x: GridFn, ydelta: GridFn, cfg: TikhonovConfig) -> GridFn:
    return GridFn(spec=ydelta.spec, values=autoconvolve(x, cfg.case).values - ydelta.values)


def _value(x: GridFn, misfit: GridFn, cfg: TikhonovConfig) -> float:
    return l2_norm(misfit) ** 2 + cfg.alpha * l2_norm(combine(1.0, x, -1.0, cfg.xbar)) ** 2


def _grad(x: GridFn, misfit: GridFn, cfg: TikhonovConfig) -> GridFn:
    return combine(2.0, derivative_adjoint(x, misfit, cfg.case), 2.0 * cfg.alpha,
                   combine(1.0, x, -1.0, cfg.xbar))


# -------------------------
# Functional and gradient
# -------------------------
def objective(x: GridFn, ydelta: GridFn, cfg: TikhonovConfig) -> float:
    """The Tikhonov functional in the discrete norms."""
    _check_specs(x, ydelta, cfg)
    return _value(x, _misfit(x, ydelta, cfg), cfg)


def gradient(x: GridFn, ydelta: GridFn, cfg: TikhonovConfig) -> GridFn:
    """2 F'(x)^* (F(x) - y_delta) + 2 alpha (x - xbar), the gradient in the X inner product."""
    _check_specs(x, ydelta, cfg)
    return _grad(x, _misfit(x, ydelta, cfg), cfg)


# -------------------------
# Minimizer
# -------------------------
class _Functional:
    """The Tikhonov functional on raw coefficient arrays, sharing one FFT plan."""

    def __init__(self, ydelta: GridFn, cfg: TikhonovConfig):
        self.plan = OperatorPlan(cfg.xbar.spec, cfg.case)
        self.y = ydelta.array
        self.xbar = cfg.xbar.array
        self.alpha = cfg.alpha
        self.vol_x = cfg.xbar.spec.cell_volume
        self.vol_y = ydelta.spec.cell_volume

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.vdot(a, b)) * self.vol_x

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Returns the objective, the misfit F(x) - y_delta and the spectrum of x."""
        with np.errstate(over="ignore", invalid="ignore"):
            spectrum = self.plan.spectrum(x)
            misfit = self.plan.forward(spectrum) - self.y
            dev = x - self.xbar
            value = (float(np.vdot(misfit, misfit)) * self.vol_y
                     + self.alpha * float(np.vdot(dev, dev)) * self.vol_x)
        return value, misfit, spectrum

    def gradient(self, x: np.ndarray, misfit: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return 2.0 * self.plan.adjoint(spectrum, misfit) + 2.0 * self.alpha * (x - self.xbar)

    def stationarity(self, x: np.ndarray, g: np.ndarray, nonneg: bool) -> float:
        """||x - P(x - g)||, which reduces to ||g|| without constraints."""
        r = x - np.maximum(x - g, 0.0) if nonneg else g
        return math.sqrt(self.inner(r, r))


def _bb_step(sy: float, ss: float, yy: float, variant: str, iteration: int,
             fallback: float) -> float:
    if sy <= 0.0:
        return fallback
    if variant == "bb1" or (variant == "alternate" and iteration % 2 == 1):
        return ss / sy
    return sy / yy if yy > 0.0 else fallback


def minimize(
    ydelta: GridFn,
    x0: GridFn,
    cfg: TikhonovConfig,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> SolveResult:
    """
    Projected gradient descent with Barzilai-Borwein step seeding and monotone
    Armijo backtracking.

    Stops when the projected gradient drops below ``grad_tol * (1 + initial)``,
    when the objective stagnates over ``stagnation_window`` iterations, when the
    line search fails, or after ``max_iters`` iterations. ``callback`` sees the
    iteration count and a read-only view of every accepted iterate.
    """
    _check_specs(x0, ydelta, cfg)
    if cfg.nonneg and np.any(x0.values < 0.0):
        raise ParameterError("initial guess violates the nonnegativity constraint",
                             {"min": float(np.min(x0.values))})
    rule = cfg.step_rule
    fn = _Functional(ydelta, cfg)

    x = x0.array
    value, misfit, spectrum = fn.evaluate(x)
    g = fn.gradient(x, misfit, spectrum) if math.isfinite(value) else None
    if g is None or not np.all(np.isfinite(g)):
        raise NumericalError("non-finite objective at the initial guess", {"objective": value})

    grad_norm = fn.stationarity(x, g, cfg.nonneg)
    threshold = cfg.grad_tol * (1.0 + grad_norm)
    history: List[float] = [value]
    step = 1.0 / max(1.0, math.sqrt(fn.inner(g, g)))
    stop_reason = "max_iters"
    iterations = 0
    logger.debug("minimize: alpha=%.3e objective=%.6e grad=%.3e", cfg.alpha, value, grad_norm)

    while True:
        if grad_norm <= threshold:
            stop_reason = "gradient"
            break
        if iterations >= cfg.max_iters:
            stop_reason = "max_iters"
            break

        step = min(max(step, rule.step_min), rule.step_max)
        accepted = False
        for _ in range(rule.max_backtracks):
            candidate = x - step * g
            if cfg.nonneg:
                np.maximum(candidate, 0.0, out=candidate)
            if not np.all(np.isfinite(candidate)):
                raise NumericalError("non-finite iterate", {"iteration": iterations, "step": step})
            cand_value, cand_misfit, cand_spectrum = fn.evaluate(candidate)
            if not math.isfinite(cand_value):
                raise NumericalError("non-finite objective",
                                     {"iteration": iterations, "step": step, "alpha": cfg.alpha})
            s = candidate - x
            if cand_value <= value + rule.armijo * fn.inner(g, s):
                accepted = True
                break
            step *= rule.shrink
        if not accepted:
            stop_reason = "line_search"
            break

        cand_g = fn.gradient(candidate, cand_misfit, cand_spectrum)
        if not np.all(np.isfinite(cand_g)):
            raise NumericalError("non-finite gradient", {"iteration": iterations, "alpha": cfg.alpha})
        yv = cand_g - g
        iterations += 1
        step = _bb_step(fn.inner(s, yv), fn.inner(s, s), fn.inner(yv, yv),
                        rule.variant, iterations, fallback=step)

        x, value, g = candidate, cand_value, cand_g
        grad_norm = fn.stationarity(x, g, cfg.nonneg)
        history.append(value)
        if callback is not None:
            view = x.view()
            view.flags.writeable = False
            callback(iterations, view)
        if iterations % 100 == 0:
            logger.debug("iter %d: objective=%.6e grad=%.3e step=%.3e",
                         iterations, value, grad_norm, step)

        window = rule.stagnation_window
        if len(history) > window:
            earlier = history[-window - 1]
            if earlier - value <= rule.stagnation_tol * abs(earlier):
                stop_reason = "stagnation"
                break

    converged = stop_reason == "gradient"
    logger.debug("minimize done: alpha=%.3e iterations=%d reason=%s objective=%.6e",
                 cfg.alpha, iterations, stop_reason, value)
    return SolveResult(
        x=GridFn(spec=x0.spec, values=x),
        objective_value=value,
        iterations=iterations,
        converged=converged,
        grad_norm=grad_norm,
        stop_reason=stop_reason,
        history=history,
    )


# -------------------------
# Regularization parameter choice
# -------------------------
def default_alpha_grid(ydelta: GridFn, points: int = 24) -> List[float]:
    """``points`` values log-spaced in [1e-10, 1e-1] * ||y_delta||_Y^2."""
    scale = l2_norm(ydelta) ** 2 or 1.0
    return [float(a) for a in np.logspace(-10.0, -1.0, points) * scale]


def select_alpha_opt(
    ydelta: GridFn,
    xdagger: GridFn,
    cfg_base: TikhonovConfig,
    alpha_grid: Sequence[float],
    refine_solves: int = 10,
    patience: Optional[int] = None,
) -> AlphaSelection:
    """
    Oracle parameter choice: the alpha whose regularized solution is closest to
    ``xdagger``.

    The grid is swept from the largest alpha down, each solve warm-started from
    the previous solution. With ``patience`` set, the sweep ends after that many
    consecutive grid points without a new best error among converged solves.
    A golden-section search in log(alpha) between the grid neighbours of the
    best point refines the choice.

    Candidates are the solves that stopped at a stationary point (``gradient``
    or ``stagnation``). An iterate cut off by ``max_iters`` or a failed line
    search is recorded as a trial but only competes when no solve converged.
    """
    if not alpha_grid:
        raise ParameterError("alpha grid is empty")
    grid = sorted({float(a) for a in alpha_grid}, reverse=True)
    if grid[-1] <= 0.0:
        raise ParameterError("alpha values must be positive", {"min": grid[-1]})
    if patience is not None and patience < 1:
        raise ParameterError("patience must be at least 1", {"patience": patience})

    trials: List[AlphaTrial] = []
    solved: List[_Solve] = []

    def solve(alpha: float, start: GridFn, phase: str) -> Optional[_Solve]:
        cfg = cfg_base.model_copy(update={"alpha": alpha})
        try:
            result = minimize(ydelta, start, cfg)
        except NumericalError as e:
            logger.warning("solve failed for alpha=%.3e: %s", alpha, e)
            trials.append(AlphaTrial(alpha=alpha, phase=phase, failure=str(e)))
            return None
        error = l2_norm(combine(1.0, result.x, -1.0, xdagger))
        trials.append(AlphaTrial(alpha=alpha, error=error, iterations=result.iterations,
                                 converged=result.converged, stop_reason=result.stop_reason,
                                 phase=phase))
        logger.debug("alpha=%.3e error=%.6e iterations=%d reason=%s",
                     alpha, error, result.iterations, result.stop_reason)
        entry = _Solve(alpha, error, result.x, result.iterations,
                       result.stop_reason in STATIONARY_STOPS)
        solved.append(entry)
        return entry

    start = cfg_base.xbar
    sweep_best = math.inf
    stale = 0
    for alpha in grid:
        entry = solve(alpha, start, "grid")
        if entry is None:
            continue
        start = entry.x
        if patience is None:
            continue
        if entry.stationary and entry.error < sweep_best:
            sweep_best, stale = entry.error, 0
        elif math.isfinite(sweep_best):
            stale += 1
            if stale >= patience:
                logger.debug("sweep stopped at alpha=%.3e after %d points without improvement",
                             alpha, stale)
                break

    if not solved:
        raise SolverError("every solve of the alpha grid failed",
                          {"trials": [t.model_dump() for t in trials]})

    pool = [s for s in solved if s.stationary]
    competing = (lambda s: s.stationary) if pool else (lambda s: True)
    if not pool:
        logger.warning("no solve reached a stationary point; choosing among unconverged iterates")
        pool = list(solved)

    best_index = min(range(len(pool)), key=lambda i: pool[i].error)
    best = pool[best_index]

    if len(pool) >= 2 and refine_solves >= 2:
        hi = pool[max(best_index - 1, 0)].alpha
        lo = pool[min(best_index + 1, len(pool) - 1)].alpha
        a, b = math.log(lo), math.log(hi)
        warm = best.x
        cache = {}

        def f(log_alpha: float) -> float:
            if log_alpha not in cache:
                entry = solve(math.exp(log_alpha), warm, "refine")
                cache[log_alpha] = entry.error if entry is not None and competing(entry) else math.inf
            return cache[log_alpha]

        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(refine_solves - 2):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = f(d)
        best = min((s for s in solved if competing(s)), key=lambda s: s.error)

    logger.info("alpha_opt=%.4e error=%.6e after %d solves", best.alpha, best.error, len(trials))
    return AlphaSelection(alpha=best.alpha, error=best.error, x=best.x,
                          iterations=best.iterations, trials=trials)
