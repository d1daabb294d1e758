"""Randomized property suites behind the ``check`` subcommand.

Every outcome records the trial seed and the parameters needed to rebuild the
offending instance.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from deautoconv.autoconv import (
    autoconvolve,
    derivative_adjoint,
    derivative_apply,
    nonlinearity_residual,
    output_spec,
    support_inclusion_check,
)
from deautoconv.errors import ParameterError
from deautoconv.experiments import check_nonuniqueness, check_twofoldness, derive_seed, generator
from deautoconv.grid import GridFn, GridSpec, combine, inner, l2_norm
from deautoconv.regularize import gradient, objective
from shared.models import CheckOutcome, DataCase, TikhonovConfig

logger = logging.getLogger(__name__)

CHECK_NAMES = ("twofold", "nonunique", "nonlinearity", "support", "adjoint", "gradient")

ADJOINT_TOL = 1e-10
IDENTITY_TOL = 1e-12
FD_TOL = 1e-5
FD_EPS = 1e-6
NONUNIQUE_TOL = 1e-14
CONTROL_MIN = 1e-3


def random_gridfn(spec: GridSpec, rng: np.random.Generator, positive: bool = False) -> GridFn:
    values = rng.uniform(0.1, 1.0, spec.size) if positive else rng.standard_normal(spec.size)
    return GridFn(spec=spec, values=values)


def _twofold(spec, case, rng, seed) -> List[CheckOutcome]:
    x = random_gridfn(spec, rng)
    value = check_twofoldness(x, case) / max(l2_norm(autoconvolve(x, case)), 1e-300)
    return [CheckOutcome(name="twofold", passed=value <= 1e-15, value=value, threshold=1e-15, seed=seed)]


def _nonlinearity(spec, case, rng, seed) -> List[CheckOutcome]:
    x, xt = random_gridfn(spec, rng), random_gridfn(spec, rng)
    lhs, rhs = nonlinearity_residual(x, xt, case)
    direct = l2_norm(autoconvolve(combine(1.0, xt, -1.0, x), case))
    gap = abs(lhs - direct) / (1.0 + lhs)
    return [
        CheckOutcome(name="nonlinearity-identity", passed=gap <= IDENTITY_TOL, value=gap,
                     threshold=IDENTITY_TOL, seed=seed),
        CheckOutcome(name="nonlinearity-bound", passed=lhs <= rhs, value=lhs / rhs if rhs else 0.0,
                     threshold=1.0, seed=seed),
    ]


def _support(spec, case, rng, seed) -> List[CheckOutcome]:
    f, g = random_gridfn(spec, rng), random_gridfn(spec, rng)
    f = GridFn(spec=spec, values=f.values * (rng.random(spec.size) < 0.3))
    g = GridFn(spec=spec, values=g.values * (rng.random(spec.size) < 0.3))
    ok = support_inclusion_check(f, g)
    return [CheckOutcome(name="support", passed=ok, value=0.0 if ok else 1.0, threshold=0.0, seed=seed)]


def _adjoint(spec, case, rng, seed) -> List[CheckOutcome]:
    x, d = random_gridfn(spec, rng), random_gridfn(spec, rng)
    w = random_gridfn(output_spec(spec, case), rng)
    forward = derivative_apply(x, d, case)
    backward = derivative_adjoint(x, w, case)
    scale = max(l2_norm(forward) * l2_norm(w), l2_norm(d) * l2_norm(backward), 1e-300)
    gap = abs(inner(forward, w) - inner(d, backward)) / scale
    return [CheckOutcome(name="adjoint", passed=gap <= ADJOINT_TOL, value=gap,
                         threshold=ADJOINT_TOL, seed=seed)]


def _gradient(spec, case, rng, seed) -> List[CheckOutcome]:
    outcomes = []
    for nonneg in (False, True):
        # interior points keep the projection out of the picture
        x = random_gridfn(spec, rng, positive=True)
        truth = random_gridfn(spec, rng, positive=True)
        ydelta = autoconvolve(truth, case)
        cfg = TikhonovConfig(alpha=0.1, xbar=GridFn(spec=spec, values=np.full(spec.size, 0.5)),
                             case=case, nonneg=nonneg)
        d = random_gridfn(spec, rng)
        directional = inner(gradient(x, ydelta, cfg), d)
        fd = (objective(combine(1.0, x, FD_EPS, d), ydelta, cfg)
              - objective(combine(1.0, x, -FD_EPS, d), ydelta, cfg)) / (2.0 * FD_EPS)
        gap = abs(directional - fd) / max(abs(directional), abs(fd), 1e-300)
        outcomes.append(CheckOutcome(name="gradient", passed=gap <= FD_TOL, value=gap,
                                     threshold=FD_TOL, seed=seed, params={"nonneg": nonneg}))
    return outcomes


_PER_CASE: Dict[str, Callable] = {
    "twofold": _twofold,
    "nonlinearity": _nonlinearity,
    "support": _support,
    "adjoint": _adjoint,
    "gradient": _gradient,
}


def _nonunique(n: int, m: int, q: int, seed: int) -> List[CheckOutcome]:
    residual, distance = check_nonuniqueness(n, m, q, seed)
    control, _ = check_nonuniqueness(n, m, q, seed, violate=True)
    params = {"n": n, "m": m, "q": q, "distance": distance}
    return [
        CheckOutcome(name="nonunique", passed=residual <= NONUNIQUE_TOL and distance > 0.0,
                     value=residual, threshold=NONUNIQUE_TOL, seed=seed, params=params),
        CheckOutcome(name="nonunique-control", passed=control > CONTROL_MIN, value=control,
                     threshold=CONTROL_MIN, seed=seed, params=params),
    ]


def run_check(
    name: str,
    n: int,
    m: int,
    trials: int = 20,
    seed: int = 0,
    cases: Optional[Sequence[DataCase]] = None,
    q: Optional[int] = None,
) -> List[CheckOutcome]:
    """Runs one named property suite over ``trials`` seeded random instances."""
    if name not in CHECK_NAMES:
        raise ParameterError(f"unknown check '{name}'", {"choices": ", ".join(CHECK_NAMES)})
    if trials < 1:
        raise ParameterError("trials must be positive", {"trials": trials})
    if name == "nonunique":
        q = max(m // 5, 1) if q is None else q
        return _nonunique(n, m, q, seed)

    spec = GridSpec.unit_cube(n, m)
    cases = list(cases or (DataCase.FULL, DataCase.LIMITED))
    outcomes: List[CheckOutcome] = []
    for trial in range(trials):
        trial_seed = derive_seed(seed, trial)
        rng = generator(trial_seed)
        for case in cases:
            for outcome in _PER_CASE[name](spec, case, rng, trial_seed):
                outcome.params.update({"n": n, "m": m, "case": case.value, "trial": trial})
                outcomes.append(outcome)
    failed = sum(not o.passed for o in outcomes)
    logger.info("check %s: %d outcomes, %d failed", name, len(outcomes), failed)
    return outcomes
