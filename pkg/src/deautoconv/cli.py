"""Command-line entry point: ``deautoconv <command> [flags]``.

Every subcommand accepts ``--config FILE``, a key=value file whose keys are flag
destinations (``m=50``, ``case=limited``); explicit flags win over file values.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from deautoconv.autoconv import autoconvolve, output_spec
from deautoconv.checks import CHECK_NAMES, run_check
from deautoconv.errors import CheckFailure, DeautoconvError, ParameterError, StructuralError
from deautoconv.experiments import (
    TABLE_LEVELS,
    add_noise,
    demo_illposed_full,
    demo_illposed_limited,
    run_rate_study,
)
from deautoconv.grid import GridFn, GridSpec, combine, l2_norm
from deautoconv.phantoms import fresnel_C, fresnel_S, phantom, phantom_dim
from deautoconv.regularize import default_alpha_grid, minimize, select_alpha_opt
from shared.logger_config import setup_logging
from shared.models import DataCase, NoiseSpec, PhantomId, TikhonovConfig
from shared.storage import (
    read_gfn,
    write_grid,
    write_report_json,
    write_rows,
    write_runs_csv,
    write_table_csv,
)

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


# -------------------------
# Flag parsing helpers
# -------------------------
def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _grid_format(out: Optional[str], fmt: Optional[str]) -> str:
    if fmt:
        return fmt
    return "csv" if out and out.lower().endswith(".csv") else "gfn"


def _workers(value: Optional[int]) -> int:
    if value is not None:
        return value
    env = os.getenv("DEAUTOCONV_THREADS")
    if not env:
        return 1
    try:
        return max(int(env), 1)
    except ValueError:
        raise ParameterError("DEAUTOCONV_THREADS must be an integer", {"value": env})


def _cases(choice: str) -> List[DataCase]:
    return [DataCase.FULL, DataCase.LIMITED] if choice == "both" else [DataCase(choice)]


def _phantom_grid(pid: PhantomId, n: Optional[int], m: int) -> GridFn:
    dim = phantom_dim(pid)
    if n is None:
        n = dim if dim is not None else 1
    return phantom(pid, GridSpec.unit_cube(n, m))


def _input_spec(data: GridFn, n: Optional[int], case: DataCase) -> GridSpec:
    """Recovers the unit-cube input grid of data recorded on ``output_spec``."""
    cells = data.spec.cells
    m = (cells + 1) // 2 if case is DataCase.FULL else cells
    spec = GridSpec.unit_cube(n or data.spec.dim, max(m, 2))
    if output_spec(spec, case) != data.spec:
        raise StructuralError(f"data file does not hold {case.value} data of a unit-cube grid",
                              {"data": data.spec})
    return spec


# -------------------------
# Commands
# -------------------------
def cmd_forward(args: argparse.Namespace) -> int:
    """Evaluates F(x) for a phantom or a grid file."""
    case = DataCase(args.case)
    if args.input:
        x = read_gfn(args.input)
    else:
        x = _phantom_grid(PhantomId(args.phantom), args.n, args.m)
    y = autoconvolve(x, case)
    if args.out:
        write_grid(args.out, y, _grid_format(args.out, args.format))
    print(f"norm_x={l2_norm(x)!r}")
    print(f"norm_Fx={l2_norm(y)!r}")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    """Computes a Tikhonov-regularized solution for a fixed or oracle-chosen alpha."""
    case = DataCase(args.case)
    xtrue: Optional[GridFn] = None
    if args.data:
        ydelta = read_gfn(args.data)
        spec = _input_spec(ydelta, args.n, case)
        if args.xtrue:
            xtrue = read_gfn(args.xtrue)
            if xtrue.spec != spec:
                raise StructuralError("xtrue does not match the data grid",
                                      {"expected": spec, "got": xtrue.spec})
    elif args.phantom:
        xtrue = _phantom_grid(PhantomId(args.phantom), args.n, args.m)
        spec = xtrue.spec
        ydelta = add_noise(autoconvolve(xtrue, case), NoiseSpec(delta_rel=args.noise / 100.0, seed=args.seed))
    else:
        raise ParameterError("solve needs --data or --phantom")

    if args.alpha is None and not args.alpha_opt:
        raise ParameterError("solve needs --alpha or --alpha-opt")
    if args.alpha_opt and xtrue is None:
        raise ParameterError("--alpha-opt needs a known solution (--phantom or --xtrue)")
    if args.start == "xtrue" and xtrue is None:
        raise ParameterError("--start xtrue needs a known solution (--phantom or --xtrue)")

    cfg = TikhonovConfig(
        alpha=args.alpha if not args.alpha_opt else 1.0,
        xbar=GridFn(spec=spec, values=np.full(spec.size, args.xbar)),
        case=case,
        nonneg=args.nonneg,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
    )

    if args.alpha_opt:
        choice = select_alpha_opt(ydelta, xtrue, cfg, default_alpha_grid(ydelta, args.alpha_points))
        x, alpha, iterations, reason = choice.x, choice.alpha, choice.iterations, "alpha_opt"
    else:
        x0 = xtrue if args.start == "xtrue" else cfg.xbar
        result = minimize(ydelta, x0, cfg)
        x, alpha, iterations, reason = result.x, cfg.alpha, result.iterations, result.stop_reason
        if result.stop_reason == "max_iters":
            logger.error("no convergence after %d iterations (grad=%.3e, objective=%.6e)",
                         result.iterations, result.grad_norm, result.objective_value)
            if args.out:
                write_grid(args.out, x, _grid_format(args.out, args.format))
            return 3
        if not result.converged:
            logger.warning("solver stopped on %s with grad=%.3e", result.stop_reason, result.grad_norm)

    if args.out:
        write_grid(args.out, x, _grid_format(args.out, args.format))
    print(f"alpha={alpha!r}")
    print(f"iterations={iterations}")
    print(f"stop_reason={reason}")
    if xtrue is not None:
        rel = l2_norm(combine(1.0, x, -1.0, xtrue)) / l2_norm(xtrue)
        print(f"rel_error={rel!r}")
    return 0


def cmd_table1(args: argparse.Namespace) -> int:
    """Runs the error-versus-noise study per case and writes table, runs and JSON report."""
    levels = TABLE_LEVELS if args.levels is None else tuple(v / 100.0 for v in args.levels)
    workers = _workers(args.threads)
    reports = []
    for case in _cases(args.case):
        reports.append(run_rate_study(
            args.n, case, args.m, levels, args.runs, args.seed,
            workers=workers,
            alpha_points=args.alpha_points,
            max_iters=args.max_iters,
            grad_tol=args.grad_tol,
            timestamp=not args.no_timestamp,
        ))

    out = Path(args.out)
    write_table_csv(out, reports)
    write_runs_csv(out.with_name(out.stem + "_runs.csv"), reports)
    write_report_json(out.with_suffix(".json"), reports)
    print(out.read_text(), end="")

    failures = sum(r.failures for r in reports)
    if failures:
        logger.error("%d study cells failed; see %s", failures, out.with_name(out.stem + "_runs.csv"))
        return 3
    return 0


def cmd_illposed(args: argparse.Namespace) -> int:
    """Prints the perturbation series of one ill-posedness demo."""
    variant = DataCase(args.variant)
    demo = demo_illposed_limited if variant is DataCase.LIMITED else demo_illposed_full
    series = demo(args.n, args.m, args.r, args.k, keep_fields=args.dump)

    header = ["k", "distance", "residual"] + (["bound"] if variant is DataCase.LIMITED else [])
    print(" ".join(header))
    for p in series.points:
        row = [str(p.k), f"{p.distance:.6e}", f"{p.residual:.6e}"]
        if variant is DataCase.LIMITED:
            row.append(f"{p.bound:.6e}")
        print(" ".join(row))

    if args.dump:
        fmt = args.format
        directory = Path(args.dump_dir)
        for k, (h, dy) in series.fields.items():
            write_grid(directory / f"{variant.value}_dx_k{k}.{fmt}", h, fmt)
            write_grid(directory / f"{variant.value}_dy_k{k}.{fmt}", dy, fmt)
    if args.json:
        write_report_json(args.json, series)
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    """Runs a property suite; exits 1 on the first property that does not hold."""
    outcomes = run_check(args.name, args.n, args.m, args.trials, args.seed, _cases(args.case), args.q)

    by_name: Dict[str, list] = {}
    for outcome in outcomes:
        by_name.setdefault(outcome.name, []).append(outcome)

    failed = []
    for name, group in by_name.items():
        worst = max(group, key=lambda o: o.value)
        bad = [o for o in group if not o.passed]
        status = "FAIL" if bad else "PASS"
        print(f"{status} {name} value={worst.value:.3e} threshold={worst.threshold:.3e} trials={len(group)}")
        failed.extend(bad)

    if failed:
        first = failed[0]
        raise CheckFailure(f"{len(failed)} outcome(s) failed, first: {first.name}",
                           {"seed": first.seed, **first.params})
    return 0


def cmd_fresnel_table(args: argparse.Namespace) -> int:
    """Tabulates the unnormalized Fresnel integrals on [0, s_max]."""
    if args.points < 2 or args.s_max <= 0.0:
        raise ParameterError("need points >= 2 and s_max > 0", {"points": args.points, "s_max": args.s_max})
    s = np.linspace(0.0, args.s_max, args.points)
    rows = zip(s.tolist(), np.atleast_1d(fresnel_S(s)).tolist(), np.atleast_1d(fresnel_C(s)).tolist())
    if args.out:
        write_rows(args.out, ["s", "S", "C"], rows)
    else:
        print("s,S,C")
        for sv, sval, cval in rows:
            print(f"{sv!r},{sval!r},{cval!r}")
    return 0


# -------------------------
# Parser
# -------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value file with flag defaults")
    common.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(
        prog="deautoconv",
        description="Deautoconvolution on [0,1]^n: forward model, Tikhonov solver and experiments",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        sub = subs.add_parser(name, parents=[common], help=help_text, description=help_text,
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sub.set_defaults(func=func)
        return sub

    phantoms = [p.value for p in PhantomId]
    cases = [c.value for c in DataCase]

    p = add("forward", cmd_forward, "Evaluate the autoconvolution of a phantom or grid file")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--phantom", choices=phantoms, default="product2d")
    src.add_argument("--in", dest="input", metavar="FILE", help="GFN1 grid file on [0,1]^n")
    p.add_argument("--n", type=int, default=None, help="dimension (phantoms of fixed dimension infer it)")
    p.add_argument("--m", type=int, default=50, help="cells per axis")
    p.add_argument("--case", choices=cases, default="full")
    p.add_argument("--out", metavar="FILE")
    p.add_argument("--format", choices=["gfn", "csv"], default=None, help="default from the --out suffix")

    p = add("solve", cmd_solve, "Tikhonov-regularized solution from data or a noisy synthetic phantom")
    p.add_argument("--data", metavar="FILE", help="GFN1 data on the case's output grid")
    p.add_argument("--xtrue", metavar="FILE", help="known solution for --data")
    p.add_argument("--phantom", choices=phantoms, default=None, help="synthetic data from this phantom")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--case", choices=cases, default="full")
    p.add_argument("--noise", type=float, default=0.0, help="relative noise level in percent")
    p.add_argument("--seed", type=int, default=0)
    alpha = p.add_mutually_exclusive_group()
    alpha.add_argument("--alpha", type=float, default=None)
    alpha.add_argument("--alpha-opt", action="store_true", help="oracle choice against the known solution")
    p.add_argument("--alpha-points", type=int, default=24)
    p.add_argument("--start", choices=["xbar", "xtrue"], default="xbar", help="initial guess")
    p.add_argument("--xbar", type=float, default=0.5, help="constant reference element")
    p.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=None,
                   help="nonnegativity constraint (default: on for limited data)")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--out", metavar="FILE")
    p.add_argument("--format", choices=["gfn", "csv"], default=None)

    p = add("table1", cmd_table1, "Relative errors over noise levels with Hölder exponent estimates")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--case", choices=cases + ["both"], default="both")
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=_float_list, default=None,
                   help="noise levels in percent (default: 10,8,5,2,1,0.8,0.5,0.2,0.1,0.05)")
    p.add_argument("--out", default="table1.csv", help="table CSV; runs CSV and JSON report go next to it")
    p.add_argument("--threads", type=int, default=None, help="worker processes (fallback: DEAUTOCONV_THREADS, 1)")
    p.add_argument("--no-timestamp", action="store_true", help="omit timestamp and wall time from the report")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--alpha-points", type=int, default=24)

    p = add("illposed", cmd_illposed, "Perturbation series showing instability")
    p.add_argument("--variant", choices=cases, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--r", type=float, default=0.25)
    p.add_argument("--k", type=_int_list, default=[5, 10, 25])
    p.add_argument("--dump", action="store_true", help="write the difference fields per k")
    p.add_argument("--dump-dir", default=".")
    p.add_argument("--format", choices=["gfn", "csv"], default="gfn")
    p.add_argument("--json", metavar="FILE", help="write the series as JSON")

    p = add("check", cmd_check, "Randomized property checks")
    p.add_argument("name", choices=CHECK_NAMES)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", type=int, default=None, help="vanishing margin for nonunique (default m/5)")
    p.add_argument("--case", choices=cases + ["both"], default="both")

    p = add("fresnel-table", cmd_fresnel_table, "Tabulate S(s) and C(s)")
    p.add_argument("--s-max", type=float, default=3.0)
    p.add_argument("--points", type=int, default=31)
    p.add_argument("--out", metavar="FILE")

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], args: argparse.Namespace) -> argparse.Namespace:
    """Re-parses ``argv`` with the config file's values as subcommand defaults."""
    values = dotenv_values(args.config)
    if not values and not Path(args.config).is_file():
        raise ParameterError(f"config file {args.config} not found")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices[args.command]

    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.strip().lower().replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise ParameterError(f"unknown config key '{key}' for {args.command}")
        if raw is None:
            continue
        if actions[dest].nargs == 0:
            if raw.lower() not in _TRUE | _FALSE:
                raise ParameterError(f"config key '{key}' expects true/false", {"value": raw})
            defaults[dest] = raw.lower() in _TRUE
        elif actions[dest].choices is not None and raw not in actions[dest].choices:
            raise ParameterError(f"config key '{key}' must be one of {list(actions[dest].choices)}",
                                 {"value": raw})
        else:
            # argparse converts string defaults with the action's type
            defaults[dest] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(console_level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        logger.debug("Running %s with %s", args.command, vars(args))
        return args.func(args)
    except DeautoconvError as e:
        logger.error("%s", e)
        return e.exit_code
    except ValidationError as e:
        first = e.errors()[0]
        logger.error("invalid parameter %s: %s", ".".join(str(p) for p in first["loc"]), first["msg"])
        return 2


if __name__ == "__main__":
    sys.exit(main())
