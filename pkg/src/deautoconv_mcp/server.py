# deautoconv_mcp/server.py
import argparse
import logging
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from mcp.server.fastmcp import FastMCP

from deautoconv.autoconv import autoconvolve
from deautoconv.checks import CHECK_NAMES, run_check
from deautoconv.errors import DeautoconvError
from deautoconv.experiments import add_noise, demo_illposed_full, demo_illposed_limited
from deautoconv.grid import GridFn, GridSpec, combine, l2_norm
from deautoconv.phantoms import fresnel_C, fresnel_S, phantom, phantom_dim
from deautoconv.regularize import default_alpha_grid, minimize, select_alpha_opt
from shared.logger_config import setup_logging
from shared.models import DataCase, NoiseSpec, PhantomId, TikhonovConfig

logger = logging.getLogger(__name__)

# region --- Pydantic Payloads for Tools ---

class ForwardPayload(BaseModel):
    """Payload for evaluating the autoconvolution of a phantom."""
    phantom: PhantomId = Field(PhantomId.PRODUCT2D, description="Phantom to sample on the unit cube.")
    n: Optional[int] = Field(None, ge=1, description="Dimension; required only for the constant phantom.")
    m: int = Field(50, ge=2, le=400, description="Cells per axis.")
    case: DataCase = Field(DataCase.FULL, description="'full' data on [0,2]^n or 'limited' data on [0,1]^n.")


class SolvePayload(ForwardPayload):
    """Payload for solving a synthetic problem with known solution."""
    noise_percent: float = Field(1.0, ge=0, description="Relative noise level in percent.")
    seed: int = Field(0, ge=0, description="Seed of the noise draw.")
    alpha: Optional[float] = Field(None, gt=0, description="Fixed regularization parameter; oracle choice if omitted.")
    alpha_points: int = Field(24, ge=2, description="Size of the alpha grid for the oracle choice.")
    xbar: float = Field(0.5, description="Constant reference element and initial guess.")
    max_iters: int = Field(5000, ge=1)


class IllposedPayload(BaseModel):
    """Payload for the ill-posedness perturbation series."""
    variant: DataCase = Field(..., description="'limited' for corner perturbations, 'full' for Fresnel ones.")
    n: int = Field(2, ge=1, le=3)
    m: int = Field(50, ge=2, le=400)
    r: float = Field(0.25, ge=0)
    ks: List[int] = Field(default_factory=lambda: [5, 10, 25], min_length=1)


class CheckPayload(BaseModel):
    """Payload for a randomized property check."""
    name: Literal["twofold", "nonunique", "nonlinearity", "support", "adjoint", "gradient"]
    n: int = Field(2, ge=1, le=3)
    m: int = Field(20, ge=2, le=100)
    trials: int = Field(5, ge=1, le=100)
    seed: int = Field(0, ge=0)
    q: Optional[int] = Field(None, ge=1, description="Vanishing margin for 'nonunique'.")

# endregion


# -------------------------
# MCP instance
# -------------------------
mcp = FastMCP("deautoconv-mcp")


def _phantom_grid(payload: ForwardPayload) -> GridFn:
    n = payload.n or phantom_dim(payload.phantom) or 1
    return phantom(payload.phantom, GridSpec.unit_cube(n, payload.m))


def _error(e: Exception) -> Dict[str, Any]:
    if isinstance(e, DeautoconvError):
        return {"error": type(e).__name__, "details": str(e)}
    return {"error": "validation_error", "details": str(e)}


# -------------------------
# MCP Tools
# -------------------------
@mcp.tool()
def forward_norms(payload: ForwardPayload) -> Dict[str, Any]:
    """
    Samples a phantom on the unit cube, applies the autoconvolution operator and
    returns the norms of the phantom and of its image.
    """
    logger.debug("Tool: forward_norms, payload=%s", payload)
    try:
        x = _phantom_grid(payload)
        y = autoconvolve(x, payload.case)
    except DeautoconvError as e:
        return _error(e)
    return {"norm_x": l2_norm(x), "norm_Fx": l2_norm(y), "output_cells": y.spec.cells}


@mcp.tool()
def solve_synthetic(payload: SolvePayload) -> Dict[str, Any]:
    """
    Simulates noisy data for a phantom and computes a Tikhonov-regularized
    solution, with a fixed alpha or the oracle choice closest to the phantom.
    Returns the alpha used, iterations and the relative error.
    """
    logger.debug("Tool: solve_synthetic, payload=%s", payload)
    try:
        xtrue = _phantom_grid(payload)
        ydelta = add_noise(autoconvolve(xtrue, payload.case),
                           NoiseSpec(delta_rel=payload.noise_percent / 100.0, seed=payload.seed))
        cfg = TikhonovConfig(
            alpha=payload.alpha or 1.0,
            xbar=GridFn(spec=xtrue.spec, values=[payload.xbar] * xtrue.spec.size),
            case=payload.case,
            max_iters=payload.max_iters,
        )
        if payload.alpha is None:
            choice = select_alpha_opt(ydelta, xtrue, cfg, default_alpha_grid(ydelta, payload.alpha_points))
            x, alpha, iterations, reason = choice.x, choice.alpha, choice.iterations, "alpha_opt"
        else:
            result = minimize(ydelta, cfg.xbar, cfg)
            x, alpha, iterations, reason = result.x, cfg.alpha, result.iterations, result.stop_reason
    except (DeautoconvError, ValidationError) as e:
        logger.warning("solve_synthetic failed: %s", e)
        return _error(e)
    rel = l2_norm(combine(1.0, x, -1.0, xtrue)) / l2_norm(xtrue)
    logger.info("solve_synthetic: alpha=%.3e rel_error=%.4f", alpha, rel)
    return {"alpha": alpha, "iterations": iterations, "stop_reason": reason, "rel_error": rel}


@mcp.tool()
def illposed_series(payload: IllposedPayload) -> Dict[str, Any]:
    """
    Runs the corner ('limited') or Fresnel ('full') perturbation series and returns
    distance and image residual per k.
    """
    logger.debug("Tool: illposed_series, payload=%s", payload)
    demo = demo_illposed_limited if payload.variant is DataCase.LIMITED else demo_illposed_full
    try:
        series = demo(payload.n, payload.m, payload.r, payload.ks)
    except DeautoconvError as e:
        return _error(e)
    return series.model_dump(mode="json")


@mcp.tool()
def run_property_check(payload: CheckPayload) -> Dict[str, Any]:
    """
    Runs one randomized property suite and reports whether every outcome passed,
    along with the failing outcomes.
    """
    logger.debug("Tool: run_property_check, payload=%s", payload)
    try:
        outcomes = run_check(payload.name, payload.n, payload.m, payload.trials, payload.seed, q=payload.q)
    except DeautoconvError as e:
        return _error(e)
    failed = [o.model_dump() for o in outcomes if not o.passed]
    return {"passed": not failed, "outcomes": len(outcomes), "failed": failed}


@mcp.tool()
def fresnel_values(s: List[float]) -> Dict[str, Any]:
    """
    Returns the Fresnel integrals S(s) = int_0^s sin(t^2) dt and C(s) = int_0^s cos(t^2) dt
    for nonnegative s.
    """
    logger.debug("Tool: fresnel_values, s=%s", s)
    try:
        return {"s": s, "S": [fresnel_S(v) for v in s], "C": [fresnel_C(v) for v in s]}
    except DeautoconvError as e:
        return _error(e)


# -------------------------
# Bootstrap and run
# -------------------------
def main():
    parser = argparse.ArgumentParser(prog="deautoconv-mcp",
                                     description="MCP server for deautoconvolution tools (stdio transport)")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument("--log-file", default=None, help="Optional log file (default: DEAUTOCONV_LOG_FILE)")
    args = parser.parse_args()

    load_dotenv()
    # stdout carries the protocol, so console logging stays on stderr
    setup_logging(console_level=logging.DEBUG if args.verbose else logging.INFO, log_file=args.log_file)
    logger.info("MCP server starting (stdio transport). Verbose=%s, checks=%s", args.verbose, ", ".join(CHECK_NAMES))

    try:
        mcp.run(transport="stdio")
    except Exception as e:
        logger.exception("MCP server exited with error: %s", e)
        return 1
    return 0


if __name__ == "__main__":
    main()
