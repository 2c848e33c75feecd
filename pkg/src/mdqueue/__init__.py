"""Moderate-deviations toolkit for many-server GI/GI/n queues.

Evaluates the quadratic rate functional of centered queue paths through an
adjoint (Fredholm) solve, cross-checks it against a direct minimum-norm
quadratic program, and ships an event-driven simulator for the pathwise
decomposition and law-of-large-numbers diagnostics.
"""

from .dist import ServiceDist
from .fredholm import (
    AssembledKernel,
    FredholmError,
    RateResult,
    assemble_kernel,
    dual_value,
    evaluate_rate,
    forcing,
    lln_path,
    rate_value,
    recover_controls,
    solve_p,
)
from .grids import GridField2D, GridPath, conv_trap, cumtrap, trap_integral, trap_weights
from .oracle import QPSystem, TerminalRateResult, build_qp, min_rate_terminal, solve_min_norm
from .paths import (
    ControlSet,
    ModelParams,
    energy,
    forward_q,
    kiefer_energy,
    kiefer_from_sheet,
    zero_controls,
)
from .renewal import RenewalConvergenceError, solve_linear, solve_nonlinear
from .sim import (
    DecompositionReport,
    QueueTrace,
    ScalingRegime,
    decomposition,
    flow_balance_residuals,
    lln_check,
    mc_tail,
    simulate,
    spawn_streams,
)

__version__ = "0.1.0"

__all__ = [
    "ServiceDist",
    "GridPath",
    "GridField2D",
    "trap_weights",
    "trap_integral",
    "conv_trap",
    "cumtrap",
    "ModelParams",
    "ControlSet",
    "energy",
    "zero_controls",
    "forward_q",
    "kiefer_from_sheet",
    "kiefer_energy",
    "solve_linear",
    "solve_nonlinear",
    "RenewalConvergenceError",
    "AssembledKernel",
    "RateResult",
    "FredholmError",
    "forcing",
    "assemble_kernel",
    "solve_p",
    "rate_value",
    "dual_value",
    "recover_controls",
    "evaluate_rate",
    "lln_path",
    "QPSystem",
    "TerminalRateResult",
    "build_qp",
    "solve_min_norm",
    "min_rate_terminal",
    "ScalingRegime",
    "QueueTrace",
    "DecompositionReport",
    "simulate",
    "flow_balance_residuals",
    "decomposition",
    "lln_check",
    "mc_tail",
    "spawn_streams",
    "__version__",
]
