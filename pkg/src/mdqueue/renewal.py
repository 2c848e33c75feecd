"""Picard solvers for the linear and nonlinear renewal equations.

The nonlinear equation g(t) = f(t) + int_0^t g(t-s)^+ dF(s) is solved by the
iteration g_0 = f, g_k = f + int g_{k-1}^+ dF.  Plain Picard contracts with
factor F(T), so for horizons where F(T) is close to 1 the grid is processed in
windows [0, t0], [t0, 2*t0], ... on which the unresolved mass F(window) stays
below 1/2; earlier windows are frozen while a window iterates.

The theory assumes f absolutely continuous; grid samples with jumps are
accepted as-is, at the cost of first-order accuracy near the jump.
"""
from __future__ import annotations

import math

import numpy as np

from .dist import ServiceDist
from .grids import GridPath, conv_trap

__all__ = ["solve_linear", "solve_nonlinear", "RenewalConvergenceError"]


class RenewalConvergenceError(RuntimeError):
    """Raised when the Picard iteration budget is exhausted.

    Carries the achieved sup-norm residual so callers never act on silently
    wrong values.
    """

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"renewal Picard did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


def _solve(f: GridPath, d: ServiceDist, positive_part: bool, tol: float) -> GridPath:
    n = f.n_steps
    dt = f.dt
    fprime = d.pdf(f.times)
    g = f.values.copy()

    # window length: unresolved service mass within a window at most 1/2
    t0 = min(f.horizon, d.ppf(0.5))
    win = max(1, int(math.floor(t0 / dt)))
    contraction = max(float(d.cdf(win * dt)), 1e-6)
    max_iter = 10 * max(1, math.ceil(math.log(tol) / math.log(contraction)))

    total_iters = 0
    for start in range(1, n + 1, win):
        stop = min(start + win, n + 1)
        for _ in range(max_iter):
            total_iters += 1
            arg = np.maximum(g, 0.0) if positive_part else g
            conv = conv_trap(arg, fprime, dt)
            new_tail = f.values[start:stop] + conv[start:stop]
            change = float(np.max(np.abs(new_tail - g[start:stop])))
            g[start:stop] = new_tail
            if change <= tol:
                break
        else:
            arg = np.maximum(g, 0.0) if positive_part else g
            res = float(np.max(np.abs(g - f.values - conv_trap(arg, fprime, dt))))
            raise RenewalConvergenceError(res, total_iters)
    # node 0 has an empty convolution
    g[0] = f.values[0]

    arg = np.maximum(g, 0.0) if positive_part else g
    residual = float(np.max(np.abs(g - f.values - conv_trap(arg, fprime, dt))))
    if residual > max(10 * tol, 1e-9):
        raise RenewalConvergenceError(residual, total_iters)
    return GridPath(horizon=f.horizon, values=g)


def solve_linear(f: GridPath, d: ServiceDist, tol: float = 1e-10) -> GridPath:
    """Solve g = f + int_0^t g(t-s) dF(s) on the grid of f."""
    return _solve(f, d, positive_part=False, tol=tol)


def solve_nonlinear(f: GridPath, d: ServiceDist, tol: float = 1e-10) -> GridPath:
    """Solve g = f + int_0^t g(t-s)^+ dF(s) on the grid of f."""
    return _solve(f, d, positive_part=True, tol=tol)
