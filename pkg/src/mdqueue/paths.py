"""Control triples, their quadratic energy, the forward control-to-path map,
and the Kiefer / Brownian-sheet transform with its energy identity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import ServiceDist
from .grids import GridField2D, GridPath, conv_trap, cumtrap, trap_weights
from .renewal import solve_nonlinear

__all__ = [
    "ModelParams",
    "ControlSet",
    "energy",
    "forward_q",
    "kiefer_from_sheet",
    "kiefer_energy",
    "partial_cell_weights",
]


@dataclass(frozen=True)
class ModelParams:
    """Limit-regime parameters: service rate mu, arrival variability sigma,
    capacity-slack drift beta, initial centered state q0."""

    mu: float
    sigma: float
    beta: float
    q0: float

    def __post_init__(self):
        if not (self.mu > 0 and self.sigma > 0):
            raise ValueError("mu and sigma must be strictly positive")
        for v in (self.mu, self.sigma, self.beta, self.q0):
            if not np.isfinite(v):
                raise ValueError("model parameters must be finite")

    @property
    def q0_plus(self) -> float:
        return max(self.q0, 0.0)

    @property
    def q0_minus(self) -> float:
        return max(-self.q0, 0.0)


@dataclass(frozen=True)
class ControlSet:
    """Control densities: w0dot on [0,1], wdot on [0,T], kdot on [0,1]x[0,T'].

    The densities themselves are stored (not integrated paths) since the rate
    functional and the path equation consume densities.  zero_mean_enforced
    records whether the bridge/Kiefer endpoint constraints (zero x-mean of
    w0dot, and of each kdot time slice) were imposed when the set was built.
    """

    w0dot: GridPath
    wdot: GridPath
    kdot: GridField2D
    zero_mean_enforced: bool = False

    def __post_init__(self):
        if abs(self.w0dot.horizon - 1.0) > 1e-12:
            raise ValueError("w0dot must live on [0, 1]")


def energy(c: ControlSet) -> float:
    """Half the summed squared L2 norms of the three densities (trapezoid)."""
    e_w0 = float(c.w0dot.weights() @ c.w0dot.values**2)
    e_w = float(c.wdot.weights() @ c.wdot.values**2)
    e_k = c.kdot.integral_sq()
    return 0.5 * (e_w0 + e_w + e_k)


def zero_controls(T: float, n_steps: int, n_x: int, mu: float = 1.0) -> ControlSet:
    return ControlSet(
        w0dot=GridPath(1.0, np.zeros(n_x + 1)),
        wdot=GridPath(T, np.zeros(n_steps + 1)),
        kdot=GridField2D(mu * T, np.zeros((n_x + 1, n_steps + 1))),
    )


def partial_cell_weights(upper: np.ndarray, n_nodes: int, dx: float) -> np.ndarray:
    """Nodal weight vectors for int_0^{u} v(x) dx on a uniform grid.

    Full cells below u get trapezoid weights; the cell containing u gets the
    partial-cell trapezoid correction with v linearly interpolated at u.
    Returns an array of shape (len(upper), n_nodes).
    """
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    out = np.zeros((len(upper), n_nodes))
    x_max = (n_nodes - 1) * dx
    u = np.clip(upper, 0.0, x_max)
    m = np.minimum((u / dx).astype(int), n_nodes - 2)
    theta = u / dx - m
    rows = np.arange(len(upper))
    # full-cell trapezoid over nodes 0..m
    for r, mm in zip(rows, m):
        if mm > 0:
            out[r, : mm + 1] = dx
            out[r, 0] = dx / 2
            out[r, mm] = dx / 2
    out[rows, m] += dx * theta * (2.0 - theta) / 2.0
    out[rows, m + 1] += dx * theta**2 / 2.0
    return out


def forward_q(c: ControlSet, pm: ModelParams, d: ServiceDist, tol: float = 1e-10) -> GridPath:
    """Map a control set to the centered queue path q via the nonlinear renewal solve.

    The forcing collects the initial-condition terms, the drift, the bridge
    term w0(F0(t)), the arrival term int (1-F(t-s)) sigma wdot(s) ds and the
    sequential-empirical term rewritten as
    int_0^t int_0^{F(t-s)} kdot(x, mu*s) dx mu ds.
    """
    t = c.wdot.times
    n = c.wdot.n_steps
    dt = c.wdot.dt
    F = d.cdf(t)
    F0 = d.eq_cdf(t)

    forcing = (1.0 - F) * pm.q0_plus - (1.0 - F0) * pm.q0_minus - pm.beta * F0
    forcing = forcing + c.w0dot.cumulative(F0)
    forcing = forcing + pm.sigma * conv_trap(1.0 - F, c.wdot.values, dt)

    # kdot term: inner partial-cell x-integral up to F(lag), outer trapezoid in s
    kcols = c.kdot.interp_t(pm.mu * t)  # (Mx+1, N+1)
    xw = partial_cell_weights(F, c.kdot.values.shape[0], c.kdot.dx)  # (N+1 lags, Mx+1)
    P = xw @ kcols  # P[lag, j] = int_0^{F(t_lag)} kdot(x, mu t_j) dx
    kterm = np.zeros(n + 1)
    for i in range(1, n + 1):
        diag = P[i::-1, : i + 1].diagonal()  # P[i-j, j] for j=0..i
        kterm[i] = pm.mu * (dt * diag.sum() - 0.5 * dt * (P[i, 0] + P[0, i]))
    forcing = forcing + kterm

    return solve_nonlinear(GridPath(c.wdot.horizon, forcing), d, tol=tol)


def _log_grid(n_sub: int, u_max: float):
    u = np.linspace(0.0, u_max, n_sub + 1)
    x = -np.expm1(-u)  # 1 - e^{-u}
    return u, x


def kiefer_from_sheet(b: GridField2D, n_sub: int | None = None) -> GridField2D:
    """Solve k(x,t) = -int_0^x k(y,t)/(1-y) dy + b(x,t) for k given the sheet density.

    Uses the explicit solution k(x,t) = (1-x) int_0^x b_y(y,t)/(1-y) dy with
    b_y the x-derivative of the integrated sheet.  The 1/(1-y) weight is
    handled by substituting u = -ln(1-y), on which the integrand is smooth;
    k(1,t) is set to 0, consistent with the x->1 limit for finite-energy
    sheets.  Returns k on the node grid of b.
    """
    m = b.values.shape[0] - 1
    n_sub = n_sub or 8 * m
    u_max = max(4.0, -np.log(max(b.dx, 1e-12)) + 8.0)
    u, xs = _log_grid(n_sub, u_max)

    # b_y(y, t) = int_0^t bdot(y, s) ds, interpolated onto the log-spaced x nodes
    by = np.apply_along_axis(cumtrap, 1, b.values, b.dt)  # (M+1, N+1)
    by_log = np.empty((n_sub + 1, by.shape[1]))
    for j in range(by.shape[1]):
        by_log[:, j] = np.interp(xs, b.x_grid, by[:, j])

    # inner integral m(u) = int_0^u b_y(x(v), t) dv, then k = (1-x) * m
    inner = np.apply_along_axis(cumtrap, 0, by_log, u[1] - u[0])
    k_log = (1.0 - xs)[:, None] * inner

    k = np.empty_like(b.values)
    for j in range(by.shape[1]):
        k[:, j] = np.interp(b.x_grid, xs, k_log[:, j])
    k[-1, :] = 0.0
    k[:, 0] = 0.0
    return GridField2D(b.t_horizon, k, x_max=b.x_max)


def kiefer_energy(b: GridField2D, n_sub: int | None = None) -> tuple[float, float]:
    """Energies (integral of kdot^2, integral of bdot^2) for the transform of b.

    kdot(x,t) = bdot(x,t) - int_0^x bdot(y,t)/(1-y) dy; the x-integral of
    kdot^2 is evaluated on the log grid u = -ln(1-x), where the integrand
    (bdot - m)^2 e^{-u} is smooth and the endpoint log singularity of the
    transform carries negligible truncated mass.
    """
    m = b.values.shape[0] - 1
    n_sub = n_sub or 8 * m
    u_max = 30.0
    u, xs = _log_grid(n_sub, u_max)
    du = u[1] - u[0]

    bdot_log = np.empty((n_sub + 1, b.values.shape[1]))
    for j in range(b.values.shape[1]):
        bdot_log[:, j] = np.interp(xs, b.x_grid, b.values[:, j])

    m_int = np.apply_along_axis(cumtrap, 0, bdot_log, du)  # int_0^u bdot(x(v),t) dv
    kdot_log = bdot_log - m_int
    wx = trap_weights(n_sub + 1, du) * np.exp(-u)
    per_t = wx @ kdot_log**2
    wt = trap_weights(b.values.shape[1], b.dt)
    return float(per_t @ wt), b.integral_sq()
