"""Adjoint solve for the rate functional: forcing assembly, Fredholm kernel,
Picard/direct solve, dual value, and recovery of the optimal controls."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dist import ServiceDist
from .grids import GridField2D, GridPath, conv_trap, trap_weights
from .paths import ControlSet, ModelParams, energy, forward_q
from .renewal import solve_nonlinear

__all__ = [
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
    "shift_matrix",
]

_ZERO_CLAMP = 1e-10
_SIGN_EPS = 1e-12


class FredholmError(RuntimeError):
    """Adjoint solve failed to meet the residual tolerance."""


def positive_indicator(q: np.ndarray) -> np.ndarray:
    """Grid indicator of {q > 0}, with values in [-1e-12, 1e-12] treated as zero.

    A zero node adjacent to a positive node counts as positive: the integrand
    q' 1{q>0} is defined a.e. and its one-sided limit at the edge of a positive
    interval is q', so giving the edge node that value keeps the trapezoid rule
    second-order there instead of dropping the half-weight endpoint.
    """
    pos = q > _SIGN_EPS
    near0 = np.abs(q) <= _SIGN_EPS
    edge = np.zeros_like(pos)
    edge[:-1] |= pos[1:]
    edge[1:] |= pos[:-1]
    return (pos | (near0 & edge)).astype(float)


def path_derivative(q: GridPath) -> np.ndarray:
    """Central differences with second-order one-sided stencils at the ends."""
    v, dt = q.values, q.dt
    dq = np.empty_like(v)
    dq[1:-1] = (v[2:] - v[:-2]) / (2 * dt)
    dq[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dt)
    dq[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dt)
    return dq


def forcing(q: GridPath, pm: ModelParams, d: ServiceDist) -> GridPath:
    """h(t) = qdot(t) - int_0^t qdot(s) 1{q(s)>0} F'(t-s) ds + (beta - q0^-) F0'(t)."""
    if abs(q.values[0] - pm.q0) > 1e-9:
        raise ValueError(f"q(0) = {q.values[0]} does not match q0 = {pm.q0}")
    t = q.times
    dq = path_derivative(q)
    a = dq * positive_indicator(q.values)
    h = dq - conv_trap(a, d.pdf(t), q.dt) + (pm.beta - pm.q0_minus) * d.eq_pdf(t)
    return GridPath(q.horizon, h)


def shift_matrix(d: ServiceDist, T: float, n_steps: int) -> np.ndarray:
    """Trapezoid matrix S with (S p)_i = int_{t_i}^T p(u) F'(u - t_i) du.

    The discrete adjoint of S in the trapezoid inner product is the
    convolution int_0^t p(r) F'(t - r) dr, so the Fredholm operator and the
    dual objective built from S are exactly transposes of one another.
    """
    t = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    lag = t[None, :] - t[:, None]
    S = np.where(lag >= 0, d.pdf(np.abs(lag)), 0.0)
    S *= dt
    idx = np.arange(n_steps + 1)
    S[idx, idx] *= 0.5
    S[:, -1] *= 0.5
    S[-1, -1] = 0.0
    return S


@dataclass(frozen=True)
class AssembledKernel:
    """Discretized Fredholm data on [0, T]: the nodal symmetric kernel matrix
    K(s,t) = sigma^2 (F'(|s-t|) - int_0^{s^t} F'(s-r) F'(t-r) dr) plus the
    shift matrix S and quadrature weights used by the solver.

    The solver applies the operator through S (sigma^2 (S + S* - S* S) in the
    weighted inner product) so that the linear system is exactly the
    stationarity condition of the discrete dual objective.
    """

    matrix: np.ndarray
    S: np.ndarray
    weights: np.ndarray
    sigma: float
    horizon: float

    def apply(self, p: np.ndarray) -> np.ndarray:
        w = self.weights
        Sp = self.S @ p
        Sadj = lambda v: (self.S.T @ (w * v)) / w
        return self.sigma**2 * (Sp + Sadj(p) - Sadj(Sp))

    def operator_matrix(self) -> np.ndarray:
        w = self.weights
        Sadj = (self.S.T * w[None, :]) / w[:, None]
        return self.sigma**2 * (self.S + Sadj - Sadj @ self.S)


def assemble_kernel(
    pm: ModelParams, d: ServiceDist, T: float, n_steps: int, gauss_order: int = 40
) -> AssembledKernel:
    """Assemble the kernel at node pairs; the inner int_0^{s^t} F'F' dr uses
    Gauss-Legendre quadrature, exact to roundoff for the analytic families."""
    t = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    gx, gw = leggauss(gauss_order)

    s_grid = t[:, None]
    t_grid = t[None, :]
    m = np.minimum(s_grid, t_grid)  # (N+1, N+1)
    # nodes r = m/2 * (gx + 1), weights m/2 * gw
    inner = np.zeros_like(m)
    for k in range(gauss_order):
        r = 0.5 * m * (gx[k] + 1.0)
        inner += 0.5 * m * gw[k] * d.pdf(s_grid - r) * d.pdf(t_grid - r)

    K = pm.sigma**2 * (d.pdf(np.abs(s_grid - t_grid)) - inner)
    K = 0.5 * (K + K.T)  # symmetric by construction; remove roundoff skew
    S = shift_matrix(d, T, n_steps)
    w = trap_weights(n_steps + 1, dt)
    return AssembledKernel(matrix=K, S=S, weights=w, sigma=pm.sigma, horizon=T)


def solve_p(
    h: GridPath,
    kernel: AssembledKernel,
    pm: ModelParams,
    tol: float = 1e-12,
    max_iter: int = 400,
) -> tuple[GridPath, dict]:
    """Solve (mu + sigma^2) p = h + K p for the adjoint.

    Picard iteration p <- (h + K p) / (mu + sigma^2) is attempted first; on
    stagnation or divergence the dense linear solve takes over.  The residual
    is always checked against tol; failure of both routes is a hard error.
    """
    denom = pm.mu + pm.sigma**2
    hv = h.values
    scale = max(1.0, float(np.max(np.abs(hv))))

    p = hv / denom
    method, iters = "picard", 0
    prev_change = np.inf
    converged = False
    for iters in range(1, max_iter + 1):
        p_new = (hv + kernel.apply(p)) / denom
        change = float(np.max(np.abs(p_new - p)))
        p = p_new
        if change <= 0.5 * tol * scale:
            converged = True
            break
        if change > prev_change * 1.05 and iters > 5:
            break  # diverging; kernel not a contraction at this sigma^2/mu
        prev_change = change

    def residual_of(pv):
        return float(np.max(np.abs(denom * pv - hv - kernel.apply(pv))))

    if not converged or residual_of(p) > tol * scale:
        A = denom * np.eye(len(hv)) - kernel.operator_matrix()
        p = np.linalg.solve(A, hv)
        method = "direct"

    res = residual_of(p)
    if res > max(tol * scale, 1e-8):
        raise FredholmError(
            f"adjoint residual {res:.3e} exceeds tolerance (method={method}, iters={iters})"
        )
    diag = {"method": method, "iterations": iters, "residual": res}
    return GridPath(h.horizon, p), diag


def rate_value(p: GridPath, h: GridPath, tol: float = _ZERO_CLAMP) -> float:
    """I = 1/2 * int p h dt, clamped to 0 inside [-tol, 0)."""
    val = 0.5 * float(p.weights() @ (p.values * h.values))
    if val < -tol:
        raise FredholmError(f"rate value {val:.3e} below -{tol:.0e}: solver inconsistency")
    return max(val, 0.0)


def dual_value(p: GridPath, h: GridPath, pm: ModelParams, d: ServiceDist) -> float:
    """Concave dual objective int p h - 1/2 (mu int p^2 + int (sigma p - sigma S p)^2).

    Shifts beyond the horizon use p = 0.  At the adjoint this equals the rate
    value by construction of the discrete saddle problem.
    """
    S = shift_matrix(d, p.horizon, p.n_steps)
    w = p.weights()
    pv = p.values
    lin = float(w @ (pv * h.values))
    quad_mu = pm.mu * float(w @ pv**2)
    resid = pm.sigma * (pv - S @ pv)
    return lin - 0.5 * (quad_mu + float(w @ resid**2))


def recover_controls(
    p: GridPath, pm: ModelParams, d: ServiceDist, n_x: int = 32
) -> ControlSet:
    """Optimal controls from the adjoint:

    w0dot(x) = p(F0^{-1}(x)), wdot(t) = sigma (p(t) - int p(t+s) F'(s) ds),
    kdot(x, t) = p(t/mu + F^{-1}(x)); p vanishes beyond the horizon.
    """
    T = p.horizon

    x_nodes = np.linspace(0.0, 1.0, n_x + 1)
    f0_T = float(d.eq_cdf(T))
    w0 = np.zeros(n_x + 1)
    for i, x in enumerate(x_nodes):
        if x < f0_T:
            w0[i] = p.interp(d.eq_ppf(float(x)))
    wdot = pm.sigma * (p.values - shift_matrix(d, T, p.n_steps) @ p.values)

    tau = np.linspace(0.0, pm.mu * T, p.n_steps + 1)
    f_T = float(d.cdf(T))
    kdot = np.zeros((n_x + 1, p.n_steps + 1))
    for i, x in enumerate(x_nodes):
        if x >= f_T:
            continue
        finv = d.ppf(float(x))
        args = tau / pm.mu + finv
        kdot[i] = np.where(args <= T, p.interp(args), 0.0)

    return ControlSet(
        w0dot=GridPath(1.0, w0),
        wdot=GridPath(T, wdot),
        kdot=GridField2D(pm.mu * T, kdot),
    )


def lln_path(pm: ModelParams, d: ServiceDist, T: float, n_steps: int) -> GridPath:
    """Law-of-large-numbers path: the zero-control solution of the path equation."""
    t = np.linspace(0.0, T, n_steps + 1)
    f = (
        (1.0 - d.cdf(t)) * pm.q0_plus
        - (1.0 - d.eq_cdf(t)) * pm.q0_minus
        - pm.beta * d.eq_cdf(t)
    )
    return solve_nonlinear(GridPath(T, f), d)


def _project_zero_mean(c: ControlSet) -> float:
    """Energy of the controls after removing the x-mean of w0dot and of each
    kdot time slice (the bridge/Kiefer endpoint constraints)."""
    w0 = c.w0dot.values - c.w0dot.integral()
    wx = trap_weights(c.kdot.values.shape[0], c.kdot.dx)
    col_means = wx @ c.kdot.values  # x-grid spans [0,1], weights sum to 1
    kd = c.kdot.values - col_means[None, :]
    proj = ControlSet(
        w0dot=GridPath(1.0, w0),
        wdot=c.wdot,
        kdot=GridField2D(c.kdot.t_horizon, kd, x_max=c.kdot.x_max),
        zero_mean_enforced=True,
    )
    return energy(proj)


@dataclass(frozen=True)
class RateResult:
    """Everything the adjoint route produces for one path q."""

    forcing: GridPath
    adjoint: GridPath
    rate: float
    dual: float
    controls: ControlSet
    primal_energy: float
    duality_gap: float
    diagnostics: dict = field(default_factory=dict)


def evaluate_rate(
    q: GridPath,
    pm: ModelParams,
    d: ServiceDist,
    n_x: int = 32,
    tol: float = 1e-12,
) -> RateResult:
    """Full adjoint pipeline: forcing, kernel, adjoint, rate, dual, controls."""
    h = forcing(q, pm, d)
    kern = assemble_kernel(pm, d, q.horizon, q.n_steps)
    p, diag = solve_p(h, kern, pm, tol=tol)
    rate = rate_value(p, h)
    dual = dual_value(p, h, pm, d)
    controls = recover_controls(p, pm, d, n_x=n_x)
    primal = energy(controls)
    gap = primal - rate
    tail_mass = float(1.0 - d.cdf(q.horizon))
    diag = dict(
        diag,
        truncation_tail_mass=tail_mass,
        projected_primal_energy=_project_zero_mean(controls),
    )
    # sanity: the rate must be the half pairing, nonnegative, and the gap
    # bounded below by the control-grid quadrature error (O(dx^2 + dt^2))
    assert rate >= 0.0
    gap_floor = (1e-8 + (1.0 / n_x) ** 2 + q.dt**2) * (1.0 + abs(rate))
    assert gap >= -gap_floor, f"duality gap {gap} below -{gap_floor:.2e}"
    return RateResult(
        forcing=h,
        adjoint=p,
        rate=rate,
        dual=dual,
        controls=controls,
        primal_energy=primal,
        duality_gap=gap,
        diagnostics=diag,
    )
