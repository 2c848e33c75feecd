import numpy as np
import pytest

from mdqueue import GridPath, ServiceDist, solve_linear, solve_nonlinear
from mdqueue.renewal import RenewalConvergenceError


def test_linear_constant_forcing_exponential():
    # exponential(1): g = 1 + int g dF has the exact solution g(t) = 1 + t
    d = ServiceDist.exponential(1.0)
    for n in (200, 400):
        f = GridPath(2.0, np.ones(n + 1))
        g = solve_linear(f, d)
        err = np.max(np.abs(g.values - (1.0 + g.times)))
        assert err <= 2.5 * (2.0 / n)


def test_linear_ramp_forcing_exponential():
    # f(t) = t gives g(t) = t + t^2/2 for exponential(1)
    d = ServiceDist.exponential(1.0)
    t = np.linspace(0.0, 2.0, 401)
    g = solve_linear(GridPath(2.0, t.copy()), d)
    assert np.max(np.abs(g.values - (t + t**2 / 2.0))) < 5e-3


def test_nonlinear_negative_forcing_is_fixed_point():
    # f <= 0 everywhere: g^+ = 0 so g = f exactly
    d = ServiceDist.exponential(1.0)
    f = GridPath(1.0, -np.ones(101))
    g = solve_nonlinear(f, d)
    assert np.array_equal(g.values, f.values)


def test_nonlinear_matches_linear_when_positive():
    d = ServiceDist.erlang(2, 2.0)
    f = GridPath(3.0, np.ones(301))
    gl = solve_linear(f, d)
    gn = solve_nonlinear(f, d)
    assert np.max(np.abs(gl.values - gn.values)) < 1e-9


def test_monotone_in_forcing():
    d = ServiceDist.exponential(1.0)
    t = np.linspace(0.0, 2.0, 201)
    g1 = solve_nonlinear(GridPath(2.0, 0.1 + 0.0 * t), d)
    g2 = solve_nonlinear(GridPath(2.0, 0.2 + 0.0 * t), d)
    assert np.all(g2.values >= g1.values - 1e-12)


def test_long_horizon_windowing():
    # F(T) ~ 1 at T = 20; plain Picard would contract impossibly slowly
    d = ServiceDist.exponential(1.0)
    n = 2000
    f = GridPath(20.0, np.ones(n + 1))
    g = solve_linear(f, d)
    err = np.max(np.abs(g.values - (1.0 + g.times)))
    assert err < 5 * (20.0 / n)


def test_grid_refinement_converges():
    d = ServiceDist.hyperexponential([0.5, 0.5], [0.5, 2.0])
    errs = []
    for n in (100, 200, 400):
        t = np.linspace(0.0, 2.0, n + 1)
        g = solve_linear(GridPath(2.0, np.cos(t)), d)
        errs.append(g)
    # compare each to the finest on the coarse nodes
    fine = errs[-1]
    e = [np.max(np.abs(g.values - fine.interp(g.times))) for g in errs[:-1]]
    assert e[1] < e[0]


def test_residual_definition():
    from mdqueue.grids import conv_trap

    d = ServiceDist.erlang(3, 3.0)
    t = np.linspace(0.0, 2.0, 201)
    f = GridPath(2.0, np.sin(t))
    g = solve_nonlinear(f, d)
    res = g.values - f.values - conv_trap(np.maximum(g.values, 0.0), d.pdf(t), f.dt)
    assert np.max(np.abs(res)) < 1e-9


def test_convergence_error_carries_residual():
    err = RenewalConvergenceError(0.5, 12)
    assert err.residual == 0.5
    assert err.iterations == 12
    assert "0.5" in str(err) or "5.000e-01" in str(err)
