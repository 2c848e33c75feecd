import numpy as np
import pytest

from mdqueue import (
    GridPath,
    ModelParams,
    ServiceDist,
    build_qp,
    evaluate_rate,
    forward_q,
    lln_path,
    min_rate_terminal,
    solve_min_norm,
)

from conftest import HORIZON, battery_cases


def test_zero_rhs_gives_zero(exp1):
    # the LLN path satisfies the path equation with no controls: r = 0, value 0
    pm = ModelParams(1.0, 1.0, 0.5, 0.0)
    q = lln_path(pm, exp1, HORIZON, 200)
    c, val = solve_min_norm(build_qp(q, pm, exp1, n_x=8))
    assert val <= 1e-12
    assert np.max(np.abs(c.wdot.values)) < 1e-6


def test_constraint_residual_is_path_defect(pm_std, exp1, q_quad):
    # feeding the QP solution through the forward map must reproduce q
    sys_ = build_qp(q_quad, pm_std, exp1, n_x=16)
    c, _ = solve_min_norm(sys_)
    assert np.max(np.abs(sys_.A @ np.concatenate(
        [c.w0dot.values, c.wdot.values, c.kdot.values.T.reshape(-1)]
    ) - sys_.r)) < 1e-8
    q_fwd = forward_q(c, pm_std, exp1)
    assert np.max(np.abs(q_fwd.values - q_quad.values)) < 5e-3


def test_agreement_with_fredholm_battery(exp1):
    for beta, q0, q in battery_cases(200):
        pm = ModelParams(1.0, 1.0, beta, q0)
        rate = evaluate_rate(q, pm, exp1).rate
        _, val = solve_min_norm(build_qp(q, pm, exp1, n_x=32))
        assert abs(val - rate) / (1.0 + rate) <= 0.02


def test_flags_on_raises_value(pm_std, exp1, q_quad):
    _, off = solve_min_norm(build_qp(q_quad, pm_std, exp1, n_x=16, zero_mean=False))
    _, on = solve_min_norm(build_qp(q_quad, pm_std, exp1, n_x=16, zero_mean=True))
    assert on >= off - 1e-12


def test_zero_mean_constraints_hold(pm_std, exp1, q_quad):
    from mdqueue.grids import trap_weights

    c, _ = solve_min_norm(build_qp(q_quad, pm_std, exp1, n_x=16, zero_mean=True))
    wx = trap_weights(17, 1.0 / 16)
    assert abs(wx @ c.w0dot.values) < 1e-9
    assert np.max(np.abs(wx @ c.kdot.values)) < 1e-9
    assert c.zero_mean_enforced


def test_refinement_stability(pm_std, exp1):
    vals = []
    for n in (100, 200):
        t = np.linspace(0.0, HORIZON, n + 1)
        q = GridPath(HORIZON, 0.3 * t * (2.0 - t))
        _, v = solve_min_norm(build_qp(q, pm_std, exp1, n_x=32))
        vals.append(v)
    assert abs(vals[1] - vals[0]) / vals[0] <= 0.01


def test_repeated_solves_bit_identical(pm_std, exp1, q_quad):
    sys_ = build_qp(q_quad, pm_std, exp1, n_x=8)
    _, v1 = solve_min_norm(sys_)
    _, v2 = solve_min_norm(sys_)
    assert v1 == v2


def test_build_qp_rejects_wrong_q0(exp1):
    pm = ModelParams(1.0, 1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        build_qp(GridPath(1.0, np.zeros(11)), pm, exp1)


def test_min_rate_terminal_monotone_in_level(exp1):
    pm = ModelParams(1.0, 1.0, 0.5, 0.0)
    vals = [
        min_rate_terminal(a, 1.0, pm, exp1, horizon=1.0, n_steps=50, n_x=8).value
        for a in (0.2, 0.4, 0.8)
    ]
    assert vals[0] < vals[1] < vals[2]


def test_min_rate_terminal_hits_target(exp1):
    pm = ModelParams(1.0, 1.0, 0.5, 0.0)
    res = min_rate_terminal(0.4, 1.0, pm, exp1, horizon=1.0, n_steps=50, n_x=8)
    assert res.pattern_stable
    assert res.q.values[-1] == pytest.approx(0.4, abs=1e-8)
    assert res.value > 0.0


def test_min_rate_terminal_dominated_by_path_rate(exp1):
    # the terminal infimum can be no larger than the rate of any path ending at a
    pm = ModelParams(1.0, 1.0, 0.5, 0.0)
    res = min_rate_terminal(0.3, 2.0, pm, exp1, horizon=2.0, n_steps=100, n_x=16)
    t = np.linspace(0.0, 2.0, 201)
    q = GridPath(2.0, 0.15 * t)  # ends at 0.3
    full = evaluate_rate(q, pm, exp1).rate
    assert res.value <= full + 1e-6
