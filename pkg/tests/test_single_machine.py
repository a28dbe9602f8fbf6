import math

import numpy as np
import pytest

from minerflex import (
    InvalidInputError,
    ProgramStats,
    RiskConfig,
    best_program,
    profile_risk,
    risk_aware_solve,
)
from minerflex.sgd import _project


def axis_grid_best(programs, r, cap, points=1000):
    """Independent oracle: the linear objective is minimized at a vertex, so
    scanning each program axis (plus zero) brackets the optimum."""
    best_val, best_c = 0.0, np.zeros(len(programs))
    grid = np.linspace(0.0, cap, points)
    for i, s in enumerate(programs):
        vals = grid * (r * s.mean_eps - s.price)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val = float(vals[j])
            best_c = np.zeros(len(programs))
            best_c[i] = grid[j]
    return best_c, best_val


def risk_objective(programs, r, w, c):
    exp_cost, var = profile_risk(programs, r, c)
    return exp_cost + w * var


def kkt_residuals(programs, r, cap, w, c):
    """Max violation across stationarity, feasibility, complementary slackness."""
    a = np.array([r * s.mean_eps - s.price for s in programs])
    b = np.array([w * r**2 * s.var_eps for s in programs])
    grad = a + 2.0 * b * c
    slack = cap - c.sum()
    # mu from an active coordinate if the sum constraint binds, else 0.
    mu = 0.0
    if slack <= 1e-7 * cap:
        active = c > 1e-9 * cap
        if active.any():
            mu = max(0.0, float(-grad[active].max()))
    nu = grad + mu
    res = [
        max(0.0, -slack),                      # primal feasibility (sum)
        max(0.0, float(-(c.min()) if c.size else 0.0)),  # primal feasibility (sign)
        abs(mu * slack) / max(1.0, cap),       # complementary slackness (cap)
        float(np.max(np.abs(np.minimum(nu, 0.0)))),      # dual feasibility
        float(np.max(np.abs(c * nu))) / max(1.0, cap),   # complementary slackness (sign)
    ]
    return max(res)


def projected_gradient_oracle(programs, r, cap, w, iters=40000):
    a = np.array([r * s.mean_eps - s.price for s in programs])
    b = np.array([w * r**2 * s.var_eps for s in programs])
    c = np.zeros(len(programs))
    lip = float(2.0 * b.max() + 1.0)
    for _ in range(iters):
        c = _project(c - (a + 2.0 * b * c) / lip, cap)
    return c


def test_best_program_unprofitable():
    stats = [ProgramStats(price=10.0, mean_eps=0.18, var_eps=0.0)]
    profile = best_program(stats, 150.0, 250.0)
    np.testing.assert_allclose(profile.c, [0.0])
    oracle_c, oracle_v = axis_grid_best(stats, 150.0, 250.0)
    assert oracle_v >= -1e-9


def test_best_program_profitable():
    stats = [ProgramStats(price=30.0, mean_eps=0.18, var_eps=0.0)]
    profile = best_program(stats, 150.0, 250.0)
    np.testing.assert_allclose(profile.c, [250.0])
    oracle_c, _ = axis_grid_best(stats, 150.0, 250.0)
    np.testing.assert_allclose(oracle_c, [250.0])


def test_best_program_breakeven_tie_participates():
    stats = [ProgramStats(price=27.0, mean_eps=0.18, var_eps=0.0)]
    profile = best_program(stats, 150.0, 250.0)
    np.testing.assert_allclose(profile.c, [250.0])


def test_best_program_vertex_and_grid_agreement(rng):
    for _ in range(300):
        n = int(rng.integers(1, 4))
        r = float(rng.uniform(0.0, 200.0))
        cap = float(rng.uniform(10.0, 400.0))
        stats = [
            ProgramStats(
                price=float(rng.uniform(0.0, 60.0)),
                mean_eps=float(rng.uniform(0.0, 1.0)),
                var_eps=0.0,
            )
            for _ in range(n)
        ]
        profile = best_program(stats, r, cap)
        nz = np.nonzero(profile.c)[0]
        assert nz.size <= 1
        if nz.size == 1:
            assert profile.c[nz[0]] == cap
        value = float(profile.c @ [r * s.mean_eps - s.price for s in stats])
        _, grid_val = axis_grid_best(stats, r, cap)
        assert value <= grid_val + (cap / 999.0) * max(r, *(s.price for s in stats), 1.0)


def test_profile_risk_zero_profile():
    stats = [ProgramStats(price=10.0, mean_eps=0.3, var_eps=0.01)]
    assert profile_risk(stats, 100.0, np.zeros(1)) == (0.0, 0.0)


def test_profile_risk_zero_variance():
    stats = [ProgramStats(price=10.0, mean_eps=0.3, var_eps=0.0)]
    exp_cost, var = profile_risk(stats, 100.0, np.array([50.0]))
    assert exp_cost == pytest.approx(50.0 * (30.0 - 10.0))
    assert var == 0.0


def test_profile_risk_monte_carlo(rng):
    # Beta deployments with the configured first two moments.
    stats = [
        ProgramStats(price=12.0, mean_eps=0.25, var_eps=0.03),
        ProgramStats(price=25.0, mean_eps=0.6, var_eps=0.05),
    ]
    r, c = 130.0, np.array([80.0, 40.0])
    n = 10**6
    draws = np.empty((n, 2))
    for i, s in enumerate(stats):
        k = s.mean_eps * (1.0 - s.mean_eps) / s.var_eps - 1.0
        draws[:, i] = rng.beta(s.mean_eps * k, (1.0 - s.mean_eps) * k, n)
    costs = draws @ (c * r) - np.array([s.price for s in stats]) @ c
    exp_cost, var = profile_risk(stats, r, c)
    se_mean = costs.std(ddof=1) / math.sqrt(n)
    assert abs(costs.mean() - exp_cost) <= 3.0 * se_mean
    centered_sq = (costs - costs.mean()) ** 2
    se_var = centered_sq.std(ddof=1) / math.sqrt(n)
    assert abs(costs.var(ddof=1) - var) <= 3.0 * se_var


def test_risk_zero_weight_reduces_to_best_program(rng):
    for _ in range(50):
        n = int(rng.integers(1, 4))
        stats = [
            ProgramStats(
                price=float(rng.uniform(0.0, 60.0)),
                mean_eps=float(rng.uniform(0.05, 0.95)),
                var_eps=float(rng.uniform(0.0, 0.04)),
            )
            for _ in range(n)
        ]
        r, cap = float(rng.uniform(10.0, 200.0)), 250.0
        a = risk_aware_solve(stats, r, cap, RiskConfig(0.0))
        b = best_program(stats, r, cap)
        np.testing.assert_allclose(a.c, b.c)


def test_risk_interior_optimum_matches_pg_oracle():
    # a = r*mean - p = -3 with r=150, var=0.02, w=1e-4: interior optimum at
    # 3 / (2 * 1e-4 * 150^2 * 0.02) = 33.33 MW.
    stats = [ProgramStats(price=30.0, mean_eps=0.18, var_eps=0.02)]
    profile = risk_aware_solve(stats, 150.0, 250.0, RiskConfig(1e-4))
    assert profile.c[0] == pytest.approx(33.3333333, rel=1e-6)
    oracle = projected_gradient_oracle(stats, 150.0, 250.0, 1e-4)
    np.testing.assert_allclose(profile.c, oracle, atol=1e-6)


def test_risk_prefers_lower_variance(rng):
    stats = [
        ProgramStats(price=30.0, mean_eps=0.18, var_eps=0.05),
        ProgramStats(price=30.0, mean_eps=0.18, var_eps=0.01),
    ]
    profile = risk_aware_solve(stats, 150.0, 250.0, RiskConfig(5e-4))
    assert profile.c[1] > profile.c[0] > 0.0


def test_risk_kkt_random_instances(rng):
    for _ in range(300):
        n = int(rng.integers(1, 5))
        stats = []
        for _ in range(n):
            mean = float(rng.uniform(0.05, 0.95))
            var = float(rng.uniform(0.0, 1.0) * mean * (1.0 - mean))
            if rng.random() < 0.25:
                var = 0.0
            stats.append(ProgramStats(price=float(rng.uniform(0.0, 60.0)), mean_eps=mean, var_eps=var))
        r = float(rng.uniform(1.0, 200.0))
        cap = float(rng.uniform(50.0, 400.0))
        w = float(rng.choice([0.0, 1e-5, 1e-4, 1e-3]))
        c = risk_aware_solve(stats, r, cap, RiskConfig(w)).c
        assert kkt_residuals(stats, r, cap, w, c) <= 1e-8


def test_risk_objective_never_worse_than_vertices(rng):
    for _ in range(100):
        n = int(rng.integers(1, 4))
        stats = [
            ProgramStats(
                price=float(rng.uniform(0.0, 60.0)),
                mean_eps=float(rng.uniform(0.05, 0.95)),
                var_eps=float(rng.uniform(1e-4, 0.05)),
            )
            for _ in range(n)
        ]
        r, cap = float(rng.uniform(10.0, 200.0)), 250.0
        w = float(rng.uniform(0.0, 1e-3))
        c = risk_aware_solve(stats, r, cap, RiskConfig(w)).c
        obj = risk_objective(stats, r, w, c)
        vertex_obj = risk_objective(stats, r, w, best_program(stats, r, cap).c)
        assert obj <= vertex_obj + 1e-9 * max(1.0, abs(vertex_obj))
        assert obj <= 1e-9


def test_risk_variance_monotone_in_weight():
    stats = [
        ProgramStats(price=28.0, mean_eps=0.18, var_eps=0.03),
        ProgramStats(price=33.0, mean_eps=0.22, var_eps=0.01),
    ]
    r, cap = 150.0, 250.0
    variances = []
    for w in np.geomspace(1e-6, 1e-2, 20):
        c = risk_aware_solve(stats, r, cap, RiskConfig(float(w))).c
        variances.append(profile_risk(stats, r, c)[1])
    assert all(a >= b - 1e-9 * max(1.0, a) for a, b in zip(variances, variances[1:]))


def test_program_stats_validation():
    with pytest.raises(InvalidInputError):
        ProgramStats(price=-1.0, mean_eps=0.5, var_eps=0.0)
    with pytest.raises(InvalidInputError):
        ProgramStats(price=1.0, mean_eps=1.5, var_eps=0.0)
    with pytest.raises(InvalidInputError):
        ProgramStats(price=1.0, mean_eps=0.5, var_eps=0.3)  # above 0.25 bound
    # unbiased small-sample estimates may exceed the bound with slack:
    # alternating 0/1 at n=1000 gives exactly 0.25 * 1000/999
    ProgramStats(price=1.0, mean_eps=0.5, var_eps=0.25 * 1000.0 / 999.0, var_slack=1.0 / 999.0)


def test_risk_config_validation():
    with pytest.raises(InvalidInputError):
        RiskConfig(-1e-3)
    with pytest.raises(InvalidInputError):
        best_program([], 10.0, 100.0)
