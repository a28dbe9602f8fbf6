"""Self-contained oracle-agreement checks runnable from the CLI.

Each check pits an analytic component against an independent reference
(vertex enumeration, numeric integration, Monte Carlo, dense grids) at a
reduced scale; the pytest acceptance suite runs the same comparisons at full
scale. Everything here is numpy-only so the installed package can verify
itself without test dependencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deployment import cost_fixed_k, realized_cost, realized_cost_batch
from .fleet import fleet_from_rewards
from .online import OgdConfig, run_online
from .oracle import GridSpec, grid_mc_optimum, lp_deployment_oracle, mc_expected_cost, draw_effective_samples
from .programs import ProgramSpec
from .regulation import (
    RegInstance,
    RegJointModel,
    TruncatedExponential,
    expected_reg_cost,
    fit_lambda,
    sample_joint,
    _down_cost_beyond_first,
    _down_cost_within_first,
    _up_cost_beyond_first,
    _up_cost_straddling,
    _up_cost_within_first,
)
from .sgd import SgdConfig, project_feasible, solve as sgd_solve
from .single_machine import ProgramStats, RiskConfig, best_program, risk_aware_solve


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_instance(rng, k_max=4, n_max=3):
    k = int(rng.integers(1, k_max + 1))
    n = int(rng.integers(1, n_max + 1))
    caps = rng.uniform(1.0, 100.0, k)
    rewards = np.sort(rng.uniform(0.0, 200.0, k)) + np.arange(k) * 1e-6
    fleet = fleet_from_rewards(caps, rewards)
    programs = [ProgramSpec(id=f"p{i}", price=float(rng.uniform(0.0, 60.0))) for i in range(n)]
    raw = rng.uniform(0.0, 1.0, n)
    c = rng.uniform(0.0, 1.0, n)
    c *= rng.uniform(0.0, 1.0) * fleet.total_capacity_mw / max(c.sum(), 1e-12)
    return fleet, programs, c, raw


def _simpson_arr(ys, xs):
    # composite Simpson; xs must have odd length with uniform spacing
    h = xs[1] - xs[0]
    return float(h / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1:-1:2].sum() + 2.0 * ys[2:-2:2].sum()))


def check_greedy_deployment(seed=0, instances=200) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        fleet, programs, c, raw = _random_instance(rng)
        greedy = realized_cost(fleet, programs, c, raw)
        oracle = lp_deployment_oracle(fleet, programs, c, raw)
        worst = max(worst, abs(greedy - oracle))
    return CheckResult(
        "greedy deployment vs LP vertex oracle",
        worst <= 1e-9,
        f"max |diff| = {worst:.3e} over {instances} instances",
    )


def check_max_of_affines(seed=1, points=2000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        fleet, programs, c, raw = _random_instance(rng)
        cost = realized_cost(fleet, programs, c, raw)
        best = max(
            cost_fixed_k(fleet, programs, c, raw, k) for k in range(1, fleet.n_types + 1)
        )
        worst = max(worst, abs(cost - best))
    return CheckResult(
        "piecewise cost = max of affine surrogates",
        worst <= 1e-9,
        f"max |diff| = {worst:.3e} over {points} points",
    )


def check_midpoint_convexity(seed=2, segments=2000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(segments):
        fleet, programs, _, raw = _random_instance(rng)
        n = len(programs)
        cap = fleet.total_capacity_mw
        a = rng.uniform(0.0, 1.0, n)
        b = rng.uniform(0.0, 1.0, n)
        a *= rng.uniform(0.0, 1.0) * cap / max(a.sum(), 1e-12)
        b *= rng.uniform(0.0, 1.0) * cap / max(b.sum(), 1e-12)
        mid = 0.5 * (a + b)
        gap = realized_cost(fleet, programs, mid, raw) - 0.5 * (
            realized_cost(fleet, programs, a, raw) + realized_cost(fleet, programs, b, raw)
        )
        worst = max(worst, gap)
    return CheckResult(
        "midpoint convexity of the slot cost",
        worst <= 1e-9,
        f"max violation = {worst:.3e} over {segments} segments",
    )


def check_projection(seed=3, points=40) -> CheckResult:
    rng = np.random.default_rng(seed)
    cap = 250.0
    axis = np.linspace(0.0, cap, 201)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    grid = grid[grid.sum(axis=1) <= cap + 1e-9]
    ok = True
    worst = 0.0
    for _ in range(points):
        x = rng.uniform(-150.0, 450.0, 2)
        p = project_feasible(x, cap).c
        ok &= bool(np.all(p >= 0.0) and p.sum() <= cap + 1e-9)
        excess = np.linalg.norm(p - x) - np.linalg.norm(grid - x, axis=1).min()
        worst = max(worst, float(excess))
    return CheckResult(
        "euclidean projection vs grid QP oracle",
        ok and worst <= 1e-9,
        f"max distance excess = {worst:.3e}",
    )


def check_truncexp_mean(seed=4) -> CheckResult:
    worst = 0.0
    for lam in (1e-4, 1e-3, 0.05, 0.5, 1.0, 2.0, 5.0, 20.0, 50.0):
        dist = TruncatedExponential(lam)
        xs = np.linspace(0.0, 1.0, 40001)
        quad = _simpson_arr(xs * dist.pdf(xs), xs)
        worst = max(worst, abs(dist.mean() - quad))
    return CheckResult(
        "truncated-exponential mean vs Simpson quadrature",
        worst <= 1e-9,
        f"max |diff| = {worst:.3e}",
    )


def check_fit_lambda(seed=5, targets=25) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for target in np.append(rng.uniform(0.01, 0.49, targets), [0.18, 0.27]):
        lam = fit_lambda(float(target))
        worst = max(worst, abs(TruncatedExponential(lam).mean() - target))
    return CheckResult(
        "deployment-mean fitting round trip",
        worst <= 1e-9,
        f"max |mean error| = {worst:.3e}",
    )


def _reg_instance(theta):
    fleet = fleet_from_rewards([150.0, 100.0], [103.846153846, 131.818181818])
    model = RegJointModel(
        theta, TruncatedExponential(fit_lambda(0.18)), TruncatedExponential(fit_lambda(0.27))
    )
    return RegInstance(fleet=fleet, p_up=15.0, p_dn=10.0, model=model)


def check_regulation_mc(seed=6, samples=200_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_sigma = 0.0
    for theta in (0.3, 0.5, 0.7):
        inst = _reg_instance(theta)
        raw = sample_joint(inst.model, rng, samples)
        eff = raw.copy()
        eff[:, 1] = 1.0 - eff[:, 1]
        prices = np.array([inst.p_up, inst.p_dn])
        for c_up, c_dn in ((40.0, 40.0), (120.0, 60.0), (30.0, 190.0), (0.0, 250.0)):
            costs = realized_cost_batch(inst.fleet, prices, eff, np.array([c_up, c_dn]))
            se = costs.std(ddof=1) / math.sqrt(samples)
            sigma = abs(expected_reg_cost(inst, c_up, c_dn) - costs.mean()) / se
            worst_sigma = max(worst_sigma, sigma)
    return CheckResult(
        "regulation closed form vs Monte Carlo",
        worst_sigma <= 4.0,
        f"max deviation = {worst_sigma:.2f} standard errors",
    )


def check_regulation_continuity() -> CheckResult:
    inst = _reg_instance(0.5)
    cap1 = float(inst.fleet.capacities[0])
    worst = 0.0
    for c_up in (0.0, 30.0, 90.0):
        a = _down_cost_within_first(inst, c_up, cap1)
        b = _down_cost_beyond_first(inst, c_up, cap1)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    for c_dn in (20.0, 80.0, 140.0):
        a = _up_cost_within_first(inst, cap1 - c_dn, c_dn)
        b = _up_cost_straddling(inst, cap1 - c_dn, c_dn)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    for c_up in (15.0, 70.0):
        a = _up_cost_straddling(inst, c_up, cap1)
        b = _up_cost_beyond_first(inst, c_up, cap1)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return CheckResult(
        "regulation cost continuity across regions",
        worst <= 1e-7,
        f"max relative gap = {worst:.3e}",
    )


def check_single_machine_vertex(seed=7, instances=100) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol_ok = True
    for _ in range(instances):
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
        value = float(profile.c @ [r * s.mean_eps - s.price for s in stats])
        grid = np.linspace(0.0, cap, 1000)
        grid_best = 0.0
        for s in stats:
            grid_best = min(grid_best, float((grid * (r * s.mean_eps - s.price)).min()))
        res = (cap / 999.0) * max(r, *(s.price for s in stats), 1.0)
        tol_ok &= value <= grid_best + res
    return CheckResult(
        "single-machine vertex rule vs axis grids",
        tol_ok,
        f"{instances} random instances within grid resolution",
    )


def check_risk_kkt(seed=8, instances=100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 5))
        stats = []
        for _ in range(n):
            mean = float(rng.uniform(0.05, 0.95))
            var = 0.0 if rng.random() < 0.25 else float(rng.uniform(0.0, 1.0) * mean * (1.0 - mean))
            stats.append(ProgramStats(price=float(rng.uniform(0.0, 60.0)), mean_eps=mean, var_eps=var))
        r = float(rng.uniform(1.0, 200.0))
        cap = float(rng.uniform(50.0, 400.0))
        w = float(rng.choice([0.0, 1e-5, 1e-4, 1e-3]))
        c = risk_aware_solve(stats, r, cap, RiskConfig(w)).c
        a = np.array([r * s.mean_eps - s.price for s in stats])
        b = np.array([w * r**2 * s.var_eps for s in stats])
        grad = a + 2.0 * b * c
        slack = cap - c.sum()
        mu = 0.0
        if slack <= 1e-7 * cap:
            active = c > 1e-9 * cap
            if active.any():
                mu = max(0.0, float(-grad[active].max()))
        nu = grad + mu
        res = max(
            max(0.0, -slack),
            max(0.0, -float(c.min())),
            abs(mu * slack) / max(1.0, cap),
            float(np.max(np.abs(np.minimum(nu, 0.0)))),
            float(np.max(np.abs(c * nu))) / max(1.0, cap),
        )
        worst = max(worst, res)
    return CheckResult(
        "risk-aware QP KKT residuals",
        worst <= 1e-8,
        f"max residual = {worst:.3e} over {instances} instances",
    )


def check_sgd_convergence(seed=9, fast=False) -> CheckResult:
    fleet = fleet_from_rewards([150.0, 100.0], [103.846153846, 131.818181818])
    up = TruncatedExponential(fit_lambda(0.18))
    dn = TruncatedExponential(fit_lambda(0.27))
    programs = [
        ProgramSpec(id="a", price=24.0),
        ProgramSpec(id="b", price=30.0),
    ]

    def sampler(rng, m):
        return np.column_stack([up.sample(rng, m), dn.sample(rng, m)])

    iters = 2000 if fast else 5000
    result = sgd_solve(fleet, programs, sampler, SgdConfig(iterations=iters, batch=10, seed=seed))
    grid = grid_mc_optimum(
        fleet, programs, sampler, GridSpec(points_per_axis=80, mc_samples=20000, seed=seed + 1)
    )
    eff = draw_effective_samples(sampler, ("up", "up"), 20000, seed + 1)
    value, se = mc_expected_cost(fleet, programs, result.profile, eff)
    gap = value - grid.value
    limit = result.bound + 3.0 * se
    return CheckResult(
        "stochastic subgradient vs grid Monte Carlo optimum",
        gap <= limit,
        f"gap = {gap:.1f} $, allowance = {limit:.1f} $",
    )


def check_online_regret(seed=10, runs=20, horizon=200) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    worst_frac = 0.0
    for _ in range(runs):
        fleets, programs_seq, samples = [], [], []
        for _ in range(horizon):
            rewards = np.sort(rng.uniform(0.0, 200.0, 2)) + np.array([0.0, 1e-9])
            fleets.append(fleet_from_rewards([150.0, 100.0], rewards))
            programs_seq.append(
                [ProgramSpec(id=f"p{i}", price=float(rng.uniform(0.0, 60.0))) for i in range(2)]
            )
            samples.append(rng.uniform(0.0, 1.0, 2))
        cfg = OgdConfig.from_bounds(horizon, 2, 250.0, 200.0, 60.0, learners=1)
        _, report = run_online(fleets, programs_seq, samples, cfg)
        ok &= report.static_regret <= report.bound
        ok &= report.static_regret >= -1e-6 * max(1.0, abs(report.static_regret))
        worst_frac = max(worst_frac, report.static_regret / report.bound)
    return CheckResult(
        "online regret within the worst-case bound",
        ok,
        f"max regret/bound = {worst_frac:.3f} over {runs} runs",
    )


def run_verify(fast: bool = False, seed: int = 0) -> list[CheckResult]:
    """Run every oracle-agreement check; scale down heavy ones when fast."""
    return [
        check_greedy_deployment(seed, 100 if fast else 200),
        check_max_of_affines(seed + 1, 800 if fast else 2000),
        check_midpoint_convexity(seed + 2, 800 if fast else 2000),
        check_projection(seed + 3, 20 if fast else 40),
        check_truncexp_mean(seed + 4),
        check_fit_lambda(seed + 5, 10 if fast else 25),
        check_regulation_mc(seed + 6, 50_000 if fast else 200_000),
        check_regulation_continuity(),
        check_single_machine_vertex(seed + 7, 50 if fast else 100),
        check_risk_kkt(seed + 8, 50 if fast else 100),
        check_sgd_convergence(seed + 9, fast=fast),
        check_online_regret(seed + 10, 10 if fast else 20),
    ]
