import math

import numpy as np
import pytest

from minerflex import (
    InvalidInputError,
    ProgramSpec,
    SgdConfig,
    fleet_from_rewards,
    project_feasible,
    sample_subgradient,
    solve,
    step_size,
    suboptimality_bound,
)

from conftest import random_instance


def feasible_grid(cap, n, step):
    axes = [np.append(np.arange(0.0, cap, step), cap)] * n
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    return mesh[mesh.sum(axis=1) <= cap + 1e-9]


def assert_projection_optimal(x, cap, step=2.5):
    """The projection must be feasible and at least as close as any grid point."""
    p = project_feasible(x, cap).c
    assert np.all(p >= 0.0) and p.sum() <= cap + 1e-9
    dist = np.linalg.norm(p - x)
    grid = feasible_grid(cap, x.size, step)
    grid_dists = np.linalg.norm(grid - x, axis=1)
    assert dist <= grid_dists.min() + 1e-9


def test_projection_interior_identity():
    x = np.array([10.0, 20.0])
    np.testing.assert_allclose(project_feasible(x, 250.0).c, x)


def test_projection_single_axis_overflow():
    np.testing.assert_allclose(project_feasible(np.array([300.0, 0.0]), 250.0).c, [250.0, 0.0])
    assert_projection_optimal(np.array([300.0, 0.0]), 250.0)


def test_projection_symmetric_shift():
    np.testing.assert_allclose(project_feasible(np.array([200.0, 200.0]), 250.0).c, [125.0, 125.0])
    assert_projection_optimal(np.array([200.0, 200.0]), 250.0)


def test_projection_clips_negatives():
    np.testing.assert_allclose(project_feasible(np.array([-5.0, 30.0]), 100.0).c, [0.0, 30.0])


def test_projection_grid_oracle_random(rng):
    for _ in range(10):
        x = rng.uniform(-100.0, 400.0, 2)
        assert_projection_optimal(x, 250.0)


def test_projection_idempotent_nonexpansive(rng):
    for _ in range(200):
        n = int(rng.integers(1, 5))
        cap = float(rng.uniform(10.0, 300.0))
        x = rng.uniform(-2.0 * cap, 2.0 * cap, n)
        y = rng.uniform(-2.0 * cap, 2.0 * cap, n)
        px = project_feasible(x, cap).c
        py = project_feasible(y, cap).c
        np.testing.assert_allclose(project_feasible(px, cap).c, px, atol=1e-12)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def test_step_size_values():
    d = math.sqrt(2.0) * 250.0
    g = math.sqrt(2.0) * 200.0
    assert step_size(1, d, g) == pytest.approx(1.25)
    assert step_size(4, d, g) == pytest.approx(0.625)
    assert step_size(10**8, d, g) == pytest.approx(1.25e-4)


def test_step_size_validation():
    with pytest.raises(InvalidInputError):
        step_size(0, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        step_size(1, -1.0, 1.0)


def test_suboptimality_bound_values():
    assert suboptimality_bound(10000, 2, 150.0, 200.0, 250.0) == pytest.approx(1500.0)
    # quadrupling the iteration count halves the bound
    b1 = suboptimality_bound(1000, 2, 150.0, 200.0, 250.0)
    b4 = suboptimality_bound(4000, 2, 150.0, 200.0, 250.0)
    assert b4 == pytest.approx(0.5 * b1)
    assert suboptimality_bound(10**18, 2, 150.0, 200.0, 250.0) < 1e-3


def test_subgradient_zero_deployment(two_type_fleet):
    programs = [ProgramSpec(id="a", price=20.0), ProgramSpec(id="b", price=7.0)]
    g = sample_subgradient(two_type_fleet, programs, np.array([10.0, 10.0]), np.zeros((4, 2)))
    np.testing.assert_allclose(g, [-20.0, -7.0])


def test_subgradient_single_sample():
    fleet = fleet_from_rewards([100.0], [150.0])
    programs = [ProgramSpec(id="a", price=20.0)]
    g = sample_subgradient(fleet, programs, np.array([10.0]), np.array([[0.5]]))
    np.testing.assert_allclose(g, [55.0])


def test_subgradient_rejects_empty(two_type_fleet):
    programs = [ProgramSpec(id="a", price=20.0)]
    with pytest.raises(InvalidInputError):
        sample_subgradient(two_type_fleet, programs, np.array([10.0]), [])


def test_subgradient_matches_finite_differences(rng):
    checked = 0
    while checked < 25:
        fleet, programs, c, _ = random_instance(rng)
        n = len(programs)
        eps = rng.uniform(0.0, 1.0, (12, n))
        h = 1e-6 * fleet.total_capacity_mw
        # Skip points within a few finite-difference steps of a kink.
        totals = eps @ c
        margins = np.abs(totals[:, None] - fleet.cum_capacities[None, :])
        if margins.min() < 10.0 * h or c.min() < 10.0 * h:
            continue
        if c.sum() > fleet.total_capacity_mw - 10.0 * h:
            continue

        def f(x):
            from minerflex import realized_cost

            return np.mean([realized_cost(fleet, programs, x, e) for e in eps])

        g = sample_subgradient(fleet, programs, c, eps)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd = (f(c + e) - f(c - e)) / (2.0 * h)
            assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-6 * max(1.0, abs(fd)))
        checked += 1


def test_solve_pushes_to_capacity_when_never_deployed():
    fleet = fleet_from_rewards([250.0], [150.0])
    programs = [ProgramSpec(id="a", price=20.0)]
    cfg = SgdConfig(iterations=4000, batch=2, seed=1)
    result = solve(fleet, programs, lambda rng, m: np.zeros((m, 1)), cfg, record_trajectory=True)
    assert result.trajectory[-1][0] == pytest.approx(250.0)
    assert result.profile.c[0] > 240.0


def test_solve_stays_at_zero_when_unprofitable():
    fleet = fleet_from_rewards([250.0], [150.0])
    programs = [ProgramSpec(id="a", price=20.0)]
    cfg = SgdConfig(iterations=500, batch=2, seed=1)
    result = solve(fleet, programs, lambda rng, m: np.ones((m, 1)), cfg)
    assert result.profile.c[0] == 0.0


def test_solve_iterates_feasible(two_type_fleet, rng):
    programs = [ProgramSpec(id="a", price=30.0), ProgramSpec(id="b", price=10.0, direction="down")]
    cfg = SgdConfig(iterations=300, batch=3, seed=7)
    result = solve(two_type_fleet, programs, lambda r, m: r.uniform(0, 1, (m, 2)), cfg, record_trajectory=True)
    cap = two_type_fleet.total_capacity_mw
    for c in result.trajectory:
        assert np.all(c >= 0.0)
        assert c.sum() <= cap + 1e-9
    assert result.profile.c.sum() <= cap + 1e-9


def test_solve_deterministic(two_type_fleet):
    programs = [ProgramSpec(id="a", price=30.0), ProgramSpec(id="b", price=10.0)]
    cfg = SgdConfig(iterations=200, batch=4, seed=99)
    sampler = lambda r, m: r.uniform(0, 1, (m, 2))
    r1 = solve(two_type_fleet, programs, sampler, cfg, record_trajectory=True)
    r2 = solve(two_type_fleet, programs, sampler, cfg, record_trajectory=True)
    assert all(np.array_equal(a, b) for a, b in zip(r1.trajectory, r2.trajectory))
    assert np.array_equal(r1.profile.c, r2.profile.c)
    assert r1.bound == r2.bound


def test_solve_respects_step_scale():
    fleet = fleet_from_rewards([250.0], [150.0])
    programs = [ProgramSpec(id="a", price=20.0)]
    tiny = solve(
        fleet, programs, lambda r, m: np.zeros((m, 1)),
        SgdConfig(iterations=10, batch=1, seed=0, step_scale=1e-6),
    )
    assert tiny.profile.c[0] < 1e-3


def test_averaged_iterate_gap_within_bound(two_type_fleet):
    # deterministic eps makes the expected cost an evaluable piecewise-linear
    # function; the averaged iterate must honor the reported guarantee
    programs = [ProgramSpec(id="a", price=30.0), ProgramSpec(id="b", price=12.0)]
    eps = np.array([0.35, 0.8])
    sampler = lambda r, m: np.tile(eps, (m, 1))
    for iters in (100, 2000):
        result = solve(two_type_fleet, programs, sampler, SgdConfig(iterations=iters, batch=1, seed=3))

        def cost(c):
            from minerflex import realized_cost

            return realized_cost(two_type_fleet, programs, c, eps)

        axis = np.linspace(0.0, 250.0, 801)
        best = min(
            cost(np.array([a, b])) for a in axis for b in axis if a + b <= 250.0 + 1e-9
        )
        assert cost(result.profile.c) - best <= result.bound


def test_config_validation():
    with pytest.raises(InvalidInputError):
        SgdConfig(iterations=0)
    with pytest.raises(InvalidInputError):
        SgdConfig(iterations=1, batch=0)
    with pytest.raises(InvalidInputError):
        SgdConfig(iterations=1, step_scale=-1.0)
