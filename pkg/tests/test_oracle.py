import numpy as np
import pytest

from minerflex import (
    GridSpec,
    ProgramSpec,
    RegInstance,
    RegJointModel,
    TruncatedExponential,
    compare_strategies,
    expected_reg_cost,
    fit_lambda,
    fleet_from_rewards,
    grid_mc_optimum,
    lp_deployment_oracle,
    realized_cost,
    synthesize_traces,
)
from minerflex.fleet import MachineType
from minerflex.programs import ConstantEps, independent_sampler
from minerflex.regulation import joint_sampler

from conftest import random_instance
from test_traces import synth_spec


def test_lp_oracle_single_type():
    fleet = fleet_from_rewards([100.0], [150.0])
    programs = [ProgramSpec(id="p", price=20.0)]
    c, eps = np.array([80.0]), np.array([0.5])
    assert lp_deployment_oracle(fleet, programs, c, eps) == pytest.approx(
        realized_cost(fleet, programs, c, eps)
    )


def test_lp_oracle_agrees_with_greedy(rng):
    for _ in range(300):
        fleet, programs, c, raw = random_instance(rng)
        greedy = realized_cost(fleet, programs, c, raw)
        oracle = lp_deployment_oracle(fleet, programs, c, raw)
        assert greedy == pytest.approx(oracle, abs=1e-9)


def test_reversed_fill_is_suboptimal(two_type_fleet):
    programs = [ProgramSpec(id="p", price=20.0)]
    c, eps = np.array([200.0]), np.array([0.6])
    total = float(eps @ c)
    # fill the high-reward type first: worse mining loss
    d_bad = np.array([total - 100.0, 100.0])
    bad = float(two_type_fleet.rewards @ d_bad) - 20.0 * 200.0
    assert bad >= lp_deployment_oracle(two_type_fleet, programs, c, eps)


def test_grid_mc_never_deployed(two_type_fleet):
    programs = [ProgramSpec(id="p", price=25.0, eps_model=ConstantEps(0.0))]
    res = grid_mc_optimum(
        two_type_fleet, programs, independent_sampler(programs), GridSpec(101, 200, seed=4)
    )
    assert res.profile.c[0] == pytest.approx(250.0)
    assert res.value == pytest.approx(-250.0 * 25.0)
    assert res.stderr == 0.0


def test_grid_mc_zero_prices(two_type_fleet):
    programs = [
        ProgramSpec(id="a", price=0.0, eps_model=ConstantEps(0.3)),
        ProgramSpec(id="b", price=0.0, eps_model=ConstantEps(0.6)),
    ]
    res = grid_mc_optimum(
        two_type_fleet, programs, independent_sampler(programs), GridSpec(41, 100, seed=4)
    )
    np.testing.assert_allclose(res.profile.c, [0.0, 0.0])
    assert res.value == 0.0


def test_grid_mc_matches_reg_closed_form(two_type_fleet):
    fleet = fleet_from_rewards([150.0, 100.0], [103.846, 131.818])
    model = RegJointModel(
        0.5, TruncatedExponential(fit_lambda(0.18)), TruncatedExponential(fit_lambda(0.27))
    )
    inst = RegInstance(fleet=fleet, p_up=15.0, p_dn=10.0, model=model)
    programs = [
        ProgramSpec(id="up", price=15.0, direction="up"),
        ProgramSpec(id="dn", price=10.0, direction="down"),
    ]
    res = grid_mc_optimum(fleet, programs, joint_sampler(model), GridSpec(60, 30000, seed=9))
    closed = expected_reg_cost(inst, float(res.profile.c[0]), float(res.profile.c[1]))
    assert abs(res.value - closed) <= 3.0 * res.stderr


def test_grid_mc_deterministic(two_type_fleet):
    programs = [
        ProgramSpec(id="a", price=22.0, eps_model=ConstantEps(0.2)),
        ProgramSpec(id="b", price=9.0, eps_model=ConstantEps(0.8)),
    ]
    sampler = independent_sampler(programs)
    r1 = grid_mc_optimum(two_type_fleet, programs, sampler, GridSpec(51, 500, seed=12))
    r2 = grid_mc_optimum(two_type_fleet, programs, sampler, GridSpec(51, 500, seed=12))
    assert np.array_equal(r1.profile.c, r2.profile.c)
    assert r1.value == r2.value


def fleet_config():
    return [
        MachineType("new", 100.0, energy_intensity=110.0),
        MachineType("old", 150.0, energy_intensity=130.0),
    ]


def base_programs():
    return [
        ProgramSpec(id="presp", price=12.0, direction="up"),
        ProgramSpec(id="regup", price=15.0, direction="up"),
        ProgramSpec(id="regdn", price=9.0, direction="down"),
    ]


def test_compare_strategies_dominance_and_baseline():
    records = synthesize_traces(synth_spec(hours=96), seed=21)
    report = compare_strategies(
        records, fleet_config(), base_programs(), sgd_iterations=800, seed=5
    )
    mp = report.mean_profit
    assert mp["none"] == 0.0
    assert mp["optimized"] >= mp["fixed_profile"] - 1e-9
    assert mp["optimized"] >= mp["even_split"] - 1e-9
    assert set(mp) == {"optimized", "fixed_profile", "even_split", "none"}
    assert report.hour_profiles.shape == (24, 3)


def test_compare_strategies_zero_prices():
    spec = synth_spec(hours=72)
    zero_programs = tuple(
        type(p)(p.id, p.direction, type(p.price)((0.0,) * 24), p.eps_kind, p.eps_param)
        for p in spec.programs
    )
    spec = type(spec)(
        start=spec.start,
        hours=spec.hours,
        coin_price=spec.coin_price,
        rt_price=spec.rt_price,
        programs=zero_programs,
        joint_theta=spec.joint_theta,
        joint_up=spec.joint_up,
        joint_down=spec.joint_down,
    )
    records = synthesize_traces(spec, seed=2)
    programs = [ProgramSpec(id=p.id, price=0.0, direction=p.direction) for p in spec.programs]
    report = compare_strategies(records, fleet_config(), programs, sgd_iterations=400, seed=1)
    assert report.mean_profit["optimized"] == pytest.approx(0.0, abs=1e-9)
    assert report.mean_profit["none"] == 0.0
    assert report.mean_profit["even_split"] <= 1e-9


def test_compare_strategies_window_filter():
    records = synthesize_traces(synth_spec(hours=120), seed=21)
    window = (records[24].timestamp, records[72].timestamp)
    report = compare_strategies(
        records, fleet_config(), base_programs(), window=window, sgd_iterations=200, seed=5
    )
    assert len(report.timestamps) == 48
    assert report.timestamps[0] == records[24].timestamp
