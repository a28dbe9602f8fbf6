"""Brute-force and Monte Carlo references plus the strategy benchmark.

These paths deliberately avoid the analytic shortcuts used by the solvers:
the deployment oracle enumerates LP vertices instead of trusting the greedy
fill, and the grid optimizer estimates expected cost by simulation instead
of closed forms. They are slow by design and exist so every analytic
component can be arbitrated against an independent computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Sequence

import numpy as np

from .deployment import Profile, _as_vector, realized_cost_batch
from .errors import InvalidInputError, ModelViolationError
from .fleet import FleetSpec, MachineType, canonicalize
from .online import _RoundArrays
from .programs import ProgramSpec, directions_of, prices_of
from .sgd import SgdConfig, solve as sgd_solve
from .traces import TraceRecord, per_slot_rewards, programs_for_record


@dataclass(frozen=True)
class GridSpec:
    points_per_axis: int
    mc_samples: int
    seed: int = 0

    def __post_init__(self):
        if self.points_per_axis < 2:
            raise InvalidInputError(f"points_per_axis must be >= 2, got {self.points_per_axis}")
        if self.mc_samples < 1:
            raise InvalidInputError(f"mc_samples must be >= 1, got {self.mc_samples}")


@dataclass(frozen=True)
class GridMcResult:
    profile: Profile
    value: float
    stderr: float


STRATEGIES = ("optimized", "fixed_profile", "even_split", "none")


@dataclass(frozen=True)
class StrategyReport:
    """Mean hourly profit per strategy over the evaluated window."""

    mean_profit: dict[str, float]
    slot_profits: dict[str, np.ndarray]
    hour_profiles: np.ndarray
    fixed_profile: np.ndarray
    timestamps: tuple


def lp_deployment_oracle(
    fleet: FleetSpec, programs: Sequence[ProgramSpec], profile, sample
) -> float:
    """Slot cost minimized by enumerating machine fill orders.

    Every vertex of the deployment LP fills some subset of types to capacity
    plus at most one partial type, so scanning all fill orders covers the
    optimum. Small fleets only.
    """
    if fleet.n_types > 6:
        raise InvalidInputError("vertex enumeration is limited to K <= 6")
    c = _as_vector(profile, "profile")
    eps = _as_vector(sample, "sample")
    p = prices_of(programs)
    total = float(eps @ c)
    caps = fleet.capacities
    rewards = fleet.rewards
    revenue = float(p @ c)
    best = math.inf
    for order in permutations(range(fleet.n_types)):
        remaining = total
        mining_loss = 0.0
        for k in order:
            d = min(remaining, caps[k])
            mining_loss += rewards[k] * d
            remaining -= d
        if remaining > 1e-9 * max(1.0, fleet.total_capacity_mw):
            raise InvalidInputError(f"deployment total {total} exceeds fleet capacity")
        best = min(best, mining_loss - revenue)
    return best


def draw_effective_samples(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    directions: Sequence[str],
    count: int,
    seed: int,
) -> np.ndarray:
    """Common-random-number sample block, direction-transformed."""
    rng = np.random.default_rng(seed)
    raw = np.asarray(sampler(rng, count), dtype=float)
    down = np.array([d == "down" for d in directions])
    if down.any():
        raw = raw.copy()
        raw[:, down] = 1.0 - raw[:, down]
    return raw


def mc_expected_cost(
    fleet: FleetSpec, programs: Sequence[ProgramSpec], profile, eff_samples: np.ndarray
) -> tuple[float, float]:
    """(mean, standard error) of the realized cost over a sample block."""
    costs = realized_cost_batch(fleet, prices_of(programs), eff_samples, profile)
    n = costs.size
    return float(costs.mean()), float(costs.std(ddof=1) / math.sqrt(n))


def feasibility_grid(cap: float, n: int, points: int) -> np.ndarray:
    """Lexicographically ordered grid over the feasible capacity set."""
    axis = np.linspace(0.0, cap, points)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    keep = mesh.sum(axis=1) <= cap * (1.0 + 1e-12)
    return mesh[keep]


def grid_mc_optimum(
    fleet: FleetSpec,
    programs: Sequence[ProgramSpec],
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    grid: GridSpec,
) -> GridMcResult:
    """Monte Carlo expected cost minimized over a dense feasibility grid.

    The same sample block scores every grid point (common random numbers),
    so the argmin is reproducible under a fixed seed; ties resolve to the
    lexicographically smallest profile by construction of the grid order.
    """
    n = len(programs)
    if n > 3:
        raise InvalidInputError("dense grids are limited to N <= 3 programs")
    cap = fleet.total_capacity_mw
    eff = draw_effective_samples(sampler, directions_of(programs), grid.mc_samples, grid.seed)
    points = feasibility_grid(cap, n, grid.points_per_axis)
    prices = prices_of(programs)

    # Mean cost via the hinge form r_1 d + sum_q (r_{q+1}-r_q) relu(d - B_q):
    # the linear part collapses to the sample-mean eps, so only the hinge
    # terms touch the big sample-by-point matrix. Blocks run in float32 with
    # float64 accumulation; the returned value is recomputed in full
    # precision at the argmin.
    r = fleet.rewards
    jumps = np.diff(r)
    breaks = fleet.cum_capacities[:-1]
    means = (float(r[0]) * eff.mean(axis=0) - prices) @ points.T
    eff32 = eff.astype(np.float32)
    s = grid.mc_samples
    block = max(16, 24_000_000 // s)
    for lo in range(0, points.shape[0], block):
        chunk32 = points[lo : lo + block].T.astype(np.float32)
        deployed = eff32 @ chunk32
        for jump, brk in zip(jumps, breaks):
            hinge = np.maximum(deployed - np.float32(brk), np.float32(0.0))
            means[lo : lo + chunk32.shape[1]] += float(jump) * hinge.mean(
                axis=0, dtype=np.float64
            )

    best = int(np.argmin(means))
    value, stderr = mc_expected_cost(fleet, programs, points[best], eff)
    return GridMcResult(profile=Profile(points[best]), value=value, stderr=stderr)


# ── Strategy comparison ──────────────────────────────────────────────────


def _mean_reward_fleet(
    recs: Sequence[TraceRecord], fleet_config: Sequence[MachineType], clamp: bool
) -> FleetSpec:
    """Fleet with each machine's reward averaged over the training slots.

    Works machine-by-machine (not through per-slot canonical fleets, which
    may merge types) so every configured machine keeps its identity.
    """
    sums = np.zeros(len(fleet_config))
    for rec in recs:
        for i, m in enumerate(fleet_config):
            if m.energy_intensity is None:
                raise InvalidInputError(f"machine {m.id!r} has no energy_intensity")
            r = rec.coin_price / m.energy_intensity - rec.rt_price
            if r < 0 and not clamp:
                raise ModelViolationError(
                    f"machine {m.id!r} has negative net reward {r:.3f} in the window"
                )
            sums[i] += max(r, 0.0) if clamp else r
    means = sums / len(recs)
    machines = [
        MachineType(id=m.id, capacity_mw=m.capacity_mw, energy_intensity=m.energy_intensity, reward=float(r))
        for m, r in zip(fleet_config, means)
    ]
    return canonicalize(machines)


def _resampling_sampler(eps_rows: np.ndarray):
    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(0, eps_rows.shape[0], size)
        return eps_rows[idx]

    return sampler


def compare_strategies(
    records: Sequence[TraceRecord],
    fleet_config: Sequence[MachineType],
    programs: Sequence[ProgramSpec],
    window: tuple | None = None,
    *,
    clamp_negative: bool = False,
    sgd_iterations: int = 2000,
    sgd_batch: int = 8,
    seed: int = 0,
) -> StrategyReport:
    """In-sample profit of four participation strategies on a trace window.

    Trains per-hour and pooled profiles by stochastic subgradient descent on
    the window's empirical deployment distribution, then keeps whichever
    feasible candidate (trained profile, no participation, even split)
    minimizes the realized in-sample cost, so the reported ordering reflects
    genuinely better optimization rather than sampling luck.
    """
    recs = list(records)
    if window is not None:
        start, end = window
        recs = [r for r in recs if start <= r.timestamp < end]
    recs = [r for r in recs if all(d is not None for d in r.deployment)]
    if len(recs) < 24:
        raise InvalidInputError(
            f"need at least 24 fully observed slots in the window, got {len(recs)}"
        )

    n = len(programs)
    fleets = [per_slot_rewards(r, fleet_config, clamp_negative) for r in recs]
    programs_seq = [programs_for_record(r, programs) for r in recs]
    samples = [r.deployment_array()[0] for r in recs]
    cap = fleets[0].total_capacity_mw
    arrays = _RoundArrays(fleets, programs_seq, samples, cap)
    eps_rows = np.array(samples)

    zeros = np.zeros(n)
    even = np.full(n, cap / n)

    def train(rows: np.ndarray, train_seed: int) -> np.ndarray:
        sub = [recs[i] for i in rows]
        fleet = _mean_reward_fleet(sub, fleet_config, clamp_negative)
        mean_prices = np.mean(
            [[r.as_prices[r.program_ids.index(p.id)] for p in programs] for r in sub], axis=0
        )
        train_programs = [
            ProgramSpec(id=p.id, price=float(q), direction=p.direction)
            for p, q in zip(programs, mean_prices)
        ]
        cfg = SgdConfig(iterations=sgd_iterations, batch=sgd_batch, seed=train_seed)
        return sgd_solve(fleet, train_programs, _resampling_sampler(eps_rows[rows]), cfg).profile.c

    def pick(cands: list[np.ndarray], rows: np.ndarray) -> np.ndarray:
        costs = arrays.costs_for(np.array(cands))[rows].sum(axis=0)
        return cands[int(np.argmin(costs))]

    all_rows = np.arange(len(recs))
    fixed = pick([train(all_rows, seed), zeros, even], all_rows)

    hours = np.array([r.timestamp.hour for r in recs])
    hour_profiles = np.zeros((24, n))
    for h in range(24):
        rows = all_rows[hours == h]
        if rows.size == 0:
            hour_profiles[h] = fixed
            continue
        cands = [zeros, even, fixed]
        if rows.size >= 2:
            cands.insert(0, train(rows, seed + 1 + h))
        hour_profiles[h] = pick(cands, rows)

    per_slot = {
        "none": np.zeros(len(recs)),
        "even_split": -arrays.costs_for(even[None, :])[:, 0],
        "fixed_profile": -arrays.costs_for(fixed[None, :])[:, 0],
    }
    hourly_costs = arrays.costs_for(hour_profiles)
    per_slot["optimized"] = -hourly_costs[all_rows, hours]

    return StrategyReport(
        mean_profit={k: float(v.mean()) for k, v in per_slot.items()},
        slot_profits=per_slot,
        hour_profiles=hour_profiles,
        fixed_profile=fixed,
        timestamps=tuple(r.timestamp for r in recs),
    )
