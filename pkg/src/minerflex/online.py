"""Online gradient descent over sequentially revealed slot costs.

Protocol per round: commit a profile, then observe (eps, r, p), suffer the
realized cost, and update with the exact subgradient of that round's cost at
the committed point. A bank of independent learners keyed by hour of day
captures the strong diurnal structure of ancillary prices; static regret is
always measured against the single best fixed profile in hindsight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .deployment import Profile, effective_epsilon
from .errors import InvalidInputError
from .fleet import FleetSpec
from .programs import ProgramSpec, directions_of, prices_of
from .sgd import _project, default_diameter, default_grad_bound


@dataclass(frozen=True)
class OgdConfig:
    """Step-size constants and learner-bank size for the online run.

    ``cap`` bounds the feasible set; ``diameter`` and ``grad_bound`` feed the
    D/(G sqrt(t)) schedule and normally come from :meth:`from_bounds`.
    """

    horizon: int
    grad_bound: float
    diameter: float
    cap: float
    learners: int = 24

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInputError(f"horizon must be >= 1, got {self.horizon}")
        if min(self.grad_bound, self.diameter, self.cap) <= 0:
            raise InvalidInputError("grad_bound, diameter and cap must be positive")
        if self.learners < 1:
            raise InvalidInputError(f"learners must be >= 1, got {self.learners}")

    @classmethod
    def from_bounds(
        cls,
        horizon: int,
        n_programs: int,
        cap: float,
        r_max: float,
        p_max: float,
        learners: int = 24,
    ) -> "OgdConfig":
        return cls(
            horizon=horizon,
            grad_bound=default_grad_bound(n_programs, r_max, p_max),
            diameter=default_diameter(n_programs, cap),
            cap=cap,
            learners=learners,
        )


@dataclass(frozen=True)
class RoundOutcome:
    profile_played: Profile
    cost_incurred: float
    gradient: np.ndarray


@dataclass(frozen=True)
class RegretReport:
    static_regret: float
    average_regret: float
    hindsight_profile: Profile
    bound: float


def regret_bound(T: int, N: int, cap: float, r_max: float, p_max: float) -> float:
    """Worst-case static regret (3/2) G D sqrt(T) of the step schedule."""
    if min(T, N) < 1 or min(cap, r_max, p_max) <= 0:
        raise InvalidInputError("all regret-bound arguments must be positive")
    g = default_grad_bound(N, r_max, p_max)
    d = default_diameter(N, cap)
    return 1.5 * g * d * math.sqrt(T)


def ogd_step(current, gradient, t: int, cfg: OgdConfig) -> Profile:
    """One projected descent step with eta_t = D / (G sqrt(t))."""
    if t < 1:
        raise InvalidInputError(f"round index must be >= 1, got {t}")
    c = np.asarray(getattr(current, "c", current), dtype=float)
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise InvalidInputError("gradient must be finite")
    eta = cfg.diameter / (cfg.grad_bound * math.sqrt(t))
    return Profile(_project(c - eta * g, cfg.cap))


class _RoundArrays:
    """Padded per-round arrays for vectorized cost sums over a horizon.

    Fleets may differ in type count (reward ties merge); rows are padded by
    repeating the last reward with zero extra capacity, which leaves costs
    unchanged.
    """

    def __init__(self, fleets, programs_seq, samples, cap, missing_masks=None):
        T = len(fleets)
        if not (len(programs_seq) == len(samples) == T):
            raise InvalidInputError("per-round inputs must have equal length")
        if T == 0:
            raise InvalidInputError("need at least one round")
        n = len(programs_seq[0])
        kmax = max(f.n_types for f in fleets)
        self.T, self.n = T, n
        self.eps = np.zeros((T, n))
        self.prices = np.zeros((T, n))
        self.rewards = np.zeros((T, kmax))
        self.cumcaps = np.zeros((T, kmax))
        self.prefix = np.zeros((T, kmax))
        for t, (fleet, programs, sample) in enumerate(zip(fleets, programs_seq, samples)):
            if len(programs) != n:
                raise InvalidInputError(
                    f"round {t}: expected {n} programs, got {len(programs)}"
                )
            if abs(fleet.total_capacity_mw - cap) > 1e-6 * max(1.0, cap):
                raise InvalidInputError(
                    f"round {t}: fleet capacity {fleet.total_capacity_mw} != cap {cap}"
                )
            eff = effective_epsilon(sample, directions_of(programs)).epsilon.copy()
            p = prices_of(programs)
            if missing_masks is not None and missing_masks[t] is not None:
                absent = np.asarray(missing_masks[t], dtype=bool)
                eff[absent] = 0.0
                p = p.copy()
                p[absent] = 0.0
            self.eps[t] = eff
            self.prices[t] = p
            k = fleet.n_types
            self.rewards[t, :k] = fleet.rewards
            self.rewards[t, k:] = fleet.rewards[-1]
            self.cumcaps[t, :k] = fleet.cum_capacities
            self.cumcaps[t, k:] = fleet.cum_capacities[-1]
            self.prefix[t, :k] = fleet.prefix_costs
            self.prefix[t, k:] = fleet.prefix_costs[-1]
        self._rows = np.arange(T)

    def round_cost_and_grad(self, t: int, c: np.ndarray) -> tuple[float, np.ndarray]:
        deployed = float(np.clip(self.eps[t] @ c, 0.0, self.cumcaps[t, -1]))
        k0 = int(np.searchsorted(self.cumcaps[t], deployed, side="left"))
        cost = self.prefix[t, k0] + self.rewards[t, k0] * deployed - self.prices[t] @ c
        grad = self.rewards[t, k0] * self.eps[t] - self.prices[t]
        return float(cost), grad

    def costs_for(self, candidates: np.ndarray) -> np.ndarray:
        """(T, B) per-round costs for a (B, N) batch of profiles."""
        cand = np.atleast_2d(candidates)
        deployed = self.eps @ cand.T
        np.clip(deployed, 0.0, self.cumcaps[:, -1:], out=deployed)
        k0 = (self.cumcaps[:, :, None] < deployed[:, None, :]).sum(axis=1)
        rows = self._rows[:, None]
        return self.prefix[rows, k0] + self.rewards[rows, k0] * deployed - self.prices @ cand.T

    def total_costs(self, candidates: np.ndarray) -> np.ndarray:
        return self.costs_for(candidates).sum(axis=0)

    def total_subgradient(self, c: np.ndarray) -> np.ndarray:
        deployed = self.eps @ c
        np.clip(deployed, 0.0, self.cumcaps[:, -1], out=deployed)
        k0 = (self.cumcaps < deployed[:, None]).sum(axis=1)
        return (self.rewards[self._rows, k0, None] * self.eps - self.prices).sum(axis=0)


def _refined_minimum(arrays: _RoundArrays, cap: float, starts: list[np.ndarray]):
    """Subgradient descent from several starts, then shrinking-grid polish."""
    n = arrays.n
    g_bound = math.sqrt(n) * max(float(arrays.rewards.max()), float(arrays.prices.max()), 1.0)
    d = default_diameter(n, cap)

    best_c, best_v = None, math.inf
    for start in starts:
        c = start.copy()
        for j in range(1, 601):
            g = arrays.total_subgradient(c) / arrays.T
            c = _project(c - d / (g_bound * math.sqrt(j)) * g, cap)
            v = float(arrays.total_costs(c[None, :])[0])
            if v < best_v:
                best_v, best_c = v, c.copy()

    if n <= 3:
        # Grid refinement: convexity keeps the minimizer within one cell of
        # the incumbent at each level, so shrinking boxes stay valid.
        pts = 17
        hw = cap / 4.0
        offsets = np.linspace(-1.0, 1.0, pts)
        mesh = np.stack(np.meshgrid(*([offsets] * n), indexing="ij"), axis=-1).reshape(-1, n)
        for _ in range(6):
            cand = best_c[None, :] + hw * mesh
            cand = np.array([_project(x, cap) for x in cand])
            vals = arrays.total_costs(cand)
            i = int(np.argmin(vals))
            if vals[i] < best_v:
                best_v, best_c = float(vals[i]), cand[i]
            hw *= 2.5 / (pts - 1)
    else:
        for _ in range(3):
            for i in range(n):
                grid = np.linspace(0.0, cap, 201)
                cand = np.repeat(best_c[None, :], grid.size, axis=0)
                cand[:, i] = grid
                cand = np.array([_project(x, cap) for x in cand])
                vals = arrays.total_costs(cand)
                j = int(np.argmin(vals))
                if vals[j] < best_v:
                    best_v, best_c = float(vals[j]), cand[j]

    return best_c, best_v


def hindsight_optimum(
    fleet_per_round: Sequence[FleetSpec],
    programs_per_round: Sequence[Sequence[ProgramSpec]],
    revealed_samples: Sequence,
    cap: float,
    missing_masks=None,
) -> Profile:
    """Best fixed profile against the whole revealed sequence."""
    arrays = _RoundArrays(fleet_per_round, programs_per_round, revealed_samples, cap, missing_masks)
    n = arrays.n
    starts = [np.zeros(n), np.full(n, cap / (2.0 * n))]
    starts += [cap * np.eye(n)[i] for i in range(n)]
    best_c, _ = _refined_minimum(arrays, cap, starts)
    return Profile(best_c)


def run_online(
    fleet_per_round: Sequence[FleetSpec],
    programs_per_round: Sequence[Sequence[ProgramSpec]],
    revealed_samples: Sequence,
    cfg: OgdConfig,
    timestamps=None,
    missing_masks=None,
) -> tuple[list[RoundOutcome], RegretReport]:
    """Play the whole sequence with per-hour learners and account regret.

    Rounds are keyed to learners by timestamp hour (mod bank size) or by
    round index when no timestamps are supplied. Each learner runs its own
    step-size clock over its own subsequence.
    """
    arrays = _RoundArrays(
        fleet_per_round, programs_per_round, revealed_samples, cfg.cap, missing_masks
    )
    T, n = arrays.T, arrays.n
    if timestamps is not None and len(timestamps) != T:
        raise InvalidInputError("timestamps must match the number of rounds")

    states = [np.zeros(n) for _ in range(cfg.learners)]
    clocks = [0] * cfg.learners
    outcomes: list[RoundOutcome] = []
    total_cost = 0.0
    for t in range(T):
        if timestamps is not None:
            h = timestamps[t].hour % cfg.learners
        else:
            h = t % cfg.learners
        c = states[h]
        cost, grad = arrays.round_cost_and_grad(t, c)
        outcomes.append(RoundOutcome(Profile(c.copy()), cost, grad))
        total_cost += cost
        clocks[h] += 1
        eta = cfg.diameter / (cfg.grad_bound * math.sqrt(clocks[h]))
        states[h] = _project(c - eta * grad, cfg.cap)

    hindsight = hindsight_optimum(
        fleet_per_round, programs_per_round, revealed_samples, cfg.cap, missing_masks
    )
    hindsight_cost = float(arrays.total_costs(hindsight.c[None, :])[0])
    static = total_cost - hindsight_cost
    report = RegretReport(
        static_regret=static,
        average_regret=static / T,
        hindsight_profile=hindsight,
        bound=1.5 * cfg.grad_bound * cfg.diameter * math.sqrt(T),
    )
    return outcomes, report


def per_round_costs(
    fleet_per_round, programs_per_round, revealed_samples, cap, profile, missing_masks=None
) -> np.ndarray:
    """Cost of holding one fixed profile in every round (for regret curves)."""
    arrays = _RoundArrays(fleet_per_round, programs_per_round, revealed_samples, cap, missing_masks)
    c = np.asarray(getattr(profile, "c", profile), dtype=float)
    return arrays.costs_for(c[None, :])[:, 0]
