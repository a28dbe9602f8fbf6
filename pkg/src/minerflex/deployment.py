"""Optimal deployment allocation and realized-cost evaluation.

Given a committed profile c and a realized deployment vector eps, the
facility must shed sum_i eps_i * c_i MW of mining load. The cheapest way is
greedy: fill the lowest-reward machine types first. The resulting cost,

    cost(eps, c) = sum_{k < k_c} (r_k - r_{k_c}) cap_k
                   + sum_i c_i (r_{k_c} eps_i - p_i),

is piecewise affine and convex in c (the pointwise max over the per-type
affine surrogates evaluated by :func:`cost_fixed_k`). All functions here are
pure; sign convention is cost = lost mining margin minus program revenue, so
negative cost is profit relative to mining-only operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, InvalidInputError
from .fleet import FleetSpec
from .programs import ProgramSpec, prices_of

# Absolute float guard for deployment totals at the feasible-set edges.
EDGE_GUARD = 1e-12


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(getattr(x, "epsilon", getattr(x, "c", x)), dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class DeploymentSample:
    """One realized deployment-rate vector, componentwise in [0, 1]."""

    epsilon: np.ndarray

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float)
        if eps.ndim != 1:
            raise InvalidInputError(f"epsilon must be a vector, got shape {eps.shape}")
        if np.any(~np.isfinite(eps)) or np.any(eps < 0.0) or np.any(eps > 1.0):
            raise InvalidInputError(f"epsilon components must lie in [0,1], got {eps}")
        eps.setflags(write=False)
        object.__setattr__(self, "epsilon", eps)


@dataclass(frozen=True)
class Profile:
    """Committed capacity per program (MW), componentwise nonnegative."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).copy()
        if c.ndim != 1:
            raise InvalidInputError(f"profile must be a vector, got shape {c.shape}")
        if np.any(~np.isfinite(c)):
            raise InvalidInputError("profile components must be finite")
        tiny = (c < 0.0) & (c >= -EDGE_GUARD)
        c[tiny] = 0.0
        if np.any(c < 0.0):
            raise InvalidInputError(f"profile components must be >= 0, got {c}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def total(self) -> float:
        return float(self.c.sum())


@dataclass(frozen=True)
class Allocation:
    """Deployed capacity covered by each machine type (MW)."""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    def total(self) -> float:
        return float(self.d.sum())


def effective_epsilon(sample, directions: Sequence[str]) -> DeploymentSample:
    """Map raw deployment rates to effective load-reduction fractions.

    Holding headroom for a down program reduces consumption by (1 - eps) * c,
    so down components flip eps -> 1 - eps; up components pass through.
    """
    eps = _as_vector(sample, "sample")
    if len(directions) != eps.size:
        raise InvalidInputError(
            f"got {eps.size} deployment rates for {len(directions)} directions"
        )
    out = eps.copy()
    for i, direction in enumerate(directions):
        if direction == "down":
            out[i] = 1.0 - out[i]
        elif direction != "up":
            raise InvalidInputError(f"unknown direction {direction!r}")
    return DeploymentSample(out)


def _clamp_total(total: float, cap: float) -> float:
    """Snap a deployment total onto [0, cap]; error beyond the float guard."""
    if -EDGE_GUARD <= total < 0.0:
        return 0.0
    if cap < total <= cap + EDGE_GUARD:
        return cap
    if total < 0.0 or total > cap:
        raise InfeasibleError(
            f"total deployed capacity {total} outside [0, {cap}]"
        )
    return total


def allocate_deployment(fleet: FleetSpec, total_deployed: float) -> Allocation:
    """Greedy fill of the deployment total, least-rewarding types first."""
    total = _clamp_total(float(total_deployed), fleet.total_capacity_mw)
    already_filled = np.concatenate(([0.0], fleet.cum_capacities[:-1]))
    d = np.minimum(fleet.capacities, np.maximum(0.0, total - already_filled))
    return Allocation(d)


def critical_type(fleet: FleetSpec, total_deployed: float) -> int:
    """Smallest 1-based q with total_deployed <= cap_1 + ... + cap_q."""
    total = _clamp_total(float(total_deployed), fleet.total_capacity_mw)
    return int(np.searchsorted(fleet.cum_capacities, total, side="left")) + 1


def _check_profile_feasible(c: np.ndarray, fleet: FleetSpec):
    if np.any(c < 0.0):
        raise InfeasibleError(f"profile has negative components: {c}")
    total = float(c.sum())
    cap = fleet.total_capacity_mw
    if total > cap + max(EDGE_GUARD, 1e-9 * cap):
        raise InfeasibleError(f"profile total {total} exceeds fleet capacity {cap}")


def realized_cost(fleet: FleetSpec, programs: Sequence[ProgramSpec], profile, sample) -> float:
    """Cost of the slot under the optimal (greedy) machine deployment.

    ``sample`` must already hold effective load-reduction fractions, i.e.
    down-program components passed through :func:`effective_epsilon`.
    """
    c = _as_vector(profile, "profile")
    eps = _as_vector(sample, "sample")
    p = prices_of(programs)
    if not (c.size == eps.size == p.size):
        raise InvalidInputError(
            f"dimension mismatch: profile {c.size}, sample {eps.size}, programs {p.size}"
        )
    _check_profile_feasible(c, fleet)
    total = _clamp_total(float(eps @ c), fleet.total_capacity_mw)
    k0 = int(np.searchsorted(fleet.cum_capacities, total, side="left"))
    return float(fleet.prefix_costs[k0] + fleet.rewards[k0] * total - p @ c)


def cost_fixed_k(
    fleet: FleetSpec, programs: Sequence[ProgramSpec], profile, sample, k_prime: int
) -> float:
    """Affine surrogate of the cost with the critical type pinned to k_prime.

    The realized cost is the pointwise maximum of these surrogates over
    k_prime in [1..K], which is what makes it convex.
    """
    if not 1 <= k_prime <= fleet.n_types:
        raise InvalidInputError(
            f"k_prime must be in [1, {fleet.n_types}], got {k_prime}"
        )
    c = _as_vector(profile, "profile")
    eps = _as_vector(sample, "sample")
    p = prices_of(programs)
    k0 = k_prime - 1
    total = float(eps @ c)
    return float(fleet.prefix_costs[k0] + fleet.rewards[k0] * total - p @ c)


def realized_cost_batch(
    fleet: FleetSpec, prices: np.ndarray, eps: np.ndarray, profile
) -> np.ndarray:
    """Vectorized :func:`realized_cost` over many effective samples.

    ``eps`` has shape (S, N); validation is the caller's job (hot path for
    the Monte Carlo oracles).
    """
    c = _as_vector(profile, "profile")
    totals = eps @ c
    cap = fleet.total_capacity_mw
    np.clip(totals, 0.0, cap, out=totals)
    k0 = np.searchsorted(fleet.cum_capacities, totals, side="left")
    return fleet.prefix_costs[k0] + fleet.rewards[k0] * totals - float(prices @ c)
