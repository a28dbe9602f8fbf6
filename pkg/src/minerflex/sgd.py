"""Projected stochastic subgradient descent over the capacity simplex.

Minimizes E[cost(eps, c)] over {c >= 0, sum c <= C^M} with the standard
1/sqrt(j) step schedule. The returned profile is the running average of the
iterates, which carries the usual O(1/sqrt(J)) suboptimality guarantee
reported alongside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .deployment import Profile, _as_vector
from .errors import InvalidInputError
from .fleet import FleetSpec
from .programs import ProgramSpec, prices_of


@dataclass(frozen=True)
class SgdConfig:
    iterations: int
    batch: int = 10
    seed: int = 0
    step_scale: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch < 1:
            raise InvalidInputError(f"batch must be >= 1, got {self.batch}")
        if self.step_scale is not None and self.step_scale <= 0:
            raise InvalidInputError(f"step_scale must be > 0, got {self.step_scale}")


@dataclass(frozen=True)
class SgdResult:
    profile: Profile
    bound: float
    trajectory: list[np.ndarray] | None = None


def default_diameter(n_programs: int, cap: float) -> float:
    """Diameter bound of the feasible region: cap for one program, else sqrt(2)*cap."""
    return cap if n_programs == 1 else math.sqrt(2.0) * cap


def default_grad_bound(n_programs: int, max_reward: float, max_price: float) -> float:
    """Crude bound on the subgradient 2-norm: sqrt(N) * max(r_K, p_max)."""
    return math.sqrt(n_programs) * max(max_reward, max_price)


def step_size(j: int, diameter: float, grad_bound: float) -> float:
    """Step alpha_j = D / (G * sqrt(j)) for iteration j >= 1."""
    if j < 1:
        raise InvalidInputError(f"iteration index must be >= 1, got {j}")
    if diameter <= 0 or grad_bound <= 0:
        raise InvalidInputError("diameter and grad_bound must be positive")
    return diameter / (grad_bound * math.sqrt(j))


def suboptimality_bound(
    iterations: int, n_programs: int, max_reward: float, max_price: float, cap: float
) -> float:
    """Expected-cost gap guarantee of the averaged iterate: 3 D G / (2 sqrt(J))."""
    d = default_diameter(n_programs, cap)
    g = default_grad_bound(n_programs, max_reward, max_price)
    return 3.0 * d * g / (2.0 * math.sqrt(iterations))


def _project(x: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {c >= 0, sum c <= cap}.

    Clip to the nonnegative orthant first; if the sum constraint still
    binds, the projection lands on the simplex face and is found by the
    usual sort-and-threshold shift.
    """
    clipped = np.maximum(x, 0.0)
    if clipped.sum() <= cap:
        return clipped
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - cap
    j = np.arange(1, x.size + 1)
    rho = np.nonzero(u - css / j > 0.0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(x - tau, 0.0)


def project_feasible(point, cap: float) -> Profile:
    """Project an arbitrary point onto the feasible capacity set."""
    x = _as_vector(point, "point")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"point must be finite, got {x}")
    if cap < 0:
        raise InvalidInputError(f"cap must be >= 0, got {cap}")
    return Profile(_project(x, cap))


def _batch_subgradient(
    fleet: FleetSpec, prices: np.ndarray, eps: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Average subgradient r_{k_c} * eps - p over the sample rows of eps."""
    totals = np.clip(eps @ c, 0.0, fleet.total_capacity_mw)
    k0 = np.searchsorted(fleet.cum_capacities, totals, side="left")
    return (fleet.rewards[k0, None] * eps).mean(axis=0) - prices


def sample_subgradient(
    fleet: FleetSpec, programs: Sequence[ProgramSpec], profile, samples
) -> np.ndarray:
    """Subgradient estimate of the expected cost at ``profile``.

    ``samples`` is a nonempty list of direction-transformed deployment
    samples (or an (M, N) array of effective rates).
    """
    if isinstance(samples, np.ndarray):
        eps = np.atleast_2d(np.asarray(samples, dtype=float))
    else:
        eps = np.array([_as_vector(s, "sample") for s in samples], dtype=float)
    if eps.size == 0:
        raise InvalidInputError("samples must be nonempty")
    c = _as_vector(profile, "profile")
    p = prices_of(programs)
    if eps.shape[1] != c.size or c.size != p.size:
        raise InvalidInputError(
            f"dimension mismatch: samples {eps.shape}, profile {c.size}, programs {p.size}"
        )
    return _batch_subgradient(fleet, p, eps, c)


def solve(
    fleet: FleetSpec,
    programs: Sequence[ProgramSpec],
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    config: SgdConfig,
    record_trajectory: bool = False,
) -> SgdResult:
    """Run projected stochastic subgradient descent, returning the iterate average.

    ``sampler(rng, m)`` must draw m i.i.d. raw deployment vectors, shape
    (m, N); down-program components are direction-flipped here before the
    subgradient is formed. Starts from c = 0 (no participation).
    """
    n = len(programs)
    if n == 0:
        raise InvalidInputError("need at least one program")
    p = prices_of(programs)
    down = np.array([spec.direction == "down" for spec in programs])
    cap = fleet.total_capacity_mw
    num = (
        config.step_scale
        if config.step_scale is not None
        else default_diameter(n, cap) / default_grad_bound(n, float(fleet.rewards[-1]), float(p.max()))
    )

    rng = np.random.default_rng(config.seed)
    c = np.zeros(n)
    acc = np.zeros(n)
    trajectory: list[np.ndarray] | None = [c.copy()] if record_trajectory else None

    for j in range(1, config.iterations + 1):
        acc += c
        eps = np.asarray(sampler(rng, config.batch), dtype=float)
        if eps.shape != (config.batch, n):
            raise InvalidInputError(
                f"sampler returned shape {eps.shape}, expected {(config.batch, n)}"
            )
        if down.any():
            eps = eps.copy()
            eps[:, down] = 1.0 - eps[:, down]
        grad = _batch_subgradient(fleet, p, eps, c)
        c = _project(c - (num / math.sqrt(j)) * grad, cap)
        if trajectory is not None:
            trajectory.append(c.copy())

    bound = suboptimality_bound(
        config.iterations, n, float(fleet.rewards[-1]), float(p.max()), cap
    )
    return SgdResult(profile=Profile(acc / config.iterations), bound=bound, trajectory=trajectory)
