"""Exact profile selection for a single-machine-type facility.

With one machine type (reward r) the expected slot cost is linear in c, so
the risk-oblivious optimum sits at a vertex: everything on the program with
the lowest per-unit cost r E[eps_i] - p_i, or nothing at all. Adding a
mean-variance penalty turns the problem into a separable QP over the same
feasible set, solved exactly through its KKT conditions with a bisection on
the capacity multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .deployment import Profile
from .errors import InvalidInputError


@dataclass(frozen=True)
class ProgramStats:
    """Price and deployment-rate moments of one program.

    ``var_slack`` is the relative overshoot allowed above the hard bound
    mean(1-mean); unbiased sample variances exceed the bound by up to a
    factor n/(n-1), so estimators pass 1/(n-1) here.
    """

    price: float
    mean_eps: float
    var_eps: float
    var_slack: float = 0.0

    def __post_init__(self):
        if self.price < 0:
            raise InvalidInputError(f"price must be >= 0, got {self.price}")
        if not 0.0 <= self.mean_eps <= 1.0:
            raise InvalidInputError(f"mean_eps must be in [0,1], got {self.mean_eps}")
        limit = self.mean_eps * (1.0 - self.mean_eps) * (1.0 + self.var_slack) + 1e-12
        if not 0.0 <= self.var_eps <= limit:
            raise InvalidInputError(
                f"var_eps {self.var_eps} exceeds the [0,1]-variable bound "
                f"{self.mean_eps * (1.0 - self.mean_eps)} (slack {self.var_slack})"
            )


@dataclass(frozen=True)
class RiskConfig:
    """Mean-variance trade-off weight; 0 recovers the risk-oblivious rule."""

    risk_weight: float = 0.0

    def __post_init__(self):
        if self.risk_weight < 0:
            raise InvalidInputError(f"risk_weight must be >= 0, got {self.risk_weight}")


def _unit_costs(programs: Sequence[ProgramStats], r: float) -> np.ndarray:
    return np.array([r * s.mean_eps - s.price for s in programs])


def best_program(programs: Sequence[ProgramStats], r: float, cap: float) -> Profile:
    """Vertex rule: full capacity on the cheapest program if it profits.

    Ties on per-unit cost go to the lowest index; a program exactly at
    break-even still gets full capacity.
    """
    if not programs:
        raise InvalidInputError("need at least one program")
    if r < 0:
        raise InvalidInputError(f"reward must be >= 0, got {r}")
    unit = _unit_costs(programs, r)
    i_star = int(np.argmin(unit))
    c = np.zeros(len(programs))
    if -unit[i_star] >= 0.0:
        c[i_star] = cap
    return Profile(c)


def profile_risk(
    programs: Sequence[ProgramStats], r: float, profile
) -> tuple[float, float]:
    """(expected cost, cost variance) of a profile under independent programs."""
    c = np.asarray(getattr(profile, "c", profile), dtype=float)
    if c.size != len(programs):
        raise InvalidInputError(
            f"profile has {c.size} components for {len(programs)} programs"
        )
    exp_cost = float(c @ _unit_costs(programs, r))
    var = float(sum(ci**2 * r**2 * s.var_eps for ci, s in zip(c, programs)))
    return exp_cost, var


def risk_aware_solve(
    programs: Sequence[ProgramStats], r: float, cap: float, risk: RiskConfig
) -> Profile:
    """Exact minimizer of sum_i [c_i a_i + w c_i^2 r^2 Var(eps_i)] on the simplex.

    a_i = r E[eps_i] - p_i. Per-program unconstrained optima are clipped at
    zero; if they oversubscribe the capacity, a dual multiplier mu >= 0 on
    the sum constraint is found by bisection over the positive-variance
    coordinates. Zero-variance programs stay linear: they either sit at zero
    or soak up the residual capacity, depending on the sign of a_i + mu.
    """
    if not programs:
        raise InvalidInputError("need at least one program")
    w = risk.risk_weight
    a = _unit_costs(programs, r)
    b = np.array([w * r**2 * s.var_eps for s in programs])
    if w == 0.0 or not np.any(b > 0.0):
        return best_program(programs, r, cap)

    pos = b > 0.0
    zero_neg = (~pos) & (a < 0.0)

    def demand(mu: float) -> float:
        return float(np.maximum(0.0, -(a[pos] + mu) / (2.0 * b[pos])).sum())

    mu_floor = float((-a[zero_neg]).max()) if zero_neg.any() else 0.0

    c = np.zeros(len(programs))
    if not zero_neg.any() and demand(0.0) <= cap:
        mu = 0.0
    elif demand(mu_floor) >= cap:
        lo, hi = mu_floor, max(mu_floor, float(-a[pos].min()), 0.0) + 1.0
        while demand(hi) > cap:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if demand(mid) > cap:
                lo = mid
            else:
                hi = mid
        mu = hi
    else:
        # The sum constraint binds through a linear (zero-variance) program:
        # it absorbs whatever the quadratic coordinates leave on the table.
        mu = mu_floor
        residual = cap - demand(mu)
        taker = int(np.nonzero(zero_neg & (-a == mu_floor))[0][0])
        c[taker] = residual

    c[pos] = np.maximum(0.0, -(a[pos] + mu) / (2.0 * b[pos]))
    return Profile(c)
