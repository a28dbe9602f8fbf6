"""Joint reg-up/reg-down model and its closed-form expected cost.

At any instant only one regulation direction is deployed: reg-down with
probability theta, reg-up otherwise, each with a truncated-exponential
deployment rate on [0, 1]. For a two-type fleet the expected slot cost of a
profile (c_up, c_dn) has a closed form assembled from partial moments of the
truncated exponential; the Monte Carlo path through
:func:`minerflex.deployment.realized_cost` arbitrates its correctness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deployment import Profile
from .errors import InfeasibleError, InvalidInputError
from .fleet import FleetSpec

# Below this rate the closed forms hit catastrophic cancellation; switch to
# series expansions (error O(lambda^5) for the mean, O(lambda^4) for the
# variance, far below the 1e-9 acceptance tolerance).
_SERIES_LAMBDA = 1e-4


@dataclass(frozen=True)
class TruncatedExponential:
    """Exponential distribution truncated to [0, 1] with rate ``lam``."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise InvalidInputError(f"lam must be a positive finite real, got {self.lam}")

    def pdf(self, x):
        """Density lam * exp(-lam x) / (1 - exp(-lam)), zero outside [0, 1]."""
        x = np.asarray(x, dtype=float)
        dens = self.lam * np.exp(-self.lam * x) / -math.expm1(-self.lam)
        out = np.where((x >= 0.0) & (x <= 1.0), dens, 0.0)
        return float(out) if out.ndim == 0 else out

    def mean(self) -> float:
        if self.lam < _SERIES_LAMBDA:
            return 0.5 - self.lam / 12.0 + self.lam**3 / 720.0
        return 1.0 / self.lam - 1.0 / math.expm1(self.lam)

    def variance(self) -> float:
        # The closed form cancels catastrophically for small rates (three
        # O(1/lam^2) terms nearly annihilate), so the series branch extends
        # well past the mean's switch point.
        lam = self.lam
        if lam < 0.05:
            return 1.0 / 12.0 - lam**2 / 240.0 + lam**4 / 6048.0 - lam**6 / 172800.0
        ex2 = (2.0 / lam**2 - math.exp(-lam) * (1.0 + 2.0 / lam + 2.0 / lam**2)) / -math.expm1(-lam)
        return ex2 - self.mean() ** 2

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draw: x = -log(1 - u (1 - e^-lam)) / lam."""
        u = rng.random(size)
        x = -np.log1p(u * math.expm1(-self.lam)) / self.lam
        return float(x) if size is None else x


def truncexp_pdf(dist: TruncatedExponential, x):
    return dist.pdf(x)


def truncexp_mean(dist: TruncatedExponential) -> float:
    return dist.mean()


def fit_lambda(target_mean: float) -> float:
    """Rate whose truncated-exponential mean equals ``target_mean``.

    The mean decreases strictly from 1/2 (lam -> 0) to 0 (lam -> inf), so
    bisection converges; targets at or above 1/2 are infeasible.
    """
    if not 0.0 < target_mean < 0.5:
        raise InvalidInputError(
            f"target mean must lie in (0, 0.5), got {target_mean}"
        )
    lo, hi = 1e-12, 1.0
    while TruncatedExponential(hi).mean() > target_mean:
        hi *= 2.0
        if hi > 1e9:
            raise InvalidInputError(f"no rate reaches mean {target_mean}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        m = TruncatedExponential(mid).mean()
        if abs(m - target_mean) <= 1e-12:
            return mid
        if m > target_mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RegJointModel:
    """Mixture: reg-down deployed w.p. theta, reg-up otherwise."""

    theta: float
    up: TruncatedExponential
    down: TruncatedExponential

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidInputError(f"theta must be in [0,1], got {self.theta}")


def sample_joint(model: RegJointModel, rng: np.random.Generator, size=None):
    """Draw raw (eps_up, eps_dn); exactly one component is nonzero.

    With ``size`` given, returns a (size, 2) array; otherwise a 2-tuple.
    """
    if size is None:
        if rng.random() < model.theta:
            return 0.0, model.down.sample(rng)
        return model.up.sample(rng), 0.0
    down_deployed = rng.random(size) < model.theta
    out = np.zeros((size, 2))
    # Draw both streams unconditionally to keep the stream layout fixed.
    ups = model.up.sample(rng, size)
    downs = model.down.sample(rng, size)
    out[~down_deployed, 0] = ups[~down_deployed]
    out[down_deployed, 1] = downs[down_deployed]
    return out


def joint_sampler(model: RegJointModel):
    """Adapter for :func:`minerflex.sgd.solve`: sampler(rng, m) -> (m, 2) raw draws."""

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        return sample_joint(model, rng, size)

    return sampler


@dataclass(frozen=True)
class RegInstance:
    """Two-type fleet participating only in reg-up (index 0) and reg-down (1)."""

    fleet: FleetSpec
    p_up: float
    p_dn: float
    model: RegJointModel

    def __post_init__(self):
        if self.fleet.n_types != 2:
            raise InvalidInputError(
                f"closed form requires exactly 2 machine types, got {self.fleet.n_types}"
            )
        if self.p_up < 0 or self.p_dn < 0:
            raise InvalidInputError("program prices must be >= 0")


def _partial_moments(lam: float, a: float, b: float) -> tuple[float, float]:
    """(integral of f, integral of x f) over [a, b] for the truncated exponential."""
    if b <= a:
        return 0.0, 0.0
    norm = -math.expm1(-lam)
    ea = math.exp(-lam * a)
    p0 = ea * -math.expm1(-lam * (b - a)) / norm
    m1 = (
        ea * (a - b * math.exp(-lam * (b - a)) + -math.expm1(-lam * (b - a)) / lam)
    ) / norm
    return p0, m1


# The five case expressions below are each valid on their named region; the
# region selector lives in expected_reg_cost. Keeping them separate lets the
# tests check continuity across region boundaries by evaluating both sides.


def _down_base(inst: RegInstance, c_up: float, c_dn: float) -> float:
    # Down deployed: load reduction is (1 - eps_dn) c_dn, none from reg-up.
    r1 = float(inst.fleet.rewards[0])
    return -inst.p_up * c_up + c_dn * (r1 * (1.0 - inst.model.down.mean()) - inst.p_dn)


def _up_base(inst: RegInstance, c_up: float, c_dn: float) -> float:
    # Up deployed: reduction is eps_up c_up plus the full c_dn headroom.
    r1 = float(inst.fleet.rewards[0])
    return c_up * (r1 * inst.model.up.mean() - inst.p_up) + c_dn * (r1 - inst.p_dn)


def _down_cost_within_first(inst, c_up, c_dn):
    """Down case, c_dn <= cap_1: the first machine type always absorbs it."""
    return _down_base(inst, c_up, c_dn)


def _down_cost_beyond_first(inst, c_up, c_dn):
    """Down case, c_dn > cap_1: reduction spills into the second type for small eps_dn."""
    cap1 = float(inst.fleet.capacities[0])
    r1, r2 = (float(v) for v in inst.fleet.rewards)
    p0, m1 = _partial_moments(inst.model.down.lam, 0.0, 1.0 - cap1 / c_dn)
    spill = (cap1 - c_dn) * p0 + c_dn * m1
    return _down_base(inst, c_up, c_dn) + (r1 - r2) * spill


def _up_cost_within_first(inst, c_up, c_dn):
    """Up case, c_up + c_dn <= cap_1: the first type always suffices."""
    return _up_base(inst, c_up, c_dn)


def _up_cost_straddling(inst, c_up, c_dn):
    """Up case, c_up + c_dn > cap_1 > c_dn: spill for large eps_up only."""
    cap1 = float(inst.fleet.capacities[0])
    r1, r2 = (float(v) for v in inst.fleet.rewards)
    t = (cap1 - c_dn) / c_up
    p0, m1 = _partial_moments(inst.model.up.lam, t, 1.0)
    spill = (cap1 - c_dn) * p0 - c_up * m1
    return _up_base(inst, c_up, c_dn) + (r1 - r2) * spill


def _up_cost_beyond_first(inst, c_up, c_dn):
    """Up case, c_dn >= cap_1: the second type is always partially deployed."""
    r1, r2 = (float(v) for v in inst.fleet.rewards)
    cap1 = float(inst.fleet.capacities[0])
    spill = cap1 - c_dn - c_up * inst.model.up.mean()
    return _up_base(inst, c_up, c_dn) + (r1 - r2) * spill


def expected_reg_cost(inst: RegInstance, c_up: float, c_dn: float) -> float:
    """Closed-form expected slot cost of committing (c_up, c_dn)."""
    cap = inst.fleet.total_capacity_mw
    if c_up < 0 or c_dn < 0 or c_up + c_dn > cap + 1e-9 * max(1.0, cap):
        raise InfeasibleError(
            f"profile ({c_up}, {c_dn}) infeasible for fleet capacity {cap}"
        )
    cap1 = float(inst.fleet.capacities[0])

    if c_dn <= cap1:
        down = _down_cost_within_first(inst, c_up, c_dn)
    else:
        down = _down_cost_beyond_first(inst, c_up, c_dn)

    if c_up + c_dn <= cap1:
        up = _up_cost_within_first(inst, c_up, c_dn)
    elif c_dn >= cap1:
        up = _up_cost_beyond_first(inst, c_up, c_dn)
    else:
        up = _up_cost_straddling(inst, c_up, c_dn)

    theta = inst.model.theta
    return theta * down + (1.0 - theta) * up


def _grid_best(inst: RegInstance, points: int) -> tuple[float, float, float]:
    cap = inst.fleet.total_capacity_mw
    axis = np.linspace(0.0, cap, points)
    best = (math.inf, 0.0, 0.0)
    for cu in axis:
        for cd in axis:
            if cu + cd > cap:
                break
            v = expected_reg_cost(inst, cu, cd)
            if v < best[0]:
                best = (v, cu, cd)
    return best


def solve_reg_profile(inst: RegInstance, grid_points: int = 100) -> Profile:
    """Minimize the closed-form expected cost over the feasible set.

    Coarse grid scan for a basin, then projected gradient with central-
    difference gradients on the (convex) closed form; returns whichever
    candidate evaluates best.
    """
    from .sgd import _project  # local import to avoid a cycle at module load

    cap = inst.fleet.total_capacity_mw
    best_v, cu, cd = _grid_best(inst, grid_points)
    c = np.array([cu, cd])
    h = 1e-6 * max(cap, 1.0)
    scale = max(
        abs(float(inst.fleet.rewards[-1])), inst.p_up, inst.p_dn, 1.0
    )

    def f(x):
        return expected_reg_cost(inst, float(x[0]), float(x[1]))

    for j in range(1, 401):
        g = np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            hi = _project(c + e, cap)
            lo = _project(c - e, cap)
            denom = hi[i] - lo[i]
            g[i] = (f(hi) - f(lo)) / denom if denom > 0 else 0.0
        step = cap / (scale * math.sqrt(j))
        c = _project(c - step * g, cap)
        v = f(c)
        if v < best_v:
            best_v, cu, cd = v, float(c[0]), float(c[1])

    return Profile(np.array([cu, cd]))
