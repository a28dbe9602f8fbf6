"""Shared builders for the test suite."""

import numpy as np
import pytest

from minerflex import ProgramSpec, fleet_from_rewards


@pytest.fixture
def two_type_fleet():
    """The desk-scale two-type fleet: 150 MW at $94 and 100 MW at $150."""
    return fleet_from_rewards([150.0, 100.0], [94.0, 150.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_instance(rng, k_max=4, n_max=3, cap_scale=100.0):
    """Random small (fleet, programs, profile, effective eps) quadruple."""
    k = int(rng.integers(1, k_max + 1))
    n = int(rng.integers(1, n_max + 1))
    caps = rng.uniform(1.0, cap_scale, k)
    rewards = np.sort(rng.uniform(0.0, 200.0, k))
    rewards += np.arange(k) * 1e-6  # keep strictly ascending
    fleet = fleet_from_rewards(caps, rewards)
    programs = [
        ProgramSpec(id=f"p{i}", price=float(rng.uniform(0.0, 60.0))) for i in range(n)
    ]
    raw = rng.uniform(0.0, 1.0, n)
    c = rng.uniform(0.0, 1.0, n)
    c *= rng.uniform(0.0, 1.0) * fleet.total_capacity_mw / max(c.sum(), 1e-12)
    return fleet, programs, c, raw
