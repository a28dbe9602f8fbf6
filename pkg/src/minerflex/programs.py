"""Ancillary-service program descriptions and deployment-rate models.

A program pays ``price`` $/MWh on committed capacity and, when deployed,
forces a load adjustment in its ``direction``: "up" programs reduce
consumption by eps * c, "down" programs hold headroom c and end up reducing
consumption by (1 - eps) * c. Deployment-rate models expose
``mean() / variance() / sample(rng, size)`` over eps in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

DIRECTIONS = ("up", "down")


@dataclass(frozen=True)
class ProgramSpec:
    id: str
    price: float
    direction: str = "up"
    eps_model: object | None = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise InvalidInputError(
                f"program {self.id!r}: direction must be one of {DIRECTIONS}"
            )
        if self.price < 0:
            raise InvalidInputError(
                f"program {self.id!r}: price must be >= 0, got {self.price}"
            )


def directions_of(programs: Sequence[ProgramSpec]) -> tuple[str, ...]:
    return tuple(p.direction for p in programs)


def prices_of(programs: Sequence[ProgramSpec]) -> np.ndarray:
    return np.array([p.price for p in programs], dtype=float)


@dataclass(frozen=True)
class BernoulliEps:
    """All-or-nothing deployment: eps = 1 with probability ``prob``."""

    prob: float

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise InvalidInputError(f"prob must be in [0,1], got {self.prob}")

    def mean(self) -> float:
        return self.prob

    def variance(self) -> float:
        return self.prob * (1.0 - self.prob)

    def sample(self, rng: np.random.Generator, size=None):
        return (rng.random(size) < self.prob).astype(float)


@dataclass(frozen=True)
class ConstantEps:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise InvalidInputError(f"value must be in [0,1], got {self.value}")

    def mean(self) -> float:
        return self.value

    def variance(self) -> float:
        return 0.0

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)


@dataclass(frozen=True)
class UniformEps:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise InvalidInputError(f"need 0 <= lo <= hi <= 1, got [{self.lo}, {self.hi}]")

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size)


def independent_sampler(programs: Sequence[ProgramSpec]):
    """Joint sampler drawing each program's raw eps independently.

    Returns ``sampler(rng, size) -> (size, N) array``. Every program must
    carry an ``eps_model``.
    """
    models = []
    for p in programs:
        if p.eps_model is None:
            raise InvalidInputError(f"program {p.id!r} has no eps_model attached")
        models.append(p.eps_model)

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        cols = [np.asarray(m.sample(rng, size), dtype=float) for m in models]
        return np.column_stack(cols)

    return sampler
