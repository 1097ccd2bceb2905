"""
Shared numeric types: the feasible box, scalar schedules and seeded streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid parameters or mismatched dimensions."""


class ValidationError(ValueError):
    """Raised when an input violates a structural invariant (e.g. stochasticity)."""


class NumericalError(RuntimeError):
    """Raised when an agent state stops being finite."""

    def __init__(self, message, iteration=None, agent=None, last_state=None):
        super().__init__(message)
        self.iteration = iteration
        self.agent = agent
        self.last_state = last_state


#%% FEASIBLE SET

@dataclass(frozen=True)
class BoxSet:
    """The box ``[lower, upper]^dim``."""

    lower: float
    upper: float
    dim: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigurationError(f"box needs lower < upper, got [{self.lower}, {self.upper}]")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"box dimension must be a positive integer, got {self.dim}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        """Euclidean diameter of the box."""
        return self.width * math.sqrt(self.dim)

    def contains(self, x, atol=0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def project(self, x):
        return project_box(x, self)


def project_box(x, X: BoxSet) -> np.ndarray:
    """
    Euclidean projection onto a box.

    Works on a single vector or on a stack of vectors whose last axis has
    length ``X.dim``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (X.dim,):
        raise ConfigurationError(f"expected last dimension {X.dim}, got shape {x.shape}")
    return np.clip(x, X.lower, X.upper)


#%% SCHEDULES

@dataclass(frozen=True)
class StepSchedule:
    """
    Consensus step sizes.

    ``power_law`` emits ``(i+1)^-alpha``; ``staircase`` holds each value for
    ``block`` iterations and emits ``(floor(i/block)+1)^-alpha``.
    """

    kind: str = "staircase"
    alpha: float = 0.51
    block: int = 50

    def __post_init__(self):
        if self.kind not in ("power_law", "staircase"):
            raise ConfigurationError(f"unknown step schedule kind {self.kind!r}")
        if not 0.5 < self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in (0.5, 1], got {self.alpha}")
        if self.block < 1:
            raise ConfigurationError("block must be a positive integer")

    @classmethod
    def power_law(cls, alpha):
        return cls(kind="power_law", alpha=alpha, block=1)

    @classmethod
    def staircase(cls, block, alpha):
        return cls(kind="staircase", alpha=alpha, block=block)

    def __call__(self, i):
        return step_value(self, i)


def step_value(s: StepSchedule, i):
    i = np.asarray(i)
    if np.any(i < 0):
        raise ConfigurationError("iteration index must be nonnegative")
    block = 1 if s.kind == "power_law" else s.block
    out = (i // block + 1.0) ** (-s.alpha)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PerturbationSchedule:
    """
    Perturbation magnitudes ``scale0 * (floor(i/block)+1)^-exponent``.

    The default exponent 1 gives a divergent series; any exponent above 1
    makes the schedule summable.
    """

    scale0: float = 1e-6
    block: int = 100
    exponent: float = 1.0

    def __post_init__(self):
        if self.scale0 < 0:
            raise ConfigurationError("scale0 must be nonnegative")
        if self.block < 1:
            raise ConfigurationError("block must be a positive integer")
        if self.exponent <= 0:
            raise ConfigurationError("exponent must be positive")

    def __call__(self, i):
        return perturbation_scale(self, i)

    def partial_sum_bound(self, horizon: int) -> float:
        """Upper bound on the sum of the first ``horizon`` values (exponent 1)."""
        return self.scale0 * self.block * (1.0 + math.log(horizon / self.block + 1.0))


def perturbation_scale(p: PerturbationSchedule, i):
    i = np.asarray(i)
    if np.any(i < 0):
        raise ConfigurationError("iteration index must be nonnegative")
    out = p.scale0 * (i // p.block + 1.0) ** (-p.exponent)
    return float(out) if out.ndim == 0 else out


#%% RANDOM STREAMS

def stream(seed: int, *path: int) -> np.random.Generator:
    """
    Independent generator addressed by a master seed and an integer path.

    ``stream(seed, run, purpose, agent)`` always yields the same sequence and
    different paths yield statistically independent sequences.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
