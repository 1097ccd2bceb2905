"""
Local processing: subgradient deflection, the superiorized APSM step and
the sparsity-promoting perturbations.

All array routines accept either one vector or a stack of per-agent
vectors along the leading axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import BoxSet, ConfigurationError, PerturbationSchedule, project_box


class CostFunctional:
    """
    Nonnegative convex cost with subgradient access.

    Subclasses implement :meth:`value` and :meth:`subgradient`; both must
    accept a single vector or a stack of vectors.
    """

    def value(self, x):
        raise NotImplementedError

    def subgradient(self, x):
        raise NotImplementedError

    def project_zero_set(self, x):
        """Projection onto ``{x : value(x) = 0}`` when a closed form exists."""
        raise NotImplementedError


class ZeroCost(CostFunctional):
    """Cost that vanishes everywhere."""

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0

    def subgradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def project_zero_set(self, x):
        return np.asarray(x, dtype=float)


class FunctionCost(CostFunctional):
    """Wraps plain callables; convenient for tests and custom problems."""

    def __init__(self, value: Callable, subgradient: Callable, projection: Optional[Callable] = None):
        self._value = value
        self._subgradient = subgradient
        self._projection = projection

    def value(self, x):
        return self._value(x)

    def subgradient(self, x):
        return self._subgradient(x)

    def project_zero_set(self, x):
        if self._projection is None:
            raise NotImplementedError
        return self._projection(x)


@dataclass(frozen=True)
class SubgradientDeflection:
    relaxation: float = 0.5

    def __post_init__(self):
        check_relaxation(self.relaxation)

    def __call__(self, cost, x):
        return deflect(cost, self.relaxation, x)


def check_relaxation(mu):
    if not 0 < mu < 2:
        raise ConfigurationError(f"relaxation parameter must lie in (0, 2), got {mu}")


def deflection(value, grad, mu, x):
    """
    ``(mu * value / ||grad||^2) * grad``, or zero where the subgradient vanishes.

    A subgradient counts as zero when its norm is below ``1e-12 (1 + ||x||)``.
    """
    value = np.asarray(value, dtype=float)
    grad = np.asarray(grad, dtype=float)
    x = np.asarray(x, dtype=float)
    norm2 = np.sum(grad * grad, axis=-1)
    tau = 1e-12 * (1.0 + np.linalg.norm(x, axis=-1))
    active = np.sqrt(norm2) > tau
    coef = np.where(active, mu * value / np.where(active, norm2, 1.0), 0.0)
    return coef[..., None] * grad


def deflect(cost: CostFunctional, mu, x):
    check_relaxation(mu)
    return deflection(cost.value(x), cost.subgradient(x), mu, x)


def sapsm_step(cost: CostFunctional, mu, pert, X: BoxSet, psi):
    """``P_X(psi - Phi(psi) + pert)``."""
    psi = np.asarray(psi, dtype=float)
    return project_box(psi - deflect(cost, mu, psi) + pert, X)


class PerturbationGenerator:
    """
    Bounded perturbations ``zeta_i z_i`` for superiorization.

    ``kind="none"`` always returns zero. ``kind="sparsity"`` returns the
    displacement of a reweighted soft-threshold: coordinate ``m`` of ``y`` is
    shrunk by ``zeta_i / (|y_prev[m]| + varsigma)`` where ``y_prev`` is the
    vector the same agent thresholded at the previous call. On the first
    call ``y_prev`` is taken equal to ``y``.
    """

    def __init__(self, kind="sparsity", schedule: Optional[PerturbationSchedule] = None,
                 varsigma=1e-2):
        if kind not in ("none", "sparsity"):
            raise ConfigurationError(f"unknown perturbation kind {kind!r}")
        if varsigma <= 0:
            raise ConfigurationError("varsigma must be positive")
        self.kind = kind
        self.schedule = schedule if schedule is not None else PerturbationSchedule()
        self.varsigma = float(varsigma)
        self.previous = None

    def reset(self):
        self.previous = None

    def bound(self, dim: int) -> float:
        """Uniform bound ``r`` on ``||z_i||``."""
        return 0.0 if self.kind == "none" else math.sqrt(dim) / self.varsigma

    def __call__(self, i, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "none":
            return np.zeros_like(y)
        zeta = self.schedule(i)
        prev = y if self.previous is None else self.previous
        t = zeta / (np.abs(prev) + self.varsigma)
        self.previous = y.copy()
        shrunk = np.sign(y) * np.maximum(np.abs(y) - t, 0.0)
        return shrunk - y


def sparsity_perturbation(gen: PerturbationGenerator, i, y):
    return gen(i, y)


class QfmsOperator:
    """
    Generic local operator ``x_{i+1} = apply(i, x_i)``.

    ``slack(i)`` is a diagnostic upper bound on the quasi-Fejér slack at
    step ``i``; it is never used by the iteration itself.
    """

    def __init__(self, apply: Callable, slack: Optional[Callable] = None):
        self._apply = apply
        self._slack = slack

    def apply(self, i, x):
        return self._apply(i, x)

    def slack(self, i):
        return 0.0 if self._slack is None else self._slack(i)

    def trajectory(self, x0, steps):
        xs = [np.asarray(x0, dtype=float)]
        for i in range(steps):
            xs.append(self.apply(i, xs[-1]))
        return np.array(xs)


class SapsmOperator(QfmsOperator):
    """
    Superiorized APSM as a QFMS generator.

    Parameters
    ----------
    costs : callable
        ``costs(i, x)`` returns the :class:`CostFunctional` for step ``i``;
        it may depend on the current iterate (anchored costs).
    box : BoxSet
    mu : float
    perturbation : PerturbationGenerator, optional
    """

    def __init__(self, costs, box: BoxSet, mu=0.5, perturbation=None):
        check_relaxation(mu)
        self.costs = costs
        self.box = box
        self.mu = mu
        self.perturbation = perturbation or PerturbationGenerator("none")
        super().__init__(self._step, self._budget)

    def _step(self, i, x):
        cost = self.costs(i, x)
        y = x - deflect(cost, self.mu, x)
        return project_box(y + self.perturbation(i, y), self.box)

    def _budget(self, i):
        r = self.perturbation.bound(self.box.dim)
        if r == 0:
            return 0.0
        zeta = self.perturbation.schedule(i)
        D = self.box.diameter
        return 2 * zeta * r * D + zeta**2 * r**2


def quasi_fejer_increments(trajectory, target):
    """``max(0, ||x_{i+1} - x*||^2 - ||x_i - x*||^2)`` along a trajectory."""
    d2 = np.sum((np.asarray(trajectory) - target) ** 2, axis=-1)
    return np.maximum(np.diff(d2, axis=0), 0.0)
