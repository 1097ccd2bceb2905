"""
Random time-varying directed geometric networks.

Conventions: agents are indexed ``0..N-1``; an edge ``(l, k)`` means agent
``k`` hears agent ``l``; weight matrices are indexed ``A[receiver, sender]``
so that every row belongs to one receiving agent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConfigurationError, ValidationError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class NetworkSnapshot:
    """One realization of the communication graph and its expected weights."""

    n_agents: int
    adjacency: np.ndarray  # bool, adjacency[k, l] <=> edge l -> k
    expected_weights: np.ndarray
    min_weight: float
    transmitting: np.ndarray  # bool, per agent role this round
    receiving: np.ndarray
    distances: Optional[np.ndarray] = None
    received_power: Optional[np.ndarray] = None  # P_l / d(l,k)^2 at [k, l]

    @property
    def edges(self) -> frozenset:
        """Directed edges as ``(sender, receiver)`` pairs."""
        k, l = np.nonzero(self.adjacency)
        return frozenset(zip(l.tolist(), k.tolist()))

    def in_neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[k])

    def validate(self, tol=STOCHASTIC_TOL):
        """Check row-stochasticity, graph compliance and the weight floor."""
        A = self.expected_weights
        N = self.n_agents
        if A.shape != (N, N):
            raise ValidationError(f"weights must be {N}x{N}")
        if np.any(A < 0):
            raise ValidationError("weights must be nonnegative")
        if np.max(np.abs(A.sum(axis=1) - 1.0)) > tol:
            raise ValidationError("weights are not row-stochastic")
        support = self.adjacency | np.eye(N, dtype=bool)
        if np.any((A > 0) != support):
            raise ValidationError("weights are not compliant with the graph")
        if np.any(A[support] < self.min_weight) or self.min_weight <= 0:
            raise ValidationError("weight floor violated")
        return self


@dataclass(frozen=True)
class AbsoluteProbabilityVector:
    weights: np.ndarray
    floor: float

    def __post_init__(self):
        w = self.weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValidationError("absolute probability vector must be stochastic")


@dataclass(frozen=True)
class GeometricNetworkModel:
    """
    Agents in the cube ``[0, side]^3``; ``l`` reaches ``k`` when the mean
    received power ``P_l / d^2`` exceeds ``power_threshold``. Distances
    below ``min_distance`` (the near-field reference) count as
    ``min_distance`` in the path loss.
    """

    transmit_powers: np.ndarray
    power_threshold: float
    side: float = 1000.0
    duplex: str = "half"
    weight_floor: float = 0.05
    min_distance: float = 10.0

    def __post_init__(self):
        P = np.asarray(self.transmit_powers, dtype=float)
        object.__setattr__(self, "transmit_powers", P)
        if P.ndim != 1 or P.size == 0:
            raise ConfigurationError("network needs at least one agent")
        if np.any(P <= 0):
            raise ConfigurationError("transmit powers must be positive")
        if self.power_threshold <= 0:
            raise ConfigurationError("power threshold must be positive")
        if self.duplex not in ("full", "half"):
            raise ConfigurationError(f"duplex must be 'full' or 'half', got {self.duplex!r}")
        if not 0 < self.weight_floor < 1:
            raise ConfigurationError("weight_floor must lie in (0, 1)")
        if self.min_distance <= 0:
            raise ConfigurationError("min_distance must be positive")

    @property
    def n_agents(self) -> int:
        return self.transmit_powers.size

    @classmethod
    def with_random_powers(cls, n_agents, rng, power_range=(1.0, 10.0), **kwargs):
        """Draw transmit powers log-uniformly from ``power_range`` (watts)."""
        if n_agents < 1:
            raise ConfigurationError("network needs at least one agent")
        lo, hi = power_range
        if not 0 < lo <= hi:
            raise ConfigurationError("power range must satisfy 0 < lo <= hi")
        P = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n_agents))
        return cls(transmit_powers=P, **kwargs)

    def reach_radius(self) -> np.ndarray:
        """Per-agent transmission radius implied by the threshold."""
        return np.sqrt(self.transmit_powers / self.power_threshold)


def pairwise_distances(positions) -> np.ndarray:
    x = np.asarray(positions, dtype=float)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def power_weights(adjacency, received_power, floor=0.05) -> np.ndarray:
    """
    Row-normalized received powers.

    Each receiver keeps half of its weight on itself and splits the rest in
    proportion to received power; the result is then blended with uniform
    weights over the row support so that every nonzero entry is at least
    ``floor / (degree + 1)``.
    """
    N = adjacency.shape[0]
    A = np.zeros((N, N))
    W = np.where(adjacency, received_power, 0.0)
    total = W.sum(axis=1)
    has = total > 0
    A[has] = 0.5 * W[has] / total[has, None]
    A[np.arange(N), np.arange(N)] = np.where(has, 0.5, 1.0)
    support = adjacency | np.eye(N, dtype=bool)
    uniform = support / support.sum(axis=1, keepdims=True)
    return (1.0 - floor) * A + floor * uniform


def sample_roles(n_agents, duplex, rng):
    """Transmit/receive flags; half duplex flips a fair coin per agent."""
    if duplex == "full":
        ones = np.ones(n_agents, dtype=bool)
        return ones, ones.copy()
    tx = rng.random(n_agents) < 0.5
    return tx, ~tx


def sample_snapshot(model: GeometricNetworkModel, positions, rng,
                    weight_rule: Optional[Callable] = None) -> NetworkSnapshot:
    """
    Draw one network realization.

    Parameters
    ----------
    model : GeometricNetworkModel
    positions : ndarray, shape (N, 3)
        Agent locations inside the cube.
    rng : numpy.random.Generator
        Used for the half-duplex roles.
    weight_rule : callable, optional
        ``weight_rule(adjacency, received_power) -> A``. Defaults to
        :func:`power_weights` with the model's floor.
    """
    positions = np.asarray(positions, dtype=float)
    N = model.n_agents
    if positions.shape != (N, 3):
        raise ConfigurationError(f"expected positions of shape ({N}, 3), got {positions.shape}")
    if np.any(positions < 0) or np.any(positions > model.side):
        raise ConfigurationError("positions must lie inside the domain")

    d = pairwise_distances(positions)
    rp = model.transmit_powers[None, :] / np.maximum(d, model.min_distance) ** 2
    np.fill_diagonal(rp, 0.0)
    tx, rx = sample_roles(N, model.duplex, rng)
    adj = (rp > model.power_threshold) & rx[:, None] & tx[None, :]
    np.fill_diagonal(adj, False)

    if weight_rule is None:
        A = power_weights(adj, rp, model.weight_floor)
    else:
        A = np.asarray(weight_rule(adj, rp), dtype=float)
    min_weight = float(A[A > 0].min())
    return NetworkSnapshot(n_agents=N, adjacency=adj, expected_weights=A,
                           min_weight=min_weight, transmitting=tx, receiving=rx,
                           distances=d, received_power=rp)


def check_strong_connectivity(A) -> Optional[int]:
    """
    Smallest ``n <= N`` such that ``A^n`` is entrywise positive, else ``None``.

    Uses boolean reachability so the answer does not depend on rounding.
    """
    B = np.asarray(A) > 0
    N = B.shape[0]
    Bi = B.astype(np.int64)
    P = B.copy()
    for n in range(1, N + 1):
        if P.all():
            return n
        P = (P.astype(np.int64) @ Bi) > 0
    return None


def lifted_mixing_matrix(A, beta) -> np.ndarray:
    """``D = (1 - beta) I + beta A`` for a snapshot or a weight matrix."""
    if isinstance(A, NetworkSnapshot):
        A = A.expected_weights
    A = np.asarray(A, dtype=float)
    if not 0 < beta <= 1:
        raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
    return (1.0 - beta) * np.eye(A.shape[0]) + beta * A


def absolute_probability_sequence(D_sequence: Sequence[np.ndarray], horizon=None,
                                  tol=1e-10) -> list:
    """
    Backward recursion ``pi_i^T = pi_{i+1}^T D_i`` from a uniform terminal vector.

    Returns ``horizon + 1`` vectors ``pi_0 .. pi_T``.
    """
    T = len(D_sequence) if horizon is None else int(horizon)
    if T > len(D_sequence):
        raise ConfigurationError("horizon exceeds the number of supplied matrices")
    if T == 0:
        raise ConfigurationError("horizon must be positive")
    N = np.asarray(D_sequence[0]).shape[0]
    pis = [None] * (T + 1)
    pi = np.full(N, 1.0 / N)
    pis[T] = AbsoluteProbabilityVector(pi, float(pi.min()))
    for i in range(T - 1, -1, -1):
        D = np.asarray(D_sequence[i], dtype=float)
        if D.shape != (N, N) or np.any(D < 0) or np.max(np.abs(D.sum(axis=1) - 1)) > tol:
            raise ValidationError(f"matrix {i} is not row-stochastic")
        if np.all(pi == pi[0]) and np.max(np.abs(D.sum(axis=0) - 1)) <= 1e-12:
            pass  # doubly stochastic: the uniform vector is carried over exactly
        else:
            pi = pi @ D
            pi = pi / pi.sum()
        pis[i] = AbsoluteProbabilityVector(pi, float(pi.min()))
    return pis


def write_snapshot_csv(snapshot: NetworkSnapshot, path):
    """Dump edges as ``from,to,expected_weight`` rows (0-based agent ids)."""
    A = snapshot.expected_weights
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from", "to", "expected_weight"])
        for l, k in sorted(snapshot.edges):
            w.writerow([l, k, repr(float(A[k, l]))])
