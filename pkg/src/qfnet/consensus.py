"""
The random affine communication model and the baseline consensus schemes.

A scheme turns the broadcast values ``lam`` (shape ``(N, M)``) into
``L(lam) = M lam + n``; the consensus step is then
``psi = (1 - beta) lam + beta L(lam)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigurationError
from .network import NetworkSnapshot


@dataclass(frozen=True)
class CommunicationRealization:
    """
    One draw of the mixing weights and additive noise.

    ``weights`` is ``(N, N)`` when all coordinates share one weight matrix,
    or ``(N, N, M)`` when each coordinate travels over its own realization.
    Rows belong to receivers.
    """

    weights: np.ndarray
    noise: np.ndarray

    def apply(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.weights.ndim == 2:
            return self.weights @ lam + self.noise
        return np.einsum("pqm,qm->pm", self.weights, lam) + self.noise

    def row_sums(self):
        """Row sums, shape ``(N,)`` or ``(N, M)``."""
        return self.weights.sum(axis=1)


class ConsensusScheme:
    """Base class; subclasses provide :meth:`realize` and :meth:`expected_matrix`."""

    kind = "?"

    def realize(self, snapshot: NetworkSnapshot, lam, rng) -> CommunicationRealization:
        raise NotImplementedError

    def expected_matrix(self, snapshot: NetworkSnapshot) -> np.ndarray:
        raise NotImplementedError

    def mix(self, snapshot, lam, beta, rng):
        return mix(self, snapshot, lam, beta, rng)

    def __repr__(self):
        return f"{type(self).__name__}()"


def mix(scheme: ConsensusScheme, snapshot, lam, beta, rng):
    """``(1 - beta) lam + beta (M lam + n)`` for one draw of the scheme."""
    lam = np.asarray(lam, dtype=float)
    if beta == 0:
        return lam.copy()
    if type(scheme).mix is not ConsensusScheme.mix:
        return scheme.mix(snapshot, lam, beta, rng)
    real = scheme.realize(snapshot, lam, rng)
    return (1.0 - beta) * lam + beta * real.apply(lam)


class CentralizedScheme(ConsensusScheme):
    """Perfect noiseless averaging over all agents (CEN)."""

    kind = "CEN"

    def expected_matrix(self, snapshot):
        N = snapshot.n_agents
        return np.full((N, N), 1.0 / N)

    def realize(self, snapshot, lam, rng):
        lam = np.asarray(lam, dtype=float)
        return CommunicationRealization(self.expected_matrix(snapshot), np.zeros_like(lam))


class NoCommunicationScheme(ConsensusScheme):
    """Agents keep their own values (NOC)."""

    kind = "NOC"

    def expected_matrix(self, snapshot):
        return np.eye(snapshot.n_agents)

    def realize(self, snapshot, lam, rng):
        lam = np.asarray(lam, dtype=float)
        return CommunicationRealization(np.eye(snapshot.n_agents), np.zeros_like(lam))

    def mix(self, snapshot, lam, beta, rng):
        # exact, without the rounding of (1 - beta) lam + beta lam
        return np.array(lam, dtype=float)


@dataclass(frozen=True)
class RayleighOutage:
    """
    Outage probability ``1 - exp(-(d/d0)^2 ln(1/(1-p0)))``.

    Under Rayleigh fading the received SNR is exponential with mean
    proportional to ``d^-2``; the single free constant is fixed by the
    requirement ``p(d0) = p0``.
    """

    reference_distance: float = 500.0
    reference_probability: float = 0.2

    def __post_init__(self):
        if self.reference_distance <= 0:
            raise ConfigurationError("reference distance must be positive")
        if not 0 < self.reference_probability < 1:
            raise ConfigurationError("reference probability must lie in (0, 1)")

    def __call__(self, d):
        rate = math.log(1.0 / (1.0 - self.reference_probability))
        return 1.0 - np.exp(-((np.asarray(d, dtype=float) / self.reference_distance) ** 2) * rate)


def bdc_realize(snapshot: NetworkSnapshot, outage, rng) -> CommunicationRealization:
    """
    Digital broadcast: every edge survives independently with probability
    ``1 - p(d)``; receivers average uniformly over themselves and the
    packets they decoded.
    """
    N = snapshot.n_agents
    p = outage(snapshot.distances)
    alive = snapshot.adjacency & (rng.random((N, N)) >= p)
    W = alive | np.eye(N, dtype=bool)
    W = W / W.sum(axis=1, keepdims=True)
    return CommunicationRealization(W, np.zeros((N, 1)))


def _uniform_average_expectation(q):
    """
    Expected uniform-average weights when neighbor ``j`` arrives with
    probability ``q[j]``: returns ``(self_weight, neighbor_weights)``.

    Uses ``E[1/(a+S)] = int_0^1 t^(a-1) E[t^S] dt`` with the probability
    generating function of the Poisson-binomial count ``S``; Gauss-Legendre
    with ``n + 2`` nodes integrates these polynomials exactly.
    """
    n = q.size
    t, w = np.polynomial.legendre.leggauss(n + 2)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    factors = 1.0 - q[None, :] + q[None, :] * t[:, None]  # (K, n)
    G = np.prod(factors, axis=1)
    self_w = float(np.sum(w * G))
    others = G[:, None] / factors  # PGF without j
    nb = q * np.sum((w * t)[:, None] * others, axis=0)
    return self_w, nb


class BroadcastScheme(ConsensusScheme):
    """Digital broadcast with distance-dependent outage (BDC)."""

    kind = "BDC"

    def __init__(self, outage: RayleighOutage | None = None):
        self.outage = outage or RayleighOutage()

    def realize(self, snapshot, lam, rng):
        real = bdc_realize(snapshot, self.outage, rng)
        return CommunicationRealization(real.weights, np.zeros_like(np.asarray(lam, dtype=float)))

    def expected_matrix(self, snapshot):
        N = snapshot.n_agents
        A = np.eye(N)
        p = self.outage(snapshot.distances)
        for r in range(N):
            nbrs = snapshot.in_neighbors(r)
            if nbrs.size == 0:
                continue
            self_w, nb = _uniform_average_expectation(1.0 - p[r, nbrs])
            A[r, r] = self_w
            A[r, nbrs] = nb
        return A

    def __repr__(self):
        return f"BroadcastScheme({self.outage!r})"
