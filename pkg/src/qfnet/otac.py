"""
Over-the-air consensus.

Every transmitter encodes each coordinate of its broadcast value in the
energy of ``B`` random-phase symbols, all transmitters talk at once, and a
receiver recovers a noisy power-weighted sum of its neighbors' values from
the received energy. A short burst of ``B'`` full-power symbols gives the
normalization statistic ``y'``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .consensus import CommunicationRealization, ConsensusScheme
from .core import BoxSet, ConfigurationError


def dbm_to_watts(dbm):
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class OtacConfig:
    """
    Parameters of the OTA-C protocol.

    ``rho`` is the safety factor of the running-mean estimate of
    ``1 / E[y']``; ``bootstrap_gamma`` is used until the first
    normalization statistic has been observed. ``assumed_noise_power``
    lets receivers subtract a wrong noise floor (defaults to the true one).
    ``normalization_period`` refreshes ``y'`` only every that many rounds.
    Link gains have variance ``1 / max(d, min_distance)^2``.
    """

    B: int = 20
    B_prime: int = 40
    noise_power: float = dbm_to_watts(-9.0)
    rho: float = 0.5
    window: int = 50
    bootstrap_gamma: Optional[float] = None
    assumed_noise_power: Optional[float] = None
    normalization_period: int = 1
    min_distance: float = 10.0

    def __post_init__(self):
        if self.B < 1 or self.B_prime < 1:
            raise ConfigurationError("B and B' must be positive integers")
        if self.noise_power < 0:
            raise ConfigurationError("noise power must be nonnegative")
        if not 0 < self.rho < 1:
            raise ConfigurationError("rho must lie in (0, 1)")
        if self.window < 1 or self.normalization_period < 1:
            raise ConfigurationError("window and normalization_period must be positive")
        if self.bootstrap_gamma is not None and self.bootstrap_gamma <= 0:
            raise ConfigurationError("bootstrap gamma must be positive")
        if self.min_distance <= 0:
            raise ConfigurationError("min_distance must be positive")

    @property
    def receiver_noise_power(self):
        return self.noise_power if self.assumed_noise_power is None else self.assumed_noise_power


@dataclass(frozen=True)
class ReceiverStatistics:
    y: np.ndarray  # (..., M)
    y_prime: np.ndarray  # (...)


#%% PHYSICAL LAYER

def unit_phases(shape, rng):
    """I.i.d. symbols uniform on the complex unit circle."""
    return np.exp(2j * np.pi * rng.random(shape))


def complex_gaussian(shape, var, rng):
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    return np.sqrt(np.asarray(var) / 2.0) * (z[..., 0] + 1j * z[..., 1])


def energy(x, P, delta_min, delta_max):
    """``g(x) = P (x - delta_min) / (delta_max - delta_min)``."""
    return P * (x - delta_min) / (delta_max - delta_min)


def encode(lam, P, delta_min, delta_max, B, rng):
    """
    ``B`` symbols ``sqrt(g(lam)) U(b)`` per value.

    ``lam`` may be an array; the symbols are appended as a trailing axis.
    """
    lam = np.asarray(lam, dtype=float)
    assert np.all(lam >= delta_min - 1e-12) and np.all(lam <= delta_max + 1e-12), \
        "value outside the encoding range"
    amp = np.sqrt(np.maximum(energy(lam, np.asarray(P, dtype=float), delta_min, delta_max), 0.0))
    return amp[..., None] * unit_phases(lam.shape + (B,), rng)


def wmac_superpose(symbols, gains, noise):
    """``q = sum_k xi_k s_k + w`` with transmitters along the leading axis."""
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        return np.asarray(noise, dtype=complex)
    return np.sum(np.asarray(gains) * symbols, axis=0) + noise


def receiver_statistics(q, q_prime, noise_power, delta_min, delta_max) -> ReceiverStatistics:
    """
    Energy statistics of the received blocks.

    Parameters
    ----------
    q : ndarray, shape (..., M, B)
        Data symbols, one block of ``B`` per coordinate.
    q_prime : ndarray, shape (..., B')
        Normalization burst.
    noise_power : float
        ``E|w|^2`` known to the receiver.
    """
    delta = delta_max - delta_min
    y_prime = np.mean(np.abs(q_prime) ** 2, axis=-1) - noise_power
    y = delta * np.mean(np.abs(q) ** 2, axis=-1) - delta * noise_power \
        + delta_min * np.asarray(y_prime)[..., None]
    return ReceiverStatistics(y=y, y_prime=y_prime)


def otac_update(lam, stats: ReceiverStatistics, gamma, beta):
    """``(1 - beta gamma y') lam + beta gamma y`` coordinate-wise."""
    lam = np.asarray(lam, dtype=float)
    bg = beta * np.asarray(gamma, dtype=float)
    yp = np.asarray(stats.y_prime, dtype=float)
    return (1.0 - bg * yp)[..., None] * lam + bg[..., None] * np.asarray(stats.y)


def estimate_gamma(history, window, rho=0.9, bootstrap=None):
    """
    ``rho / mean(last window samples of y')``.

    Falls back to ``bootstrap`` when there is no usable history.
    """
    if not 0 < rho < 1:
        raise ConfigurationError("rho must lie in (0, 1)")
    h = list(history)[-window:]
    if not h:
        return bootstrap
    m = float(np.mean(h))
    if m <= 0:
        return bootstrap
    return rho / m


#%% ONE PROTOCOL ROUND

@dataclass(frozen=True)
class OtacRound:
    """Everything a receiver-side simulation of one iteration produces."""

    stats: ReceiverStatistics  # y (N, M), y_prime (N,)
    weights: np.ndarray  # c[r, k, m]
    weights_prime: np.ndarray  # c'[r, k]
    receiving: np.ndarray


def noise_terms(rnd: OtacRound, lam):
    """Return ``(eta, eta_prime)`` from the decomposition of the statistics."""
    lam = np.asarray(lam, dtype=float)
    eta = rnd.stats.y - np.einsum("rkm,km->rm", rnd.weights, lam)
    eta_p = rnd.stats.y_prime - rnd.weights_prime.sum(axis=1)
    return eta, eta_p


def simulate_round(adjacency, channel_var, powers, lam, box: BoxSet, config: OtacConfig,
                   rng, receiving=None) -> OtacRound:
    """
    Symbol-level simulation of one OTA-C round for every receiver.

    Parameters
    ----------
    adjacency : ndarray of bool, shape (N, N)
        ``adjacency[r, k]`` when ``r`` hears ``k``.
    channel_var : ndarray, shape (N, N)
        ``E|xi_kr|^2`` at ``[r, k]``.
    powers : ndarray, shape (N,)
    lam : ndarray, shape (N, M)
    """
    lam = np.asarray(lam, dtype=float)
    N, M = lam.shape
    B, Bp = config.B, config.B_prime
    rx, tx = np.nonzero(adjacency)
    var = channel_var[rx, tx]

    s = encode(lam, powers[:, None], box.lower, box.upper, B, rng)  # (N, M, B)
    xi = complex_gaussian((rx.size, M, B), var[:, None, None], rng)
    q = complex_gaussian((N, M, B), config.noise_power, rng)
    np.add.at(q, rx, xi * s[tx])

    s_p = np.sqrt(powers)[:, None] * unit_phases((N, Bp), rng)
    xi_p = complex_gaussian((rx.size, Bp), var[:, None], rng)
    q_p = complex_gaussian((N, Bp), config.noise_power, rng)
    np.add.at(q_p, rx, xi_p * s_p[tx])

    stats = receiver_statistics(q, q_p, config.receiver_noise_power, box.lower, box.upper)
    c = np.zeros((N, N, M))
    c[rx, tx] = powers[tx, None] * np.mean(np.abs(xi) ** 2, axis=-1)
    c_p = np.zeros((N, N))
    c_p[rx, tx] = powers[tx] * np.mean(np.abs(xi_p) ** 2, axis=-1)
    if receiving is None:
        receiving = np.ones(N, dtype=bool)
    return OtacRound(stats=stats, weights=c, weights_prime=c_p, receiving=np.asarray(receiving))


def implied_realization(rnd: OtacRound, lam, gamma) -> CommunicationRealization:
    """
    Write a round as ``M lam + n``.

    Receiver ``p`` gets self weight ``1 - gamma_p sum_k c'_kp``, neighbor
    weights ``gamma_p c_kp`` and noise ``gamma_p (eta_p - eta'_p lam_p)``.
    Non-receivers keep their own value.
    """
    lam = np.asarray(lam, dtype=float)
    N, M = lam.shape
    gamma = np.where(rnd.receiving, gamma, 0.0)
    W = gamma[:, None, None] * rnd.weights
    idx = np.arange(N)
    W[idx, idx, :] += (1.0 - gamma * rnd.weights_prime.sum(axis=1))[:, None]
    eta, eta_p = noise_terms(rnd, lam)
    noise = gamma[:, None] * (eta - eta_p[:, None] * lam)
    return CommunicationRealization(W, noise)


class OtacScheme(ConsensusScheme):
    """
    OTA-C consensus as a stateful scheme.

    Keeps, per agent, the window of past normalization statistics used to
    pick ``gamma`` and the last ``y'`` (for amortized normalization bursts).
    """

    kind = "OTAC"

    def __init__(self, config: OtacConfig, box: BoxSet, powers):
        self.config = config
        self.box = box
        self.powers = np.asarray(powers, dtype=float)
        N = self.powers.size
        self.history = [deque(maxlen=config.window) for _ in range(N)]
        self.gamma = np.full(N, np.nan)
        self._last_y_prime = np.zeros(N)
        self._round_index = 0
        self.last_round: Optional[OtacRound] = None

    def _bootstrap(self):
        if self.config.bootstrap_gamma is not None:
            return self.config.bootstrap_gamma
        return None

    def current_gamma(self, y_prime):
        """Gamma per agent from past statistics; first contact uses the bootstrap."""
        g = np.empty(self.powers.size)
        for k, h in enumerate(self.history):
            est = estimate_gamma(h, self.config.window, self.config.rho, self._bootstrap())
            if est is None:
                # no history and no configured bootstrap: rho over the current statistic
                est = self.config.rho / y_prime[k] if y_prime[k] > 0 else 0.0
            g[k] = est
        return g

    def channel_variance(self, snapshot):
        d = np.maximum(snapshot.distances, self.config.min_distance)
        return np.where(snapshot.adjacency, 1.0 / d**2, 0.0)

    def _run(self, snapshot, lam, rng):
        var = self.channel_variance(snapshot)
        rnd = simulate_round(snapshot.adjacency, var, self.powers, lam, self.box,
                             self.config, rng, receiving=snapshot.receiving)
        y_prime = np.maximum(rnd.stats.y_prime, 0.0)
        refresh = self._round_index % self.config.normalization_period == 0
        if refresh:
            self._last_y_prime = np.where(snapshot.receiving, y_prime, self._last_y_prime)
        y_prime = self._last_y_prime.copy()
        gamma = self.current_gamma(y_prime)
        gamma = np.where(snapshot.receiving, gamma, 0.0)
        if refresh:
            for k in np.flatnonzero(snapshot.receiving):
                self.history[k].append(y_prime[k])
        self._round_index += 1
        self.gamma = gamma
        rnd = OtacRound(stats=ReceiverStatistics(np.where(snapshot.receiving[:, None], rnd.stats.y, 0.0),
                                                 np.where(snapshot.receiving, y_prime, 0.0)),
                        weights=rnd.weights, weights_prime=rnd.weights_prime,
                        receiving=snapshot.receiving)
        self.last_round = rnd
        return rnd, gamma

    def realize(self, snapshot, lam, rng):
        lam = np.asarray(lam, dtype=float)
        rnd, gamma = self._run(snapshot, lam, rng)
        return implied_realization(rnd, lam, gamma)

    def mix(self, snapshot, lam, beta, rng):
        lam = np.asarray(lam, dtype=float)
        rnd, gamma = self._run(snapshot, lam, rng)
        return otac_update(lam, rnd.stats, gamma, beta)

    def expected_matrix(self, snapshot, gamma=None):
        """
        Expected implied mixing matrix for the given (or last used) gammas:
        neighbor weight ``gamma_r P_k E|xi_kr|^2`` and the complement on the
        diagonal.
        """
        gamma = self.gamma if gamma is None else np.asarray(gamma)
        gamma = np.nan_to_num(np.where(snapshot.receiving, gamma, 0.0))
        N = snapshot.n_agents
        A = gamma[:, None] * self.powers[None, :] * self.channel_variance(snapshot)
        A[np.arange(N), np.arange(N)] = 1.0 - A.sum(axis=1)
        return A


#%% MONTE-CARLO ORACLE

@dataclass(frozen=True)
class UnbiasednessReport:
    """Summary of repeated receptions at a single receiver."""

    draws: int
    mean_y: np.ndarray  # (M,)
    expected_y: np.ndarray
    var_y: np.ndarray
    mean_weight_sum: float  # self weight + neighbor weights of the implied row
    se_weight_sum: float
    eta_mean: np.ndarray  # (M,)
    eta_se: np.ndarray
    eta_prime_mean: float
    eta_prime_se: float
    scale: np.ndarray  # sum_k E[nu_k] |lam_k|, per coordinate

    @property
    def relative_error(self) -> float:
        """Worst coordinate of ``|mean_y - expected_y| / (scale + tiny)``."""
        return float(np.max(np.abs(self.mean_y - self.expected_y) / (self.scale + 1e-300)))

    @property
    def eta_z(self) -> np.ndarray:
        return np.append(self.eta_mean / self.eta_se, self.eta_prime_mean / self.eta_prime_se)


def star_unbiasedness(lam, powers, channel_var, box: BoxSet, B=20, B_prime=40,
                      noise_power=dbm_to_watts(-9.0), gamma=None, draws=100_000,
                      rng=None, chunk=10_000) -> UnbiasednessReport:
    """
    Repeat one reception at a receiver that hears ``K`` transmitters.

    ``lam`` has shape ``(K, M)``; ``powers`` and ``channel_var`` (the
    ``E|xi|^2`` of each link) have shape ``(K,)``. The expected statistic is
    ``sum_k P_k E|xi_k|^2 lam_k``. ``gamma`` defaults to half the inverse of
    ``E[y']`` and only matters for the implied self weight.
    """
    lam = np.asarray(lam, dtype=float)
    P = np.asarray(powers, dtype=float)
    var = np.asarray(channel_var, dtype=float)
    K, M = lam.shape
    rng = rng if rng is not None else np.random.default_rng()
    nu = P * var
    expected = nu @ lam
    if gamma is None:
        gamma = 0.5 / nu.sum()

    acc = {k: [] for k in ("y", "ws", "eta", "eta_p")}
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        s = encode(np.broadcast_to(lam, (n, K, M)), P[:, None], box.lower, box.upper, B, rng)
        xi = complex_gaussian((n, K, M, B), var[:, None, None], rng)
        q = np.sum(xi * s, axis=1) + complex_gaussian((n, M, B), noise_power, rng)
        sp = np.sqrt(P)[:, None] * unit_phases((n, K, B_prime), rng)
        xip = complex_gaussian((n, K, B_prime), var[:, None], rng)
        qp = np.sum(xip * sp, axis=1) + complex_gaussian((n, B_prime), noise_power, rng)
        st = receiver_statistics(q, qp, noise_power, box.lower, box.upper)
        c = P[:, None] * np.mean(np.abs(xi) ** 2, axis=-1)  # (n, K, M)
        cp = P * np.mean(np.abs(xip) ** 2, axis=-1)  # (n, K)
        acc["y"].append(st.y)
        # implied row: self 1 - gamma sum c', neighbors gamma c (coordinate 0)
        acc["ws"].append(1.0 - gamma * cp.sum(axis=1) + gamma * c[:, :, 0].sum(axis=1))
        acc["eta"].append(st.y - np.einsum("nkm,km->nm", c, lam))
        acc["eta_p"].append(st.y_prime - cp.sum(axis=1))
        done += n
    y = np.concatenate(acc["y"])
    ws = np.concatenate(acc["ws"])
    eta = np.concatenate(acc["eta"])
    eta_p = np.concatenate(acc["eta_p"])
    se = lambda a: a.std(axis=0, ddof=1) / np.sqrt(a.shape[0])
    return UnbiasednessReport(
        draws=draws, mean_y=y.mean(axis=0), expected_y=expected, var_y=y.var(axis=0, ddof=1),
        mean_weight_sum=float(ws.mean()), se_weight_sum=float(se(ws)),
        eta_mean=eta.mean(axis=0), eta_se=se(eta),
        eta_prime_mean=float(eta_p.mean()), eta_prime_se=float(se(eta_p)),
        scale=nu @ np.abs(lam))
