"""Convergence diagnostics evaluated on agent states."""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial.distance import pdist

from ..core import ValidationError
from ..network import AbsoluteProbabilityVector, absolute_probability_sequence

log = logging.getLogger(__name__)


def disagreement(states) -> float:
    """Largest pairwise Euclidean distance between agent states."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    if x.shape[0] < 2:
        return 0.0
    return float(pdist(x).max())


def sparsity_fraction(lam_all, tol=0.0) -> float:
    """Fraction of coordinates with magnitude above ``tol``, averaged over agents."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    lam = np.atleast_2d(np.asarray(lam_all, dtype=float))
    return float(np.mean(np.abs(lam) > tol))


def lyapunov_diagnostic(states, pi, target):
    """
    ``sum_k pi_k ||psi_k - target||^2``.

    Returns ``(value, used_uniform)``; ``pi=None`` falls back to uniform
    weights and flags it.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float))
    d2 = np.sum((x - np.asarray(target, dtype=float)) ** 2, axis=1)
    if pi is None:
        return float(np.mean(d2)), True
    w = pi.weights if isinstance(pi, AbsoluteProbabilityVector) else np.asarray(pi, dtype=float)
    return float(w @ d2), False


def lyapunov_trace(sq_dist, D_sequence):
    """
    Lyapunov values ``V_0 .. V_T`` from squared distances ``(T+1, N)`` and
    the lifted matrices ``D_0 .. D_{T-1}``.

    Falls back to uniform weights when a matrix is not stochastic (the
    second return value is then True).
    """
    sq_dist = np.asarray(sq_dist)
    try:
        pis = absolute_probability_sequence(D_sequence)
    except ValidationError as e:
        log.warning("absolute probability sequence unavailable (%s); using uniform weights", e)
        return sq_dist.mean(axis=1), True
    W = np.array([p.weights for p in pis])
    return np.sum(W * sq_dist, axis=1), False


def positive_increments(values):
    """``max(0, v_{i+1} - v_i)``."""
    return np.maximum(np.diff(np.asarray(values, dtype=float)), 0.0)
