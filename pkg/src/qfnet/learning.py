"""
Distributed regression application: ground-truth fields, random Fourier
feature models, hyperslab costs and the NMSE metric.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigurationError, stream
from .operators import CostFunctional

log = logging.getLogger(__name__)

DOMAIN_SIDE = 1000.0


#%% FEATURES

@dataclass(frozen=True)
class FeatureMap:
    """
    Random Fourier features of a Gaussian kernel on ``R^3``.

    ``phi_j(x) = amplitude * cos(<omega_j, x> + b_j)`` with
    ``omega_j ~ N(0, I / lengthscale^2)``. With ``sign_split`` the map is
    ``[phi, -phi]`` so that nonnegative coefficients represent any signed
    combination of the base features.
    """

    frequencies: np.ndarray  # (K, 3)
    phases: np.ndarray  # (K,)
    amplitude: float = 1.0
    sign_split: bool = False

    @classmethod
    def from_seed(cls, seed, n_features, lengthscale=300.0, amplitude=1.0, sign_split=False):
        """
        Draw the base features from ``seed``; the same seed always gives the
        same features whatever the sign split.
        """
        if n_features < 1:
            raise ConfigurationError("need at least one feature")
        if lengthscale <= 0:
            raise ConfigurationError("lengthscale must be positive")
        rng = stream(seed, 0xFEA7)
        omega = rng.standard_normal((n_features, 3)) / lengthscale
        b = rng.uniform(0.0, 2 * np.pi, n_features)
        return cls(omega, b, float(amplitude), bool(sign_split))

    @property
    def n_base(self) -> int:
        return self.phases.size

    @property
    def dim(self) -> int:
        return 2 * self.n_base if self.sign_split else self.n_base

    def with_sign_split(self, sign_split: bool) -> "FeatureMap":
        return FeatureMap(self.frequencies, self.phases, self.amplitude, sign_split)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        phi = self.amplitude * np.cos(x @ self.frequencies.T + self.phases)
        return np.concatenate([phi, -phi], axis=-1) if self.sign_split else phi

    def predict(self, h, x):
        """``f_hat(x) = <h, kappa(x)>``; ``h`` may stack several models."""
        return np.asarray(h) @ self(x).T


#%% GROUND TRUTH

class GroundTruthField:
    """
    Smooth field on ``[0, side]^3`` built from Gaussian bumps and mapped
    linearly into ``[0, 1]`` using its range over a dense probe grid.
    """

    def __init__(self, centers, widths, amplitudes, side=DOMAIN_SIDE, probe=24):
        self.centers = np.asarray(centers, dtype=float)
        self.widths = np.asarray(widths, dtype=float)
        self.amplitudes = np.asarray(amplitudes, dtype=float)
        self.side = side
        g = (np.arange(probe) + 0.5) / probe * side
        grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        raw = self._raw(grid)
        self._lo, self._hi = float(raw.min()), float(raw.max())

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        d2 = np.sum((x[..., None, :] - self.centers) ** 2, axis=-1)
        return np.exp(-0.5 * d2 / self.widths**2) @ self.amplitudes

    def __call__(self, x):
        v = (self._raw(x) - self._lo) / (self._hi - self._lo)
        return np.clip(v, 0.0, 1.0)


def synthesize_field(seed, n_bumps=6, side=DOMAIN_SIDE, width_range=(150.0, 400.0)) -> GroundTruthField:
    """Deterministic ground-truth field for a seed."""
    rng = stream(seed, 0xF1E1D)
    centers = rng.uniform(0.0, side, (n_bumps, 3))
    widths = rng.uniform(*width_range, n_bumps)
    amplitudes = rng.uniform(0.3, 1.0, n_bumps) * rng.choice([-1.0, 1.0], n_bumps, p=[0.3, 0.7])
    return GroundTruthField(centers, widths, amplitudes, side=side)


#%% DATASETS

@dataclass(frozen=True)
class Dataset:
    """Locations (meters) and noiseless values in ``[0, 1]``."""

    points: np.ndarray  # (n, 3)
    values: np.ndarray  # (n,)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ConfigurationError("dataset points must have shape (n, 3)")
        if self.values.shape != (self.points.shape[0],):
            raise ConfigurationError("dataset values must match the number of points")

    def __len__(self):
        return self.values.size

    def split(self, n_test, rng):
        """Random disjoint train/test split."""
        if not 0 < n_test < len(self):
            raise ConfigurationError("test size must be between 1 and the dataset size")
        perm = rng.permutation(len(self))
        te, tr = perm[:n_test], perm[n_test:]
        return (Dataset(self.points[tr], self.values[tr]),
                Dataset(self.points[te], self.values[te]))


def sample_field(field, n_points, rng, side=DOMAIN_SIDE) -> Dataset:
    pts = rng.uniform(0.0, side, (n_points, 3))
    return Dataset(pts, field(pts))


def load_dataset_csv(path) -> Dataset:
    """Read ``x1,x2,x3,value`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigurationError(f"dataset {path} is empty")
    try:
        pts = np.array([[float(r["x1"]), float(r["x2"]), float(r["x3"])] for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
    except KeyError as e:
        raise ConfigurationError(f"dataset {path} lacks column {e}") from None
    return Dataset(pts, vals)


def write_dataset_csv(dataset: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "x3", "value"])
        for p, v in zip(dataset.points, dataset.values):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(v))])


def export_testset_csv(path, testset: Dataset, predictions):
    """Write ``x1,x2,x3,f,f_hat_mean`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "x3", "f", "f_hat_mean"])
        for p, v, fh_ in zip(testset.points, testset.values, predictions):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
                        repr(float(v)), repr(float(fh_))])


#%% HYPERSLABS

@dataclass(frozen=True)
class Measurement:
    location: np.ndarray
    value: float


@dataclass(frozen=True)
class Hyperslab:
    """``{h : |<h, direction> - center| <= halfwidth}``."""

    direction: np.ndarray
    center: float
    halfwidth: float

    def __post_init__(self):
        if self.halfwidth < 0:
            raise ConfigurationError("hyperslab halfwidth must be nonnegative")

    def contains(self, h, atol=0.0):
        return abs(float(np.dot(h, self.direction)) - self.center) <= self.halfwidth + atol


def hyperslab_residual(h, direction, center, halfwidth):
    """Signed excess of ``<h, direction> - center`` beyond the slab (0 inside)."""
    r = np.sum(np.asarray(h) * direction, axis=-1) - center
    return np.sign(r) * np.maximum(np.abs(r) - halfwidth, 0.0)


def project_hyperslab_arrays(h, direction, center, halfwidth):
    """
    Projection onto one hyperslab per row.

    Rows with a zero direction are returned unchanged (the slab is then the
    whole space or empty).
    """
    h = np.asarray(h, dtype=float)
    direction = np.asarray(direction, dtype=float)
    n2 = np.sum(direction * direction, axis=-1)
    excess = hyperslab_residual(h, direction, center, halfwidth)
    ok = n2 > 0
    step = np.where(ok, excess / np.where(ok, n2, 1.0), 0.0)
    return h - step[..., None] * direction


def project_hyperslab(h, slab: Hyperslab):
    if not np.any(slab.direction):
        log.debug("zero hyperslab direction; treating the slab as the whole space")
        return np.asarray(h, dtype=float).copy()
    return project_hyperslab_arrays(h, slab.direction, slab.center, slab.halfwidth)


def apsm_cost(h, psi_anchor, slab: Hyperslab):
    """
    ``dist(h, Q) * dist(psi_anchor, Q)`` and a subgradient in ``h``.

    Returns ``(value, subgradient)``.
    """
    h = np.asarray(h, dtype=float)
    dh = h - project_hyperslab(h, slab)
    da = np.asarray(psi_anchor) - project_hyperslab(psi_anchor, slab)
    nh, na = np.linalg.norm(dh), np.linalg.norm(da)
    value = nh * na
    grad = na * dh / nh if nh > 0 else np.zeros_like(h)
    return value, grad


class HyperslabCost(CostFunctional):
    """
    The anchored hyperslab cost, batched over agents.

    ``direction``, ``center``, ``halfwidth`` and ``anchor`` carry one row
    per agent (or a single row).
    """

    def __init__(self, direction, center, halfwidth, anchor):
        self.direction = np.asarray(direction, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.halfwidth = np.asarray(halfwidth, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        self._anchor_dist = np.linalg.norm(anchor - self.project_zero_set(anchor), axis=-1)

    def project_zero_set(self, x):
        return project_hyperslab_arrays(x, self.direction, self.center, self.halfwidth)

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.project_zero_set(x), axis=-1)

    def value(self, x):
        return self.distance(x) * self._anchor_dist

    def subgradient(self, x):
        x = np.asarray(x, dtype=float)
        dx = x - self.project_zero_set(x)
        n = np.linalg.norm(dx, axis=-1)
        scale = np.where(n > 0, self._anchor_dist / np.where(n > 0, n, 1.0), 0.0)
        return scale[..., None] * dx


#%% METRIC

def evaluate_nmse(models, testset, feat: FeatureMap) -> float:
    """
    Mean over test points and agents of ``|f_hat - f|^2 / |f|^2``.

    ``testset`` is a :class:`Dataset` or a ``(points, values)`` pair.
    """
    pts, vals = (testset.points, testset.values) if isinstance(testset, Dataset) else testset
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        raise ConfigurationError("test set is empty")
    pred = np.atleast_2d(feat.predict(np.atleast_2d(models), pts))  # (N, R)
    return float(np.mean((pred - vals) ** 2 / vals**2))


def to_db(e, floor_db=-80.0):
    """``10 log10(e)`` clipped below at ``floor_db``."""
    e = np.asarray(e, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.maximum(10.0 * np.log10(e), floor_db)
    return float(out) if out.ndim == 0 else out


def nonzero_testset(dataset: Dataset, min_abs=0.05) -> Dataset:
    """Drop points whose value is too close to zero for the normalized error."""
    keep = np.abs(dataset.values) >= min_abs
    return Dataset(dataset.points[keep], dataset.values[keep])
