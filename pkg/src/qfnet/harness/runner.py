"""
The adapt-then-combine iteration loop, metric recording and persistence.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..consensus import (BroadcastScheme, CentralizedScheme, NoCommunicationScheme,
                         RayleighOutage)
from ..core import BoxSet, NumericalError, project_box, stream
from ..learning import (FeatureMap, HyperslabCost, load_dataset_csv, nonzero_testset,
                        sample_field, synthesize_field, to_db)
from ..network import GeometricNetworkModel, lifted_mixing_matrix, sample_snapshot, write_snapshot_csv
from ..operators import PerturbationGenerator, ZeroCost, deflection
from ..otac import OtacConfig, OtacScheme, dbm_to_watts
from .config import OUTPUT_ENV, ExperimentConfig
from .diagnostics import disagreement, lyapunov_trace, positive_increments, sparsity_fraction

log = logging.getLogger(__name__)

COLUMNS = ("iteration", "nmse_db", "disagreement", "cost", "sparsity", "lyapunov", "qf_slack")

# stream purposes under (seed, run, purpose, ...)
_POWERS, _NETWORK, _CHANNEL, _AGENT, _INIT, _RELOCATE, _BOOTSTRAP = range(7)


@dataclass
class RunMetrics:
    """Per-iteration records; row ``i`` describes the state after ``i + 1`` updates."""

    nmse_db: np.ndarray
    disagreement: np.ndarray
    cost: np.ndarray
    sparsity: np.ndarray
    lyapunov: np.ndarray
    qf_slack: np.ndarray
    local_distance: Optional[np.ndarray] = None  # (T, N) dist(psi_k,i, Q_k,i)
    initial_disagreement: float = 0.0
    final_states: Optional[np.ndarray] = None
    uniform_pi_fallback: bool = False
    telemetry: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.nmse_db.size

    def rows(self):
        for i in range(self.horizon):
            yield (i + 1, self.nmse_db[i], self.disagreement[i], self.cost[i],
                   self.sparsity[i], self.lyapunov[i], self.qf_slack[i])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def aggregate(cls, runs) -> "RunMetrics":
        """Per-iteration mean across runs."""
        runs = list(runs)
        mean = lambda name: np.mean([getattr(r, name) for r in runs], axis=0)
        return cls(nmse_db=mean("nmse_db"), disagreement=mean("disagreement"), cost=mean("cost"),
                   sparsity=mean("sparsity"), lyapunov=mean("lyapunov"), qf_slack=mean("qf_slack"),
                   initial_disagreement=float(np.mean([r.initial_disagreement for r in runs])),
                   uniform_pi_fallback=any(r.uniform_pi_fallback for r in runs))


#%% PROBLEM SETUP

@dataclass
class Problem:
    """Everything about the task that is shared by all runs of a config."""

    box: BoxSet
    dim: int
    features: Optional[FeatureMap] = None
    train_points: Optional[np.ndarray] = None
    train_values: Optional[np.ndarray] = None
    test_features: Optional[np.ndarray] = None  # (R, dim)
    test_values: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None
    slab_directions: Optional[np.ndarray] = None  # (N, S, dim)
    slab_centers: Optional[np.ndarray] = None  # (N, S)


def build_problem(cfg: ExperimentConfig) -> Problem:
    p = cfg.problem
    box = BoxSet(0.0, 1.0, 1) if cfg.sparse else BoxSet(-1.0, 1.0, 1)
    if p.kind == "regression":
        base = cfg.dim // 2
        feat = FeatureMap.from_seed(p.field_seed, base, p.lengthscale, p.amplitude, sign_split=cfg.sparse)
        rng = stream(p.field_seed, 0xDA7A)
        if p.dataset_csv:
            data = load_dataset_csv(p.dataset_csv)
        else:
            data = sample_field(synthesize_field(p.field_seed, p.n_bumps, cfg.network.side),
                                p.n_points, rng, cfg.network.side)
        train, test = data.split(p.n_test, rng)
        test = nonzero_testset(test, p.test_min_abs)
        box = BoxSet(box.lower, box.upper, feat.dim)
        return Problem(box=box, dim=feat.dim, features=feat, train_points=train.points,
                       train_values=train.values, test_features=feat(test.points),
                       test_values=test.values)
    box = BoxSet(box.lower, box.upper, cfg.dim)
    if p.kind == "idle":
        return Problem(box=box, dim=cfg.dim)
    rng = stream(p.field_seed, 0x5147)
    target = rng.uniform(0.1, 0.9, cfg.dim)
    d = rng.standard_normal((cfg.n_agents, p.n_slabs, cfg.dim))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    centers = d @ target + 0.9 * p.slab_halfwidth * rng.uniform(-1, 1, (cfg.n_agents, p.n_slabs))
    return Problem(box=box, dim=cfg.dim, target=target, slab_directions=d, slab_centers=centers)


def build_scheme(cfg: ExperimentConfig, box: BoxSet, model: GeometricNetworkModel, run: int):
    if cfg.scheme == "CEN":
        return CentralizedScheme()
    if cfg.scheme == "NOC":
        return NoCommunicationScheme()
    if cfg.scheme == "BDC":
        return BroadcastScheme(RayleighOutage(cfg.bdc.reference_distance, cfg.bdc.reference_probability))
    o = cfg.otac
    noise = dbm_to_watts(o.noise_power_dbm)
    boot = o.bootstrap_gamma
    if boot is None:
        boot = o.rho / expected_normalization(model, stream(cfg.seed, run, _BOOTSTRAP))
    assumed = None if o.assumed_noise_power_dbm is None else dbm_to_watts(o.assumed_noise_power_dbm)
    oc = OtacConfig(B=o.B, B_prime=o.B_prime, noise_power=noise, rho=o.rho, window=o.window,
                    bootstrap_gamma=boot, assumed_noise_power=assumed,
                    normalization_period=o.normalization_period, min_distance=cfg.network.min_distance)
    return OtacScheme(oc, box, model.transmit_powers)


def expected_normalization(model: GeometricNetworkModel, rng, draws=64) -> float:
    """
    Prior guess of ``E[y']``: the mean received power summed over in-range
    transmitters, for agents at uniform positions.
    """
    tot = []
    for _ in range(draws):
        pos = rng.uniform(0, model.side, (model.n_agents, 3))
        snap = sample_snapshot(model, pos, rng)
        rp = np.where(snap.adjacency, snap.received_power, 0.0).sum(axis=1)
        tot.extend(rp[snap.receiving])
    m = float(np.mean(tot)) if tot else 0.0
    return m if m > 0 else model.power_threshold


#%% ONE RUN

def run_single(cfg: ExperimentConfig, run: int, problem: Optional[Problem] = None,
               out_dir: Optional[Path] = None) -> RunMetrics:
    """Simulate one independent run of ``cfg``."""
    problem = problem or build_problem(cfg)
    N, T, box = cfg.n_agents, cfg.horizon, problem.box
    p = cfg.problem
    sch = cfg.schedules
    seed = cfg.seed

    model = GeometricNetworkModel.with_random_powers(
        N, stream(seed, run, _POWERS), tuple(cfg.network.power_range),
        power_threshold=cfg.network.power_threshold, side=cfg.network.side,
        duplex=cfg.network.duplex, weight_floor=cfg.network.weight_floor,
        min_distance=cfg.network.min_distance)
    scheme = build_scheme(cfg, box, model, run)
    net_rng = stream(seed, run, _NETWORK)
    chan_rng = stream(seed, run, _CHANNEL)
    agent_rng = [stream(seed, run, _AGENT, k) for k in range(N)]
    reloc_rng = stream(seed, run, _RELOCATE)
    pert = PerturbationGenerator("sparsity" if cfg.sparse else "none", sch.perturbation, sch.varsigma)

    if cfg.init == "random":
        psi = stream(seed, run, _INIT).uniform(box.lower, box.upper, (N, problem.dim))
    else:
        psi = np.zeros((N, problem.dim))

    track = problem.target is not None
    sq_dist = [np.sum((psi - problem.target) ** 2, axis=1)] if track else None
    D_seq = [] if track else None

    out = {c: np.empty(T) for c in ("nmse_db", "disagreement", "cost", "sparsity")}
    local_dist = np.empty((T, N))
    telemetry = []
    positions = np.zeros((N, 3))
    direction = center = None
    initial = disagreement(psi)

    for i in range(T):
        # measurements for this iteration come before the local step
        if i == 0 or reloc_rng.random() < 1.0 / p.relocation_gap:
            direction, center, positions = _measure(cfg, problem, agent_rng, positions)

        if direction is None:
            cost = ZeroCost()
            local_dist[i] = 0.0
            y = psi.copy()
        else:
            cost = HyperslabCost(direction, center, _halfwidth(cfg), anchor=psi)
            dist = cost.distance(psi)
            local_dist[i] = dist
            y = psi - deflection(cost.value(psi), cost.subgradient(psi), sch.relaxation, psi)
        lam = project_box(y + pert(i, y), box)

        snap = sample_snapshot(model, positions, net_rng)
        beta = sch.step(i)
        psi_next = scheme.mix(snap, lam, beta, chan_rng)

        if not np.all(np.isfinite(psi_next)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(psi_next), axis=1))[0])
            raise NumericalError(f"non-finite state at iteration {i}, agent {bad}",
                                 iteration=i, agent=bad, last_state=psi[bad].copy())

        if track:
            D_seq.append(lifted_mixing_matrix(scheme.expected_matrix(snap), beta))
            sq_dist.append(np.sum((psi_next - problem.target) ** 2, axis=1))
        if out_dir is not None and i < cfg.metrics.snapshot_dump_limit:
            d = out_dir / "snapshots" / f"run_{run:03d}"
            d.mkdir(parents=True, exist_ok=True)
            write_snapshot_csv(snap, d / f"iter_{i:05d}.csv")
        if cfg.otac.telemetry and isinstance(scheme, OtacScheme):
            yp = scheme.last_round.stats.y_prime
            noise = scheme.config.noise_power
            for k in np.flatnonzero(snap.receiving):
                telemetry.append((k, i, yp[k], scheme.gamma[k], yp[k] / noise if noise > 0 else np.inf))

        psi = psi_next
        out["nmse_db"][i] = to_db(_nmse(problem, psi), cfg.metrics.nmse_floor_db)
        out["disagreement"][i] = disagreement(psi)
        out["cost"][i] = float(np.mean(local_dist[i] ** 2))
        out["sparsity"][i] = sparsity_fraction(lam, cfg.metrics.sparsity_tol)

    lyap = np.full(T, np.nan)
    slack = np.full(T, np.nan)
    fallback = False
    if track:
        V, fallback = lyapunov_trace(np.array(sq_dist), D_seq)
        lyap = V[1:]
        slack = np.cumsum(positive_increments(V))
    return RunMetrics(lyapunov=lyap, qf_slack=slack, local_distance=local_dist,
                      initial_disagreement=initial, final_states=psi,
                      uniform_pi_fallback=fallback, telemetry=telemetry, **out)


def _halfwidth(cfg):
    return cfg.problem.halfwidth if cfg.problem.kind == "regression" else cfg.problem.slab_halfwidth


def _measure(cfg, problem: Problem, agent_rng, positions):
    """New locations and hyperslabs for every agent."""
    p = cfg.problem
    N = cfg.n_agents
    if p.kind == "regression":
        idx = np.array([r.integers(problem.train_values.size) for r in agent_rng])
        noise = np.array([r.standard_normal() for r in agent_rng]) * np.sqrt(p.noise_variance)
        loc = problem.train_points[idx]
        return problem.features(loc), problem.train_values[idx] + noise, loc
    loc = np.array([r.uniform(0, cfg.network.side, 3) for r in agent_rng])
    if p.kind == "idle":
        return None, None, loc
    j = np.array([r.integers(p.n_slabs) for r in agent_rng])
    k = np.arange(N)
    return problem.slab_directions[k, j], problem.slab_centers[k, j], loc


def _nmse(problem: Problem, psi):
    if problem.test_features is not None:
        pred = psi @ problem.test_features.T
        return float(np.mean((pred - problem.test_values) ** 2 / problem.test_values**2))
    if problem.target is not None:
        t = problem.target
        return float(np.mean(np.sum((psi - t) ** 2, axis=1)) / np.sum(t * t))
    return np.nan


#%% EXPERIMENT

def resolve_output_dir(cfg: ExperimentConfig, override=None) -> Path:
    """CLI flag beats the environment variable, which beats the config."""
    return Path(override or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def _run_job(args):
    cfg, run, out_dir = args
    return run_single(cfg, run, out_dir=out_dir)


def run_experiment(cfg: ExperimentConfig, out_dir=None, write=True):
    """
    Run ``cfg.n_runs`` independent runs and aggregate them.

    Returns ``(aggregate, runs)``. With ``write=True`` the config, one CSV
    per run and ``aggregate.csv`` are written to ``out_dir``.
    """
    out = Path(out_dir) if out_dir is not None else None
    if write:
        out = out or resolve_output_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.yaml")
    jobs = [(cfg, r, out if write else None) for r in range(cfg.n_runs)]
    if cfg.workers > 1 and cfg.n_runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            runs = list(ex.map(_run_job, jobs))
    else:
        problem = build_problem(cfg)
        runs = [run_single(cfg, r, problem, j[2]) for r, j in zip(range(cfg.n_runs), jobs)]
    agg = RunMetrics.aggregate(runs)
    if write:
        for r, m in enumerate(runs):
            m.to_csv(out / f"run_{r:03d}.csv")
            if m.telemetry:
                _write_telemetry(out / f"run_{r:03d}_otac.csv", m.telemetry)
        agg.to_csv(out / "aggregate.csv")
    return agg, runs


def _write_telemetry(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "iteration", "y_prime", "gamma", "snr"])
        for k, i, yp, g, snr in rows:
            w.writerow([int(k), int(i), repr(float(yp)), repr(float(g)), repr(float(snr))])
