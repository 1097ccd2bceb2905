"""
Experiment configuration: nested dataclasses with a YAML round trip.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..core import ConfigurationError, PerturbationSchedule, StepSchedule

SCHEMES = ("OTACS", "OTAC", "BDC", "NOC", "CEN")
SPARSE_SCHEMES = ("OTACS", "NOC", "CEN")
OUTPUT_ENV = "QFNET_OUTPUT_DIR"


@dataclass(frozen=True)
class ScheduleConfig:
    step: StepSchedule = field(default_factory=StepSchedule)
    perturbation: PerturbationSchedule = field(default_factory=PerturbationSchedule)
    relaxation: float = 0.5
    varsigma: float = 1e-2


@dataclass(frozen=True)
class NetworkConfig:
    side: float = 1000.0
    duplex: str = "half"
    power_range: tuple = (10.0, 100.0)  # watts, log-uniform
    power_threshold: float = 1.2589254117941673e-4  # watts; -9 dBm, i.e. 0 dB SNR
    weight_floor: float = 0.05
    min_distance: float = 10.0  # near-field reference distance of the path loss


@dataclass(frozen=True)
class OtacSection:
    B: int = 20
    B_prime: int = 40
    noise_power_dbm: float = -9.0
    rho: float = 0.5
    window: int = 50
    normalization_period: int = 1
    bootstrap_gamma: Optional[float] = None  # None: estimated from the network model
    assumed_noise_power_dbm: Optional[float] = None
    telemetry: bool = False


@dataclass(frozen=True)
class BdcSection:
    reference_distance: float = 500.0
    reference_probability: float = 0.2


@dataclass(frozen=True)
class ProblemConfig:
    """
    ``kind="regression"``: learn a field from noisy samples.
    ``kind="synthetic"``: fixed hyperslabs through a known point.
    ``kind="idle"``: no measurements, pure consensus.
    """

    kind: str = "regression"
    # regression
    dataset_csv: Optional[str] = None
    field_seed: int = 7
    n_bumps: int = 6
    n_points: int = 20000
    n_test: int = 500
    test_min_abs: float = 0.05
    lengthscale: float = 300.0
    amplitude: float = 1.0
    noise_variance: float = 0.09
    halfwidth: float = 0.6
    relocation_gap: float = 1.0
    # synthetic
    n_slabs: int = 8
    slab_halfwidth: float = 0.05


@dataclass(frozen=True)
class MetricsConfig:
    nmse_floor_db: float = -80.0
    sparsity_tol: float = 1e-9
    snapshot_dump_limit: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str = "OTACS"
    n_agents: int = 100
    dim: int = 50
    horizon: int = 10000
    n_runs: int = 100
    seed: int = 0
    init: str = "zeros"
    sparsity: Optional[bool] = None  # None: on for OTACS, NOC, CEN
    workers: int = 1
    output_dir: str = "results"
    schedules: ScheduleConfig = field(default_factory=ScheduleConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    otac: OtacSection = field(default_factory=OtacSection)
    bdc: BdcSection = field(default_factory=BdcSection)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        validate(self)

    @property
    def sparse(self) -> bool:
        return self.scheme in SPARSE_SCHEMES if self.sparsity is None else bool(self.sparsity)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data or {})

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as e:
            raise ConfigurationError(f"cannot parse {path}: {e}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError(f"{path} must contain a mapping")
        return cls.from_dict(data)


def validate(cfg: ExperimentConfig):
    if cfg.scheme not in SCHEMES:
        raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    for name in ("n_agents", "dim", "horizon", "n_runs", "workers"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or v < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
    if cfg.init not in ("zeros", "random"):
        raise ConfigurationError("init must be 'zeros' or 'random'")
    p = cfg.problem
    if p.kind not in ("regression", "synthetic", "idle"):
        raise ConfigurationError(f"unknown problem kind {p.kind!r}")
    if p.kind == "regression" and cfg.dim % 2:
        raise ConfigurationError("regression needs an even dim (sign-split feature pairs)")
    for name in ("B", "B_prime", "window", "normalization_period"):
        if getattr(cfg.otac, name) < 1:
            raise ConfigurationError(f"otac.{name} must be a positive integer")
    if not 0 < cfg.schedules.relaxation < 2:
        raise ConfigurationError("relaxation must lie in (0, 2)")
    if cfg.schedules.varsigma <= 0:
        raise ConfigurationError("varsigma must be positive")
    if p.halfwidth < 0 or p.slab_halfwidth < 0:
        raise ConfigurationError("hyperslab halfwidths must be nonnegative")
    if p.noise_variance < 0:
        raise ConfigurationError("noise variance must be nonnegative")
    if p.relocation_gap < 1:
        raise ConfigurationError("relocation_gap is a mean gap in iterations, must be >= 1")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected a mapping for {cls.__name__}, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        t = hints[f.name]
        if dataclasses.is_dataclass(t):
            v = _build(t, v)
        elif t is tuple:
            v = tuple(v)
        elif t is float and isinstance(v, (int, str)):
            v = float(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigurationError(str(e)) from None
