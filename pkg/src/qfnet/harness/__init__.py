"""Experiment configuration, the iteration loop, diagnostics and the CLI."""

from .config import ExperimentConfig
from .diagnostics import disagreement, lyapunov_diagnostic, sparsity_fraction
from .runner import RunMetrics, run_experiment, run_single
