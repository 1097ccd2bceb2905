"""
Command line entry point.

Exit codes: 0 success, 2 bad configuration or arguments, 3 numerical
failure during a run, 4 file system errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ..core import BoxSet, ConfigurationError, NumericalError, ValidationError, stream
from ..otac import star_unbiasedness
from .config import SCHEMES, ExperimentConfig
from .runner import resolve_output_dir, run_experiment

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4

log = logging.getLogger("qfnet")


def _parser():
    p = argparse.ArgumentParser(prog="qfnet", description="Distributed sAPSM / OTA-C simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--runs", type=int)
    r.add_argument("--scheme", choices=SCHEMES)
    r.add_argument("--out", help="output directory (overrides the environment and the config)")

    v = sub.add_parser("validate-config", help="parse and check a config file")
    v.add_argument("--config", required=True)

    d = sub.add_parser("diag", help="diagnostics")
    dsub = d.add_subparsers(dest="diag", required=True)
    u = dsub.add_parser("unbiasedness", help="Monte-Carlo check of the OTA-C receiver statistic")
    u.add_argument("--draws", type=int, default=100_000)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--B", type=int, default=20)
    return p


def _cmd_run(args):
    cfg = ExperimentConfig.load(args.config)
    changes = {k: v for k, v in (("seed", args.seed), ("n_runs", args.runs), ("scheme", args.scheme))
               if v is not None}
    cfg = cfg.replace(**changes)
    out = resolve_output_dir(cfg, args.out)
    agg, _ = run_experiment(cfg, out)
    print(f"{cfg.scheme}: {cfg.n_runs} run(s), final nmse {agg.nmse_db[-1]:.2f} dB, "
          f"disagreement {agg.disagreement[-1]:.3g}, sparsity {agg.sparsity[-1]:.3f} -> {out}")


def _cmd_validate(args):
    cfg = ExperimentConfig.load(args.config)
    print(f"ok: scheme={cfg.scheme} N={cfg.n_agents} M={cfg.dim} T={cfg.horizon} runs={cfg.n_runs}")


def _cmd_unbiasedness(args):
    if args.draws < 2:
        raise ConfigurationError("need at least two draws")
    rng = stream(args.seed, 0xD1A6)
    box = BoxSet(-1.0, 1.0, 3)
    lam = np.array([[0.3, -0.7, 0.9], [0.6, -0.4, 0.2]])
    powers = np.array([2.0, 5.0])
    var = np.array([1.0, 0.8])  # unit-scale Rayleigh links
    rep = star_unbiasedness(lam, powers, var, box, B=args.B, B_prime=2 * args.B,
                            draws=args.draws, rng=rng)
    print(f"draws           {rep.draws}")
    print(f"mean y          {np.array2string(rep.mean_y, precision=6)}")
    print(f"expected y      {np.array2string(rep.expected_y, precision=6)}")
    print(f"relative error  {rep.relative_error:.3e}")
    print(f"noise z-scores  {np.array2string(rep.eta_z, precision=2)}")
    print(f"row sum         {rep.mean_weight_sum:.6f} +- {rep.se_weight_sum:.2e}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "validate-config": _cmd_validate}.get(args.command, _cmd_unbiasedness)
    try:
        handler(args)
    except (ConfigurationError, ValidationError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical error: {e} (iteration {e.iteration}, agent {e.agent}, "
              f"last finite state {e.last_state})", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
