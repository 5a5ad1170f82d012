"""Command-line entry point.

Exit codes: 0 success, 2 config validation failure, 3 numeric divergence,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    BindingError,
    ConfigError,
    DegenerateTargetError,
    DivergenceError,
    DomainError,
    EvaluationOverflowError,
    MissingArtifactError,
    PartitionError,
    ShapeError,
)
from .experiment import run_experiment

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_MISSING = 4

_VALIDATION_ERRORS = (ConfigError, PartitionError, DomainError, ShapeError,
                      BindingError, DegenerateTargetError)
_DIVERGENCE_ERRORS = (DivergenceError, EvaluationOverflowError)


def build_parser():
    p = argparse.ArgumentParser(
        prog="mirnn",
        description="Overlapping-interval recurrent blocks for "
                    "physics-informed PDE training")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write run artifacts")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None,
                   help="override the config's training seed")
    t.add_argument("--log-every", type=int, default=0)

    e = sub.add_parser("eval", help="evaluate an existing checkpoint on a grid")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--spacing", type=float, required=True)
    e.add_argument("--time-spacing", type=float, default=None)

    s = sub.add_parser("sweep", help="run a results-table grid of training runs")
    s.add_argument("--config", required=True)
    s.add_argument("--table", type=int, choices=(1, 2), required=True)

    n = sub.add_parser("noise", help="mutual-term noise robustness experiment")
    n.add_argument("--config", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kwargs = {k: v for k, v in vars(args).items()
              if k not in ("command", "config")}
    try:
        run_experiment(args.config, args.command, **kwargs)
    except _VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _DIVERGENCE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    return 0


if __name__ == "__main__":
    sys.exit(main())
