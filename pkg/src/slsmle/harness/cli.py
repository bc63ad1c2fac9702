"""slsmle command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certificate preconditions failed (reports are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from numpy.linalg import LinAlgError

from .. import __version__
from ..errors import (CertificateInapplicable, DomainEmpty, DomainExit,
                      NoPhaseTransition, NonConverged, PreconditionError,
                      ValidationError)
from .experiments import DEFAULTS, RUNNERS, STOCHASTIC, merge_defaults
from .io import config_hash

EXIT_CONFIG, EXIT_NUMERIC, EXIT_INAPPLICABLE = 2, 3, 4


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    ap = argparse.ArgumentParser(prog="slsmle", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "tail": "quantile curves and optional Monte Carlo exceedance",
        "iid-sandwich": "two-sided deviation rates for normalized i.i.d. sums",
        "fit": "penalized MLE for one dataset",
        "certify": "Fisher/Wilks expansion coverage over replicates",
        "risk": "bias-variance risk sandwich",
        "rate": "oracle cut-off rate sweep in the sequence model",
        "tensor": "tail checks for a Gaussian quadratic-form family",
    }
    for name in DEFAULTS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return ap


def load_config(path):
    if path is None:
        return {}, "."
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    return cfg, os.path.dirname(os.path.abspath(path))


def main(argv=None):
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        raw, base_dir = load_config(args.config)
        if cmd in STOCHASTIC and args.seed is None:
            raise ValidationError(f"--seed is required for '{cmd}'")
        if args.seed is not None and args.seed < 0:
            raise ValidationError("--seed must be a nonnegative integer")
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = merge_defaults(cmd, raw)
    except (OSError, ValueError, ValidationError) as exc:
        print(f"slsmle {cmd}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    # the hash covers everything that can change results, never --threads
    sha = config_hash({"command": cmd, "config": cfg, "seed": args.seed})
    try:
        return RUNNERS[cmd](cfg, args.seed, args.threads, args.out, sha, base_dir)
    except CertificateInapplicable as exc:
        print(f"slsmle {cmd}: {exc}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except (NonConverged, DomainExit, NoPhaseTransition, LinAlgError) as exc:
        print(f"slsmle {cmd}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DomainEmpty, PreconditionError, KeyError, TypeError,
            OSError) as exc:
        print(f"slsmle {cmd}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
