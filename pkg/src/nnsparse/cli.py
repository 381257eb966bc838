"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .dictionary import (
    DictLearnConfig,
    DictionaryFormatError,
    extract_patches,
    learn_dictionary_admm,
    save_dictionary,
)
from .harness import ConfigError, config_from_mapping, load_config, run_experiment, run_sweep
from .imageio import ImageFormatError, read_pgm
from .solvers import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

_RUN_FLAGS = (
    ("--task", "task"),
    ("--solver", "solver"),
    ("--lambda", "lambda"),
    ("--a", "a"),
    ("--c", "c"),
    ("--mu", "mu"),
    ("--iters", "iters"),
    ("--seed", "seed"),
    ("--dict", "dict"),
    ("--image", "image"),
    ("--out", "out"),
    ("--size", "size"),
    ("--noise", "noise"),
    ("--x0", "x0"),
    ("--z0", "z0"),
    ("--sweep-lambda", "sweep_lambda"),
    ("--sweep-a", "sweep_a"),
    ("--sweep-c", "sweep_c"),
)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnsparse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment, or a sweep when a sweep grid is given")
    run.add_argument("--config", help="flat key=value file; flags override it")
    for flag, key in _RUN_FLAGS:
        run.add_argument(flag, dest=key, default=None, metavar=key.upper())
    run.add_argument("--l1-search", dest="l1_search", action="store_const", const="true", default=None,
                     help="add lambda*||x||_1 to the spMRNSD step objective")

    learn = sub.add_parser("learn-dict", help="learn a patch dictionary from PGM images")
    learn.add_argument("images", nargs="+", help="training images (PGM)")
    learn.add_argument("--patch", type=int, nargs=2, default=(16, 16), metavar=("P", "Q"))
    learn.add_argument("--atoms", type=int, default=400)
    learn.add_argument("--stride", type=int, default=None, help="patch stride (default: patch size)")
    learn.add_argument("--beta", type=float, default=0.1)
    learn.add_argument("--rho", type=float, default=1.0)
    learn.add_argument("--iters", type=int, default=200)
    learn.add_argument("--seed", type=int, default=0)
    learn.add_argument("--out", required=True, help="dictionary file to write")
    return parser


def _run(args) -> int:
    values = load_config(args.config) if args.config else {}
    for _, key in _RUN_FLAGS:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if args.l1_search is not None:
        values["l1_search"] = args.l1_search
    cfg = config_from_mapping(values)
    if cfg.sweep_lambda or cfg.sweep_a or cfg.sweep_c:
        outcomes = run_sweep(cfg)
        print(f"{len(outcomes)} runs written to {cfg.output_dir}")
    else:
        oc = run_experiment(cfg)
        print(oc.metrics.as_lines(), end="")
    return EXIT_OK


def _learn(args) -> int:
    p, q = args.patch
    patches = np.hstack([extract_patches(read_pgm(path), p, q, args.stride) for path in args.images])
    cfg = DictLearnConfig(s=args.atoms, beta=args.beta, rho=args.rho, iters=args.iters, seed=args.seed)
    res = learn_dictionary_admm(patches, cfg, patch_shape=(p, q))
    save_dictionary(res.dictionary, args.out)
    misfit = np.linalg.norm(patches - res.dictionary.D @ res.coefficients) / np.linalg.norm(patches)
    print(f"wrote {res.dictionary!r} to {args.out}; relative fit {misfit:.4g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return _run(args) if args.command == "run" else _learn(args)
    except (DictionaryFormatError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
