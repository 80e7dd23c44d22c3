"""Command-line entry point: ``cqrhpo run`` and ``cqrhpo compare``.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from typing import List, Optional

from .experiment import (
    ExperimentSpec,
    METHODS,
    SpecError,
    compare,
    load_manifest,
    run_experiment,
)


def parse_seeds(text: str) -> List[int]:
    """``"0-4"`` -> ``[0, 1, 2, 3, 4]``; ``"1,3,7"`` -> ``[1, 3, 7]``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _seeds_arg(text):
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqrhpo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    d = ExperimentSpec()
    r = sub.add_parser("run", help="run simulated tuning experiments")
    r.add_argument("--manifest", help="re-run the experiment recorded in this manifest (file or directory)")
    r.add_argument("--task", default=None,
                   help="'synthetic', 'heteroskedastic' or a tabular blackbox file (default: synthetic)")
    r.add_argument("--method", default=None,
                   help=f"comma-separated subset of {', '.join(METHODS)} (alias: asha = rs+mf)")
    r.add_argument("--seeds", type=_seeds_arg, default=None, help="e.g. '0-29' or '0,3,5'")
    r.add_argument("--workers", type=int, default=None, help=f"default {d.workers}")
    r.add_argument("--max-results", default=None,
                   help=f"result budget; '<k>x' means k * r_max (default {d.max_results})")
    r.add_argument("--max-sim-time", type=float, default=None, help="simulated-seconds budget")
    r.add_argument("--m", type=int, default=None, help=f"number of quantiles (default {d.m})")
    r.add_argument("--num-candidates", type=int, default=None, help=f"default {d.num_candidates}")
    r.add_argument("--val-fraction", type=float, default=None, help=f"default {d.val_fraction}")
    r.add_argument("--conformal-threshold", type=int, default=None,
                   help=f"conformalize only above this many observations (default {d.conformal_threshold})")
    r.add_argument("--n-init", type=int, default=None, help=f"random suggestions first (default {d.n_init})")
    r.add_argument("--eta", type=int, default=None, help=f"reduction factor (default {d.eta})")
    r.add_argument("--grace-period", type=int, default=None, help=f"default {d.grace_period}")
    r.add_argument("--asha-variant", choices=("stopping", "promotion"), default=None)
    r.add_argument("--task-seed", type=int, default=None, help="seed of the built-in task generator")
    r.add_argument("--suggest-time", type=float, default=None,
                   help="simulated seconds charged per new suggestion (default 0)")
    r.add_argument("--n-trees", type=int, default=None)
    r.add_argument("--max-depth", type=int, default=None)
    r.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("compare", help="aggregate regret and rank across experiment directories")
    c.add_argument("dirs", nargs="*")
    c.add_argument("--out", default=None, help="summary CSV path (default: stdout)")
    c.add_argument("--per-run", default=None, help="optional per-run CSV path")
    c.add_argument("--axis", choices=("count", "time"), default="count")
    c.add_argument("--n-fractions", type=int, default=50)
    return parser


_FLAG_TO_FIELD = {
    "task": "task", "workers": "workers", "max_results": "max_results",
    "max_sim_time": "max_sim_time", "m": "m", "num_candidates": "num_candidates",
    "val_fraction": "val_fraction", "conformal_threshold": "conformal_threshold",
    "n_init": "n_init", "eta": "eta", "grace_period": "grace_period",
    "asha_variant": "asha_variant", "task_seed": "task_seed", "suggest_time": "suggest_time",
    "n_trees": "n_trees", "max_depth": "max_depth",
}


def spec_from_args(args) -> ExperimentSpec:
    spec = load_manifest(args.manifest) if args.manifest else ExperimentSpec()
    for flag, name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(spec, name, value)
    if args.method is not None:
        spec.methods = [m.strip() for m in args.method.split(",") if m.strip()]
    if args.seeds is not None:
        spec.seeds = args.seeds
    return spec.validate()


def _write_rows(rows, fieldnames, fh):
    writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            spec = spec_from_args(args)
        except (SpecError, FileNotFoundError, KeyError) as exc:
            parser.error(str(exc))
        try:
            out = run_experiment(spec, args.out)
        except SpecError as exc:
            parser.error(str(exc))
        except Exception as exc:
            print(f"cqrhpo: run failed: {exc}", file=sys.stderr)
            return 1
        print(out)
        return 0

    if not args.dirs:
        parser.error("compare: at least one experiment directory is required")
    try:
        summary, rows = compare(args.dirs, args.n_fractions, args.axis)
    except (FileNotFoundError, ValueError) as exc:
        print(f"cqrhpo: compare failed: {exc}", file=sys.stderr)
        return 1
    fields = ["method", "fraction", "regret", "rank"]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            _write_rows(summary, fields, fh)
    else:
        _write_rows(summary, fields, sys.stdout)
    if args.per_run:
        with open(args.per_run, "w", newline="") as fh:
            _write_rows(rows, ["method", "task", "seed", "fraction", "regret", "rank"], fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
