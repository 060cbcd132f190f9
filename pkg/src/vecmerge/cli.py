"""Command-line interface.

Subcommands: inspect, extract, merge tv|ties, diff, interference,
run (recipes, optionally swept and metric-selected), bench.
Exit codes for `run`: 0 success, 2 validation error, 3 merge error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .recipes import (MetricsTable, RecipeError, execute_recipe, expand_sweep,
                      parse_recipe, select_best)
from .reports import cosine, diff_stats, interference_stats
from .tensor_store import (ArchiveError, read_archive, save_archive,
                           validate_archive)
from .ties import DEFAULT_DENSITY, DEFAULT_LAMBDA, TiesConfig, ties_merge
from .tv import TaskVector, extract_task_vector, is_task_vector_archive, tv_merge


def _load_vector(path: str) -> TaskVector:
    ckpt = read_archive(path)
    if not is_task_vector_archive(ckpt):
        raise ArchiveError(f"{path} is not a stored task vector archive")
    return TaskVector.from_checkpoint(ckpt, origin=f"loaded from {path}")


def _cmd_inspect(args) -> int:
    report = validate_archive(args.path)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0 if report.valid else 1


def _cmd_extract(args) -> int:
    base = read_archive(args.base)
    finetuned = read_archive(args.finetuned)
    tv = extract_task_vector(base, finetuned, policy=args.on_mismatch)
    save_archive(tv.to_checkpoint(), args.out)
    summary = {"deltas": len(tv.deltas), "extras": sorted(tv.extras),
               "ignored": tv.ignored, "out": args.out}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _weighted_pairs(args):
    weights = args.weight or []
    if len(weights) != len(args.vector):
        raise ArchiveError(f"{len(args.vector)} vectors but {len(weights)} weights")
    return [(_load_vector(v), w) for v, w in zip(args.vector, weights)]


def _cmd_merge_tv(args) -> int:
    base = read_archive(args.base)
    merged = tv_merge(base, _weighted_pairs(args), threads=args.threads)
    save_archive(merged, args.out)
    print(json.dumps({"out": args.out, "tensor_count": len(merged)}, sort_keys=True))
    return 0


def _cmd_merge_ties(args) -> int:
    base = read_archive(args.base)
    pairs = _weighted_pairs(args)
    config = TiesConfig(density=args.density, weights=[w for _, w in pairs],
                        lam=args.lam)
    merged, report = ties_merge(base, [t for t, _ in pairs], config,
                                threads=args.threads)
    save_archive(merged, args.out)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json())
    print(json.dumps({"out": args.out, "tensor_count": len(merged)}, sort_keys=True))
    return 0


def _cmd_diff(args) -> int:
    report = diff_stats(read_archive(args.a), read_archive(args.b))
    if args.json:
        print(report.to_json())
    else:
        g = report.to_dict()["global"]
        print(f"tensors compared: {len(report.per_tensor)}")
        print(f"global L2 norm:   {g['l2_norm']:.6g}")
        print(f"global max |d|:   {g['max_abs']:.6g}")
        print(f"equal fraction:   {g['equal_fraction']:.6g}")
    return 0


def _cmd_interference(args) -> int:
    tvs = [_load_vector(v) for v in args.vector]
    report = interference_stats(tvs, args.density)
    print(report.to_json() if args.json else report.to_json())
    return 0


def _cmd_cosine(args) -> int:
    value = cosine(_load_vector(args.a), _load_vector(args.b))
    print(f"{value:.12g}")
    return 0


def _cmd_run(args) -> int:
    try:
        with open(args.recipe) as fh:
            recipe = parse_recipe(fh.read())
        recipes = expand_sweep(recipe) if args.sweep else [recipe]
        if not args.sweep and recipe.grids():
            raise RecipeError("recipe contains sweep grids; pass --sweep")
    except (OSError, RecipeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        outcomes = [execute_recipe(r, threads=args.threads) for r in recipes]
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    result = {"outcomes": [o.to_dict() for o in outcomes]}
    if args.select and not args.metrics:
        print("error: --select requires --metrics", file=sys.stderr)
        return 2
    if args.metrics:
        try:
            with open(args.metrics) as fh:
                table = MetricsTable.from_csv(fh.read())
            result["selected"] = select_best(table)
        except (OSError, RecipeError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    from .bench.model import TrainConfig
    from .bench.scenarios import SCENARIOS, BenchSizes, run_bench

    names = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    seeds = list(range(args.seeds))
    result = run_bench(names, seeds, BenchSizes(),
                       TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs),
                       threads=args.threads)
    blob = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(blob)
    for name in names:
        rep = result["scenarios"][name]
        print(f"{name}: mean macro-F1 {rep['mean_f1']:.4f} (std {rep['std_f1']:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vecmerge",
                                     description="checkpoint merge engine")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="validate an archive and print the report")
    p.add_argument("path")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("extract", help="extract a task vector")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--on-mismatch", default="error",
                   choices=["error", "ignore", "copy_from_finetuned"])
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("merge", help="merge task vectors into a base checkpoint")
    merge_sub = p.add_subparsers(dest="method", required=True)

    def add_merge_common(mp):
        mp.add_argument("--base", required=True)
        mp.add_argument("--vector", action="append", required=True)
        mp.add_argument("--weight", action="append", type=float, required=True)
        mp.add_argument("--out", required=True)
        mp.add_argument("--threads", type=int, default=1)

    mp = merge_sub.add_parser("tv", help="scaled vector addition")
    add_merge_common(mp)
    mp.set_defaults(func=_cmd_merge_tv)

    mp = merge_sub.add_parser("ties", help="trim/elect-sign/disjoint-mean merge")
    add_merge_common(mp)
    mp.add_argument("--density", type=float, default=DEFAULT_DENSITY)
    mp.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    mp.add_argument("--report", default=None)
    mp.set_defaults(func=_cmd_merge_ties)

    p = sub.add_parser("diff", help="compare two checkpoints")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_diff)

    p = sub.add_parser("interference", help="TIES interference statistics")
    p.add_argument("--vector", action="append", required=True)
    p.add_argument("--density", type=float, default=DEFAULT_DENSITY)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_interference)

    p = sub.add_parser("cosine", help="cosine similarity of two task vectors")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=_cmd_cosine)

    p = sub.add_parser("run", help="execute a merge recipe")
    p.add_argument("--recipe", required=True)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--metrics", default=None)
    p.add_argument("--select", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="run the toy pipeline comparison")
    p.add_argument("--scenario", default="all")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--learning-rate", type=float, default=0.03)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArchiveError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
