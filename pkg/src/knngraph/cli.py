"""Command-line interface: ``knngraph {gen,build,exact,eval,bench,theory}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .builder import BuildConfig, BuildStats, build_graph
from .core import METRICS, Dataset, InvalidInputError
from .io import (VECTOR_FORMATS, FormatError, gaussian_mixture, infer_format, load_graph, load_vectors,
                 save_graph, write_vectors)
from .oracle import bench_run, brute_force_graph, graph_accuracy, write_bench_csv
from .partition import DivisionConfig
from .theory import THEORY_COLUMNS, theory_table

log = logging.getLogger("knngraph")

STATS_COLUMNS = ["division", "new_pairs", "cumulative_pairs", "effective_rate", "wall_time",
                 "distance_computations", "hits", "leaves", "depth"]


class UsageError(Exception):
    """Bad flags or flag combinations; reported with exit status 2."""


def effective_seed(seed: int | None) -> int:
    """The given seed, or a fresh one drawn from OS entropy."""
    if seed is not None:
        if seed < 0:
            raise UsageError(f"--seed must be nonnegative, got {seed}")
        return seed
    return int(np.random.SeedSequence().entropy % (1 << 63))


def _load_dataset(args) -> Dataset:
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    fmt = args.format or infer_format(path)
    return load_vectors(path, fmt, args.metric)


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="vector file")
    p.add_argument("--format", choices=VECTOR_FORMATS, help="default: from the file extension")
    p.add_argument("--metric", choices=sorted(METRICS), default="euclidean")


def write_stats_csv(stats: BuildStats, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(STATS_COLUMNS)
        for r in stats.divisions:
            w.writerow([r.index, r.new_pairs, r.cumulative_pairs, repr(r.effective_rate), f"{r.wall_time:.6f}",
                        r.distance_computations, r.hits, r.leaves, r.depth])


def build_config_from(k: int, divisions: int = 20, leaf_size: int = 500, trigger: float = 0.05,
                      budget: int | None = None, propagation: bool = True, seed: int = 0) -> BuildConfig:
    return BuildConfig(k=k, max_divisions=divisions, trigger_threshold=trigger, propagation_budget=budget,
                       division=DivisionConfig(g=leaf_size, seed=seed), enable_propagation=propagation)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    seed = effective_seed(args.seed)
    print(f"seed {seed}")
    X = gaussian_mixture(args.n, args.d, args.clusters, seed, args.spread)
    fmt = args.format or infer_format(args.output)
    write_vectors(args.output, X, fmt)
    print(f"wrote {args.n} x {args.d} vectors to {args.output}")
    return 0


def cmd_build(args) -> int:
    if args.no_propagation and args.budget is not None:
        raise UsageError("--budget has no effect with --no-propagation")
    seed = effective_seed(args.seed)
    print(f"seed {seed}")
    dataset = _load_dataset(args)
    cfg = build_config_from(args.k, args.divisions, args.leaf_size, args.trigger, args.budget,
                            not args.no_propagation, seed)
    graph, stats = build_graph(dataset, cfg)
    save_graph(graph, args.output)
    if args.stats_out:
        write_stats_csv(stats, args.stats_out)
    prop = "off" if stats.propagation is None else f"{stats.propagation.visits} visits"
    print(f"built k={cfg.k} graph over n={dataset.n}: {stats.divisions_run} divisions, "
          f"propagation {prop}, {stats.wall_time:.3f}s")
    return 0


def cmd_exact(args) -> int:
    dataset = _load_dataset(args)
    if not 1 <= args.k < dataset.n:
        raise UsageError(f"--k must lie in [1, n), got {args.k} with n={dataset.n}")
    save_graph(brute_force_graph(dataset, args.k), args.output)
    print(f"wrote exact k={args.k} graph over n={dataset.n} to {args.output}")
    return 0


def cmd_eval(args) -> int:
    for p in (args.approx, args.exact):
        if not Path(p).is_file():
            raise UsageError(f"graph file not found: {p}")
    approx, exact = load_graph(args.approx), load_graph(args.exact)
    if approx.digest != exact.digest or approx.n != exact.n:
        raise UsageError("graphs were built from different datasets")
    print(f"accuracy {graph_accuracy(approx, exact):.6f}")
    return 0


def _read_grid(path) -> list[dict]:
    if not Path(path).is_file():
        raise UsageError(f"grid file not found: {path}")
    try:
        grid = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"grid file {path} is not valid JSON: {exc}") from None
    if isinstance(grid, dict):
        grid = grid.get("configs", grid.get("grid"))
    if not isinstance(grid, list) or not all(isinstance(g, dict) for g in grid):
        raise UsageError("grid must be a JSON list of objects (or an object with a 'configs' list)")
    return grid


_BENCH_KEYS = {"id", "k", "divisions", "leaf_size", "trigger", "budget", "propagation", "seed"}


def cmd_bench(args) -> int:
    grid = _read_grid(args.grid)
    seed = effective_seed(args.seed)
    print(f"seed {seed}")
    dataset = _load_dataset(args)
    cfgs, ids = [], []
    for t, entry in enumerate(grid):
        unknown = set(entry) - _BENCH_KEYS
        if unknown:
            raise UsageError(f"grid entry {t}: unknown keys {sorted(unknown)}")
        if "k" not in entry:
            raise UsageError(f"grid entry {t}: missing k")
        opts = {key: entry[key] for key in entry if key not in ("id",)}
        opts.setdefault("seed", seed)
        cfgs.append(build_config_from(**opts))
        ids.append(str(entry.get("id", t)))
    rows = bench_run(dataset, cfgs, ids=ids, cache_dir=args.cache_dir)
    if args.output:
        write_bench_csv(rows, args.output)
    else:
        write_bench_csv(rows, sys.stdout)
    return 0


def cmd_theory(args) -> int:
    grid = _read_grid(args.grid)
    seed = effective_seed(args.seed)
    print(f"seed {seed}", file=sys.stderr if not args.output else sys.stdout)
    rows = theory_table(grid, args.trials, seed)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.DictWriter(out, THEORY_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in r.items()})
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _positive(v: str) -> int:
    x = int(v)
    if x < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {x}")
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knngraph", description="Approximate k-NN graph construction.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic Gaussian-mixture dataset")
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--d", type=_positive, required=True)
    p.add_argument("--clusters", type=_positive, default=50)
    p.add_argument("--spread", type=float, default=5.0, help="std of cluster centers (noise std is 1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=VECTOR_FORMATS)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build an approximate k-NN graph")
    _add_input(p)
    p.add_argument("--k", type=_positive, required=True)
    p.add_argument("--divisions", type=_positive, default=20, help="maximum number of random divisions M")
    p.add_argument("--leaf-size", type=int, default=500, help="leaf cardinality bound g")
    p.add_argument("--trigger", type=float, default=0.05, help="effective-rate threshold")
    p.add_argument("--budget", type=_positive, help="propagation budget T (default 100*k)")
    p.add_argument("--no-propagation", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.add_argument("--stats-out", help="per-division statistics CSV")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("exact", help="brute-force k-NN graph")
    _add_input(p)
    p.add_argument("--k", type=_positive, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("eval", help="accuracy of an approximate graph against the exact one")
    p.add_argument("--approx", required=True)
    p.add_argument("--exact", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time and score a grid of build configurations")
    _add_input(p)
    p.add_argument("--grid", required=True, help="JSON list of configs (k, divisions, leaf_size, ...)")
    p.add_argument("--seed", type=int)
    p.add_argument("--cache-dir", help="directory for cached exact graphs")
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("theory", help="closed-form discovery probabilities vs simulation")
    p.add_argument("--grid", required=True, help="JSON list of {event, P, h, L[, path]}")
    p.add_argument("--trials", type=_positive, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError, FileNotFoundError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"knngraph {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"knngraph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
