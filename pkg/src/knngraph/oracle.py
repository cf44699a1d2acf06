"""Exact k-NN graphs, the accuracy metric, and accuracy-vs-time benchmarking."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .builder import BuildConfig, build_graph
from .core import Dataset, InvalidInputError, KnnGraph

log = logging.getLogger(__name__)

# query/candidate tile edge for the exact scan
BLOCK = 256


def brute_force_graph(dataset: Dataset, k: int, *, calls: np.ndarray | None = None) -> KnnGraph:
    """Exact k-NN graph: every point against every other, ties by smaller id.

    Pass a one-element int64 array as ``calls`` to count kernel evaluations.
    """
    if not 1 <= k < dataset.n:
        raise InvalidInputError(f"k must satisfy 1 <= k < n={dataset.n}, got {k}")
    if calls is None:
        calls = np.zeros(1, np.int64)
    graph = KnnGraph.for_dataset(dataset, k)
    K.brute_force(dataset.points, dataset.norms, dataset.metric_code, calls, None, BLOCK,
                  graph.ids, graph.dists, graph.counts)
    return graph


def graph_accuracy(approx: KnnGraph, exact: KnnGraph) -> float:
    """|E(approx) & E(exact)| / |E(exact)| over directed (owner, neighbor) edges."""
    if approx.n != exact.n or approx.k != exact.k:
        raise InvalidInputError(
            f"graph shapes differ: approx (n={approx.n}, k={approx.k}) vs exact (n={exact.n}, k={exact.k})"
        )
    total = exact.num_edges()
    if total == 0:
        raise InvalidInputError("exact graph has no edges")
    hit = K.edge_overlap(approx.ids, approx.counts, exact.ids, exact.counts)
    return int(hit) / total


def exact_graph_cached(dataset: Dataset, k: int, cache_dir: str | Path | None) -> KnnGraph:
    """brute_force_graph, memoized on disk by (digest, k, metric)."""
    from .io import load_graph, save_graph

    if cache_dir is None:
        return brute_force_graph(dataset, k)
    path = Path(cache_dir) / f"exact-{dataset.digest:016x}-k{k}-{dataset.metric}.knng"
    if path.exists():
        return load_graph(path, dataset)
    graph = brute_force_graph(dataset, k)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, path)
    return graph


@dataclass
class BenchRow:
    config_id: str
    M: int
    T: int
    trigger: float
    k: int
    seconds: float
    accuracy: float
    divisions_run: int = 0
    propagated: bool = False


BENCH_COLUMNS = ["config_id", "M", "T", "trigger", "k", "seconds", "accuracy"]


def bench_run(dataset: Dataset, grid: list[BuildConfig], *, exact: KnnGraph | None = None,
              cache_dir: str | Path | None = None, ids: list[str] | None = None) -> list[BenchRow]:
    """Build once per config, timing the build and scoring it against the exact graph."""
    rows = []
    exact_by_k: dict[int, KnnGraph] = {}
    if exact is not None:
        exact_by_k[exact.k] = exact
    for t, cfg in enumerate(grid):
        if cfg.k not in exact_by_k:
            exact_by_k[cfg.k] = exact_graph_cached(dataset, cfg.k, cache_dir)
        t0 = time.perf_counter()
        graph, stats = build_graph(dataset, cfg)
        seconds = time.perf_counter() - t0
        acc = graph_accuracy(graph, exact_by_k[cfg.k])
        row = BenchRow(
            config_id=ids[t] if ids else str(t),
            M=cfg.max_divisions,
            T=cfg.T,
            trigger=cfg.trigger_threshold,
            k=cfg.k,
            seconds=seconds,
            accuracy=acc,
            divisions_run=stats.divisions_run,
            propagated=stats.propagation is not None,
        )
        log.info("bench %s: M=%d prop=%s %.3fs acc=%.4f", row.config_id, row.M, row.propagated, seconds, acc)
        rows.append(row)
    return rows


def write_bench_csv(rows: list[BenchRow], path_or_file) -> None:
    def emit(f):
        w = csv.writer(f)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r.config_id, r.M, r.T, r.trigger, r.k, f"{r.seconds:.6f}", f"{r.accuracy:.6f}"])

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as f:
            emit(f)
