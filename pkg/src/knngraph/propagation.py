"""Best-first neighborhood propagation over the current graph."""

from __future__ import annotations

import time

import numpy as np

from . import _kernels as K
from .builder import PairCache, PropagationRecord
from .core import Dataset, InvalidInputError, KnnGraph

# points handed to the compiled loop per call; bounds hash growth per call
CHUNK = 512


def _check(graph: KnnGraph, dataset: Dataset, T: int, cache: PairCache) -> None:
    if dataset is not cache.dataset:
        raise InvalidInputError("cache belongs to a different dataset")
    if graph.n != dataset.n:
        raise InvalidInputError("graph and dataset sizes differ")
    if T < 1:
        raise InvalidInputError(f"visit budget T must be >= 1, got {T}")


def _run(graph, cache, points, T, stamp, stamp_base):
    visits = np.zeros(points.size, np.int64)
    hd, hi = np.empty(T), np.empty(T, np.int64)
    k = graph.k
    rb, cb, db = np.empty(k, np.int64), np.empty(k, np.int64), np.empty(k)
    cache.ensure_hash_room(points.size * T)
    (X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv,
     hkeys, hvals, counters, trace) = cache.kernel_args()
    K.propagate_points(X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv,
                       hkeys, hvals, counters, trace, graph.ids, graph.dists, graph.counts,
                       points, T, stamp, stamp_base, visits, hd, hi, rb, cb, db)
    return visits


def propagate_point(graph: KnnGraph, dataset: Dataset, p: int, T: int, cache: PairCache) -> int:
    """Expand p's neighborhood best-first through its neighbors' lists.

    The queue is seeded with p's current neighbors; each popped point's
    unvisited list entries are evaluated, offered to both lists and queued.
    Stops when the queue empties or T points have been visited (seeds count).
    Returns the number of visited points.
    """
    _check(graph, dataset, T, cache)
    if not 0 <= p < dataset.n:
        raise InvalidInputError(f"point {p} out of range")
    cache.bind(graph)
    stamp = np.zeros(dataset.n, np.int64)
    return int(_run(graph, cache, np.array([p], np.int64), T, stamp, 0)[0])


def propagate_all(graph: KnnGraph, dataset: Dataset, T: int, cache: PairCache) -> PropagationRecord:
    """propagate_point for every point in ascending id order on the live graph."""
    _check(graph, dataset, T, cache)
    cache.bind(graph)
    t0 = time.perf_counter()
    misses0, hits0, calls0 = cache.misses, cache.hits, cache.kernel_calls
    stamp = np.zeros(dataset.n, np.int64)
    total = 0
    most = 0
    for start in range(0, dataset.n, CHUNK):
        points = np.arange(start, min(dataset.n, start + CHUNK), dtype=np.int64)
        visits = _run(graph, cache, points, T, stamp, start)
        total += int(visits.sum())
        most = max(most, int(visits.max()))
    return PropagationRecord(
        budget=T,
        wall_time=time.perf_counter() - t0,
        distance_computations=cache.kernel_calls - calls0,
        hits=cache.hits - hits0,
        visits=total,
        max_visits=most,
    )
