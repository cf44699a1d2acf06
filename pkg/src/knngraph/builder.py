"""Multiple random divisions united into one approximate k-NN graph."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import Dataset, InvalidInputError, KnnGraph
from .partition import Division, DivisionConfig, random_division

log = logging.getLogger(__name__)


class PairCache:
    """Set of unordered point pairs whose distance has been computed.

    Distances found inside a division's leaves are kept in one packed
    triangle per leaf, and a pair is a member exactly when its points shared a
    processed leaf in some division.  Pairs met elsewhere (propagation, direct
    lookups) go to an open-addressing hash table keyed by ``lo * n + hi + 1``.
    Each pair's value is stored once: in the earliest leaf that held both
    points, or in the hash table.

    ``hits + misses`` counts every request routed through the cache and
    ``kernel_calls`` counts raw distance evaluations.  Set ``trace_capacity``
    to record the first that many evaluated (i, j) pairs.
    """

    def __init__(self, dataset: Dataset, *, trace_capacity: int = 0):
        n = dataset.n
        self.dataset = dataset
        self.labels = np.full((n, 4), -1, np.int32)
        self.pos = np.zeros((n, 4), np.int32)
        self.ndiv = 0
        self._open = False
        self.leaf_base = np.zeros(64, np.int64)
        self.leaf_size = np.zeros(64, np.int32)
        self.n_leaves = 0
        self.values = np.empty(1024)
        self.values_top = 0
        self.hkeys = np.zeros(1024, np.uint64)
        self.hvals = np.zeros(1024)
        self.counters = np.zeros(K.COUNTER_SLOTS, np.int64)
        self.trace = np.zeros((trace_capacity, 2), np.int32) if trace_capacity > 0 else None
        # every cached pair has been offered to both lists of the bound graph
        self.all_offered = True
        self._graph: KnnGraph | None = None

    @property
    def hits(self) -> int:
        return int(self.counters[K.HITS])

    @property
    def misses(self) -> int:
        return int(self.counters[K.MISSES])

    @property
    def kernel_calls(self) -> int:
        return int(self.counters[K.KERNEL_CALLS])

    def __len__(self) -> int:
        return self.misses

    def traced_pairs(self) -> np.ndarray:
        if self.trace is None:
            return np.empty((0, 2), np.int32)
        return self.trace[: min(self.kernel_calls, len(self.trace))].copy()

    def bind(self, graph: KnnGraph) -> None:
        if self._graph is None:
            self._graph = graph
        elif self._graph is not graph:
            self.all_offered = False

    # -- division bookkeeping -------------------------------------------------

    def begin_division(self) -> int:
        """Open a new division slot and return its 0-based index."""
        if self.ndiv == self.labels.shape[1]:
            grow = self.labels.shape[1]
            self.labels = np.hstack([self.labels, np.full((self.labels.shape[0], grow), -1, np.int32)])
            self.pos = np.hstack([self.pos, np.zeros((self.pos.shape[0], grow), np.int32)])
        self.ndiv += 1
        self._open = True
        return self.ndiv - 1

    def reserve(self, n_values: int, n_leaves: int = 0) -> None:
        need = self.values_top + n_values
        if need > self.values.size:
            bigger = np.empty(max(need, 2 * self.values.size))
            bigger[: self.values_top] = self.values[: self.values_top]
            self.values = bigger
        need = self.n_leaves + n_leaves
        if need > self.leaf_base.size:
            size = max(need, 2 * self.leaf_base.size)
            self.leaf_base = np.resize(self.leaf_base, size)
            self.leaf_size = np.resize(self.leaf_size, size)

    def add_leaf(self, leaf: np.ndarray) -> int:
        """Register ``leaf`` in the open division; returns its global leaf id."""
        if not self._open:
            self.begin_division()
        m = self.ndiv - 1
        if np.any(self.labels[leaf, m] >= 0):
            # overlaps a leaf already in this division: start another division
            m = self.begin_division()
        s = leaf.size
        self.reserve(s * (s - 1) // 2, 1)
        lid = self.n_leaves
        self.leaf_base[lid] = self.values_top
        self.leaf_size[lid] = s
        self.values_top += s * (s - 1) // 2
        self.n_leaves += 1
        self.labels[leaf, m] = lid
        self.pos[leaf, m] = np.arange(s, dtype=np.int32)
        return lid

    def ensure_hash_room(self, extra: int) -> None:
        """Grow the hash table so ``extra`` more insertions keep load <= 1/2."""
        need = int(self.counters[K.HASH_COUNT]) + extra
        cap = self.hkeys.size
        if 2 * need <= cap:
            return
        while 2 * need > cap:
            cap *= 2
        old = self.hkeys != 0
        keys, vals = self.hkeys[old], self.hvals[old]
        self.hkeys = np.zeros(cap, np.uint64)
        self.hvals = np.zeros(cap)
        K.rehash(self.hkeys, self.hvals, keys, vals)

    def kernel_args(self):
        """Cache arrays in the order the compiled routines expect."""
        d = self.dataset
        return (d.points, d.norms, d.metric_code, self.labels, self.pos, self.leaf_base,
                self.leaf_size, self.values, self.ndiv, self.hkeys, self.hvals,
                self.counters, self.trace)


@dataclass(frozen=True)
class BuildConfig:
    k: int
    max_divisions: int = 20
    trigger_threshold: float = 0.05
    propagation_budget: int | None = None
    division: DivisionConfig = field(default_factory=DivisionConfig)
    enable_propagation: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError(f"k must be >= 1, got {self.k}")
        if self.max_divisions < 1:
            raise InvalidInputError(f"max_divisions must be >= 1, got {self.max_divisions}")
        if not 0.0 < self.trigger_threshold < 1.0:
            raise InvalidInputError(f"trigger_threshold must lie in (0, 1), got {self.trigger_threshold}")
        if self.propagation_budget is not None and self.propagation_budget < self.k:
            raise InvalidInputError(f"propagation budget T={self.propagation_budget} must be >= k={self.k}")
        if self.division.g < 2 * self.k:
            warnings.warn(f"leaf bound g={self.division.g} is below 2k={2 * self.k}; leaves may "
                          "be too small to fill neighbor lists", stacklevel=3)

    @property
    def T(self) -> int:
        return self.propagation_budget if self.propagation_budget is not None else 100 * self.k

    @property
    def seed(self) -> int:
        return self.division.seed


@dataclass
class DivisionRecord:
    index: int
    new_pairs: int
    cumulative_pairs: int
    effective_rate: float
    wall_time: float
    distance_computations: int
    hits: int
    leaves: int
    depth: int


@dataclass
class PropagationRecord:
    budget: int
    wall_time: float
    distance_computations: int
    hits: int
    visits: int
    max_visits: int


@dataclass
class BuildStats:
    divisions: list[DivisionRecord] = field(default_factory=list)
    propagation_triggered_at: int | None = None
    propagation: PropagationRecord | None = None
    seed: int = 0

    @property
    def divisions_run(self) -> int:
        return len(self.divisions)

    @property
    def wall_time(self) -> float:
        t = sum(r.wall_time for r in self.divisions)
        return t + (self.propagation.wall_time if self.propagation else 0.0)


def pairwise_update(graph: KnnGraph, u: int, v: int, d: float) -> tuple[bool, bool]:
    """Offer v to u's list and u to v's list."""
    if u == v:
        raise InvalidInputError("pairwise_update needs two distinct points")
    a = K.try_insert(graph.ids, graph.dists, graph.counts, u, v, d)
    b = K.try_insert(graph.ids, graph.dists, graph.counts, v, u, d)
    return bool(a), bool(b)


def cached_distance(cache: PairCache, dataset: Dataset, i: int, j: int) -> float:
    """Distance of {i, j}, evaluated at most once over the cache's lifetime."""
    if dataset is not cache.dataset:
        raise InvalidInputError("cache belongs to a different dataset")
    i, j = int(i), int(j)
    if i == j:
        raise InvalidInputError("cached_distance needs two distinct points")
    if not (0 <= i < dataset.n and 0 <= j < dataset.n):
        raise InvalidInputError(f"point index out of range: ({i}, {j})")
    before = cache.misses
    cache.ensure_hash_room(1)
    d = K.cache_get(*cache.kernel_args(), i, j)
    if cache.misses != before:
        # pair entered the cache without being offered to any graph
        cache.all_offered = False
    return float(d)


def build_leaf_subgraph(graph: KnnGraph, dataset: Dataset, leaf, cache: PairCache) -> KnnGraph:
    """Brute-force every pair inside ``leaf`` through the cache, updating both lists."""
    if dataset is not cache.dataset:
        raise InvalidInputError("cache belongs to a different dataset")
    leaf = np.asarray(leaf, dtype=np.int64)
    if leaf.size == 0:
        raise InvalidInputError("leaf must be nonempty")
    if leaf.min() < 0 or leaf.max() >= dataset.n:
        raise InvalidInputError("leaf holds ids outside the dataset")
    if np.unique(leaf).size != leaf.size:
        raise InvalidInputError("leaf holds repeated ids")
    cache.bind(graph)
    lid = cache.add_leaf(leaf)
    _run_leaves(graph, cache, [leaf], [lid])
    return graph


def _run_leaves(graph: KnnGraph, cache: PairCache, leaves, leaf_ids) -> None:
    members = np.concatenate(leaves).astype(np.int64)
    bounds = np.zeros(len(leaves) + 1, np.int64)
    bounds[1:] = np.cumsum([len(x) for x in leaves])
    (X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv,
     hkeys, hvals, counters, trace) = cache.kernel_args()
    K.process_leaves(X, norms, metric, labels, pos, leaf_base, leaf_size, values, ndiv - 1,
                     hkeys, hvals, counters, trace, graph.ids, graph.dists, graph.counts,
                     members, bounds, np.asarray(leaf_ids, np.int64), cache.all_offered,
                     np.empty(max(ndiv, 1), np.int32))


def apply_division(graph: KnnGraph, division: Division, cache: PairCache, stats: BuildStats) -> DivisionRecord:
    """Run every leaf of ``division`` as one new division and append its record."""
    t0 = time.perf_counter()
    cache.bind(graph)
    misses0, hits0, calls0 = cache.misses, cache.hits, cache.kernel_calls
    cache.begin_division()
    cache.reserve(sum(len(x) * (len(x) - 1) // 2 for x in division.leaves), len(division.leaves))
    ids = [cache.add_leaf(np.asarray(leaf, np.int64)) for leaf in division.leaves]
    _run_leaves(graph, cache, division.leaves, ids)
    new = cache.misses - misses0
    cumulative = cache.misses
    rec = DivisionRecord(
        index=len(stats.divisions) + 1,
        new_pairs=new,
        cumulative_pairs=cumulative,
        effective_rate=new / cumulative if cumulative else 0.0,
        wall_time=time.perf_counter() - t0,
        distance_computations=cache.kernel_calls - calls0,
        hits=cache.hits - hits0,
        leaves=len(division.leaves),
        depth=division.depth,
    )
    stats.divisions.append(rec)
    return rec


def effective_rate(stats: BuildStats, m: int) -> float:
    """Share of pairs cached through division ``m`` (1-based) that it discovered."""
    if not 1 <= m <= stats.divisions_run:
        raise InvalidInputError(f"division {m} not in 1..{stats.divisions_run}")
    return stats.divisions[m - 1].effective_rate


# largest up-front value reservation (float64 slots, 2 GiB)
_RESERVE_CAP = 1 << 28


def division_rng(seed: int, m: int) -> np.random.Generator:
    """Independent stream for division ``m`` (0-based) under master ``seed``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, m])


def build_graph(dataset: Dataset, cfg: BuildConfig, *, cache: PairCache | None = None) -> tuple[KnnGraph, BuildStats]:
    """Approximate k-NN graph from up to ``max_divisions`` random divisions plus propagation.

    After each division m >= 2 the effective rate is checked; once it drops
    below ``trigger_threshold`` dividing stops.  Propagation (when enabled)
    runs exactly once at the end.
    """
    from .propagation import propagate_all

    if cfg.k >= dataset.n:
        raise InvalidInputError(f"k={cfg.k} must be smaller than n={dataset.n}")
    graph = KnnGraph.for_dataset(dataset, cfg.k)
    if cache is None:
        cache = PairCache(dataset)
    stats = BuildStats(seed=cfg.seed)
    # capacity hint: each division stores at most n * (g - 1) values; pages of
    # the untouched tail are never committed, and growth copies are avoided
    cache.reserve(min(dataset.n * (cfg.division.g - 1) * cfg.max_divisions, _RESERVE_CAP))
    for m in range(cfg.max_divisions):
        t0 = time.perf_counter()
        division = random_division(dataset, cfg.division, division_rng(cfg.seed, m))
        t_split = time.perf_counter() - t0
        rec = apply_division(graph, division, cache, stats)
        rec.wall_time += t_split
        log.debug("division %d: r=%.4f new=%d cum=%d %.3fs", rec.index, rec.effective_rate,
                  rec.new_pairs, rec.cumulative_pairs, rec.wall_time)
        if cfg.enable_propagation and m >= 1 and rec.effective_rate < cfg.trigger_threshold:
            stats.propagation_triggered_at = rec.index
            break
    if cfg.enable_propagation:
        stats.propagation = propagate_all(graph, dataset, cfg.T, cache)
    return graph, stats
