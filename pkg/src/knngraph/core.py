"""Datasets, neighbor lists, k-NN graphs and the distance metrics."""

from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels as K

METRICS = {"euclidean": K.EUCLIDEAN, "cosine": K.COSINE}


class InvalidInputError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class Dataset:
    """An immutable n x d matrix of float64 points plus a metric name.

    Rows are copied into a private C-contiguous array and marked read-only.
    For cosine, per-row norms are precomputed once so every distance sees
    identical denominators.
    """

    def __init__(self, points, metric: str = "euclidean"):
        if metric not in METRICS:
            raise InvalidInputError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}")
        X = np.array(points, dtype=np.float64, order="C", copy=True)
        if X.ndim != 2:
            raise InvalidInputError(f"points must be a 2-D matrix, got shape {X.shape}")
        n, d = X.shape
        if n < 2:
            raise InvalidInputError(f"need at least 2 points, got {n}")
        if d < 1:
            raise InvalidInputError("dimensionality must be at least 1")
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise InvalidInputError(f"non-finite coordinate in point {bad}")
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        if metric == "cosine" and np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise InvalidInputError(f"point {bad} has zero norm; cosine distance undefined")
        X.setflags(write=False)
        norms.setflags(write=False)
        self._points = X
        self._norms = norms
        self._metric = metric
        self._digest: int | None = None

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def d(self) -> int:
        return self._points.shape[1]

    @property
    def metric(self) -> str:
        return self._metric

    @property
    def metric_code(self) -> int:
        return METRICS[self._metric]

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @property
    def digest(self) -> int:
        """64-bit FNV-1a hash of the raw float64 bytes (row-major, little endian)."""
        if self._digest is None:
            raw = np.frombuffer(self._points.astype("<f8", copy=False).tobytes(), dtype=np.uint8)
            self._digest = int(K.fnv1a64(raw))
        return self._digest

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.d}, metric={self.metric!r})"


class Neighbor(NamedTuple):
    id: int
    dist: float


def _check_index(dataset: Dataset, i: int) -> int:
    i = int(i)
    if not 0 <= i < dataset.n:
        raise InvalidInputError(f"point index {i} out of range [0, {dataset.n})")
    return i


def distance(dataset: Dataset, i: int, j: int) -> float:
    """Metric distance between points i and j (i != j)."""
    i = _check_index(dataset, i)
    j = _check_index(dataset, j)
    if i == j:
        raise InvalidInputError("distance requires two distinct points")
    return _distance_unchecked(dataset, i, j)


def _distance_unchecked(dataset: Dataset, i: int, j: int) -> float:
    out = K.batch_distance(
        dataset.points, dataset.norms, dataset.metric_code,
        np.array([i], np.int64), np.array([j], np.int64),
    )
    return float(out[0])


class NeighborList:
    """View of one point's sorted, fixed-capacity neighbor list.

    Lists handed out by a :class:`KnnGraph` share its storage.  A standalone
    list (``NeighborList(owner, k)``) owns a private one-row buffer.
    """

    def __init__(self, owner: int, capacity: int, *, _graph: "KnnGraph | None" = None):
        if _graph is None:
            if capacity < 1:
                raise InvalidInputError("capacity must be at least 1")
            self._ids = np.full((1, capacity), -1, np.int32)
            self._dists = np.full((1, capacity), np.inf)
            self._counts = np.zeros(1, np.int32)
            self._row = 0
        else:
            self._ids, self._dists, self._counts = _graph.ids, _graph.dists, _graph.counts
            self._row = owner
        self.owner = int(owner)
        self.capacity = int(capacity)

    @property
    def entries(self) -> list[Neighbor]:
        c = int(self._counts[self._row])
        return [Neighbor(int(q), float(d)) for q, d in zip(self._ids[self._row, :c], self._dists[self._row, :c])]

    def ids(self) -> np.ndarray:
        return self._ids[self._row, : self._counts[self._row]].copy()

    def __len__(self) -> int:
        return int(self._counts[self._row])

    def __iter__(self) -> Iterator[Neighbor]:
        return iter(self.entries)

    def __repr__(self) -> str:
        body = ", ".join(f"({q}, {d:g})" for q, d in self.entries)
        return f"NeighborList(owner={self.owner}, k={self.capacity}, [{body}])"


def try_insert(nlist: NeighborList, cand: Neighbor) -> bool:
    """Offer ``cand`` to ``nlist``; True if the list changed.

    Duplicates are rejected.  When full, the candidate replaces the last entry
    only if it is smaller in (dist, id) order.
    """
    q = int(cand.id)
    if q == nlist.owner:
        raise InvalidInputError(f"self-loop: candidate {q} is the list owner")
    if q < 0:
        raise InvalidInputError(f"negative neighbor id {q}")
    d = float(cand.dist)
    if not d >= 0.0:
        raise InvalidInputError(f"distance must be nonnegative, got {d}")
    return bool(K.try_insert(nlist._ids, nlist._dists, nlist._counts, nlist._row, q, d))


class KnnGraph:
    """Directed k-NN graph stored as padded (n, k) id/distance arrays.

    ``metric`` and ``digest`` record which dataset produced the graph; they are
    written to graph files and checked on load.
    """

    def __init__(self, n: int, k: int, *, metric: str = "euclidean", digest: int = 0):
        if n < 1 or k < 1:
            raise InvalidInputError(f"graph needs n >= 1 and k >= 1, got n={n}, k={k}")
        self.ids = np.full((n, k), -1, np.int32)
        self.dists = np.full((n, k), np.inf)
        self.counts = np.zeros(n, np.int32)
        self.metric = metric
        self.digest = digest

    @classmethod
    def for_dataset(cls, dataset: Dataset, k: int) -> "KnnGraph":
        return cls(dataset.n, k, metric=dataset.metric, digest=dataset.digest)

    @classmethod
    def from_arrays(cls, ids, dists, counts, *, metric="euclidean", digest=0) -> "KnnGraph":
        ids = np.ascontiguousarray(ids, dtype=np.int32)
        g = cls(ids.shape[0], ids.shape[1], metric=metric, digest=digest)
        g.ids[...] = ids
        g.dists[...] = dists
        g.counts[...] = counts
        return g

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    def neighbors(self, i: int) -> NeighborList:
        return NeighborList(i, self.k, _graph=self)

    @property
    def lists(self) -> list[NeighborList]:
        return [self.neighbors(i) for i in range(self.n)]

    def edges(self) -> set[tuple[int, int]]:
        return {(p, int(q)) for p in range(self.n) for q in self.ids[p, : self.counts[p]]}

    def num_edges(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "KnnGraph":
        return KnnGraph.from_arrays(self.ids, self.dists, self.counts, metric=self.metric, digest=self.digest)

    def same_as(self, other: "KnnGraph") -> bool:
        """Exact equality of ids, distances and fill counts."""
        return (
            self.ids.shape == other.ids.shape
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.dists, other.dists)
        )

    def __repr__(self) -> str:
        return f"KnnGraph(n={self.n}, k={self.k}, edges={self.num_edges()})"


def validate_graph(graph: KnnGraph, dataset: Dataset, rtol: float = 1e-6) -> list[str]:
    """Return a human-readable violation per broken invariant; empty if valid."""
    if graph.n != dataset.n:
        return [f"graph has {graph.n} rows but dataset has {dataset.n} points"]
    out: list[str] = []
    n, k = graph.n, graph.k
    ids, dists, counts = graph.ids, graph.dists, graph.counts
    for p in np.flatnonzero((counts < 0) | (counts > k)):
        out.append(f"point {p}: fill count {counts[p]} outside [0, {k}]")
    if out:
        return out

    filled = np.arange(k)[None, :] < counts[:, None]
    owners = np.broadcast_to(np.arange(n)[:, None], (n, k))
    for p, s in np.argwhere(filled & ((ids < 0) | (ids >= n))):
        out.append(f"point {p}: neighbor id {ids[p, s]} out of range")
    for p, s in np.argwhere(filled & (ids == owners)):
        out.append(f"point {p}: self-loop at slot {s}")
    for p, s in np.argwhere(filled & ~(dists >= 0)):
        out.append(f"point {p}: negative or NaN distance at slot {s}")

    # ordering and duplicates between consecutive filled slots
    both = filled[:, 1:]
    d0, d1, i0, i1 = dists[:, :-1], dists[:, 1:], ids[:, :-1], ids[:, 1:]
    unsorted = both & ((d0 > d1) | ((d0 == d1) & (i0 > i1)))
    for p, s in np.argwhere(unsorted):
        out.append(f"point {p}: entries {s} and {s + 1} out of (dist, id) order")
    for p in np.flatnonzero(counts > 1):
        row = ids[p, : counts[p]]
        if np.unique(row).size != row.size:
            out.append(f"point {p}: duplicate neighbor ids")
    if out:
        return out

    left = owners[filled].astype(np.int64)
    right = ids[filled].astype(np.int64)
    stored = dists[filled]
    fresh = K.batch_distance(dataset.points, dataset.norms, dataset.metric_code, left, right)
    bad = ~np.isclose(stored, fresh, rtol=rtol, atol=0.0)
    for p, q, a, b in zip(left[bad], right[bad], stored[bad], fresh[bad]):
        out.append(f"pair ({p}, {q}): stored distance {a!r} != recomputed {b!r}")
    return out
