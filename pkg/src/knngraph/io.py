"""Vector file readers/writers, the graph file format, and synthetic data.

Graph files are little-endian: a 32-byte header

    magic "KNNG" | version u32 | n u64 | k u32 | metric u32 | digest u64

followed, for every point in id order, by its fill count (u32) and that many
(id u32, dist f64) entries, packed without padding.
"""

from __future__ import annotations

import csv
import os
import struct
from pathlib import Path

import numpy as np

from .core import METRICS, Dataset, InvalidInputError, KnnGraph


class FormatError(ValueError):
    """A file does not follow the expected layout."""


class DigestMismatchError(FormatError):
    """A graph file was built from a different dataset than the one supplied."""


VECTOR_FORMATS = ("fvecs", "bvecs", "csv")

MAGIC = b"KNNG"
VERSION = 1
_HEADER = struct.Struct("<4sIQIIQ")
HEADER_SIZE = _HEADER.size
_ENTRY = np.dtype([("id", "<u4"), ("dist", "<f8")])  # packed: 12 bytes
_METRIC_TAGS = {name: code for name, code in METRICS.items()}
_TAG_METRICS = {code: name for name, code in METRICS.items()}


# ---------------------------------------------------------------------------
# vectors
# ---------------------------------------------------------------------------


def _read_vecs(raw: bytes, elem: np.dtype) -> np.ndarray:
    """Parse (d: i32, d elements) records; every record must share d."""
    size = len(raw)
    if size == 0:
        return np.zeros((0, 0), elem)
    if size < 4:
        raise FormatError(f"truncated record header at byte offset 0 (file has {size} bytes)")
    d = int(np.frombuffer(raw, "<i4", count=1)[0])
    if d <= 0:
        raise FormatError(f"record 0 declares dimension {d}")
    rec = 4 + d * elem.itemsize
    if size % rec == 0:
        n = size // rec
        heads = np.ndarray((n,), "<i4", buffer=raw, offset=0, strides=(rec,))
        bad = np.flatnonzero(heads != d)
        if bad.size == 0:
            body = np.frombuffer(raw, np.uint8).reshape(n, rec)[:, 4:]
            return body.copy().view(elem).reshape(n, d)
    # slow path: walk the records to locate the first problem exactly
    off = 0
    t = 0
    while off < size:
        if off + 4 > size:
            raise FormatError(f"truncated record header at byte offset {off} (record {t})")
        dt = int(np.frombuffer(raw, "<i4", count=1, offset=off)[0])
        if dt != d:
            raise FormatError(f"record {t} has dimension {dt}, expected {d}")
        if off + rec > size:
            raise FormatError(f"truncated record {t} at byte offset {off}: needs {rec} bytes, {size - off} left")
        off += rec
        t += 1
    raise AssertionError("unreachable: size mismatch without a located defect")


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as f:
        for t, row in enumerate(csv.reader(f)):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"row {t} has {len(row)} columns, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise FormatError(f"row {t}: {exc}") from None
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=np.float64)


def read_vectors(path: str | os.PathLike, format: str) -> np.ndarray:
    """Raw matrix from an fvecs (float32), bvecs (uint8) or csv (float64) file."""
    if format not in VECTOR_FORMATS:
        raise InvalidInputError(f"unknown vector format {format!r}; expected one of {VECTOR_FORMATS}")
    path = Path(path)
    if format == "csv":
        return _read_csv(path)
    raw = path.read_bytes()
    return _read_vecs(raw, np.dtype("<f4") if format == "fvecs" else np.dtype("u1"))


def load_vectors(path: str | os.PathLike, format: str, metric: str = "euclidean") -> Dataset:
    """Dataset from a vector file; values are widened to float64."""
    X = read_vectors(path, format)
    if X.shape[0] < 2:
        raise InvalidInputError(f"{path}: need at least 2 vectors, found {X.shape[0]}")
    return Dataset(X.astype(np.float64), metric)


def infer_format(path: str | os.PathLike) -> str:
    ext = Path(path).suffix.lower().lstrip(".")
    if ext in VECTOR_FORMATS:
        return ext
    raise InvalidInputError(f"cannot infer vector format from {path!r}; pass it explicitly")


def write_fvecs(path: str | os.PathLike, X) -> None:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidInputError("fvecs needs a 2-D matrix with d >= 1")
    n, d = X.shape
    out = np.empty((n, d + 1), "<f4")
    out[:, 1:] = X
    out[:, :1].view("<i4")[:] = d
    out.tofile(path)


def write_bvecs(path: str | os.PathLike, X) -> None:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidInputError("bvecs needs a 2-D matrix with d >= 1")
    if X.size and (X.min() < 0 or X.max() > 255 or np.any(X != np.round(X))):
        raise InvalidInputError("bvecs holds integers in [0, 255] only")
    n, d = X.shape
    out = np.empty((n, 4 + d), np.uint8)
    out[:, :4] = np.frombuffer(struct.pack("<i", d), np.uint8)
    out[:, 4:] = X.astype(np.uint8)
    out.tofile(path)


def write_csv(path: str | os.PathLike, X) -> None:
    """One row per vector; 17 significant digits so float64 values round-trip."""
    X = np.asarray(X, dtype=np.float64)
    np.savetxt(path, X, delimiter=",", fmt="%.17g")


def write_vectors(path: str | os.PathLike, X, format: str) -> None:
    {"fvecs": write_fvecs, "bvecs": write_bvecs, "csv": write_csv}[format](path, X)


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


def graph_file_size(graph: KnnGraph) -> int:
    return HEADER_SIZE + 4 * graph.n + _ENTRY.itemsize * graph.num_edges()


def graph_to_bytes(graph: KnnGraph) -> bytes:
    if graph.metric not in _METRIC_TAGS:
        raise InvalidInputError(f"unknown metric {graph.metric!r}")
    n, k = graph.n, graph.k
    counts = graph.counts.astype(np.int64)
    parts = [_HEADER.pack(MAGIC, VERSION, n, k, _METRIC_TAGS[graph.metric], graph.digest & 0xFFFFFFFFFFFFFFFF)]
    entries = np.empty(k, _ENTRY)
    for p in range(n):
        c = int(counts[p])
        parts.append(struct.pack("<I", c))
        if c:
            entries["id"][:c] = graph.ids[p, :c]
            entries["dist"][:c] = graph.dists[p, :c]
            parts.append(entries[:c].tobytes())
    return b"".join(parts)


def save_graph(graph: KnnGraph, path: str | os.PathLike) -> None:
    Path(path).write_bytes(graph_to_bytes(graph))


def graph_from_bytes(raw: bytes, dataset: Dataset | None = None) -> KnnGraph:
    size = len(raw)
    if size < HEADER_SIZE:
        raise FormatError(f"truncated header: {size} of {HEADER_SIZE} bytes")
    magic, version, n, k, tag, digest = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported graph file version {version}")
    if n < 1 or k < 1:
        raise FormatError(f"header declares n={n}, k={k}")
    if tag not in _TAG_METRICS:
        raise FormatError(f"unknown metric tag {tag}")
    metric = _TAG_METRICS[tag]
    if dataset is not None:
        if dataset.digest != digest:
            raise DigestMismatchError(
                f"graph was built from dataset {digest:016x}, supplied dataset is {dataset.digest:016x}"
            )
        if dataset.n != n or dataset.metric != metric:
            raise DigestMismatchError(
                f"graph is (n={n}, {metric}), dataset is (n={dataset.n}, {dataset.metric})"
            )
    graph = KnnGraph(n, k, metric=metric, digest=digest)
    off = HEADER_SIZE
    for p in range(n):
        if off + 4 > size:
            raise FormatError(f"truncated at byte offset {off}: missing count of point {p}")
        (c,) = struct.unpack_from("<I", raw, off)
        off += 4
        if c > k:
            raise FormatError(f"point {p} has {c} entries, more than k={k}")
        need = c * _ENTRY.itemsize
        if off + need > size:
            raise FormatError(f"truncated at byte offset {off}: point {p} needs {need} bytes, {size - off} left")
        if c:
            e = np.frombuffer(raw, _ENTRY, count=c, offset=off)
            if np.any(e["id"] >= n):
                raise FormatError(f"point {p} lists a neighbor id outside [0, {n})")
            graph.ids[p, :c] = e["id"]
            graph.dists[p, :c] = e["dist"]
        graph.counts[p] = c
        off += need
    if off != size:
        raise FormatError(f"{size - off} trailing bytes after the last point")
    return graph


def load_graph(path: str | os.PathLike, dataset: Dataset | None = None) -> KnnGraph:
    """Read a graph file; with ``dataset``, refuse files built from other data."""
    return graph_from_bytes(Path(path).read_bytes(), dataset)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def gaussian_mixture(n: int, d: int, clusters: int, seed: int = 0, spread: float = 5.0) -> np.ndarray:
    """n points from ``clusters`` unit-variance Gaussians whose centers are
    drawn from N(0, spread**2 I); cluster of each point uniform at random."""
    if n < 1 or d < 1 or clusters < 1:
        raise InvalidInputError(f"need n, d, clusters >= 1, got {n}, {d}, {clusters}")
    if spread < 0:
        raise InvalidInputError(f"spread must be nonnegative, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spread, (clusters, d))
    labels = rng.integers(0, clusters, n)
    return centers[labels] + rng.standard_normal((n, d))
