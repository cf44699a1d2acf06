"""Vector file loaders/writers and the graph file format."""

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knngraph import BuildConfig, Dataset, DivisionConfig, InvalidInputError, KnnGraph, build_graph
from knngraph.io import (HEADER_SIZE, MAGIC, DigestMismatchError, FormatError, gaussian_mixture, graph_file_size,
                         graph_from_bytes, graph_to_bytes, infer_format, load_graph, load_vectors, read_vectors,
                         save_graph, write_bvecs, write_csv, write_fvecs)
from knngraph.oracle import brute_force_graph
from oracles import gaussian_points


def _fvecs_bytes(rows):
    out = b""
    for r in rows:
        out += struct.pack("<i", len(r)) + struct.pack(f"<{len(r)}f", *r)
    return out


class TestFvecs:
    def test_two_records(self, tmp_path):
        path = tmp_path / "a.fvecs"
        path.write_bytes(_fvecs_bytes([[1, 2, 3, 4], [5, 6, 7, 8.5]]))
        ds = load_vectors(path, "fvecs")
        assert (ds.n, ds.d) == (2, 4)
        assert ds.points[1].tolist() == [5.0, 6.0, 7.0, 8.5]

    def test_round_trip_bit_exact(self, tmp_path):
        X = gaussian_points(1000, 24, 0).astype(np.float32)
        path = tmp_path / "x.fvecs"
        write_fvecs(path, X)
        assert path.stat().st_size == 1000 * (4 + 4 * 24)
        Y = read_vectors(path, "fvecs")
        assert Y.dtype == np.float32 and Y.tobytes() == X.tobytes()
        assert np.array_equal(load_vectors(path, "fvecs").points, X.astype(np.float64))

    def test_inconsistent_dimension(self, tmp_path):
        path = tmp_path / "bad.fvecs"
        path.write_bytes(_fvecs_bytes([[1, 2, 3], [1, 2, 3], [1, 2], [1, 2, 3, 4]]))
        with pytest.raises(FormatError, match="record 2"):
            load_vectors(path, "fvecs")

    def test_inconsistent_dimension_same_size(self, tmp_path):
        # total size still a multiple of the first record's size
        raw = bytearray(_fvecs_bytes([[1, 2], [3, 4], [5, 6]]))
        raw[12:16] = struct.pack("<i", 7)
        path = tmp_path / "bad.fvecs"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="record 1 has dimension 7"):
            load_vectors(path, "fvecs")

    @pytest.mark.parametrize("cut,offset", [(3, 60), (30, 40), (78, 0)])
    def test_truncated(self, tmp_path, cut, offset):
        raw = _fvecs_bytes([[1] * 4 for _ in range(4)])  # 4 records of 20 bytes
        path = tmp_path / "t.fvecs"
        path.write_bytes(raw[: 80 - cut] if cut != 78 else raw[:2])
        with pytest.raises(FormatError, match=f"byte offset {offset}"):
            load_vectors(path, "fvecs")

    def test_nonpositive_dimension(self, tmp_path):
        path = tmp_path / "z.fvecs"
        path.write_bytes(struct.pack("<i", 0) * 3)
        with pytest.raises(FormatError):
            load_vectors(path, "fvecs")

    @pytest.mark.parametrize("rows", [[], [[1.0, 2.0]]])
    def test_too_few_records(self, tmp_path, rows):
        path = tmp_path / "few.fvecs"
        path.write_bytes(_fvecs_bytes(rows))
        with pytest.raises(InvalidInputError):
            load_vectors(path, "fvecs")


class TestBvecs:
    def test_round_trip(self, tmp_path):
        X = np.random.default_rng(1).integers(0, 256, (300, 128))
        path = tmp_path / "x.bvecs"
        write_bvecs(path, X)
        assert path.stat().st_size == 300 * (4 + 128)
        assert np.array_equal(read_vectors(path, "bvecs"), X.astype(np.uint8))
        assert load_vectors(path, "bvecs").points.dtype == np.float64

    def test_widened_values(self, tmp_path):
        path = tmp_path / "w.bvecs"
        path.write_bytes(struct.pack("<i", 3) + bytes([0, 128, 255]) + struct.pack("<i", 3) + bytes([1, 2, 3]))
        assert load_vectors(path, "bvecs").points.tolist() == [[0.0, 128.0, 255.0], [1.0, 2.0, 3.0]]

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.bvecs"
        path.write_bytes(struct.pack("<i", 3) + bytes([0, 1, 2]) + struct.pack("<i", 3) + bytes([4]))
        with pytest.raises(FormatError, match="byte offset 7"):
            load_vectors(path, "bvecs")

    @pytest.mark.parametrize("X", [[[256, 1]], [[-1, 2]], [[1.5, 2]]])
    def test_write_rejects_out_of_range(self, tmp_path, X):
        with pytest.raises(InvalidInputError):
            write_bvecs(tmp_path / "x.bvecs", X)


class TestCsv:
    def test_round_trip_exact(self, tmp_path):
        X = gaussian_points(200, 7, 2) * 1e-3
        path = tmp_path / "x.csv"
        write_csv(path, X)
        assert np.array_equal(load_vectors(path, "csv").points, X)

    def test_empty(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(InvalidInputError):
            load_vectors(path, "csv")

    def test_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2,3\n4,5,6\n7,8\n")
        with pytest.raises(FormatError, match="row 2"):
            load_vectors(path, "csv")

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "n.csv"
        path.write_text("1,2\n3,abc\n")
        with pytest.raises(FormatError, match="row 1"):
            load_vectors(path, "csv")

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("1,2\n\n3,4\n")
        assert load_vectors(path, "csv").n == 2


class TestFormats:
    @pytest.mark.parametrize("name,fmt", [("a.fvecs", "fvecs"), ("b.BVECS", "bvecs"), ("c.csv", "csv")])
    def test_infer(self, name, fmt):
        assert infer_format(name) == fmt

    def test_infer_unknown(self):
        with pytest.raises(InvalidInputError):
            infer_format("data.npy")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(InvalidInputError):
            read_vectors(tmp_path / "x", "npy")

    def test_generator_deterministic(self):
        a = gaussian_mixture(500, 4, 3, seed=5)
        assert np.array_equal(a, gaussian_mixture(500, 4, 3, seed=5))
        assert not np.array_equal(a, gaussian_mixture(500, 4, 3, seed=6))


class TestGraphFile:
    def _graph(self, n=120, k=6, metric="euclidean"):
        ds = Dataset(gaussian_points(n, 4, 3), metric)
        g, _ = build_graph(ds, BuildConfig(k=k, max_divisions=2, enable_propagation=False,
                                           division=DivisionConfig(g=20, seed=1)))
        return ds, g

    @pytest.mark.parametrize("metric", ["euclidean", "cosine"])
    def test_round_trip(self, tmp_path, metric):
        ds, g = self._graph(metric=metric)
        for p, c in ((3, 0), (50, 2), (77, 5)):  # partially filled lists included
            g.counts[p] = c
            g.ids[p, c:], g.dists[p, c:] = -1, np.inf
        path = tmp_path / "g.knng"
        save_graph(g, path)
        h = load_graph(path, ds)
        assert h.same_as(g) and h.metric == metric and h.digest == ds.digest
        assert path.stat().st_size == graph_file_size(g)

    def test_size_formula_at_scale(self, tmp_path):
        ds = Dataset(gaussian_points(20000, 8, 4, clusters=20))
        g, _ = build_graph(ds, BuildConfig(k=10, max_divisions=1, enable_propagation=False,
                                           division=DivisionConfig(g=60, seed=0)))
        path = tmp_path / "big.knng"
        save_graph(g, path)
        expected = HEADER_SIZE + sum(4 + 12 * int(c) for c in g.counts)
        assert path.stat().st_size == expected
        assert load_graph(path, ds).same_as(g)

    def test_header_layout(self):
        ds, g = self._graph()
        raw = graph_to_bytes(g)
        magic, version, n, k, tag, digest = struct.unpack_from("<4sIQIIQ", raw)
        assert (magic, version, n, k, tag, digest) == (MAGIC, 1, g.n, g.k, 0, ds.digest)
        (c0,) = struct.unpack_from("<I", raw, HEADER_SIZE)
        q, d = struct.unpack_from("<Id", raw, HEADER_SIZE + 4)
        assert c0 == g.counts[0] and q == g.ids[0, 0] and d == g.dists[0, 0]

    def test_corrupted_magic(self):
        _, g = self._graph()
        raw = bytearray(graph_to_bytes(g))
        raw[0] ^= 0xFF
        with pytest.raises(FormatError, match="magic"):
            graph_from_bytes(bytes(raw))

    def test_wrong_version(self):
        _, g = self._graph()
        raw = bytearray(graph_to_bytes(g))
        raw[4:8] = struct.pack("<I", 2)
        with pytest.raises(FormatError, match="version"):
            graph_from_bytes(bytes(raw))

    def test_digest_mismatch(self, tmp_path):
        _, g = self._graph()
        other = Dataset(gaussian_points(120, 4, 99))
        path = tmp_path / "g.knng"
        save_graph(g, path)
        with pytest.raises(DigestMismatchError):
            load_graph(path, other)
        load_graph(path)  # fine without a dataset to check against

    def test_metric_mismatch(self):
        ds, g = self._graph()
        with pytest.raises(DigestMismatchError):
            graph_from_bytes(graph_to_bytes(g), Dataset(ds.points, "cosine"))

    @pytest.mark.parametrize("cut", [1, 5, 12, 400])
    def test_truncated(self, cut):
        _, g = self._graph()
        raw = graph_to_bytes(g)
        with pytest.raises(FormatError, match="truncated"):
            graph_from_bytes(raw[:-cut])

    def test_truncated_header(self):
        with pytest.raises(FormatError, match="header"):
            graph_from_bytes(b"KNNG\x01")

    def test_trailing_bytes(self):
        _, g = self._graph()
        with pytest.raises(FormatError, match="trailing"):
            graph_from_bytes(graph_to_bytes(g) + b"\x00")

    def test_count_above_k(self):
        _, g = self._graph()
        raw = bytearray(graph_to_bytes(g))
        raw[HEADER_SIZE:HEADER_SIZE + 4] = struct.pack("<I", g.k + 1)
        with pytest.raises(FormatError, match="more than k"):
            graph_from_bytes(bytes(raw))

    def test_id_out_of_range(self):
        _, g = self._graph()
        raw = bytearray(graph_to_bytes(g))
        raw[HEADER_SIZE + 4:HEADER_SIZE + 8] = struct.pack("<I", g.n)
        with pytest.raises(FormatError, match="outside"):
            graph_from_bytes(bytes(raw))

    @given(n=st.integers(2, 30), k=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, n, k, seed):
        rng = np.random.default_rng(seed)
        g = KnnGraph(n, k, digest=int(rng.integers(0, 2**63)))
        g.counts[:] = rng.integers(0, k + 1, n)
        g.ids[:] = rng.integers(0, n, (n, k))
        g.dists[:] = rng.exponential(size=(n, k))
        h = graph_from_bytes(graph_to_bytes(g))
        for p in range(n):
            c = g.counts[p]
            assert h.counts[p] == c
            assert np.array_equal(h.ids[p, :c], g.ids[p, :c])
            assert np.array_equal(h.dists[p, :c], g.dists[p, :c])

    def test_exact_graph_round_trip(self, tmp_path):
        ds = Dataset(gaussian_points(300, 5, 8))
        g = brute_force_graph(ds, 7)
        save_graph(g, tmp_path / "e.knng")
        assert load_graph(tmp_path / "e.knng", ds).edges() == g.edges()
