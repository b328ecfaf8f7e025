import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pqii import kmeans_fit
from pqii.dataset import (
    DatasetError,
    RowRange,
    SyntheticSpec,
    chunk_rows,
    gen_synthetic,
    load_csv,
    load_fvecs,
    load_matrix,
    load_native,
    save_fvecs,
    save_matrix,
    save_native,
)


def _fvecs_record(values, dim=None):
    dim = len(values) if dim is None else dim
    return struct.pack("<i", dim) + struct.pack(f"<{len(values)}f", *values)


class TestFvecs:
    def test_single_record(self, tmp_path):
        p = tmp_path / "one.fvecs"
        p.write_bytes(_fvecs_record([1.0, 2.0]))
        m = load_fvecs(p)
        assert m.shape == (1, 2)
        assert m.dtype == np.float32
        np.testing.assert_array_equal(m, [[1.0, 2.0]])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.fvecs"
        p.write_bytes(b"")
        with pytest.raises(DatasetError, match="no records"):
            load_fvecs(p)

    def test_round_trip_bit_exact(self, tmp_path, rng):
        m = rng.standard_normal((100, 8)).astype(np.float32)
        p = tmp_path / "r.fvecs"
        save_fvecs(m, p)
        back = load_fvecs(p)
        assert back.tobytes() == m.tobytes()

    def test_dimension_mismatch(self, tmp_path):
        p = tmp_path / "bad.fvecs"
        p.write_bytes(_fvecs_record([1.0, 2.0]) + _fvecs_record([1.0, 2.0, 3.0]))
        with pytest.raises(DatasetError, match="dimension mismatch in record 1"):
            load_fvecs(p)

    def test_dimension_mismatch_same_length(self, tmp_path):
        # record 1 claims dim 3 but is laid out like a dim-2 record
        p = tmp_path / "bad.fvecs"
        p.write_bytes(_fvecs_record([1.0, 2.0]) + _fvecs_record([1.0, 2.0], dim=3))
        with pytest.raises(DatasetError, match="dimension mismatch"):
            load_fvecs(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.fvecs"
        p.write_bytes(_fvecs_record([1.0, 2.0]) + _fvecs_record([1.0, 2.0])[:-3])
        with pytest.raises(DatasetError, match="truncated"):
            load_fvecs(p)

    def test_non_finite(self, tmp_path):
        p = tmp_path / "nan.fvecs"
        p.write_bytes(_fvecs_record([1.0, float("nan")]))
        with pytest.raises(DatasetError, match="non-finite"):
            load_fvecs(p)


class TestCsv:
    def test_all_columns(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n3,4\n")
        np.testing.assert_array_equal(load_csv(p), [[1, 2], [3, 4]])

    def test_selection(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n3,4\n")
        m = load_csv(p, ["b"])
        assert m.shape == (2, 1)
        np.testing.assert_array_equal(m, [[2], [4]])

    def test_selection_order(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n3,4\n")
        np.testing.assert_array_equal(load_csv(p, ["b", "a"]), [[2, 1], [4, 3]])

    def test_unparseable_cell_names_row_and_column(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n3,abc\n")
        with pytest.raises(DatasetError, match=r"'abc' at row 2, column 'b'"):
            load_csv(p, ["a", "b"])

    def test_non_numeric_columns_skipped_by_default(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("name,x\nfoo,1.5\nbar,2.5\n")
        np.testing.assert_array_equal(load_csv(p), [[1.5], [2.5]])

    def test_missing_column(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(DatasetError, match="missing column"):
            load_csv(p, ["c"])

    def test_empty_selection(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("name\nfoo\n")
        with pytest.raises(DatasetError, match="empty"):
            load_csv(p)

    def test_quoted_fields(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text('"a","b"\n"1","2"\n')
        np.testing.assert_array_equal(load_csv(p), [[1, 2]])


class TestNative:
    def test_one_by_one(self, tmp_path):
        p = tmp_path / "m.pqim"
        save_native(np.array([[0.5]], dtype=np.float32), p)
        np.testing.assert_array_equal(load_native(p), [[0.5]])

    def test_header_layout(self, tmp_path):
        p = tmp_path / "m.pqim"
        save_native(np.zeros((3, 2), dtype=np.float32), p)
        raw = p.read_bytes()
        assert raw[:4] == b"PQIM"
        assert struct.unpack_from("<IQI", raw, 4) == (1, 3, 2)
        assert len(raw) == 4 + 4 + 8 + 4 + 3 * 2 * 4

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "m.pqim"
        save_native(np.ones((10, 3), dtype=np.float32), p)
        p.write_bytes(p.read_bytes()[: -3 * 4])
        with pytest.raises(DatasetError, match="truncated payload"):
            load_native(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.pqim"
        save_native(np.ones((1, 1), dtype=np.float32), p)
        p.write_bytes(b"XXXX" + p.read_bytes()[4:])
        with pytest.raises(DatasetError, match="bad magic"):
            load_native(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "m.pqim"
        save_native(np.ones((1, 1), dtype=np.float32), p)
        raw = bytearray(p.read_bytes())
        raw[4:8] = struct.pack("<I", 2)
        p.write_bytes(bytes(raw))
        with pytest.raises(DatasetError, match="unsupported version"):
            load_native(p)

    def test_extra_bytes(self, tmp_path):
        p = tmp_path / "m.pqim"
        save_native(np.ones((1, 1), dtype=np.float32), p)
        p.write_bytes(p.read_bytes() + b"\0\0\0\0")
        with pytest.raises(DatasetError, match="length mismatch"):
            load_native(p)

    def test_round_trip_large(self, tmp_path, rng):
        m = (rng.standard_normal((1000, 48)) * 1e3).astype(np.float32)
        p = tmp_path / "m.pqim"
        save_native(m, p)
        assert load_native(p).tobytes() == m.tobytes()

    def test_dispatch_by_extension(self, tmp_path, rng):
        m = rng.random((5, 3), dtype=np.float32)
        for name in ("x.fvecs", "x.pqim", "x.bin"):
            save_matrix(m, tmp_path / name)
            assert load_matrix(tmp_path / name).tobytes() == m.tobytes()


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(500, 12, 5, 0.5, seed=42)
        assert gen_synthetic(spec).tobytes() == gen_synthetic(spec).tobytes()

    def test_seed_matters(self):
        a = gen_synthetic(SyntheticSpec(50, 4, 3, 0.5, seed=1))
        b = gen_synthetic(SyntheticSpec(50, 4, 3, 0.5, seed=2))
        assert not np.array_equal(a, b)

    def test_shape_and_dtype(self):
        m = gen_synthetic(SyntheticSpec(37, 9, 4, 1.0, seed=0))
        assert m.shape == (37, 9) and m.dtype == np.float32

    def test_tight_clusters_recovered_by_kmeans(self):
        n, d = 300, 8
        data = gen_synthetic(SyntheticSpec(n, d, n_clusters=3, spread=1e-9, seed=11))
        res = kmeans_fit(data, 3, max_iters=50, seed=0)
        assert res.inertia <= 1e-6 * n * d

    def test_means_inside_scaled_cube(self):
        data = gen_synthetic(SyntheticSpec(2000, 3, n_clusters=4, spread=1e-6, seed=5))
        assert data.min() >= -1e-4 and data.max() <= 10.0 + 1e-4

    @pytest.mark.parametrize(
        "kwargs",
        [dict(n_rows=0, n_dims=2), dict(n_rows=2, n_dims=0), dict(n_rows=2, n_dims=2, n_clusters=0),
         dict(n_rows=2, n_dims=2, spread=0.0)],
    )
    def test_preconditions(self, kwargs):
        with pytest.raises(DatasetError):
            SyntheticSpec(**kwargs)


class TestChunkRows:
    def test_even_split_large(self):
        ranges = chunk_rows(6_700_000, 400)
        assert len(ranges) == 400
        assert {len(r) for r in ranges} == {16_750}

    def test_remainder_goes_first(self):
        assert chunk_rows(10, 3) == [RowRange(0, 4), RowRange(4, 7), RowRange(7, 10)]

    def test_singletons(self):
        assert chunk_rows(5, 5) == [RowRange(i, i + 1) for i in range(5)]

    @pytest.mark.parametrize("n,c", [(5, 6), (5, 0), (0, 1)])
    def test_invalid(self, n, c):
        with pytest.raises(DatasetError):
            chunk_rows(n, c)

    @given(st.integers(1, 10_000).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))))
    def test_partition_property(self, nc):
        n, c = nc
        ranges = chunk_rows(n, c)
        assert len(ranges) == c
        assert ranges[0].start == 0 and ranges[-1].end == n
        for a, b in zip(ranges, ranges[1:]):
            assert a.end == b.start
        sizes = [len(r) for r in ranges]
        assert max(sizes) - min(sizes) <= 1
        assert sizes == sorted(sizes, reverse=True)
