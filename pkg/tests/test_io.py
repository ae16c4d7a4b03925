import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpvflow import io
from lpvflow.errors import ParseError

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(A=arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_mtx_array_roundtrip_bitwise(tmp_path_factory, A):
    p = tmp_path_factory.mktemp("mtx") / "a.mtx"
    io.write_mtx(p, A)
    assert np.array_equal(io.read_mtx(p), A)


@settings(max_examples=40, deadline=None)
@given(A=arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_csv_roundtrip_bitwise(tmp_path_factory, A):
    p = tmp_path_factory.mktemp("csv") / "a.csv"
    io.write_csv_matrix(p, A, [f"c{i}" for i in range(A.shape[1])])
    B, names = io.read_csv_matrix(p)
    assert np.array_equal(B, A)
    assert names == [f"c{i}" for i in range(A.shape[1])]


def test_mtx_coordinate_roundtrip(tmp_path, rng):
    A = rng.normal(size=(6, 4)) * (rng.random((6, 4)) < 0.4)
    io.write_mtx(tmp_path / "a.mtx", A, coordinate=True, comment="sparse")
    assert np.array_equal(io.read_mtx(tmp_path / "a.mtx"), A)


def test_mtx_symmetric_coordinate(tmp_path):
    (tmp_path / "s.mtx").write_text("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1.5\n2 1 -2\n")
    np.testing.assert_array_equal(io.read_mtx(tmp_path / "s.mtx"), [[1.5, -2.0], [-2.0, 0.0]])


def test_mtx_bad_header_reports_line_one(tmp_path):
    (tmp_path / "bad.mtx").write_text("%%MatrixMarket tensor array real general\n1 1\n1.0\n")
    with pytest.raises(ParseError) as err:
        io.read_mtx(tmp_path / "bad.mtx")
    assert err.value.line == 1


def test_mtx_bad_value_reports_position(tmp_path):
    (tmp_path / "bad.mtx").write_text("%%MatrixMarket matrix array real general\n2 1\n1.0\nabc\n")
    with pytest.raises(ParseError) as err:
        io.read_mtx(tmp_path / "bad.mtx")
    assert err.value.line == 4


def test_mtx_count_mismatch(tmp_path):
    (tmp_path / "bad.mtx").write_text("%%MatrixMarket matrix array real general\n2 2\n1.0\n2.0\n")
    with pytest.raises(ParseError):
        io.read_mtx(tmp_path / "bad.mtx")


def test_csv_ragged_rows(tmp_path):
    (tmp_path / "r.csv").write_text("1,2\n3\n")
    with pytest.raises(ParseError) as err:
        io.read_csv_matrix(tmp_path / "r.csv")
    assert err.value.line == 2


def test_coo3_roundtrip(tmp_path):
    idx = np.array([[0, 1, 2], [2, 0, 0]])
    vals = np.array([0.1, -1.0 / 3.0])
    io.write_coo3(tmp_path / "q.coo", idx, vals, (3, 3, 3))
    i2, v2, shape = io.read_coo3(tmp_path / "q.coo")
    assert np.array_equal(i2, idx) and np.array_equal(v2, vals) and shape == (3, 3, 3)


def test_json_parse_error_position(tmp_path):
    (tmp_path / "x.json").write_text('{\n  "a": 1,\n  oops\n}\n')
    with pytest.raises(ParseError) as err:
        io.read_json(tmp_path / "x.json")
    assert err.value.line == 3


def test_file_digest_changes_with_content(tmp_path):
    a = tmp_path / "a.txt"
    a.write_text("x")
    d1 = io.file_digest(a)
    a.write_text("y")
    assert io.file_digest(a) != d1 and len(d1) == 64


def test_convert_chain_is_lossless(tmp_path, rng):
    A = rng.normal(size=(3, 4))
    io.write_mtx(tmp_path / "A.mtx", A)
    io.convert(tmp_path / "A.mtx", "matrix-market", tmp_path / "A.csv", "csv")
    io.convert(tmp_path / "A.csv", "csv", tmp_path / "A.json", "json-bundle")
    io.convert(tmp_path / "A.json", "json-bundle", tmp_path / "B.mtx", "matrix-market")
    assert np.array_equal(io.read_mtx(tmp_path / "B.mtx"), A)


def test_convert_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        io.convert(tmp_path / "a", "hdf5", tmp_path / "b", "csv")
