import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evlab import io


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(io.fmt(x)) == x


def test_fmt_special_values():
    assert io.fmt(True) == "1"
    assert io.fmt(np.int64(3)) == "3"
    assert io.fmt(math.inf) == "inf" and io.fmt(-math.inf) == "-inf" and io.fmt(math.nan) == "nan"
    assert io.fmt(np.float64(0.1)) == "0.1"


def test_csv_appender_appends_and_checks_header(tmp_path):
    path = tmp_path / "m.csv"
    with io.CsvAppender(path, ("a", "b")) as out:
        out.write([1, 0.5])
    with io.CsvAppender(path, ("a", "b")) as out:
        out.write({"a": 2, "b": 0.25})
    header, rows = io.read_csv(path)
    assert header == ["a", "b"] and rows == [["1", "0.5"], ["2", "0.25"]]
    with pytest.raises(ValueError):
        io.CsvAppender(path, ("a", "c"))


def test_empty_file_gets_header(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("")
    assert io.read_csv(path) == ([], [])
    io.CsvAppender(path, ("x",)).close()
    assert path.read_text() == "x\n"


def test_dumps_is_canonical():
    a = io.dumps({"b": np.float64(1.5), "a": [np.int32(1), np.bool_(True)], "c": math.inf})
    b = io.dumps({"c": math.inf, "a": [1, True], "b": 1.5})
    assert a == b
    assert '"c": "inf"' in a
