from __future__ import annotations

import hashlib
import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from hjsing.export import format_number, sha256_file, write_csv, write_json


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_number_round_trips(v):
    assert float(format_number(v)) == v


def test_format_number_ints_and_bools():
    assert format_number(True) == "1"
    assert format_number(np.bool_(False)) == "0"
    assert format_number(np.int64(7)) == "7"


def test_write_csv_and_hash(tmp_path):
    path = write_csv(tmp_path / "sub" / "a.csv", ["x", "y"], [[0.1, 2], [np.float64(3.5), True]])
    data = path.read_bytes()
    assert data == b"x,y\n0.1,2\n3.5,1\n"
    assert sha256_file(path) == hashlib.sha256(data).hexdigest()


def test_write_json_sorted_and_numpy_safe(tmp_path):
    path = write_json(tmp_path / "r.json", {"b": np.array([1.0, 2.0]), "a": np.float64(0.5)})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 0.5, "b": [1.0, 2.0]}
