import math

import numpy as np
import pytest
import yaml

from hjhomog import io


@pytest.mark.parametrize("value, text", [
    (1.0, "1"), (0.1, "0.1"), (1 / 3, "0.333333333333"), (-0.0, "0"), (np.float64(2.5), "2.5"),
    (3, "3"), (np.int64(4), "4"), (True, "true"), (math.nan, "nan"), (-math.inf, "-inf"),
    ("E", "E"),
])
def test_fmt(value, text):
    assert io.fmt(value) == text


def test_csv_round_trip(tmp_path):
    rows = [(0.5, 1 / 7, "E"), (1.0, -2.0, "gap_0")]
    path = io.write_csv(tmp_path / "sub" / "t.csv", ["theta", "hbar", "region"], rows)
    header, back = io.read_csv(path)
    assert header == ["theta", "hbar", "region"]
    cols = io.numeric_columns(header, back)
    assert set(cols) == {"theta", "hbar"}
    assert cols["hbar"][0] == pytest.approx(1 / 7, rel=1e-11)


def test_json_round_trip(tmp_path):
    obj = {"a": np.arange(3), "b": np.float64(0.5), "c": (1, 2), "d": math.inf, "e": {3: math.nan}}
    back = io.read_json(io.write_json(tmp_path / "x.json", obj))
    assert back == {"a": [0, 1, 2], "b": 0.5, "c": [1, 2], "d": "inf", "e": {"3": "nan"}}


def test_hashes(tmp_path):
    assert io.content_hash({"a": 1, "b": 2}) == io.content_hash({"b": 2, "a": 1})
    assert io.content_hash({"a": 1}) != io.content_hash({"a": 2})
    p = tmp_path / "f.txt"
    p.write_text("hello")
    h = io.file_hash(p)
    assert len(h) == 64
    p.write_text("hello!")
    assert io.file_hash(p) != h


def test_load_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"task": "validate", "params": {"p_max": 3}}))
    assert io.load_config(p)["params"]["p_max"] == 3
    j = tmp_path / "c.json"
    j.write_text('{"task": "effective"}')
    assert io.load_config(j) == {"task": "effective"}
