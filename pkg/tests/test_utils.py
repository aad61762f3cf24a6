from __future__ import annotations

import json
import math

import numpy as np
from numpy.testing import assert_array_equal

from oclab import config
from oclab.utils import csv_text, format_number, json_text, parallel_map, stream_rng, thread_count


def test_streams_are_keyed():
    a = stream_rng(42, 4, 0).random(5)
    assert_array_equal(a, stream_rng(42, 4, 0).random(5))
    assert not np.array_equal(a, stream_rng(42, 4, 1).random(5))
    assert not np.array_equal(a, stream_rng(43, 4, 0).random(5))


def test_thread_count_reads_the_environment(monkeypatch):
    monkeypatch.delenv(config.THREADS_ENV, raising=False)
    assert thread_count() == config.DEFAULT_THREADS
    monkeypatch.setenv(config.THREADS_ENV, "3")
    assert thread_count() == 3
    monkeypatch.setenv(config.THREADS_ENV, "lots")
    assert thread_count() == config.DEFAULT_THREADS
    monkeypatch.setenv(config.THREADS_ENV, "0")
    assert thread_count() == 1


def test_parallel_map_keeps_order():
    assert parallel_map(lambda v: v * v, list(range(20)), threads=4) == [v * v for v in range(20)]


def test_number_formatting():
    assert format_number(0.1) == "0.1"
    assert format_number(math.inf) == "inf"
    assert format_number(-math.inf) == "-inf"
    assert format_number(math.nan) == "nan"
    assert format_number(np.bool_(True)) == "true"
    assert format_number(np.int64(7)) == "7"
    assert format_number(None) == ""


def test_csv_and_json_text():
    assert csv_text(("a", "b"), [[1, 0.5], [2, math.inf]]) == "a,b\n1,0.5\n2,inf\n"
    payload = json.loads(json_text({"x": np.array([1.0, math.nan]), "ok": np.bool_(False)}))
    assert payload == {"x": [1.0, "nan"], "ok": False}
