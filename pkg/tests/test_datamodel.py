import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calgate.datamodel import (
    DataError,
    Dataset,
    LogitRecord,
    ProbRecord,
    load_dataset,
    save_dataset,
    split_by_stream,
)
from helpers import make_dataset

CSV_2ROWS = "stream_id,t_ms,label,logit_0,logit_1,logit_2\na,0,1,0.5,1.5,-2.0\na,40,2,0.0,0.0,3.25\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_smallest_csv(tmp_path):
    ds = load_dataset(write(tmp_path, "d.csv", CSV_2ROWS))
    assert ds.k == 3
    assert len(ds) == 2
    assert ds.records[1] == LogitRecord("a", 40, (0.0, 0.0, 3.25), 2)


def test_nan_logit_names_line(tmp_path):
    text = CSV_2ROWS + "a,80,0,NaN,0,0\n"
    with pytest.raises(DataError, match="line 4") as exc:
        load_dataset(write(tmp_path, "d.csv", text))
    assert exc.value.line == 4


@pytest.mark.parametrize(
    "row, message",
    [
        ("a,80,0,1,2\n", "inconsistent K"),
        ("a,80,3,1,2,3\n", "label 3 outside"),
        ("a,40,0,1,2,3\n", "not strictly increasing"),
        ("a,x,0,1,2,3\n", "t_ms is not an integer"),
        ("a,80,0,1,inf,3\n", "not finite"),
    ],
)
def test_csv_errors(tmp_path, row, message):
    with pytest.raises(DataError, match=message):
        load_dataset(write(tmp_path, "d.csv", CSV_2ROWS + row))


def test_bad_header(tmp_path):
    with pytest.raises(DataError, match="line 1"):
        load_dataset(write(tmp_path, "d.csv", "stream,t,label,l0,l1\n"))


def _ndjson(rows):
    lines = []
    for s, t, y, logits in rows:
        obj = {"stream_id": s, "t_ms": t, "label": y}
        obj.update({f"logit_{i}": v for i, v in enumerate(logits)})
        lines.append(json.dumps(obj))
    return "\n".join(lines) + "\n"


def test_ndjson_interleaved_streams_regrouped(tmp_path):
    # hand-built: a0, b0, a1, b1 in file order
    text = _ndjson([("a", 0, 0, [1, 0]), ("b", 5, 1, [0, 1]), ("a", 40, 1, [2, 0]), ("b", 45, 0, [0, 2])])
    ds = load_dataset(write(tmp_path, "d.ndjson", text))
    assert [(r.stream_id, r.t_ms) for r in ds.records] == [("a", 0), ("a", 40), ("b", 5), ("b", 45)]
    assert [r.label for r in ds.records] == [0, 1, 1, 0]


def test_ndjson_errors(tmp_path):
    with pytest.raises(DataError, match="line 2"):
        load_dataset(write(tmp_path, "d.ndjson", _ndjson([("a", 0, 0, [1, 0])]) + "{not json}\n"))
    with pytest.raises(DataError, match="line 2.*expected K=2"):
        load_dataset(write(tmp_path, "d.ndjson", _ndjson([("a", 0, 0, [1, 0]), ("a", 1, 0, [1, 0, 0])])))
    with pytest.raises(DataError, match="cannot infer K"):
        load_dataset(write(tmp_path, "d.ndjson", ""))


@pytest.mark.parametrize("fmt", ["csv", "ndjson"])
def test_round_trip_two_rows(tmp_path, fmt):
    ds = load_dataset(write(tmp_path, "d.csv", CSV_2ROWS))
    path = tmp_path / f"out.{fmt}"
    save_dataset(ds, path)
    assert load_dataset(path) == ds


@pytest.mark.parametrize("fmt", ["csv", "ndjson"])
def test_one_third_survives_exactly(tmp_path, fmt):
    value = 1.0 / 3.0
    ds = make_dataset([("s", 0, (value, -value, 2e-310), 0)])
    path = tmp_path / f"out.{fmt}"
    save_dataset(ds, path)
    back = load_dataset(path).records[0].logits
    # print-parse oracle: the shortest repr parses back to the same double
    assert float(repr(value)) == value
    assert back == (value, -value, 2e-310)


def test_empty_dataset_round_trip(tmp_path):
    ds = Dataset(4, [])
    save_dataset(ds, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "stream_id,t_ms,label,logit_0,logit_1,logit_2,logit_3\n"
    assert load_dataset(tmp_path / "e.csv") == ds
    save_dataset(ds, tmp_path / "e.ndjson")
    assert load_dataset(tmp_path / "e.ndjson", k=4) == ds


def test_record_invariants():
    with pytest.raises(DataError):
        LogitRecord("s", 0, (1.0,), 0)
    with pytest.raises(DataError):
        LogitRecord("s", 0, (1.0, math.inf), 0)
    with pytest.raises(DataError):
        LogitRecord("s", 0, (1.0, 2.0), 2)
    with pytest.raises(DataError):
        ProbRecord("s", 0, (0.5, 0.6), 0)
    ProbRecord("s", 0, (0.25, 0.75), 1)


def test_dataset_invariants():
    a0 = LogitRecord("a", 0, (0.0, 1.0), 0)
    a1 = LogitRecord("a", 40, (0.0, 1.0), 0)
    b0 = LogitRecord("b", 0, (0.0, 1.0), 0)
    with pytest.raises(DataError, match="strictly increasing"):
        Dataset(2, [a1, a0])
    with pytest.raises(DataError, match="contiguous"):
        Dataset(2, [a0, b0, a1])
    with pytest.raises(DataError, match="declares K=3"):
        Dataset(3, [a0])


def _streams_dataset(n_streams, ticks=3):
    rows = [(f"s{i}", 40 * t, (float(i), float(t)), (i + t) % 2) for i in range(n_streams) for t in range(ticks)]
    return make_dataset(rows)


def test_split_three_streams_one_each():
    train, val, test = split_by_stream(_streams_dataset(3), (1 / 3, 1 / 3, 1 / 3), seed=0)
    assert [len(d.stream_ids) for d in (train, val, test)] == [1, 1, 1]
    assert [d.split_tag for d in (train, val, test)] == ["train", "val", "test"]


def test_split_all_train():
    ds = _streams_dataset(5)
    train, val, test = split_by_stream(ds, (1.0, 0.0, 0.0), seed=3)
    assert sorted(train.stream_ids) == sorted(ds.stream_ids)
    assert len(val) == len(test) == 0


def test_split_deterministic():
    ds = _streams_dataset(10)
    first = split_by_stream(ds, (0.6, 0.2, 0.2), seed=42)
    second = split_by_stream(ds, (0.6, 0.2, 0.2), seed=42)
    assert first == second
    assert [len(d.stream_ids) for d in first] == [6, 2, 2]


def test_split_errors():
    with pytest.raises(DataError, match="cannot fill"):
        split_by_stream(_streams_dataset(2), (0.5, 0.25, 0.25))
    with pytest.raises(ValueError):
        split_by_stream(_streams_dataset(3), (0.5, 0.5, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 20), st.lists(st.floats(0.01, 1), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
def test_split_partitions_whole_streams(n_streams, raw, seed):
    fractions = [f / sum(raw) for f in raw]
    ds = _streams_dataset(n_streams)
    parts = split_by_stream(ds, fractions, seed)
    id_sets = [set(p.stream_ids) for p in parts]
    assert all(ids for ids in id_sets)
    assert sum(len(ids) for ids in id_sets) == n_streams
    assert set().union(*id_sets) == set(ds.stream_ids)
    for part in parts:
        for sid in part.stream_ids:
            assert [r for r in part.records if r.stream_id == sid] == [r for r in ds.records if r.stream_id == sid]


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def datasets(draw):
    k = draw(st.integers(2, 5))
    n_streams = draw(st.integers(0, 3))
    rows = []
    for s in range(n_streams):
        sid = draw(st.sampled_from(["a", "b,c", 'q"x', " sp "])) + str(s)
        times = sorted(draw(st.sets(st.integers(0, 10**9), min_size=1, max_size=4)))
        for t in times:
            logits = draw(st.lists(finite, min_size=k, max_size=k))
            rows.append((sid, t, logits, draw(st.integers(0, k - 1))))
    return Dataset(k, [LogitRecord(sid, t, tuple(l), y) for sid, t, l, y in rows])


@settings(max_examples=60, deadline=None)
@given(datasets(), st.sampled_from(["csv", "ndjson"]))
def test_round_trip_property(tmp_path_factory, ds, fmt):
    path = tmp_path_factory.mktemp("rt") / f"d.{fmt}"
    save_dataset(ds, path)
    back = load_dataset(path, k=ds.k)
    assert back == ds
    for r in back.records:
        assert len(r.logits) == ds.k and all(math.isfinite(v) for v in r.logits)
        assert 0 <= r.label < ds.k
