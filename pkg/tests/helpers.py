"""Small dataset builders shared by the test modules."""

import math

from calgate.datamodel import Dataset, LogitRecord


def make_dataset(rows, k=None, split_tag="unsplit"):
    """rows: iterable of (stream_id, t_ms, logits, label)."""
    records = [LogitRecord(s, t, tuple(float(v) for v in logits), y) for s, t, logits, y in rows]
    return Dataset(k or len(records[0].logits), records, split_tag)


def records_with_top_conf(confs, correct):
    """Two-class records with raw top-class confidence ``c`` (c > 0.5) on class 0."""
    rows = []
    for i, (c, ok) in enumerate(zip(confs, correct)):
        rows.append(("s", i, (math.log(c / (1 - c)), 0.0), 0 if ok else 1))
    return make_dataset(rows)
