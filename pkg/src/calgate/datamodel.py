"""Logit records, datasets and their CSV / NDJSON serialization.

Records carry raw logits; probabilities are always derived on demand.
Datasets keep records grouped by stream, in order of first appearance,
with strictly increasing ``t_ms`` inside every stream.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLIT_TAGS = ("train", "val", "test", "unsplit")
FORMATS = ("csv", "ndjson")
DEFAULT_TICK_MS = 40


class DataError(ValueError):
    """Invalid record or malformed dataset file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LogitRecord:
    stream_id: str
    t_ms: int
    logits: tuple[float, ...]
    label: int

    def __post_init__(self):
        if len(self.logits) < 2:
            raise DataError(f"need at least 2 logits, got {len(self.logits)}")
        if not all(math.isfinite(v) for v in self.logits):
            raise DataError(f"non-finite logit in record t_ms={self.t_ms}")
        if not 0 <= self.label < len(self.logits):
            raise DataError(f"label {self.label} outside [0, {len(self.logits)})")

    @property
    def k(self) -> int:
        return len(self.logits)


@dataclass(frozen=True)
class ProbRecord:
    stream_id: str
    t_ms: int
    probs: tuple[float, ...]
    label: int

    def __post_init__(self):
        if any(not (0.0 <= p <= 1.0) for p in self.probs):
            raise DataError("probabilities must lie in [0, 1]")
        if abs(math.fsum(self.probs) - 1.0) > 1e-9:
            raise DataError("probabilities must sum to 1")
        if not 0 <= self.label < len(self.probs):
            raise DataError(f"label {self.label} outside [0, {len(self.probs)})")


@dataclass(frozen=True)
class Dataset:
    k: int
    records: tuple[LogitRecord, ...] = ()
    split_tag: str = "unsplit"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.k < 2:
            raise DataError(f"K must be >= 2, got {self.k}")
        if self.split_tag not in SPLIT_TAGS:
            raise DataError(f"unknown split tag {self.split_tag!r}")
        last_t: dict[str, int] = {}
        closed: set[str] = set()
        current = None
        for r in self.records:
            if r.k != self.k:
                raise DataError(f"record has {r.k} logits, dataset declares K={self.k}")
            if r.stream_id != current:
                if r.stream_id in closed:
                    raise DataError(f"stream {r.stream_id!r} is not contiguous")
                if current is not None:
                    closed.add(current)
                current = r.stream_id
            prev = last_t.get(r.stream_id)
            if prev is not None and r.t_ms <= prev:
                raise DataError(f"t_ms not strictly increasing in stream {r.stream_id!r}")
            last_t[r.stream_id] = r.t_ms

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def logits(self) -> np.ndarray:
        """(n, K) read-only matrix of logits."""
        arr = np.array([r.logits for r in self.records], dtype=np.float64).reshape(-1, self.k)
        arr.flags.writeable = False
        return arr

    @cached_property
    def labels(self) -> np.ndarray:
        arr = np.array([r.label for r in self.records], dtype=np.int64)
        arr.flags.writeable = False
        return arr

    @property
    def stream_ids(self) -> list[str]:
        return list(dict.fromkeys(r.stream_id for r in self.records))

    def streams(self, tick_ms: int = DEFAULT_TICK_MS) -> list[StreamSequence]:
        groups: dict[str, list[LogitRecord]] = {}
        for r in self.records:
            groups.setdefault(r.stream_id, []).append(r)
        return [StreamSequence(sid, tuple(recs), tick_ms) for sid, recs in groups.items()]

    def with_tag(self, split_tag: str) -> Dataset:
        return Dataset(self.k, self.records, split_tag)

    @classmethod
    def from_arrays(cls, stream_ids: Sequence[str], t_ms: Sequence[int], logits: np.ndarray,
                    labels: Sequence[int], split_tag: str = "unsplit") -> Dataset:
        logits = np.asarray(logits, dtype=np.float64)
        records = [
            LogitRecord(str(s), int(t), tuple(row.tolist()), int(y))
            for s, t, row, y in zip(stream_ids, t_ms, logits, labels)
        ]
        return cls(logits.shape[1], _group_by_stream(records), split_tag)


@dataclass(frozen=True)
class StreamSequence:
    stream_id: str
    records: tuple[LogitRecord, ...]
    tick_ms: int = DEFAULT_TICK_MS

    def __post_init__(self):
        if self.tick_ms <= 0:
            raise DataError("tick_ms must be positive")
        if not self.records:
            raise DataError(f"stream {self.stream_id!r} is empty")


def _group_by_stream(records: Iterable[LogitRecord]) -> list[LogitRecord]:
    groups: dict[str, list[LogitRecord]] = {}
    for r in records:
        groups.setdefault(r.stream_id, []).append(r)
    return [r for recs in groups.values() for r in recs]


def _header(k: int) -> list[str]:
    return ["stream_id", "t_ms", "label"] + [f"logit_{i}" for i in range(k)]


def _parse_int(text, what: str, line: int) -> int:
    if isinstance(text, bool):
        raise DataError(f"{what} must be an integer", line)
    if isinstance(text, int):
        return text
    try:
        return int(text)
    except (TypeError, ValueError):
        raise DataError(f"{what} is not an integer: {text!r}", line) from None


def _parse_float(text, what: str, line: int) -> float:
    if isinstance(text, bool):
        raise DataError(f"{what} must be a number", line)
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"{what} is not a number: {text!r}", line) from None
    if not math.isfinite(value):
        raise DataError(f"{what} is not finite: {text!r}", line)
    return value


def _check_stream_order(records: list[tuple[int, LogitRecord]]) -> None:
    last: dict[str, int] = {}
    for line, r in records:
        prev = last.get(r.stream_id)
        if prev is not None and r.t_ms <= prev:
            raise DataError(
                f"t_ms {r.t_ms} not strictly increasing in stream {r.stream_id!r} (previous {prev})", line
            )
        last[r.stream_id] = r.t_ms


def _make_record(stream_id, t_ms, label, logits, k: int, line: int) -> LogitRecord:
    t = _parse_int(t_ms, "t_ms", line)
    y = _parse_int(label, "label", line)
    if not 0 <= y < k:
        raise DataError(f"label {y} outside [0, {k})", line)
    values = tuple(_parse_float(v, f"logit_{i}", line) for i, v in enumerate(logits))
    return LogitRecord(str(stream_id), t, values, y)


def _read_csv(text: str) -> tuple[int, list[tuple[int, LogitRecord]]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("missing header", 1) from None
    k = len(header) - 3
    if k < 2 or header != _header(k):
        raise DataError("header must be stream_id,t_ms,label,logit_0..logit_{K-1} with K >= 2", 1)
    out = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)} (inconsistent K)", line)
        out.append((line, _make_record(row[0], row[1], row[2], row[3:], k, line)))
    return k, out


def _read_ndjson(text: str, k: int | None) -> tuple[int, list[tuple[int, LogitRecord]]]:
    out = []
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", line) from None
        if not isinstance(obj, dict):
            raise DataError("expected a JSON object", line)
        n_logits = sum(1 for key in obj if key.startswith("logit_"))
        if k is None:
            k = n_logits
            if k < 2:
                raise DataError("record declares fewer than 2 logits", line)
        expected = set(_header(k))
        if set(obj) != expected:
            if n_logits != k:
                raise DataError(f"record has {n_logits} logits, expected K={k}", line)
            raise DataError(f"keys must be {sorted(expected)}", line)
        logits = [obj[f"logit_{i}"] for i in range(k)]
        out.append((line, _make_record(obj["stream_id"], obj["t_ms"], obj["label"], logits, k, line)))
    if k is None:
        raise DataError("empty NDJSON file: cannot infer K")
    return k, out


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("ndjson", "jsonl"):
        return "ndjson"
    if suffix == "csv":
        return "csv"
    raise DataError(f"cannot infer format from {path.name!r}; pass format explicitly")


def load_dataset(path, format: str | None = None, *, k: int | None = None,
                 split_tag: str = "unsplit") -> Dataset:
    """Read a dataset file, validating every record.

    Records are regrouped per stream (order of first appearance) with the
    file order kept inside each stream. ``k`` is only needed for empty
    NDJSON files, which carry no header.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}")
    text = path.read_text(encoding="utf-8")
    if fmt == "csv":
        k_file, numbered = _read_csv(text)
    elif not text.strip() and k is not None:
        k_file, numbered = k, []
    else:
        k_file, numbered = _read_ndjson(text, k)
    if k is not None and k != k_file:
        raise DataError(f"file declares K={k_file}, expected {k}")
    _check_stream_order(numbered)
    return Dataset(k_file, _group_by_stream(r for _, r in numbered), split_tag)


def dumps_dataset(ds: Dataset, format: str) -> str:
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}")
    buf = io.StringIO()
    if format == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_header(ds.k))
        for r in ds.records:
            # repr() is the shortest string that parses back to the same double
            writer.writerow([r.stream_id, r.t_ms, r.label] + [repr(v) for v in r.logits])
    else:
        for r in ds.records:
            obj = {"stream_id": r.stream_id, "t_ms": r.t_ms, "label": r.label}
            obj.update({f"logit_{i}": v for i, v in enumerate(r.logits)})
            buf.write(json.dumps(obj, allow_nan=False))
            buf.write("\n")
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    atomic_write_text(path, dumps_dataset(ds, format or _infer_format(path)))


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(math.floor(x + 1e-9)) for x in raw]
    leftover = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    # every split asked for gets at least one stream
    for i, f in enumerate(fractions):
        if f > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_stream(ds: Dataset, fractions: Sequence[float] = (0.75, 0.125, 0.125),
                    seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Partition whole streams into train/val/test datasets."""
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be nonnegative and sum to 1")
    ids = ds.stream_ids
    needed = sum(1 for f in fractions if f > 0)
    if len(ids) < needed:
        raise DataError(f"{len(ids)} streams cannot fill {needed} nonempty splits")
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    counts = _allocate(len(ids), fractions)
    bounds = np.cumsum([0] + counts)
    parts = []
    for tag, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        chosen = set(shuffled[lo:hi])
        parts.append(Dataset(ds.k, [r for r in ds.records if r.stream_id in chosen], tag))
    return tuple(parts)
