"""Ingestion of recorded profiler output and the dataset CSV format.

Parses interval-mode machine-readable counter output (one
``time,count,unit,event,...`` row per sample, ``#`` comments, ``<not
counted>`` sentinels), aggregates samples into fixed windows, and reads and
writes the canonical dataset CSV (header of feature names, one window per
row).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .fingerprint import FeatureSchema

# Sentinels the profiler emits when an event produced no reading.
_MISSING_COUNTS = ("<not counted>", "<not supported>")

# time, count, unit, event at minimum; real output appends run-time,
# percentage and optional metric columns.
_MIN_FIELDS = 4


@dataclass(frozen=True)
class EventSample:
    """One interval reading: timestamp in seconds, event name, count.

    ``count`` is None when the profiler reported the event as not counted.
    """

    timestamp: float
    event: str
    count: int = None


def _parse_count(field: str, line_no: int):
    field = field.strip()
    if field in _MISSING_COUNTS:
        return None
    try:
        value = int(field)
    except ValueError:
        try:
            as_float = float(field)
        except ValueError:
            raise ParseError(line_no, f"unreadable count field {field!r}") from None
        if not as_float.is_integer():
            raise ParseError(line_no, f"non-integer count {field!r}")
        value = int(as_float)
    if value < 0:
        raise ParseError(line_no, f"negative count {value}")
    return value


def parse_perf_intervals(text) -> list:
    """Parse interval-mode counter output into a list of EventSample.

    Accepts str or bytes. Comment lines (``#``) and blank lines are skipped.
    Any malformed content raises ParseError with the 1-based line number;
    arbitrary byte input never escapes as a different exception type.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(0, f"input is not valid UTF-8: {exc}") from None
    samples = []
    last_ts = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) < _MIN_FIELDS:
            raise ParseError(
                line_no, f"expected at least {_MIN_FIELDS} comma-separated fields, got {len(fields)}"
            )
        try:
            ts = float(fields[0])
        except ValueError:
            raise ParseError(line_no, f"unreadable timestamp {fields[0]!r}") from None
        if not np.isfinite(ts) or ts < 0:
            raise ParseError(line_no, f"timestamp must be finite and >= 0, got {fields[0]!r}")
        event = fields[3].strip()
        if not event:
            raise ParseError(line_no, "empty event name")
        if event in last_ts and ts < last_ts[event]:
            raise ParseError(line_no, f"timestamp for {event!r} decreases ({ts} < {last_ts[event]})")
        last_ts[event] = ts
        samples.append(EventSample(ts, event, _parse_count(fields[1], line_no)))
    return samples


@dataclass(frozen=True)
class DroppedWindow:
    """A window discarded because some schema events had no counted sample."""

    index: int
    missing_events: tuple


def window_aggregate(samples, schema: FeatureSchema, window_s: float = 5.0, zero_fill: bool = False):
    """Sum counts per schema event over half-open [k*w, (k+1)*w) windows.

    Windows in which any schema event has no counted sample are dropped and
    reported, unless ``zero_fill`` is set, in which case the missing entries
    become 0. Returns (rows ordered by window index, list of DroppedWindow).
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    names = schema.names
    name_to_col = {n: i for i, n in enumerate(names)}

    observed = set()
    # window index -> column -> summed count; None marks "no counted sample".
    sums = {}
    seen = {}
    for s in samples:
        observed.add(s.event)
        col = name_to_col.get(s.event)
        if col is None:
            continue
        k = int(s.timestamp // window_s)
        wsum = sums.setdefault(k, [0.0] * len(names))
        wseen = seen.setdefault(k, [False] * len(names))
        if s.count is not None:
            wsum[col] += s.count
            wseen[col] = True

    absent = sorted(set(names) - observed)
    if absent:
        raise DataError(f"schema events never observed in the stream: {absent}")

    rows = []
    dropped = []
    for k in sorted(sums):
        missing = tuple(names[i] for i in range(len(names)) if not seen[k][i])
        if missing and not zero_fill:
            dropped.append(DroppedWindow(k, missing))
            continue
        rows.append(sums[k])
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names)), dropped


def _format_value(x: float) -> str:
    # repr of a Python float is the shortest digit string that round-trips,
    # which keeps save->load->save byte-stable.
    return repr(float(x))


def save_dataset(path, schema: FeatureSchema, rows) -> None:
    """Write the dataset CSV: header of feature names, one window per row."""
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(schema):
        raise DataError(f"rows must be 2-D with width {len(schema)}, got shape {arr.shape}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(schema.names) + "\n")
        for row in arr:
            fh.write(",".join(_format_value(v) for v in row) + "\n")


def load_dataset(path):
    """Read a dataset CSV back into (FeatureSchema, rows).

    The CSV carries feature names only, so the returned schema has no family
    tags. Ragged rows, non-numeric cells, and duplicate header names raise
    DataError naming the location.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DataError(f"{path}: empty or missing header row")
        names = [n.strip() for n in header.rstrip("\n").split(",")]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"{path}: duplicate header names {dupes}")
        schema = FeatureSchema(tuple(names))
        rows = []
        for row_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split(",")
            if len(cells) != len(names):
                raise DataError(
                    f"{path}: row {row_no} has {len(cells)} cells, expected {len(names)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells) if not _is_float(c))
                raise DataError(
                    f"{path}: row {row_no}, column {names[bad]!r}: non-numeric cell {cells[bad]!r}"
                ) from None
    return schema, np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False
