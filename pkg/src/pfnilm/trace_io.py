"""Power traces: ingestion, aggregation, ground truth labelling and
threshold-edge compression."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Sequence

import numpy as np
import pandas as pd

from .appliance_model import ApplianceHmm

log = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
DEFAULT_GAP_LIMIT = 10


class TraceError(ValueError):
    pass


class TraceFormatError(TraceError):
    """Too many malformed rows; ``rows`` holds their 1-based line numbers."""

    def __init__(self, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.rows = list(rows)


class TraceGapError(TraceError):
    pass


@dataclass(frozen=True, eq=False)
class PowerTrace:
    """Active power samples at a fixed period.

    Negative samples are clamped to 0 on construction; ``clamped`` counts
    them and ``filled`` counts forward-filled gap samples from ingestion.
    """

    samples: np.ndarray
    start_time: datetime = EPOCH
    sample_period: float = 1.0
    appliance_id: str | None = None
    clamped: int = 0
    filled: int = 0

    def __post_init__(self):
        x = np.array(self.samples, dtype=float).reshape(-1)
        if not self.sample_period > 0:
            raise TraceError("sample_period must be > 0")
        if not np.isfinite(x).all():
            raise TraceError("samples must be finite")
        neg = x < 0
        n_neg = int(neg.sum())
        if n_neg:
            x[neg] = 0.0
            log.warning("%s: clamped %d negative samples", self.appliance_id or "trace", n_neg)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "clamped", self.clamped + n_neg)
        if self.start_time.tzinfo is None:
            object.__setattr__(self, "start_time", self.start_time.replace(tzinfo=timezone.utc))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return len(self) * self.sample_period

    def energy_wh(self) -> float:
        """Left Riemann sum of power over the trace, in watt-hours."""
        return float(self.samples.sum()) * self.sample_period / 3600.0

    def timestamps(self) -> np.ndarray:
        t0 = (self.start_time - EPOCH).total_seconds()
        return t0 + np.arange(len(self)) * self.sample_period

    def with_samples(self, samples, appliance_id=None) -> "PowerTrace":
        return PowerTrace(samples, self.start_time, self.sample_period, appliance_id)


@dataclass(frozen=True)
class StateSequence:
    appliance_id: str
    states: np.ndarray = field(compare=False)

    def __post_init__(self):
        s = np.array(self.states, dtype=np.int64).reshape(-1)
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    def __len__(self) -> int:
        return self.states.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, StateSequence)
            and self.appliance_id == other.appliance_id
            and np.array_equal(self.states, other.states)
        )


@dataclass(frozen=True)
class TraceSchema:
    """Column mapping of a delimiter-separated trace file.

    ``power_columns`` maps appliance id to column name; ``None`` takes
    every non-timestamp column under its own name.
    """

    timestamp_column: str = "timestamp"
    power_columns: dict[str, str] | None = None
    delimiter: str = ","
    sample_period: float = 1.0
    gap_limit: int = DEFAULT_GAP_LIMIT
    max_bad_fraction: float = 0.01


def _parse_timestamps(raw: pd.Series) -> np.ndarray:
    """Epoch seconds (float, NaN where unparseable) from epoch or ISO-8601 text."""
    num = pd.to_numeric(raw, errors="coerce")
    if num.notna().sum() >= max(1, raw.notna().sum() // 2):
        return num.to_numpy(dtype=float)
    ts = pd.to_datetime(raw, errors="coerce", utc=True, format="ISO8601")
    out = np.full(len(raw), np.nan)
    ok = ts.notna().to_numpy()
    out[ok] = (ts[ok] - pd.Timestamp(0, tz="UTC")).dt.total_seconds().to_numpy()
    return out


def load_traces(source: str | Path | IO[str], schema: TraceSchema = TraceSchema()) -> list[PowerTrace]:
    """Read one ``PowerTrace`` per power column.

    Missing samples (absent timestamps or empty cells) are forward-filled
    up to ``schema.gap_limit`` consecutive samples; a longer gap raises
    ``TraceGapError``.  Unparseable rows count as missing; if they exceed
    ``schema.max_bad_fraction`` of all rows, ``TraceFormatError`` names them.
    """
    df = pd.read_csv(source, sep=schema.delimiter, dtype=str, keep_default_na=False, skipinitialspace=True)
    if schema.timestamp_column not in df.columns:
        raise TraceFormatError(f"timestamp column {schema.timestamp_column!r} missing")
    if schema.power_columns is None:
        mapping = {c: c for c in df.columns if c != schema.timestamp_column}
    else:
        mapping = dict(schema.power_columns)
    if not mapping:
        raise TraceFormatError("no power columns")
    missing = [c for c in mapping.values() if c not in df.columns]
    if missing:
        raise TraceFormatError(f"power columns missing: {missing}")

    ts = _parse_timestamps(df[schema.timestamp_column].replace("", None))
    values = {}
    bad = ~np.isfinite(ts)
    for aid, col in mapping.items():
        text = df[col].str.strip()
        empty = (text == "").to_numpy()
        v = pd.to_numeric(text, errors="coerce").to_numpy(dtype=float)
        bad |= ~np.isfinite(v) & ~empty
        values[aid] = v
    n_rows = len(df)
    if n_rows == 0:
        raise TraceFormatError("no data rows")
    bad_rows = np.flatnonzero(bad)
    if bad_rows.size > schema.max_bad_fraction * n_rows:
        lines = (bad_rows + 2).tolist()  # header is line 1
        raise TraceFormatError(
            f"{bad_rows.size} malformed rows (of {n_rows}), first at line(s) {lines[:10]}", lines
        )
    if bad_rows.size:
        log.warning("skipping %d malformed rows", bad_rows.size)

    good = np.isfinite(ts)
    period = schema.sample_period
    slots = np.round(ts[good] / period).astype(np.int64)
    t0 = slots.min()
    idx = slots - t0
    order = np.argsort(idx, kind="stable")
    idx = idx[order]
    keep = np.ones(idx.size, dtype=bool)
    keep[1:] = idx[1:] != idx[:-1]  # first reading per slot wins
    n = int(idx[-1]) + 1
    start = datetime.fromtimestamp(float(t0 * period), tz=timezone.utc)

    traces = []
    for aid, v in values.items():
        col = v[good][order][keep]
        col[bad[good][order][keep]] = np.nan
        grid = np.full(n, np.nan)
        grid[idx[keep]] = col
        filled = _forward_fill(grid, schema.gap_limit, aid)
        traces.append(PowerTrace(grid, start, period, aid, filled=filled))
        if filled:
            log.warning("%s: forward-filled %d missing samples", aid, filled)
    return traces


def _forward_fill(grid: np.ndarray, gap_limit: int, name: str) -> int:
    """Fill NaN runs in place with the previous value; returns the count."""
    nan = np.isnan(grid)
    if not nan.any():
        return 0
    if nan[0]:
        raise TraceGapError(f"{name}: trace starts with a missing sample")
    edges = np.diff(nan.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if ends.size < starts.size:
        ends = np.append(ends, nan.size)
    for s, e in zip(starts, ends):
        if e - s > gap_limit:
            raise TraceGapError(
                f"{name}: gap of {e - s} samples at index {s} exceeds limit {gap_limit}"
            )
        grid[s:e] = grid[s - 1]
    return int(nan.sum())


def write_traces(dest: str | Path | IO[str], traces: Sequence[PowerTrace], delimiter: str = ",",
                 extra: dict[str, np.ndarray] | None = None) -> None:
    """Write aligned traces as ``timestamp`` plus one column per trace."""
    _check_aligned(traces)
    cols = {"timestamp": traces[0].timestamps()}
    for i, t in enumerate(traces):
        cols[t.appliance_id or f"trace{i}"] = t.samples
    for k, v in (extra or {}).items():
        cols[k] = v
    pd.DataFrame(cols).to_csv(dest, sep=delimiter, index=False, float_format="%.10g", lineterminator="\n")


def _check_aligned(traces: Sequence[PowerTrace]) -> None:
    if not traces:
        raise TraceError("no traces")
    ref = traces[0]
    for t in traces[1:]:
        if len(t) != len(ref):
            raise TraceError(f"length mismatch: {len(t)} vs {len(ref)}")
        if t.sample_period != ref.sample_period:
            raise TraceError("sample period mismatch")
        dt = (t.start_time - ref.start_time).total_seconds()
        if round(dt / ref.sample_period) != 0:
            raise TraceError("start time mismatch")


def aggregate(traces: Sequence[PowerTrace]) -> PowerTrace:
    _check_aligned(traces)
    total = np.sum([t.samples for t in traces], axis=0)
    ref = traces[0]
    return PowerTrace(total, ref.start_time, ref.sample_period, None)


# ---------------------------------------------------------------------------
# Edge encoding


@dataclass(frozen=True)
class EdgeSeries:
    threshold: float
    initial_value: float
    edges: tuple[tuple[int, float], ...]
    length: int
    start_time: datetime = EPOCH
    sample_period: float = 1.0

    def __len__(self) -> int:
        return len(self.edges)


def encode_edges(trace: PowerTrace, threshold: float) -> EdgeSeries:
    """Keep only changes larger than ``threshold`` relative to the last kept value."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    x = trace.samples.tolist()
    if not x:
        return EdgeSeries(threshold, 0.0, (), 0, trace.start_time, trace.sample_period)
    last = x[0]
    edges = []
    for i in range(1, len(x)):
        v = x[i]
        if abs(v - last) > threshold:
            edges.append((i, v))
            last = v
    return EdgeSeries(threshold, x[0], tuple(edges), len(x), trace.start_time, trace.sample_period)


def decode_edges(edges: EdgeSeries, length: int | None = None) -> PowerTrace:
    n = edges.length if length is None else length
    if edges.edges and n < edges.edges[-1][0] + 1:
        raise ValueError(f"length {n} too small for last edge at {edges.edges[-1][0]}")
    out = np.full(n, edges.initial_value, dtype=float)
    for i, v in edges.edges:
        out[i:] = v
    return PowerTrace(out, edges.start_time, edges.sample_period)


def write_edges(dest: str | Path, edges: EdgeSeries) -> None:
    lines = [
        f"# threshold={edges.threshold!r}",
        f"# initial_value={edges.initial_value!r}",
        f"# length={edges.length}",
        f"# start_time={edges.start_time.isoformat()}",
        f"# sample_period={edges.sample_period!r}",
        "index,value",
    ]
    lines += [f"{i},{v!r}" for i, v in edges.edges]
    Path(dest).write_text("\n".join(lines) + "\n")


def read_edges(src: str | Path) -> EdgeSeries:
    meta = {}
    rows = []
    for line in Path(src).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line and line != "index,value":
            i, v = line.split(",")
            rows.append((int(i), float(v)))
    try:
        return EdgeSeries(
            float(meta["threshold"]),
            float(meta["initial_value"]),
            tuple(rows),
            int(meta["length"]),
            datetime.fromisoformat(meta.get("start_time", EPOCH.isoformat())),
            float(meta.get("sample_period", 1.0)),
        )
    except KeyError as exc:
        raise TraceFormatError(f"edge file missing header field {exc.args[0]}") from None


# ---------------------------------------------------------------------------
# Ground truth


def derive_ground_truth(trace: PowerTrace, model: ApplianceHmm) -> StateSequence:
    """Nearest-level state per sample; ties go to the lower state index."""
    dist = np.abs(trace.samples[:, None] - model.means[None, :])
    return StateSequence(model.appliance_id, np.argmin(dist, axis=1))


def states_to_power(states: StateSequence, model: ApplianceHmm, like: PowerTrace) -> PowerTrace:
    return PowerTrace(model.means[states.states], like.start_time, like.sample_period, model.appliance_id)


__all__ = [
    "PowerTrace", "StateSequence", "EdgeSeries", "TraceSchema", "TraceError", "TraceFormatError",
    "TraceGapError", "load_traces", "write_traces", "aggregate", "encode_edges", "decode_edges",
    "write_edges", "read_edges", "derive_ground_truth", "states_to_power",
]
