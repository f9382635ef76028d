"""Event stream containers, voxelization, time reversal and slicing.

Events are kept columnar (numpy arrays) inside :class:`EventStream`.  All
timestamps are snapped onto a dyadic grid of ``TIME_RESOLUTION`` seconds so
that mirroring a stream in time (``a + b - t``) is exact in float64 and
``reverse(reverse(s))`` reproduces ``s`` bit for bit.

The stream window is half-open ``[t_start, t_end)`` for ingestion.  Reversal
maps ``t_start`` onto ``t_end``, so a stored stream may hold events at
``t_end`` itself; slicing closes its final interval to keep them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptEventFile,
    DegenerateWindow,
    InvalidBoundaries,
    InvalidPolarity,
    NonFiniteTimestamp,
    OutOfBoundsEvent,
)

TIME_RESOLUTION = 2.0**-32
_TIME_SCALE = 2.0**32

EVT_MAGIC = b"EVT1"
_EVT_HEADER = struct.Struct("<4sIIQdd")
EVT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<f8"), ("p", "i1")])


def quantize_time(t):
    """Snap seconds onto the dyadic time grid (scalar or array)."""
    if np.ndim(t) == 0:
        return float(np.round(float(t) * _TIME_SCALE) / _TIME_SCALE)
    return np.round(np.asarray(t, dtype=np.float64) * _TIME_SCALE) / _TIME_SCALE


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    p: int


@dataclass(frozen=True)
class TimeWindow:
    t_start: float
    t_end: float

    def __post_init__(self):
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)):
            raise NonFiniteTimestamp(f"non-finite window {self.t_start}, {self.t_end}")
        if not self.t_end > self.t_start:
            raise DegenerateWindow(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def quantized(self) -> "TimeWindow":
        return TimeWindow(quantize_time(self.t_start), quantize_time(self.t_end))


def _canonical_order(x, y, t, p) -> np.ndarray:
    # deterministic tiebreak: (t, y, x, p)
    return np.lexsort((p, x, y, t))


@dataclass(eq=False)
class EventStream:
    """Time-ordered events over a window on a ``(W, H)`` sensor."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    window: TimeWindow
    sensor_size: tuple[int, int]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.int8)
        self.sensor_size = (int(self.sensor_size[0]), int(self.sensor_size[1]))

    @classmethod
    def empty(cls, window: TimeWindow, sensor_size: tuple[int, int]) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, window, sensor_size)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def events(self) -> list[Event]:
        return [
            Event(int(x), int(y), float(t), int(p))
            for x, y, t, p in zip(self.x, self.y, self.t, self.p)
        ]

    @property
    def signed_sum(self) -> int:
        return int(self.p.astype(np.int64).sum())

    def same_as(self, other: "EventStream") -> bool:
        """Bitwise equality of events, window and sensor."""
        return (
            self.window == other.window
            and self.sensor_size == other.sensor_size
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def _take(self, idx, window: TimeWindow | None = None) -> "EventStream":
        return EventStream(
            self.x[idx], self.y[idx], self.t[idx], self.p[idx],
            window or self.window, self.sensor_size,
        )


@dataclass(frozen=True)
class VoxelGrid:
    data: np.ndarray  # (B, H, W) float64
    window: TimeWindow
    bins: int = field(default=5)


def validate_stream(
    raw_events: Iterable[Event] | EventStream,
    window: TimeWindow,
    sensor: tuple[int, int],
    policy: str = "drop",
) -> EventStream:
    """Build a canonical stream from raw events.

    Events outside ``[t_start, t_end)`` or off the sensor are dropped
    (``policy="drop"``) or raise :class:`OutOfBoundsEvent` (``policy="error"``).
    """
    if policy not in ("drop", "error"):
        raise ValueError(f"unknown policy {policy!r}")
    window = window.quantized()
    if isinstance(raw_events, EventStream):
        x, y, t, p = raw_events.x, raw_events.y, raw_events.t, raw_events.p
    else:
        evs = list(raw_events)
        x = np.array([e.x for e in evs], dtype=np.int64)
        y = np.array([e.y for e in evs], dtype=np.int64)
        t = np.array([e.t for e in evs], dtype=np.float64)
        p = np.array([e.p for e in evs], dtype=np.int64)
    if not np.all(np.isfinite(t)):
        raise NonFiniteTimestamp("stream contains non-finite timestamps")
    if not np.all((p == 1) | (p == -1)):
        raise InvalidPolarity("polarity must be +1 or -1")
    t = quantize_time(t)
    w, h = sensor
    ok = (x >= 0) & (x < w) & (y >= 0) & (y < h) & (t >= window.t_start) & (t < window.t_end)
    if not ok.all():
        if policy == "error":
            bad = int(np.flatnonzero(~ok)[0])
            raise OutOfBoundsEvent(
                f"event {bad} (x={x[bad]}, y={y[bad]}, t={t[bad]}) outside sensor {sensor} / {window}"
            )
        x, y, t, p = x[ok], y[ok], t[ok], p[ok]
    order = _canonical_order(x, y, t, p)
    return EventStream(x[order], y[order], t[order], p[order], window, sensor)


def voxelize(stream: EventStream, bins: int = 5) -> VoxelGrid:
    """Temporal bilinear voxel grid of shape ``(bins, H, W)``.

    Event time is mapped to ``(bins - 1) * (t - t_start) / duration`` and its
    polarity is split between the two nearest bin nodes.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    win = stream.window
    if not win.t_end > win.t_start:
        raise DegenerateWindow(str(win))
    w, h = stream.sensor_size
    grid = np.zeros(bins * h * w, dtype=np.float64)
    if len(stream):
        ts = (bins - 1) * (stream.t - win.t_start) / (win.t_end - win.t_start)
        ts = np.clip(ts, 0.0, bins - 1)
        left = np.floor(ts).astype(np.int64)
        frac = ts - left
        pol = stream.p.astype(np.float64)
        pix = stream.y * w + stream.x
        np.add.at(grid, left * h * w + pix, pol * (1.0 - frac))
        right = left + 1
        inside = right < bins
        np.add.at(grid, right[inside] * h * w + pix[inside], pol[inside] * frac[inside])
    return VoxelGrid(grid.reshape(bins, h, w), win, bins)


def reverse(stream: EventStream) -> EventStream:
    """Mirror a stream in time: ``(x, y, t, p) -> (x, y, a + b - t, -p)``."""
    a, b = stream.window.t_start, stream.window.t_end
    t = (a + b) - stream.t
    p = -stream.p.astype(np.int64)
    order = _canonical_order(stream.x, stream.y, t, p)
    return EventStream(stream.x[order], stream.y[order], t[order], p[order], stream.window, stream.sensor_size)


def slice_stream(stream: EventStream, boundaries: Sequence[float]) -> list[EventStream]:
    """Partition a stream into ``[b_i, b_{i+1})`` pieces; the last piece is closed."""
    b = quantize_time(np.asarray(boundaries, dtype=np.float64))
    if b.ndim != 1 or b.size < 2:
        raise InvalidBoundaries("need at least two boundaries")
    if not np.all(np.isfinite(b)) or not np.all(np.diff(b) > 0):
        raise InvalidBoundaries(f"boundaries must be finite and strictly increasing: {list(b)}")
    win = stream.window
    if b[0] > win.t_start or b[-1] < win.t_end:
        raise InvalidBoundaries(f"boundaries {b[0]}..{b[-1]} do not span {win}")
    idx = np.searchsorted(b, stream.t, side="right") - 1
    idx = np.clip(idx, 0, b.size - 2)
    out = []
    for i in range(b.size - 1):
        out.append(stream._take(idx == i, TimeWindow(float(b[i]), float(b[i + 1]))))
    return out


def concatenate(streams: Sequence[EventStream], window: TimeWindow) -> EventStream:
    if not streams:
        raise ValueError("nothing to concatenate")
    x = np.concatenate([s.x for s in streams])
    y = np.concatenate([s.y for s in streams])
    t = np.concatenate([s.t for s in streams])
    p = np.concatenate([s.p for s in streams]).astype(np.int64)
    order = _canonical_order(x, y, t, p)
    return EventStream(x[order], y[order], t[order], p[order], window, streams[0].sensor_size)


def restrict(stream: EventStream, window: TimeWindow, closed_end: bool = False) -> EventStream:
    """Events of ``stream`` inside ``window`` (half-open unless ``closed_end``)."""
    window = window.quantized()
    hi = stream.t <= window.t_end if closed_end else stream.t < window.t_end
    return stream._take((stream.t >= window.t_start) & hi, window)


# -- file formats ------------------------------------------------------------


def write_events(path: str | Path, stream: EventStream) -> None:
    """Write the little-endian ``EVT1`` binary format."""
    path = Path(path)
    w, h = stream.sensor_size
    rec = np.empty(len(stream), dtype=EVT_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    header = _EVT_HEADER.pack(EVT_MAGIC, w, h, len(stream), stream.window.t_start, stream.window.t_end)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def read_events(path: str | Path) -> EventStream:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _EVT_HEADER.size:
        raise CorruptEventFile(f"{path}: truncated header")
    magic, w, h, count, t0, t1 = _EVT_HEADER.unpack_from(raw, 0)
    if magic != EVT_MAGIC:
        raise CorruptEventFile(f"{path}: bad magic {magic!r}")
    body = raw[_EVT_HEADER.size:]
    if len(body) != count * EVT_RECORD.itemsize:
        raise CorruptEventFile(
            f"{path}: header says {count} events, payload holds {len(body) / EVT_RECORD.itemsize:g}"
        )
    rec = np.frombuffer(body, dtype=EVT_RECORD)
    try:
        window = TimeWindow(t0, t1)
    except (DegenerateWindow, NonFiniteTimestamp) as exc:
        raise CorruptEventFile(f"{path}: {exc}") from exc
    return EventStream(rec["x"], rec["y"], rec["t"], rec["p"], window, (w, h))


def write_events_csv(path: str | Path, stream: EventStream) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,t,p\n")
        for x, y, t, p in zip(stream.x, stream.y, stream.t, stream.p):
            fh.write(f"{x},{y},{float(t)!r},{p}\n")


def read_events_csv(path: str | Path, window: TimeWindow, sensor: tuple[int, int]) -> EventStream:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    if data.size == 0:
        return EventStream.empty(window.quantized(), sensor)
    evs = EventStream(data[:, 0], data[:, 1], data[:, 2], data[:, 3], window, sensor)
    return validate_stream(evs, window, sensor, policy="error")
