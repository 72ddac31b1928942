"""Event streams and their time-surface rendering.

An event stream is held as parallel numpy arrays (t, u, v, p).  The
per-pixel last-event map keeps ``-inf`` for pixels that never fired, so
the exponential-decay rendering produces an exact 0 there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SENTINEL = -np.inf

_BINARY_MAGIC = b"EVT1"
_BINARY_DTYPE = np.dtype([("t", "<f8"), ("u", "<u2"), ("v", "<u2"), ("p", "<i1")])


class Event(NamedTuple):
    u: int
    v: int
    t: float
    p: int


@dataclass
class EventBatch:
    """Column-major event stream, sorted by timestamp."""

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, sl) -> "EventBatch":
        return EventBatch(self.t[sl], self.u[sl], self.v[sl], self.p[sl])

    @staticmethod
    def empty() -> "EventBatch":
        return EventBatch(np.empty(0), np.empty(0, np.int64),
                          np.empty(0, np.int64), np.empty(0, np.int64))

    @staticmethod
    def from_events(events) -> "EventBatch":
        if not events:
            return EventBatch.empty()
        arr = np.array([(e.t, e.u, e.v, e.p) for e in events])
        return EventBatch(arr[:, 0], arr[:, 1].astype(np.int64),
                          arr[:, 2].astype(np.int64), arr[:, 3].astype(np.int64))


class LastEventMap:
    """Per-pixel timestamp of the most recent event."""

    def __init__(self, width: int, height: int):
        if width <= 0 or height <= 0:
            raise ValueError("image dimensions must be positive")
        self.width = width
        self.height = height
        self.t_last = np.full((height, width), SENTINEL)

    def copy(self) -> "LastEventMap":
        out = LastEventMap(self.width, self.height)
        out.t_last = self.t_last.copy()
        return out

    def max_time(self) -> float:
        return float(self.t_last.max())


@dataclass
class TimeSurface:
    values: np.ndarray  # (height, width), in [0, 1]
    t: float
    eta: float

    @property
    def shape(self):
        return self.values.shape


@dataclass
class StereoEventFrame:
    left: TimeSurface
    right: TimeSurface
    t: float
    frame_id: int


def ingest_events(emap: LastEventMap, batch: EventBatch) -> LastEventMap:
    """Fold a time-sorted batch into the last-event map (in place).

    The whole batch is rejected before any mutation if a timestamp
    decreases or a pixel is out of bounds.
    """
    if len(batch) == 0:
        return emap
    t, u, v, p = batch.t, batch.u, batch.v, batch.p
    dt = np.diff(t)
    if dt.size and dt.min() < 0:
        i = int(np.argmax(dt < 0)) + 1
        raise ValueError(f"decreasing timestamp at event {i}: "
                         f"{t[i]} < {t[i - 1]}")
    bad = (u < 0) | (u >= emap.width) | (v < 0) | (v >= emap.height)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"out-of-bounds pixel at event {i}: "
                         f"({u[i]}, {v[i]}) for {emap.width}x{emap.height}")
    badp = (p != 1) & (p != -1)
    if badp.any():
        i = int(np.argmax(badp))
        raise ValueError(f"invalid polarity at event {i}: {p[i]}")
    np.maximum.at(emap.t_last, (v, u), t)
    return emap


def render_time_surface(emap: LastEventMap, t: float, eta: float) -> TimeSurface:
    """Exponential-decay image of time since the last event per pixel."""
    if eta <= 0:
        raise ValueError(f"decay constant must be positive, got {eta}")
    fired = np.isfinite(emap.t_last)
    if fired.any() and t < emap.t_last[fired].max():
        raise ValueError(f"query time {t} precedes last event "
                         f"{emap.t_last[fired].max()}")
    values = np.zeros_like(emap.t_last)
    values[fired] = np.exp(-(t - emap.t_last[fired]) / eta)
    return TimeSurface(values=values, t=t, eta=eta)


def make_stereo_frame(left_map: LastEventMap, right_map: LastEventMap,
                      t: float, eta: float, frame_id: int) -> StereoEventFrame:
    if (left_map.width, left_map.height) != (right_map.width, right_map.height):
        raise ValueError("stereo maps must share resolution: "
                         f"{left_map.width}x{left_map.height} vs "
                         f"{right_map.width}x{right_map.height}")
    return StereoEventFrame(
        left=render_time_surface(left_map, t, eta),
        right=render_time_surface(right_map, t, eta),
        t=t, frame_id=frame_id)


def save_events_text(path, batch: EventBatch) -> None:
    with open(path, "w") as f:
        for i in range(len(batch)):
            f.write(f"{batch.t[i]:.9f} {batch.u[i]} {batch.v[i]} {batch.p[i]}\n")


def save_events_binary(path, batch: EventBatch) -> None:
    rec = np.empty(len(batch), dtype=_BINARY_DTYPE)
    rec["t"] = batch.t
    rec["u"] = batch.u
    rec["v"] = batch.v
    rec["p"] = batch.p
    with open(path, "wb") as f:
        f.write(_BINARY_MAGIC)
        rec.tofile(f)


def load_events(path) -> EventBatch:
    """Load an event file, sniffing the binary magic header."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic == _BINARY_MAGIC:
            rec = np.fromfile(f, dtype=_BINARY_DTYPE)
            return EventBatch(rec["t"].astype(np.float64),
                              rec["u"].astype(np.int64),
                              rec["v"].astype(np.int64),
                              rec["p"].astype(np.int64))
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return EventBatch.empty()
    if data.shape[1] != 4:
        raise ValueError(f"expected 4 columns 't u v p' in {path}")
    return EventBatch(data[:, 0], data[:, 1].astype(np.int64),
                      data[:, 2].astype(np.int64), data[:, 3].astype(np.int64))
