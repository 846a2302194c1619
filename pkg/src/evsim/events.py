"""Event tuples, ordered event streams and per-pixel generator state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GeometryMismatch, OrderingError


class Event(NamedTuple):
    t: float
    x: int
    y: int
    p: int  # +1 / -1


def _frozen(a, dtype):
    # read-only view; never touches the caller's array flags
    a = np.ascontiguousarray(a, dtype=dtype).view()
    a.setflags(write=False)
    return a


def sort_order(t, x, y, p) -> np.ndarray:
    """Permutation putting events in the canonical (t, y, x, p) order."""
    return np.lexsort((p, x, y, t))


def find_ordering_violation(t, x, y, p, width, height):
    """Return ``(index, reason)`` of the first invariant violation, or None.

    Checks coordinate bounds, polarity values, globally non-decreasing
    timestamps and strictly increasing timestamps per pixel.
    """
    n = len(t)
    if n == 0:
        return None
    bad = np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if bad.size:
        return int(bad[0]), "pixel coordinate outside the sensor"
    bad = np.flatnonzero((p != 1) & (p != -1))
    if bad.size:
        return int(bad[0]), "polarity must be +1 or -1"
    if not np.all(np.isfinite(t)):
        return int(np.flatnonzero(~np.isfinite(t))[0]), "non-finite timestamp"
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        return int(bad[0]) + 1, "timestamp decreases"
    # stable sort by pixel keeps time order inside each pixel's run
    pix = y.astype(np.int64) * width + x
    order = np.argsort(pix, kind="stable")
    same = pix[order][1:] == pix[order][:-1]
    repeat = same & (t[order][1:] <= t[order][:-1])
    if np.any(repeat):
        k = np.flatnonzero(repeat)
        idx = int(np.min(order[k + 1]))
        return idx, "per-pixel timestamps not strictly increasing"
    return None


@dataclass(frozen=True)
class EventStream:
    """Immutable, time-ordered sequence of events from one sensor.

    Column arrays: ``t`` (float64 seconds), ``x``/``y`` (int32 pixels),
    ``p`` (int8, +1/-1).
    """

    width: int
    height: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.int32))
    p: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor width and height must be positive")
        object.__setattr__(self, "t", _frozen(self.t, np.float64))
        object.__setattr__(self, "x", _frozen(self.x, np.int32))
        object.__setattr__(self, "y", _frozen(self.y, np.int32))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")
        if self.validate:
            v = find_ordering_violation(self.t, self.x, self.y, self.p, self.width, self.height)
            if v is not None:
                raise OrderingError(f"event {v[0]}: {v[1]}", index=v[0])

    @classmethod
    def from_events(cls, events: Sequence[Event], width, height, validate=True) -> "EventStream":
        if len(events) == 0:
            return cls(width, height, validate=validate)
        arr = np.array([tuple(e) for e in events], dtype=np.float64)
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], validate=validate)

    @classmethod
    def empty(cls, width, height) -> "EventStream":
        return cls(width, height)

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __getitem__(self, i) -> Event:
        return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def check(self):
        """First ordering violation as ``(index, reason)``, or None."""
        return find_ordering_violation(self.t, self.x, self.y, self.p, self.width, self.height)

    def is_canonical(self) -> bool:
        """True if events already follow the (t, y, x, p) total order."""
        if len(self) < 2:
            return True
        order = sort_order(self.t, self.x, self.y, self.p)
        return bool(np.all(order == np.arange(len(self))))

    def time_slice(self, t0, t1) -> "EventStream":
        """Events with ``t0 < t <= t1``."""
        i0 = np.searchsorted(self.t, t0, side="right")
        i1 = np.searchsorted(self.t, t1, side="right")
        return EventStream(
            self.width, self.height,
            self.t[i0:i1], self.x[i0:i1], self.y[i0:i1], self.p[i0:i1],
            validate=False,
        )


def merge_sorted(streams: Sequence[EventStream]) -> EventStream:
    """Merge streams into one stream in the canonical (t, y, x, p) order.

    The result depends only on the multiset of events, never on how they
    were split between the inputs.
    """
    streams = list(streams)
    if not streams:
        raise ValueError("need at least one stream")
    w, h = streams[0].width, streams[0].height
    for s in streams[1:]:
        if (s.width, s.height) != (w, h):
            raise GeometryMismatch(f"sensor {s.width}x{s.height} differs from {w}x{h}")
    if len(streams) == 1 and streams[0].is_canonical():
        return streams[0]
    t = np.concatenate([s.t for s in streams])
    x = np.concatenate([s.x for s in streams])
    y = np.concatenate([s.y for s in streams])
    p = np.concatenate([s.p for s in streams])
    order = sort_order(t, x, y, p)
    return EventStream(w, h, t[order], x[order], y[order], p[order])


@dataclass
class PixelState:
    """Per-pixel simulator state.

    ``last_event_time`` is the surface of active events (NaN where a pixel
    has not fired); ``reference_level`` is the log-intensity level the next
    crossing is measured from.  ``reference_level - initial_level`` stays an
    integer multiple of the contrast threshold.
    """

    initial_level: np.ndarray
    reference_level: np.ndarray
    last_event_time: np.ndarray

    @classmethod
    def from_log_frame(cls, log_frame) -> "PixelState":
        L = np.ascontiguousarray(log_frame, dtype=np.float64)
        return cls(
            initial_level=L.copy(),
            reference_level=L.copy(),
            last_event_time=np.full(L.shape, np.nan),
        )

    @property
    def shape(self):
        return self.reference_level.shape

    def level_counts(self, contrast) -> np.ndarray:
        """Signed number of threshold steps taken by each pixel."""
        return np.rint((self.reference_level - self.initial_level) / contrast).astype(np.int64)
