"""Event generation from time-stamped frames by piecewise-linear interpolation.

Each pixel keeps a reference level on the grid ``L(0) + n*C``.  Between two
frame samples the log intensity is the straight line through them; every
time that line reaches ``reference +/- C`` an event is emitted at the
interpolated crossing time and the reference moves by exactly one step.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from ..errors import EmptySequence, NonMonotonicTimestamps, UsageError
from ..events import EventStream, PixelState, sort_order
from . import _backend

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601


def rgb_to_luma(rgb) -> np.ndarray:
    """BT.601 luma of a linear RGB image (..., 3)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def log_intensity(image, log_eps=1e-3) -> np.ndarray:
    return np.log(np.asarray(image, dtype=np.float64) + log_eps)


@dataclass(frozen=True)
class SimulatorConfig:
    contrast_threshold: float = 0.15
    log_eps: float = 1e-3

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise UsageError("contrast threshold must be positive")
        if not self.log_eps > 0:
            raise UsageError("log_eps must be positive")


@dataclass(frozen=True)
class FrameSequence:
    """Intensity frames (linear luma in [0, 1]) with strictly increasing times."""

    timestamps: np.ndarray
    frames: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        fr = np.asarray(self.frames, dtype=np.float64)
        if fr.ndim != 3:
            raise ValueError("frames must be an (N, height, width) array")
        if len(ts) != len(fr):
            raise ValueError("one timestamp per frame required")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            k = int(np.flatnonzero(np.diff(ts) <= 0)[0]) + 1
            raise NonMonotonicTimestamps(f"frame {k}: timestamp {ts[k]!r} does not increase")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "frames", fr)

    @classmethod
    def from_pairs(cls, pairs) -> "FrameSequence":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0), np.empty((0, 1, 1)))
        shapes = {np.shape(img) for _, img in pairs}
        if len(shapes) != 1:
            raise ValueError(f"frames differ in size: {sorted(shapes)}")
        return cls(np.array([t for t, _ in pairs]), np.stack([img for _, img in pairs]))

    def __len__(self):
        return len(self.timestamps)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __iter__(self):
        return iter(zip(self.timestamps, self.frames))


def _row_chunks(height, parts):
    parts = max(1, min(int(parts), height))
    edges = np.linspace(0, height, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


class EventGenerator:
    """Streaming event generator; feed frames one at a time with :meth:`push`.

    ``threads`` splits the pixel rows between worker threads.  Output does
    not depend on it: each interval's events are sorted into the canonical
    (t, y, x, p) order before being returned.
    """

    def __init__(self, first_frame, t0, config: SimulatorConfig = SimulatorConfig(),
                 threads=1, backend=None):
        self.config = config
        self._kernel = _backend.get_kernel(backend)
        L = log_intensity(first_frame, config.log_eps)
        if L.ndim != 2:
            raise ValueError("frames must be 2-D intensity images")
        self.state = PixelState.from_log_frame(L)
        self._prev_log = self.state.initial_level
        self._prev_t = float(t0)
        self.height, self.width = L.shape
        self._chunks = _row_chunks(self.height, threads)
        self._pool = ThreadPoolExecutor(len(self._chunks)) if len(self._chunks) > 1 else None
        self.num_events = 0

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def push(self, frame, t) -> EventStream:
        """Advance to the next frame sample; returns the interval's events."""
        t = float(t)
        if not t > self._prev_t:
            raise NonMonotonicTimestamps(f"frame time {t!r} not after {self._prev_t!r}")
        L = np.ascontiguousarray(log_intensity(frame, self.config.log_eps))
        if L.shape != self.state.shape:
            raise ValueError(f"frame shape {L.shape} differs from {self.state.shape}")
        args = (self._prev_log, L, self._prev_t, t, self.config.contrast_threshold,
                self.state.reference_level, self.state.last_event_time)
        if self._pool is None:
            parts = [self._kernel(*args, 0, self.height)]
        else:
            futures = [self._pool.submit(self._kernel, *args, a, b) for a, b in self._chunks]
            parts = [f.result() for f in futures]
        ts, xs, ys, ps = (np.concatenate(col) for col in zip(*parts))
        order = sort_order(ts, xs, ys, ps)
        self._prev_log, self._prev_t = L, t
        self.num_events += len(ts)
        return EventStream(self.width, self.height, ts[order], xs[order], ys[order], ps[order],
                           validate=False)

    def run(self, frames: Iterable) -> Iterator[EventStream]:
        for t, frame in frames:
            yield self.push(frame, t)


def generate_events(seq: FrameSequence, config: SimulatorConfig = SimulatorConfig(),
                    threads=1, backend=None) -> EventStream:
    if len(seq) < 2:
        raise EmptySequence(f"need at least 2 frames, got {len(seq)}")
    frames = iter(seq)
    t0, f0 = next(frames)
    with EventGenerator(f0, t0, config, threads=threads, backend=backend) as gen:
        batches = list(gen.run(frames))
    # batches cover disjoint, increasing time intervals (t_k, t_k+1]
    return EventStream(
        seq.width, seq.height,
        np.concatenate([b.t for b in batches]),
        np.concatenate([b.x for b in batches]),
        np.concatenate([b.y for b in batches]),
        np.concatenate([b.p for b in batches]),
    )


def reconstruct(log_frame0, events: EventStream, contrast, t) -> np.ndarray:
    """Log image at time ``t`` from the first log frame plus signed event steps."""
    out = np.array(log_frame0, dtype=np.float64, copy=True)
    n = np.searchsorted(events.t, t, side="right")
    counts = np.zeros(out.size, dtype=np.int64)
    np.add.at(counts, events.y[:n].astype(np.int64) * out.shape[1] + events.x[:n], events.p[:n])
    return out + contrast * counts.reshape(out.shape)


def reconstruction_errors(seq: FrameSequence, events: EventStream,
                          config: SimulatorConfig = SimulatorConfig()) -> np.ndarray:
    """Max per-pixel |reconstructed - true| log intensity at every frame time."""
    L0 = log_intensity(seq.frames[0], config.log_eps)
    counts = np.zeros(L0.size, dtype=np.int64)
    errs = np.empty(len(seq))
    start = 0
    for k, (t, frame) in enumerate(seq):
        stop = np.searchsorted(events.t, t, side="right")
        np.add.at(counts, events.y[start:stop].astype(np.int64) * seq.width + events.x[start:stop],
                  events.p[start:stop])
        start = stop
        recon = L0 + config.contrast_threshold * counts.reshape(L0.shape)
        errs[k] = np.max(np.abs(recon - log_intensity(frame, config.log_eps)))
    return errs
