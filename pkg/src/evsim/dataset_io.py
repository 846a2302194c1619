"""Readers and writers for the plain-text dataset layout.

    events.txt       timestamp x y polarity        (polarity 1 = ON, 0 = OFF)
    images.txt       timestamp filename
    images/*.png     frames referenced by images.txt
    imu.txt          timestamp ax ay az gx gy gz
    groundtruth.txt  timestamp px py pz qx qy qz qw
    calib.txt        fx fy cx cy k1 k2 p1 p2 k3

SI units, LF line endings.  Parsers stream: memory use depends on the chunk
size, not on the file length.
"""
from __future__ import annotations

import contextlib
import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    EmptyBundle,
    MalformedLine,
    NonMonotonicTimestamp,
    SinkFailure,
    WrongFieldCount,
)
from .events import Event, EventStream
from .geometry import CameraIntrinsics, UnitQuaternion

logger = logging.getLogger(__name__)

CHUNK_LINES = 1 << 16
QUAT_NORM_TOL = 1e-6

EVENTS_FILE = "events.txt"
IMAGES_FILE = "images.txt"
IMU_FILE = "imu.txt"
GROUNDTRUTH_FILE = "groundtruth.txt"
CALIB_FILE = "calib.txt"


class ImuSample(NamedTuple):
    t: float
    ax: float
    ay: float
    az: float
    gx: float
    gy: float
    gz: float


class GroundTruthSample(NamedTuple):
    t: float
    position: np.ndarray
    orientation: UnitQuaternion

    def as_row(self) -> np.ndarray:
        return np.concatenate([[self.t], self.position, self.orientation.as_array()])


class ImageRef(NamedTuple):
    t: float
    filename: str


# --- low level helpers ----------------------------------------------------

@contextlib.contextmanager
def _open_source(src):
    """Yield a text line iterator for a path or an open (text/binary) file."""
    if isinstance(src, (str, os.PathLike)):
        with open(src, "r", encoding="ascii", newline="") as f:
            yield f
    elif isinstance(src, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(src, "mode", ""):
        wrapper = io.TextIOWrapper(src, encoding="ascii", newline="")
        try:
            yield wrapper
        finally:
            wrapper.detach()  # leave the caller's stream open
    else:
        yield src


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    """Write to a temp file next to ``path``; rename over it only on success."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    except OSError as e:
        raise SinkFailure(f"cannot create {path}: {e}") from e
    try:
        with os.fdopen(fd, mode, encoding=None if "b" in mode else "ascii",
                       newline=None if "b" in mode else "\n") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def _open_sink(sink):
    if isinstance(sink, (str, os.PathLike)):
        try:
            with atomic_open(sink) as f:
                yield f
        except OSError as e:
            if isinstance(e, SinkFailure):
                raise
            raise SinkFailure(f"writing {sink} failed: {e}") from e
    else:
        try:
            yield sink
        except OSError as e:
            raise SinkFailure(f"write failed: {e}") from e


def _complain(strict, lineno, message):
    if strict:
        raise NonMonotonicTimestamp(lineno, message)
    logger.warning("line %d: %s", lineno, message)


def format_time(t) -> str:
    return f"{float(t):.9f}"


def _fmt(v) -> str:
    return repr(float(v))


def _float(tok, lineno, line):
    try:
        v = float(tok)
    except ValueError:
        raise MalformedLine(lineno, line, f"not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise MalformedLine(lineno, line, "non-finite value")
    return v


def _iter_lines(f):
    """(lineno, stripped line) for non-blank lines."""
    for lineno, line in enumerate(f, 1):
        s = line.strip()
        if s:
            yield lineno, s


# --- events ---------------------------------------------------------------

def _int_field(tok, lineno, line, what):
    v = _float(tok, lineno, line)
    if v != int(v):
        raise MalformedLine(lineno, line, f"{what} must be an integer")
    return int(v)


def _parse_event_line(lineno, line):
    parts = line.split()
    if len(parts) != 4:
        raise MalformedLine(lineno, line, f"expected 4 fields, got {len(parts)}")
    t = _float(parts[0], lineno, line)
    x = _int_field(parts[1], lineno, line, "x")
    y = _int_field(parts[2], lineno, line, "y")
    pol = _int_field(parts[3], lineno, line, "polarity")
    if x < 0 or y < 0:
        raise MalformedLine(lineno, line, "negative pixel coordinate")
    if pol not in (0, 1):
        raise MalformedLine(lineno, line, "polarity must be 0 or 1")
    return t, x, y, pol


def _parse_event_block(block):
    """Parse a list of ``(lineno, line)``; bulk conversion, per-line on error."""
    try:
        a = np.loadtxt([s for _, s in block], dtype=np.float64, comments=None, ndmin=2)
        ok = a.shape[1] == 4
        if ok:
            xyp = a[:, 1:]
            ok = (np.all(np.isfinite(a)) and np.all(xyp == np.floor(xyp)) and np.all(xyp[:, :2] >= 0)
                  and np.all((xyp[:, 2] == 0) | (xyp[:, 2] == 1)))
    except ValueError:
        ok = False
    if not ok:
        a = np.array([_parse_event_line(n, s) for n, s in block], dtype=np.float64).reshape(-1, 4)
    return (a[:, 0].copy(), a[:, 1].astype(np.int32), a[:, 2].astype(np.int32),
            np.where(a[:, 3] == 1, 1, -1).astype(np.int8))


class _EventOrderChecker:
    """Streaming check of event ordering.

    With globally non-decreasing times a pixel can only repeat a timestamp
    inside a run of equal times, so the pixels of the current run are the
    only state carried between chunks.
    """

    def __init__(self, strict, sensor_size=None):
        self.strict = strict
        self.sensor_size = sensor_size
        self.last_t = -math.inf
        self.run_pixels = set()

    def feed(self, t, x, y, linenos):
        if not len(t):
            return
        if self.sensor_size is not None:
            w, h = self.sensor_size
            bad = np.flatnonzero((x >= w) | (y >= h))
            if bad.size:
                k = int(bad[0])
                raise MalformedLine(linenos[k], f"{t[k]!r} {x[k]} {y[k]}", f"pixel outside {w}x{h} sensor")
        problems = []
        prev = np.concatenate([[self.last_t], t[:-1]])
        for k in np.flatnonzero(t < prev):
            problems.append((k, f"timestamp {t[k]!r} decreases (previous {prev[k]!r})"))
        key = np.lexsort((x, y, t))
        ts, xs, ys = t[key], x[key], y[key]
        dup = (ts[1:] == ts[:-1]) & (xs[1:] == xs[:-1]) & (ys[1:] == ys[:-1])
        for k in np.maximum(key[1:][dup], key[:-1][dup]):
            problems.append((k, f"pixel ({x[k]}, {y[k]}) fires twice at t={t[k]!r}"))
        for k in np.flatnonzero(t == self.last_t):
            if (int(x[k]), int(y[k])) in self.run_pixels:
                problems.append((k, f"pixel ({x[k]}, {y[k]}) fires twice at t={t[k]!r}"))
        for k, msg in sorted(problems, key=lambda kv: kv[0]):
            _complain(self.strict, linenos[k], msg)
        tail = t == t[-1]
        run = {(int(a), int(b)) for a, b in zip(x[tail], y[tail])}
        if t[-1] == self.last_t and np.all(tail):
            run |= self.run_pixels
        self.run_pixels = run
        self.last_t = float(t[-1])


def iter_event_chunks(src, chunk_lines=CHUNK_LINES, strict=True, sensor_size=None):
    """Yield ``(t, x, y, p)`` column arrays of at most ``chunk_lines`` events.

    Polarity is mapped from the on-disk {1, 0} to {+1, -1}.  With
    ``strict`` an ordering violation raises NonMonotonicTimestamp; otherwise
    it is logged as a warning and parsing continues.
    """
    checker = _EventOrderChecker(strict, sensor_size)
    with _open_source(src) as f:
        block = []
        for item in _iter_lines(f):
            block.append(item)
            if len(block) >= chunk_lines:
                yield _finish_event_block(block, checker)
                block = []
        if block:
            yield _finish_event_block(block, checker)


def _finish_event_block(block, checker):
    t, x, y, p = _parse_event_block(block)
    checker.feed(t, x, y, [n for n, _ in block])
    return t, x, y, p


def parse_events(src, strict=True, sensor_size=None) -> Iterator[Event]:
    """Stream :class:`Event` records from an events.txt source."""
    for t, x, y, p in iter_event_chunks(src, strict=strict, sensor_size=sensor_size):
        for i in range(len(t)):
            yield Event(float(t[i]), int(x[i]), int(y[i]), int(p[i]))


def load_events(src, sensor_size=None, strict=True) -> EventStream:
    """Read a whole events file into an :class:`EventStream`.

    Without ``sensor_size`` the geometry is inferred as ``max + 1``.
    """
    cols = [[], [], [], []]
    for chunk in iter_event_chunks(src, strict=strict, sensor_size=sensor_size):
        for c, a in zip(cols, chunk):
            c.append(a)
    if cols[0]:
        t, x, y, p = (np.concatenate(c) for c in cols)
    else:
        t, x, y, p = np.empty(0), np.empty(0, np.int32), np.empty(0, np.int32), np.empty(0, np.int8)
    if sensor_size is None:
        sensor_size = (int(x.max()) + 1 if len(x) else 1, int(y.max()) + 1 if len(y) else 1)
    return EventStream(sensor_size[0], sensor_size[1], t, x, y, p, validate=strict)


@dataclass(frozen=True)
class EventSummary:
    count: int
    t_first: float
    t_last: float
    t_min: float
    max_x: int
    max_y: int


def scan_events(src, strict=True, sensor_size=None) -> EventSummary:
    """Count and time range of an events file in one constant-memory pass."""
    n, first, last = 0, math.nan, math.nan
    tmin, mx, my = math.inf, -1, -1
    for t, x, y, _ in iter_event_chunks(src, strict=strict, sensor_size=sensor_size):
        if not len(t):
            continue
        if n == 0:
            first = float(t[0])
        n += len(t)
        last = float(t[-1])
        tmin = min(tmin, float(t.min()))
        mx, my = max(mx, int(x.max())), max(my, int(y.max()))
    return EventSummary(n, first, last, tmin if n else math.nan, mx, my)


def _event_lines(t, x, y, p):
    on = p > 0
    return "".join(f"{ti:.9f} {xi} {yi} {1 if pi else 0}\n"
                   for ti, xi, yi, pi in zip(t.tolist(), x.tolist(), y.tolist(), on.tolist()))


def write_event_chunk(f, stream: EventStream):
    n = len(stream)
    for a in range(0, n, CHUNK_LINES):
        b = a + CHUNK_LINES
        f.write(_event_lines(stream.t[a:b], stream.x[a:b], stream.y[a:b], stream.p[a:b]))


def write_events(stream: EventStream, sink):
    """Canonical events.txt: ``%.9f x y {1|0}`` per line."""
    with _open_sink(sink) as f:
        write_event_chunk(f, stream)


# --- other record types ---------------------------------------------------

def _check_time(strict, lineno, t, prev, name):
    if t < prev:
        _complain(strict, lineno, f"{name} timestamp {t!r} decreases (previous {prev!r})")


def parse_imu(src, strict=True) -> Iterator[ImuSample]:
    prev = -math.inf
    with _open_source(src) as f:
        for lineno, line in _iter_lines(f):
            parts = line.split()
            if len(parts) != 7:
                raise MalformedLine(lineno, line, f"expected 7 fields, got {len(parts)}")
            vals = [_float(v, lineno, line) for v in parts]
            _check_time(strict, lineno, vals[0], prev, "imu")
            prev = max(prev, vals[0])
            yield ImuSample(*vals)


def parse_groundtruth(src, strict=True) -> Iterator[GroundTruthSample]:
    prev = -math.inf
    with _open_source(src) as f:
        for lineno, line in _iter_lines(f):
            parts = line.split()
            if len(parts) != 8:
                raise MalformedLine(lineno, line, f"expected 8 fields, got {len(parts)}")
            vals = [_float(v, lineno, line) for v in parts]
            _check_time(strict, lineno, vals[0], prev, "ground-truth")
            prev = max(prev, vals[0])
            n = math.sqrt(sum(v * v for v in vals[4:8]))
            if n == 0.0:
                raise MalformedLine(lineno, line, "zero quaternion")
            if abs(n - 1.0) > QUAT_NORM_TOL:
                logger.warning("line %d: quaternion norm %.9f, re-normalizing", lineno, n)
            yield GroundTruthSample(vals[0], np.array(vals[1:4]), UnitQuaternion(*vals[4:8]))


def parse_images_list(src, strict=True) -> Iterator[ImageRef]:
    prev = -math.inf
    with _open_source(src) as f:
        for lineno, line in _iter_lines(f):
            parts = line.split(maxsplit=1)
            if len(parts) != 2:
                raise MalformedLine(lineno, line, "expected 'timestamp filename'")
            t = _float(parts[0], lineno, line)
            _check_time(strict, lineno, t, prev, "image")
            prev = max(prev, t)
            yield ImageRef(t, parts[1])


def parse_calib(src) -> CameraIntrinsics:
    with _open_source(src) as f:
        lines = list(_iter_lines(f))
    if len(lines) != 1:
        lineno, line = lines[1] if lines else (1, "")
        raise MalformedLine(lineno, line, "calib.txt must hold exactly one line")
    lineno, line = lines[0]
    parts = line.split()
    if len(parts) != 9:
        raise WrongFieldCount(lineno, line, f"expected 9 fields (fx fy cx cy k1 k2 p1 p2 k3), got {len(parts)}")
    vals = [_float(v, lineno, line) for v in parts]
    try:
        return CameraIntrinsics.from_array(vals)
    except ValueError as e:
        raise MalformedLine(lineno, line, str(e)) from None


def load_imu(src, strict=True) -> np.ndarray:
    """IMU samples as an (N, 7) array: t ax ay az gx gy gz."""
    rows = [tuple(s) for s in parse_imu(src, strict)]
    return np.array(rows, dtype=np.float64).reshape(-1, 7)


def load_groundtruth(src, strict=True) -> np.ndarray:
    """Ground truth as an (N, 8) array: t px py pz qx qy qz qw."""
    rows = [s.as_row() for s in parse_groundtruth(src, strict)]
    return np.array(rows, dtype=np.float64).reshape(-1, 8)


def load_images_list(src, strict=True) -> list:
    return list(parse_images_list(src, strict))


def _rows(records, width):
    if isinstance(records, np.ndarray):
        return records.reshape(-1, width).tolist()
    out = []
    for r in records:
        out.append(r.as_row().tolist() if isinstance(r, GroundTruthSample) else list(r))
    return out


def write_imu(samples, sink):
    with _open_sink(sink) as f:
        for r in _rows(samples, 7):
            f.write(format_time(r[0]) + " " + " ".join(_fmt(v) for v in r[1:]) + "\n")


def write_groundtruth(samples, sink):
    with _open_sink(sink) as f:
        for r in _rows(samples, 8):
            f.write(format_time(r[0]) + " " + " ".join(_fmt(v) for v in r[1:]) + "\n")


def write_images_list(refs, sink):
    with _open_sink(sink) as f:
        for t, name in refs:
            f.write(f"{format_time(t)} {name}\n")


def format_calib(K: CameraIntrinsics) -> str:
    return " ".join(_fmt(v) for v in K.as_array()) + "\n"


def write_calib(K: CameraIntrinsics, sink):
    with _open_sink(sink) as f:
        f.write(format_calib(K))


# --- bundles --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetBundle:
    events: EventStream | None = None
    images: tuple | None = None        # ImageRef records
    imu: np.ndarray | None = None      # (N, 7)
    groundtruth: np.ndarray | None = None  # (N, 8)
    calib: CameraIntrinsics | None = None

    @property
    def present(self) -> dict:
        return {
            "events": self.events is not None,
            "images": self.images is not None,
            "imu": self.imu is not None,
            "groundtruth": self.groundtruth is not None,
            "calib": self.calib is not None,
        }

    def min_timestamp(self) -> float:
        mins = []
        if self.events is not None and len(self.events):
            mins.append(float(self.events.t.min()))
        if self.images:
            mins.append(min(r.t for r in self.images))
        for a in (self.imu, self.groundtruth):
            if a is not None and len(a):
                mins.append(float(a[:, 0].min()))
        if not mins:
            raise EmptyBundle("bundle holds no timestamped records")
        return min(mins)


def load_dataset(root, strict=True, sensor_size=None, with_events=True) -> DatasetBundle:
    """Load whichever of the standard files exist under ``root``."""
    root = Path(root)
    kw = {}
    if (root / IMAGES_FILE).exists():
        kw["images"] = tuple(load_images_list(root / IMAGES_FILE, strict))
    if (root / IMU_FILE).exists():
        kw["imu"] = load_imu(root / IMU_FILE, strict)
    if (root / GROUNDTRUTH_FILE).exists():
        kw["groundtruth"] = load_groundtruth(root / GROUNDTRUTH_FILE, strict)
    if (root / CALIB_FILE).exists():
        kw["calib"] = parse_calib(root / CALIB_FILE)
    if with_events and (root / EVENTS_FILE).exists():
        kw["events"] = load_events(root / EVENTS_FILE, sensor_size=sensor_size, strict=strict)
    return DatasetBundle(**kw)


def normalize_timestamps(bundle: DatasetBundle) -> DatasetBundle:
    """Shift every stream by the smallest timestamp found in any of them.

    The shift is exact (so time differences are preserved bit for bit)
    whenever all timestamps lie within ``[m, 2m]`` of the minimum ``m``,
    which holds for POSIX-epoch recordings.
    """
    m = bundle.min_timestamp()
    if m == 0.0:
        return bundle
    changes = {}
    if bundle.events is not None:
        ev = bundle.events
        changes["events"] = EventStream(ev.width, ev.height, ev.t - m, ev.x, ev.y, ev.p, validate=False)
    if bundle.images is not None:
        changes["images"] = tuple(ImageRef(r.t - m, r.filename) for r in bundle.images)
    for name in ("imu", "groundtruth"):
        a = getattr(bundle, name)
        if a is not None:
            a = a.copy()
            a[:, 0] -= m
            changes[name] = a
    return replace(bundle, **changes)
