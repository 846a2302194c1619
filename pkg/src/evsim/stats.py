"""Dataset summary statistics: duration, event count and peak speeds."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset_io import DatasetBundle
from .errors import NoEvents, UsageError
from .geometry import quat_angle, quat_multiply, quat_to_rotvec, rotvec_to_quat

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class DatasetStats:
    duration: float
    num_events: int
    max_translational_speed: float | None = None  # m/s
    max_rotational_speed: float | None = None     # deg/s

    def as_json_dict(self) -> dict:
        return {
            "duration_s": self.duration,
            "num_events": self.num_events,
            "max_trans_speed_mps": self.max_translational_speed,
            "max_rot_speed_dps": self.max_rotational_speed,
        }

    def as_dict(self) -> dict:
        return asdict(self)


def _check_window(window):
    if int(window) != window or window < 1 or window % 2 == 0:
        raise UsageError(f"smoothing window must be a positive odd integer, got {window}")
    return int(window)


def _moving_average(a, window):
    """Centered mean over ``window`` rows; only rows with a full window survive."""
    if len(a) < window:
        return a[:0]
    return sliding_window_view(a, window, axis=0).mean(axis=-1)


def _smooth_quaternions(q, window):
    """Centered rotation average: mean of rotation vectors relative to the middle sample."""
    h = window // 2
    n = len(q) - 2 * h
    if n <= 0:
        return q[:0]
    centre = q[h:h + n]
    inv = centre * np.array([-1.0, -1.0, -1.0, 1.0])
    acc = np.zeros((n, 3))
    for k in range(window):
        acc += quat_to_rotvec(quat_multiply(inv, q[k:k + n]))
    return quat_multiply(centre, rotvec_to_quat(acc / window))


def translational_speeds(t, positions, window=DEFAULT_WINDOW) -> np.ndarray:
    """Speed magnitudes (m/s) by central differences of smoothed positions."""
    window = _check_window(window)
    t = np.asarray(t, dtype=np.float64)
    p = _moving_average(np.asarray(positions, dtype=np.float64), window)
    ts = _moving_average(t, window)
    if len(p) < 3:
        return np.empty(0)
    return np.linalg.norm(p[2:] - p[:-2], axis=1) / (ts[2:] - ts[:-2])


def rotational_speeds(t, quaternions, window=DEFAULT_WINDOW) -> np.ndarray:
    """Angular speed magnitudes (deg/s) from scalar-last quaternions."""
    window = _check_window(window)
    t = np.asarray(t, dtype=np.float64)
    q = np.asarray(quaternions, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    qs = _smooth_quaternions(q, window)
    ts = _moving_average(t, window)
    if len(qs) < 3:
        return np.empty(0)
    rel = quat_multiply(qs[:-2] * np.array([-1.0, -1.0, -1.0, 1.0]), qs[2:])
    return np.rad2deg(quat_angle(rel)) / (ts[2:] - ts[:-2])


def _peak(v):
    return float(v.max()) if len(v) else 0.0


def stats_from_parts(num_events, t_first, t_last, groundtruth=None, window=DEFAULT_WINDOW) -> DatasetStats:
    """Statistics from an event count and time range plus an optional (N, 8) pose array.

    Lets callers stream the events file instead of loading it.
    """
    if num_events <= 0:
        raise NoEvents("dataset holds no events")
    ts = rs = None
    if groundtruth is not None and len(groundtruth):
        gt = np.asarray(groundtruth, dtype=np.float64)
        ts = _peak(translational_speeds(gt[:, 0], gt[:, 1:4], window))
        rs = _peak(rotational_speeds(gt[:, 0], gt[:, 4:8], window))
    duration = float(t_last) - float(t_first)
    if not math.isfinite(duration) or duration < 0:
        raise UsageError("event time range is invalid")
    return DatasetStats(duration, int(num_events), ts, rs)


def compute_stats(bundle: DatasetBundle, smoothing_window=DEFAULT_WINDOW) -> DatasetStats:
    ev = bundle.events
    if ev is None or not len(ev):
        raise NoEvents("dataset holds no events")
    return stats_from_parts(len(ev), ev.t[0], ev.t[-1], bundle.groundtruth, smoothing_window)
