"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 I/O error,
4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import dataset_io as dio
from . import handeye
from .errors import DatasetFormatError, EvsimError, UsageError
from .geometry import CameraIntrinsics, RigidTransform

logger = logging.getLogger("evsim")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3, 4


def _index_path(frames) -> Path:
    p = Path(frames)
    return p / dio.IMAGES_FILE if p.is_dir() else p


def _threads(args) -> int:
    env = os.environ.get("EVSIM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"EVSIM_THREADS must be an integer, got {env!r}") from None
    else:
        n = args.threads
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _config(args):
    from .simulator import SimulatorConfig
    return SimulatorConfig(args.contrast, args.log_eps)


# --- subcommands ----------------------------------------------------------

def cmd_simulate(args):
    from .simulator import EventGenerator
    from .simulator.frames import iter_frames
    from .errors import EmptySequence

    config = _config(args)
    frames = iter_frames(_index_path(args.frames), degamma=args.degamma)
    first = next(frames, None)
    if first is None:
        raise EmptySequence("frame index lists no frames")
    n = 0
    with dio.atomic_open(args.out) as f, \
            EventGenerator(first[1], first[0], config, threads=_threads(args), backend=args.backend) as gen:
        for batch in gen.run(frames):
            dio.write_event_chunk(f, batch)
            n += 1
        if n == 0:
            raise EmptySequence("need at least 2 frames")
        total = gen.num_events
    logger.info("wrote %d events from %d frame intervals to %s", total, n, args.out)
    return EXIT_OK


def cmd_reconstruct_check(args):
    from .simulator import reconstruction_errors
    from .simulator.frames import load_frames

    config = _config(args)
    seq = load_frames(_index_path(args.frames), degamma=args.degamma)
    events = dio.load_events(args.events, sensor_size=(seq.width, seq.height))
    err = float(reconstruction_errors(seq, events, config).max())
    ok = err < config.contrast_threshold
    print(f"max reconstruction error {err:.12g} (contrast {config.contrast_threshold:g}): "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVALID


def _fresh_output_dir(path: Path):
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise UsageError(f"output {path} exists and is not an empty directory")
    path.parent.mkdir(parents=True, exist_ok=True)


def cmd_render_planar(args):
    from .simulator import (check_sampling_density, circular_trajectory, fronto_parallel_pose,
                            linear_trajectory, random_texture, render_planar_sequence)
    from .simulator.frames import save_frames
    from .simulator.render import PlanarScene

    out = Path(args.out)
    _fresh_output_dir(out)
    rng = np.random.default_rng(args.seed)
    K = handeye.DEFAULT_SYNTH_K if args.distorted else CameraIntrinsics(
        args.focal, args.focal, (args.width - 1) / 2, (args.height - 1) / 2)
    texture = random_texture(rng, (args.texture_size, args.texture_size), sigma=args.texture_sigma)
    plane = fronto_parallel_pose(args.distance)
    times = np.arange(args.num_frames) / args.rate
    if args.motion == "linear":
        direction = rng.normal(size=2)
        velocity = np.r_[args.speed * direction / np.linalg.norm(direction), 0.0]
        trajectory = linear_trajectory(times, velocity)
    else:
        trajectory = circular_trajectory(times, args.radius, args.period)
    seq = render_planar_sequence(texture, plane, K, trajectory, args.supersampling, args.width,
                                 args.height, texel_size=args.texel_size)
    report = check_sampling_density(seq, trajectory, PlanarScene(texture, plane, args.texel_size), K)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        save_frames(seq, tmp, bit_depth=16)
        dio.write_calib(K, tmp / dio.CALIB_FILE)
        dio.write_groundtruth([dio.GroundTruthSample(t, T.translation, T.rotation)
                               for t, T in trajectory], tmp / dio.GROUNDTRUTH_FILE)
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"rendered {len(seq)} frames to {out}; max inter-frame motion "
          f"{report.max_displacement:.4f} px")
    return EXIT_OK


def _load_pose_file(path):
    return [RigidTransform.from_pose7(row[1:]) for row in dio.load_groundtruth(path)]


def _pose_line(T: RigidTransform) -> str:
    return " ".join(repr(float(v)) for v in T.pose7())


def cmd_handeye(args):
    hand = _load_pose_file(args.hand)
    eye = _load_pose_file(args.eye)
    if len(hand) != len(eye):
        raise UsageError(f"{len(hand)} hand poses but {len(eye)} eye poses")
    pairs = handeye.make_relative_pairs(hand, eye, window=args.window)
    X = handeye.tsai_linear(pairs)
    refine_inputs = (args.corners, args.observations, args.calib)
    if any(refine_inputs) and not all(refine_inputs):
        raise UsageError("--corners, --observations and --calib must be given together")
    lines = [_pose_line(X)]
    if all(refine_inputs):
        problem = handeye.HandEyeProblem(
            hand, handeye.load_observations(args.observations, len(hand)),
            handeye.load_corners(args.corners), dio.parse_calib(args.calib), eye)
        sol = handeye.refine_handeye(problem, X)
        lines = [_pose_line(sol.X), _pose_line(sol.Z)]
        logger.info("refined in %d iterations, RMS reprojection %.6g px", sol.iterations, sol.rms)
    text = "\n".join(lines) + "\n"
    if args.out:
        with dio.atomic_open(args.out) as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args):
    from .stats import stats_from_parts

    root = Path(args.dataset)
    ev = root / dio.EVENTS_FILE
    if not ev.exists():
        raise UsageError(f"{ev} not found")
    summary = dio.scan_events(ev)
    gt_path = root / dio.GROUNDTRUTH_FILE
    gt = dio.load_groundtruth(gt_path) if gt_path.exists() else None
    st = stats_from_parts(summary.count, summary.t_first, summary.t_last, gt, args.window)
    if args.json:
        print(json.dumps(st.as_json_dict(), sort_keys=True))
    else:
        def fmt(v, unit):
            return "n/a" if v is None else f"{v:.6g} {unit}"
        print(f"duration     {st.duration:.6f} s")
        print(f"events       {st.num_events}")
        print(f"max speed    {fmt(st.max_translational_speed, 'm/s')}")
        print(f"max rotation {fmt(st.max_rotational_speed, 'deg/s')}")
    return EXIT_OK


def validate_dataset(root) -> list:
    """Every problem found in a dataset directory, as readable strings."""
    from PIL import Image

    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    problems = []
    mins = []

    def check(name, fn):
        path = root / name
        if not path.exists():
            return None
        try:
            return fn(path)
        except DatasetFormatError as e:
            problems.append(f"{name}: {e}")
        return None

    size = None
    images = check(dio.IMAGES_FILE, lambda p: dio.load_images_list(p))
    if images:
        mins.append(min(r.t for r in images))
        for r in images:
            f = root / r.filename
            if not f.is_file():
                problems.append(f"{dio.IMAGES_FILE}: missing image {r.filename}")
                continue
            try:
                with Image.open(f) as im:
                    s = im.size
            except OSError as e:
                problems.append(f"{r.filename}: unreadable image ({e})")
                continue
            if size is None:
                size = s
            elif s != size:
                problems.append(f"{r.filename}: size {s} differs from {size}")

    summary = check(dio.EVENTS_FILE, lambda p: dio.scan_events(p, sensor_size=size))
    if summary is not None and summary.count:
        mins.append(summary.t_min)

    for name, loader in ((dio.IMU_FILE, dio.load_imu), (dio.GROUNDTRUTH_FILE, dio.load_groundtruth)):
        a = check(name, loader)
        if a is not None and len(a):
            mins.append(float(a[:, 0].min()))
            if name == dio.GROUNDTRUTH_FILE:
                # loading re-normalizes; judge the values as written
                raw = np.loadtxt(root / name, usecols=(4, 5, 6, 7), ndmin=2)
                norms = np.linalg.norm(raw, axis=1)
                for i in np.flatnonzero(np.abs(norms - 1.0) > dio.QUAT_NORM_TOL):
                    problems.append(f"{name}: record {i + 1} quaternion norm {norms[i]:.9f}")

    check(dio.CALIB_FILE, dio.parse_calib)
    if not mins and not problems:
        problems.append("no timestamped records found")
    elif mins and min(mins) != 0.0:
        problems.append(f"timestamps are not normalized (minimum {min(mins)!r})")
    return problems


def cmd_validate(args):
    problems = validate_dataset(args.dataset)
    for p in problems:
        print(p)
    if problems:
        print(f"INVALID: {len(problems)} problem(s)")
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------

def _add_sim_options(p):
    p.add_argument("--frames", required=True, help="frame directory or images.txt index")
    p.add_argument("--contrast", type=float, default=0.15, help="log-intensity threshold C")
    p.add_argument("--log-eps", type=float, default=1e-3, help="offset inside the logarithm")
    p.add_argument("--degamma", action="store_true", help="treat 8/16-bit frames as sRGB encoded")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evsim", description="Event-camera dataset tools.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="frames -> events.txt")
    _add_sim_options(p)
    p.add_argument("--threads", type=int, default=1, help="worker threads (EVSIM_THREADS overrides)")
    p.add_argument("--backend", choices=("cython", "python"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct-check", help="verify events reproduce the frames within C")
    _add_sim_options(p)
    p.add_argument("--events", required=True)
    p.set_defaults(func=cmd_reconstruct_check)

    p = sub.add_parser("render-planar", help="render a textured plane seen by a moving camera")
    p.add_argument("--out", required=True, help="new output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=240)
    p.add_argument("--height", type=int, default=180)
    p.add_argument("--num-frames", type=int, default=100)
    p.add_argument("--rate", type=float, default=1000.0, help="frames per second")
    p.add_argument("--motion", choices=("linear", "circular"), default="linear")
    p.add_argument("--speed", type=float, default=1.0, help="m/s, linear motion")
    p.add_argument("--radius", type=float, default=0.3, help="m, circular motion")
    p.add_argument("--period", type=float, default=2.0, help="s, circular motion")
    p.add_argument("--distance", type=float, default=1.0, help="plane depth, m")
    p.add_argument("--focal", type=float, default=200.0)
    p.add_argument("--distorted", action="store_true", help="use a radial-tangential lens model")
    p.add_argument("--supersampling", type=int, default=1)
    p.add_argument("--texture-size", type=int, default=512)
    p.add_argument("--texture-sigma", type=float, default=4.0)
    p.add_argument("--texel-size", type=float, default=0.005)
    p.set_defaults(func=cmd_render_planar)

    p = sub.add_parser("handeye", help="hand-eye calibration from pose pairs")
    p.add_argument("--hand", required=True, help="hand poses, groundtruth.txt format")
    p.add_argument("--eye", required=True, help="eye poses in the board frame, same format")
    p.add_argument("--corners")
    p.add_argument("--observations")
    p.add_argument("--calib")
    p.add_argument("--window", type=int, default=1, help="pair each pose with this many successors")
    p.add_argument("--out")
    p.set_defaults(func=cmd_handeye)

    p = sub.add_parser("stats", help="duration, event count and peak speeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--window", type=int, default=5, help="odd smoothing window, samples")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except EvsimError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
