"""Compare the compiled and pure-Python event kernels on a rendered sequence.

    python benchmarks/bench_kernel.py [--size 240x180] [--frames 100] [--threads 1]
"""
import argparse
import time

import numpy as np

from evsim.geometry import CameraIntrinsics
from evsim.simulator import (SimulatorConfig, fronto_parallel_pose, generate_events,
                             linear_trajectory, random_texture, render_planar_sequence)
from evsim.simulator._backend import compiled_interval_events


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", default="240x180")
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w, h = (int(v) for v in args.size.split("x"))

    rng = np.random.default_rng(args.seed)
    K = CameraIntrinsics(200.0, 200.0, (w - 1) / 2, (h - 1) / 2)
    times = np.arange(args.frames) / 1000.0
    seq = render_planar_sequence(random_texture(rng, (512, 512), sigma=2.0), fronto_parallel_pose(1.0),
                                 K, linear_trajectory(times, [1.0, 0.5, 0.0]), width=w, height=h,
                                 texel_size=0.005)
    config = SimulatorConfig(0.15)

    backends = ["python"] + (["cython"] if compiled_interval_events is not None else [])
    results = {}
    for name in backends:
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            ev = generate_events(seq, config, threads=args.threads, backend=name)
            best = min(best, time.perf_counter() - t0)
        results[name] = ev
        print(f"{name:7s} {best * 1e3:9.1f} ms  {len(ev):9d} events  {len(ev) / best / 1e6:7.2f} Mev/s")
    if len(results) == 2:
        print("outputs identical:", results["python"] == results["cython"])
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
