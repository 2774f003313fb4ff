"""Compiled vs numpy kernel timings on a ~130k-point synthetic scan.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from lidarmos import _kernels
from lidarmos import synthetic as sy
from lidarmos.range_view import RvConfig
from lidarmos.bev_view import BevConfig


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts) * 1e3, float(np.median(ts)) * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=15)
    args = ap.parse_args()

    seq = sy.generate_sequence(sy.static_scene(frame_count=2, ground_density=5.55, box_density=40.0))
    pts = np.ascontiguousarray(seq.frames[1].cloud.points)
    rel = seq.frames[0].pose.inverse().transform @ seq.frames[1].pose.transform
    rvc, bvc = RvConfig(), BevConfig()
    bev = (bvc.rho_min, bvc.rho_max, bvc.theta_min, bvc.theta_max)

    def cases(k):
        def acc():
            k.bev_accumulate(pts, rel, k.new_accumulator(bvc.h, bvc.w), *bev, bvc.z_min, bvc.z_max)
        return {
            "project_range": lambda: k.project_range(pts, rvc.h, rvc.w, rvc.fov_up, rvc.fov_down),
            "range_index": lambda: k.range_index(pts, rvc.h, rvc.w, rvc.fov_up, rvc.fov_down),
            "range_index+xform": lambda: k.range_index(pts, rvc.h, rvc.w, rvc.fov_up, rvc.fov_down, rel),
            "bev_assign": lambda: k.bev_assign(pts, bvc.h, bvc.w, *bev),
            "bev_accumulate+xform": acc,
        }

    backends = _kernels.available_backends()
    print(f"{len(pts)} points, best / median of {args.repeat} runs (ms)")
    print(f"{'kernel':<22}" + "".join(f"{b.NAME:>20}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name in cases(backends[0]):
        row = [best_of(cases(b)[name], args.repeat) for b in backends]
        line = f"{name:<22}" + "".join(f"{lo:9.2f} / {med:7.2f} " for lo, med in row)
        if len(row) > 1:
            line += f"{row[1][0] / row[0][0]:8.1f}x"
        print(line)
    if len(backends) == 1:
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
