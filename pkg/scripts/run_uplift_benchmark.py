#!/usr/bin/env python3
"""Uplift throughput experiment: per-channel accumulation cost vs channels.

Builds a 480x640 synthetic scene, times feature accumulation at several
channel counts with warm fragment buffers, and fits the affine cost model
t_view(c) = setup + slope * c.
"""

import argparse
import json

import numpy as np

from splift import SyntheticSpec, benchmark_uplift, make_two_cluster_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-gaussians", type=int, default=2000)
    ap.add_argument("--views", type=int, default=3)
    ap.add_argument("--width", type=int, default=640)
    ap.add_argument("--height", type=int, default=480)
    ap.add_argument("--channels", type=int, nargs="+", default=[1, 8, 40])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--out", help="write the raw reports as JSON")
    args = ap.parse_args()

    spec = SyntheticSpec(
        n_gaussians=args.n_gaussians, n_views=args.views,
        width=args.width, height=args.height, seed=0,
    )
    data = make_two_cluster_scene(spec)
    rng = np.random.default_rng(0)

    reports = []
    print(f"{'channels':>9}{'s/view':>12}{'ms/view/ch':>12}")
    for c in args.channels:
        frames = [
            (cam, rng.normal(size=(cam.height, cam.width, c)).astype(np.float32))
            for cam in data.scene.cameras
        ]
        rep = benchmark_uplift(data.scene, frames, repeats=args.repeats)
        reports.append(rep)
        print(f"{c:>9}{rep['seconds_per_view']:>12.4f}"
              f"{1000 * rep['seconds_per_view_per_channel']:>12.2f}")

    x = np.asarray(args.channels, dtype=float)
    y = np.asarray([r["seconds_per_view"] for r in reports])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    print(f"affine fit: {1000 * intercept:.2f} ms setup + "
          f"{1000 * slope:.3f} ms/channel per view  (R^2 {r2:.4f})")

    if args.out:
        with open(args.out, "w") as f:
            json.dump({"reports": reports,
                       "fit": {"slope_s": slope, "intercept_s": intercept,
                               "r2": r2}}, f, indent=1)
        print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
