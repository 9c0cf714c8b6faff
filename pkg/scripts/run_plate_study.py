#!/usr/bin/env python3
"""Desk-scale accuracy-and-speedup study on the coarse plate with a hole.

Runs one deterministic reference, the two-simulation time-separated scheme,
and a seeded Monte Carlo ensemble on the same mesh and step grid, then writes
the comparison report and the timing/speedup table.

    python scripts/run_plate_study.py --out out/plate_study --mc-n 100

With --mc-n 500 this reproduces the headline comparison (takes a few
minutes on one core; scale down for a smoke run).
"""

import argparse
import os
import sys

from tsmfem.cli import main as cli


def run(out: str, mc_n: int, workers: int) -> int:
    base = ["--preset", "plate_coarse_desk", "--out", out,
            "--set", "timestep.cfl_safety=0.45"]
    steps = [
        ["mesh-gen", *base],
        ["run-det", *base, "--xi", "0"],
        ["run-tsm", *base, "--set", "tsm.exchange_interval=1"],
        ["run-mc", *base, "--set", f"mc.n={mc_n}",
         "--set", f"mc.workers={workers}", "--set", "mc.force_stride=8"],
        ["compare", "--tsm", os.path.join(out, "tsm"),
         "--mc", os.path.join(out, "mc"), "--out", os.path.join(out, "compare")],
        ["report-timing", os.path.join(out, "det_xi+0"), os.path.join(out, "tsm"),
         os.path.join(out, "mc"), "--out", os.path.join(out, "timing.txt")],
    ]
    for argv in steps:
        code = cli(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/plate_study")
    ap.add_argument("--mc-n", type=int, default=100)
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    sys.exit(run(a.out, a.mc_n, a.workers))
