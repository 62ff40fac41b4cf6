#!/usr/bin/env python3
"""End-to-end demo: synthesize layers, calibrate, quantize, simulate, report.

Equivalent to running the fgmp CLI by hand; useful as a smoke test and as
a template for scripting experiments.
"""

import argparse
import os
import subprocess
import sys


def sh(*argv):
    print("+", " ".join(argv))
    subprocess.run(argv, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--layers", type=int, default=3)
    ap.add_argument("--ratio", type=float, default=0.9)
    args = ap.parse_args()

    py = sys.executable
    here = os.path.dirname(os.path.abspath(__file__))
    wd = args.workdir
    cfg = os.path.join(wd, "config.json")

    sh(py, os.path.join(here, "make_synthetic_layers.py"),
       "--out", wd, "--layers", str(args.layers), "--ratio", str(args.ratio))
    fgmp = [py, "-m", "fgmp.cli"]
    sh(*fgmp, "calibrate", "--config", cfg)
    sh(*fgmp, "quantize", "--config", cfg, "--out", os.path.join(wd, "quant"))
    reports = []
    for i in range(args.layers):
        prefix = os.path.join(wd, f"sim{i}")
        sh(*fgmp, "simulate",
           "--config", cfg,
           "--weights", os.path.join(wd, "quant", f"layer{i}.fgq"),
           "--acts", os.path.join(wd, f"layer{i}.x.fgt"),
           "--act-fisher", os.path.join(wd, f"layer{i}.xf.fgt"),
           "--ppu-fisher", os.path.join(wd, f"layer{i}.yf.fgt"),
           "--out", prefix)
        reports.append(prefix + ".report.json")
    sh(*fgmp, "report", *reports)


if __name__ == "__main__":
    main()
