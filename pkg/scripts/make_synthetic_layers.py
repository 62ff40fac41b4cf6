#!/usr/bin/env python3
"""Generate a synthetic layer manifest for exercising the fgmp CLI.

Writes per-layer weight, weight-fisher, activation, activation-fisher,
and channel-magnitude .fgt files plus a config.json, with outliers and
heterogeneous sensitivities injected so mixed assignments actually occur.
"""

import argparse
import json
import os

import numpy as np

from fgmp import fileio
from fgmp.sensitivity import calibrate_channel_stats


def make_layer(rng, rows, cols, tokens, hot_channels=4, outliers=3):
    w = rng.normal(0, 1, size=(rows, cols)).astype(np.float32)
    for _ in range(outliers):
        w[rng.integers(0, rows), rng.integers(0, cols)] = rng.choice([-1, 1]) * rng.uniform(10, 50)
    wf = rng.uniform(0, 0.1, size=(rows, cols)).astype(np.float32)
    wf[:, rng.integers(0, cols, size=hot_channels)] += rng.uniform(1, 10)
    x = rng.normal(0, 0.5, size=(tokens, cols)).astype(np.float32)
    x[:, rng.integers(0, cols, size=2)] *= rng.uniform(5, 20)
    xf = rng.uniform(0, 0.5, size=cols).astype(np.float32)
    xf[rng.integers(0, cols, size=hot_channels)] += rng.uniform(1, 5)
    yf = rng.uniform(0, 0.5, size=rows).astype(np.float32)  # next layer's channels
    yf[rng.integers(0, rows, size=hot_channels)] += rng.uniform(1, 5)
    return w, wf, x, xf, yf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="workspace directory")
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--rows", type=int, default=64)
    ap.add_argument("--cols", type=int, default=256)
    ap.add_argument("--tokens", type=int, default=32)
    ap.add_argument("--ratio", type=float, default=0.9)
    ap.add_argument("--policy", default="fisher", choices=["fisher", "qe", "oe"])
    ap.add_argument("--clip", default="sw", choices=["sw", "dynmax"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    layers = []
    for i in range(args.layers):
        name = f"layer{i}"
        w, wf, x, xf, yf = make_layer(rng, args.rows, args.cols, args.tokens)
        mags = calibrate_channel_stats([x]).values.astype(np.float32)
        paths = {
            "weights": f"{name}.w.fgt",
            "weight_fisher": f"{name}.wf.fgt",
            "activations": f"{name}.x.fgt",
            "activation_fisher": f"{name}.xf.fgt",
            "channel_magnitudes": f"{name}.xm.fgt",
        }
        # output-channel fisher for PPU simulation (not part of the manifest)
        fileio.write_tensor_file(
            os.path.join(args.out, f"{name}.yf.fgt"), yf, fileio.KIND_FISHER_CHANNEL
        )
        fileio.write_tensor_file(os.path.join(args.out, paths["weights"]), w, fileio.KIND_TENSOR)
        fileio.write_tensor_file(
            os.path.join(args.out, paths["weight_fisher"]), wf, fileio.KIND_FISHER_ELEM
        )
        fileio.write_tensor_file(os.path.join(args.out, paths["activations"]), x, fileio.KIND_TENSOR)
        fileio.write_tensor_file(
            os.path.join(args.out, paths["activation_fisher"]), xf, fileio.KIND_FISHER_CHANNEL
        )
        fileio.write_tensor_file(
            os.path.join(args.out, paths["channel_magnitudes"]), mags, fileio.KIND_CHANNEL_MAG
        )
        layers.append({"name": name, **paths})

    cfg = {
        "policy": args.policy,
        "ratio": args.ratio,
        "scope": "global",
        "clip": args.clip,
        "layers": layers,
    }
    cfg_path = os.path.join(args.out, "config.json")
    with open(cfg_path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.layers} synthetic layer(s) and {cfg_path}")


if __name__ == "__main__":
    main()
