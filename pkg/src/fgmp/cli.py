"""Command-line surface: calibrate, quantize, simulate, report, inspect.

Exit codes: 0 success, 1 usage error, 2 data/validation error.
FGMP_THREADS caps per-layer fan-out during calibration and quantization.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import assignment as asg
from . import blockquant as bq
from . import costmodel as cm
from . import fileio
from . import simkernel as sk
from .config import ConfigError, RunConfig
from .numerics import FP8_MAX
from .sensitivity import ChannelMagnitudeMap, FisherMap, calibrate_channel_stats

USAGE_ERROR = 1
DATA_ERROR = 2


class CliError(Exception):
    """Data/validation failure; message is printed and exit code is 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _threads() -> int:
    raw = os.environ.get("FGMP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"FGMP_THREADS must be an integer, got {raw!r}")
    return max(n, 1)


def _layer_map(fn, items):
    n = min(_threads(), max(len(items), 1))
    if n == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _read_tensor(path, want_kind, what) -> np.ndarray:
    try:
        values, kind = fileio.read_tensor_file(path)
    except OSError as exc:
        raise CliError(f"cannot read {what} file {path}: {exc}")
    except fileio.FileFormatError as exc:
        raise CliError(str(exc))
    if kind != want_kind:
        raise CliError(
            f"{path}: holds {fileio.KIND_NAMES[kind]}, expected {fileio.KIND_NAMES[want_kind]}"
        )
    return values


def _fp8_scale_for(values: np.ndarray) -> float:
    amax = float(np.abs(values).max()) if values.size else 0.0
    return float(np.float32(amax / FP8_MAX)) if amax else 1.0


def _weight_layer_data(cfg: RunConfig, entry) -> asg.LayerData:
    values = _read_tensor(cfg.resolve(entry.weights), fileio.KIND_TENSOR, "weights")
    tensor = bq.Tensor(values, role="weight", name=entry.name)
    fisher = None
    if entry.weight_fisher:
        fvals = _read_tensor(
            cfg.resolve(entry.weight_fisher), fileio.KIND_FISHER_ELEM, "weight fisher"
        )
        try:
            fisher = FisherMap("per_element", fvals)
        except ValueError as exc:
            raise CliError(f"{entry.weight_fisher}: {exc}")
    elif cfg.policy == "fisher" or cfg.clip == "sw":
        raise CliError(f"layer {entry.name!r} needs a weight_fisher file for this config")
    mags = None
    if cfg.policy == "oe":
        if entry.channel_magnitudes:
            mvals = _read_tensor(
                cfg.resolve(entry.channel_magnitudes), fileio.KIND_CHANNEL_MAG, "channel magnitudes"
            )
            mags = ChannelMagnitudeMap(mvals)
        elif entry.activations:
            acts = _read_tensor(cfg.resolve(entry.activations), fileio.KIND_TENSOR, "activations")
            mags = calibrate_channel_stats([acts])
        else:
            raise CliError(
                f"layer {entry.name!r}: oe policy needs channel_magnitudes or activations"
            )
    try:
        return asg.LayerData(tensor, fisher, channel_mags=mags)
    except ValueError as exc:
        raise CliError(f"layer {entry.name!r}: {exc}")


def _activation_layer_data(cfg: RunConfig, entry) -> asg.LayerData | None:
    if not entry.activations:
        return None
    values = _read_tensor(cfg.resolve(entry.activations), fileio.KIND_TENSOR, "activations")
    tensor = bq.Tensor(values, role="activation", name=entry.name)
    fisher = None
    if entry.activation_fisher:
        fvals = _read_tensor(
            cfg.resolve(entry.activation_fisher), fileio.KIND_FISHER_CHANNEL, "activation fisher"
        )
        fisher = FisherMap("per_channel", fvals)
    elif cfg.policy == "fisher":
        raise CliError(f"layer {entry.name!r} needs an activation_fisher file for this config")
    mags = None
    if cfg.policy == "oe":
        # opposing tensor for activations is the weight matrix
        wvals = _read_tensor(cfg.resolve(entry.weights), fileio.KIND_TENSOR, "weights")
        mags = calibrate_channel_stats([wvals])
    try:
        return asg.LayerData(tensor, fisher, channel_mags=mags, fp8_scale=_fp8_scale_for(values))
    except ValueError as exc:
        raise CliError(f"layer {entry.name!r}: {exc}")


def _score_with_config(ld: asg.LayerData, cfg: RunConfig) -> asg.BlockScores:
    clip = cfg.clip if ld.tensor.role == "weight" else "dynmax"
    try:
        return asg.score_blocks(
            ld.tensor,
            ld.fisher,
            policy=cfg.policy,
            clip=clip,
            fp8_scale=ld.fp8_scale,
            channel_mags=ld.channel_mags,
        )
    except ValueError as exc:
        raise CliError(f"layer {ld.tensor.name!r}: {exc}")


def cmd_calibrate(args) -> int:
    cfg = RunConfig.load(args.config)
    for attr in ("ratio", "policy", "scope", "clip"):
        value = getattr(args, attr)
        if value is not None:
            setattr(cfg, attr, value)
    cfg.__post_init__()  # revalidate overrides
    if not cfg.layers:
        raise CliError("config lists no layers to calibrate")

    weight_data = _layer_map(lambda e: _weight_layer_data(cfg, e), cfg.layers)
    weight_scores = _layer_map(lambda ld: _score_with_config(ld, cfg), weight_data)
    act_entries = [e for e in cfg.layers if e.activations]
    act_data = _layer_map(lambda e: _activation_layer_data(cfg, e), act_entries)
    act_scores = _layer_map(lambda ld: _score_with_config(ld, cfg), act_data)

    def set_thresholds(domain, entries, pools):
        if not pools:
            return None
        if cfg.scope == "global":
            value = asg.percentile_nearest_rank(np.concatenate([p.scores for p in pools]), cfg.ratio)
            return asg.Threshold(value, "global", domain, cfg.ratio)
        for entry, bs in zip(entries, pools):
            value = asg.percentile_nearest_rank(bs.scores, cfg.ratio)
            entry.thresholds[domain] = value
        return None

    w_th = set_thresholds("weights", cfg.layers, weight_scores)
    a_th = set_thresholds("activations", act_entries, act_scores)
    if cfg.scope == "global":
        cfg.weight_threshold = w_th.value
        cfg.activation_threshold = a_th.value if a_th else None
    else:
        cfg.weight_threshold = None
        cfg.activation_threshold = None

    out_path = args.out or args.config
    cfg.save(out_path)

    print(f"calibrated {len(cfg.layers)} layer(s) at ratio {cfg.ratio} "
          f"({cfg.policy} policy, {cfg.scope} scope, {cfg.clip} clip)")
    if cfg.scope == "global":
        print(f"weight threshold: {cfg.weight_threshold!r}")
        if cfg.activation_threshold is not None:
            print(f"activation threshold: {cfg.activation_threshold!r}")
    print(f"{'layer':<24} {'fp8 weight blocks':>18} {'fp8 act blocks':>15}")
    act_by_name = {e.name: bs for e, bs in zip(act_entries, act_scores)}
    for entry, w_bs in zip(cfg.layers, weight_scores):
        wt = cfg.weight_threshold if cfg.scope == "global" else entry.thresholds["weights"]
        w_frac = asg.assign_precision(w_bs.scores, asg.Threshold(wt, cfg.scope, "weights", cfg.ratio)).fp8_fraction
        line = f"{entry.name:<24} {100 * w_frac:>17.2f}%"
        if entry.name in act_by_name:
            at = (
                cfg.activation_threshold
                if cfg.scope == "global"
                else entry.thresholds["activations"]
            )
            a_frac = asg.assign_precision(
                act_by_name[entry.name].scores,
                asg.Threshold(at, cfg.scope, "activations", cfg.ratio),
            ).fp8_fraction
            line += f" {100 * a_frac:>14.2f}%"
        print(line)
    print(f"wrote {out_path}")
    return 0


def _weight_threshold_for(cfg: RunConfig, entry) -> asg.Threshold:
    value = cfg.weight_threshold if cfg.scope == "global" else entry.thresholds["weights"]
    if value is None:
        raise CliError(
            f"no calibrated weight threshold for layer {entry.name!r}; run `fgmp calibrate`"
        )
    return asg.Threshold(value, cfg.scope, "weights", cfg.ratio)


def cmd_quantize(args) -> int:
    cfg = RunConfig.load(args.config)
    entries = [cfg.layer(args.layer)] if args.layer else cfg.layers
    if not entries:
        raise CliError("config lists no layers to quantize")
    os.makedirs(args.out, exist_ok=True)

    def one(entry):
        ld = _weight_layer_data(cfg, entry)
        bs = _score_with_config(ld, cfg)
        qt = asg.emit_quantized(bs, asg.assign_precision(bs.scores, _weight_threshold_for(cfg, entry)))
        path = os.path.join(args.out, f"{entry.name}.fgq")
        fileio.write_quant_file(path, qt)
        return path, cm.memory_bits(qt)

    results = _layer_map(one, entries)
    total = cm.MemoryBits(0, 0)
    print(f"{'layer':<24} {'nvfp4':>8} {'fp8':>8} {'savings':>9}")
    for entry, (path, mem) in zip(entries, results):
        total = total.merge(mem)
        print(f"{entry.name:<24} {mem.nvfp4_blocks:>8} {mem.fp8_blocks:>8} {mem.savings_pct:>8.2f}%")
    if len(results) > 1:
        print(f"{'total':<24} {total.nvfp4_blocks:>8} {total.fp8_blocks:>8} {total.savings_pct:>8.2f}%")
    return 0


def _load_acts_operand(cfg: RunConfig, args) -> bq.QuantizedTensor:
    path = args.acts
    if path.endswith(".fgq"):
        try:
            return fileio.read_quant_file(path)
        except (OSError, fileio.FileFormatError) as exc:
            raise CliError(str(exc))
    values = _read_tensor(path, fileio.KIND_TENSOR, "activations")
    if cfg.activation_threshold is None:
        raise CliError("raw activation input needs a calibrated activation threshold")
    if not args.act_fisher:
        raise CliError("raw activation input needs --act-fisher (per-channel)")
    fvals = _read_tensor(args.act_fisher, fileio.KIND_FISHER_CHANNEL, "activation fisher")
    th = asg.Threshold(cfg.activation_threshold, cfg.scope, "activations", cfg.ratio)
    try:
        qt, _ = asg.assign_online(
            bq.Tensor(values, role="activation"),
            FisherMap("per_channel", fvals),
            th,
            _fp8_scale_for(values),
        )
    except ValueError as exc:
        raise CliError(str(exc))
    return qt


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    try:
        w_q = fileio.read_quant_file(args.weights)
    except (OSError, fileio.FileFormatError) as exc:
        raise CliError(str(exc))
    x_q = _load_acts_operand(cfg, args)
    if w_q.cols != x_q.cols:
        raise CliError(
            f"shape mismatch: weights reduce over {w_q.cols} channels, activations over {x_q.cols}"
        )
    trace = sk.GemmTrace()
    try:
        y, trace = sk.gemm_fgmp(w_q, x_q, trace)
    except ValueError as exc:
        raise CliError(str(exc))

    out = args.out
    fileio.write_tensor_file(f"{out}.y.fgt", y, fileio.KIND_TENSOR)
    wrote = [f"{out}.y.fgt"]
    if args.ppu_fisher:
        if cfg.activation_threshold is None:
            raise CliError("PPU mode needs a calibrated activation threshold")
        fvals = _read_tensor(args.ppu_fisher, fileio.KIND_FISHER_CHANNEL, "ppu fisher")
        th = asg.Threshold(cfg.activation_threshold, cfg.scope, "activations", cfg.ratio)
        try:
            y_q, _ = sk.ppu_pipeline(y, FisherMap("per_channel", fvals), th, trace=trace)
        except ValueError as exc:
            raise CliError(str(exc))
        fileio.write_quant_file(f"{out}.y.fgq", y_q)
        wrote.append(f"{out}.y.fgq")

    report = cm.CostReport(memory=cm.memory_bits(w_q), trace=trace, coeff=cfg.energy)
    with open(f"{out}.trace.json", "w", encoding="utf-8") as fh:
        fh.write(trace.to_json() + "\n")
    with open(f"{out}.report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    wrote += [f"{out}.trace.json", f"{out}.report.json"]

    print(report.table())
    print("wrote " + ", ".join(wrote))
    return 0


def cmd_report(args) -> int:
    merged = None
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                report = cm.CostReport.from_json(fh.read())
        except OSError as exc:
            raise CliError(f"cannot read report {path}: {exc}")
        except ValueError as exc:
            raise CliError(f"{path}: {exc}")
        merged = report if merged is None else merged.merge(report)
    if merged.trace.total_block_ops == 0 and merged.memory.total_blocks == 0:
        raise CliError("aggregated report is empty (no block ops, no blocks)")
    if args.json:
        print(merged.to_json())
    else:
        print(merged.table())
    return 0


def cmd_inspect(args) -> int:
    path = args.file
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}")
    if magic == fileio.FGT_MAGIC:
        try:
            values, kind = fileio.read_tensor_file(path)
        except fileio.FileFormatError as exc:
            raise CliError(str(exc))
        print(f"{path}: tensor file ({fileio.KIND_NAMES[kind]})")
        print(f"shape: {'x'.join(str(d) for d in values.shape)}")
        if values.size:
            print(f"min/max/mean: {values.min():.6g} / {values.max():.6g} / {values.mean():.6g}")
        return 0
    if magic == fileio.FGQ_MAGIC:
        try:
            qt = fileio.read_quant_file(path)
        except fileio.FileFormatError as exc:
            raise CliError(str(exc))
        mem = cm.memory_bits(qt)
        print(f"{path}: quantized tensor file")
        print(f"shape: {qt.rows}x{qt.cols} ({qt.nblocks} blocks of {qt.block_size})")
        print(f"blocks: {mem.nvfp4_blocks} nvfp4, {mem.fp8_blocks} fp8")
        print(f"fp8 tensor scale: {qt.fp8_tensor_scale!r}")
        print(f"memory savings vs all-fp8: {mem.savings_pct:.2f}%")
        return 0
    raise CliError(f"{path}: unknown file magic {magic!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgmp", description="fine-grained mixed-precision quantization tool")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="compute precision thresholds from a layer manifest")
    cal.add_argument("--config", required=True)
    cal.add_argument("--ratio", type=float)
    cal.add_argument("--policy", choices=list(asg.POLICIES))
    cal.add_argument("--scope", choices=list(asg.SCOPES))
    cal.add_argument("--clip", choices=list(asg.CLIP_MODES))
    cal.add_argument("--out", help="write the updated config here (default: in place)")
    cal.set_defaults(fn=cmd_calibrate)

    qnt = sub.add_parser("quantize", help="emit mixed-precision weight files")
    qnt.add_argument("--config", required=True)
    qnt.add_argument("--layer", help="quantize a single named layer")
    qnt.add_argument("--out", required=True, help="output directory for .fgq files")
    qnt.set_defaults(fn=cmd_quantize)

    sim = sub.add_parser("simulate", help="run a mixed-precision GEMM (optionally with the PPU)")
    sim.add_argument("--config", required=True)
    sim.add_argument("--weights", required=True, help="quantized weights (.fgq)")
    sim.add_argument("--acts", required=True, help="activations (.fgt raw or .fgq quantized)")
    sim.add_argument("--act-fisher", help="per-channel fisher for on-the-fly input quantization")
    sim.add_argument("--ppu-fisher", help="next layer's per-channel fisher; enables PPU output quantization")
    sim.add_argument("--out", required=True, help="output path prefix")
    sim.set_defaults(fn=cmd_simulate)

    rep = sub.add_parser("report", help="aggregate cost reports")
    rep.add_argument("reports", nargs="+", help=".report.json files from simulate")
    rep.add_argument("--json", action="store_true", help="machine-readable output")
    rep.set_defaults(fn=cmd_report)

    ins = sub.add_parser("inspect", help="describe a .fgt or .fgq file")
    ins.add_argument("file")
    ins.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or 0
    try:
        return args.fn(args)
    except (CliError, ConfigError) as exc:
        print(f"fgmp: error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except OSError as exc:
        print(f"fgmp: error: {exc}", file=sys.stderr)
        return DATA_ERROR


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
