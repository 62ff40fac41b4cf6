"""calib-export command line: init a checkpoint, export calibration files."""

from __future__ import annotations

import argparse
import sys

import torch

from .export import (
    DEFAULT_SAMPLES,
    DEFAULT_SEQ_LEN,
    ExportManifest,
    export_fisher,
    synthetic_dataset,
    tokens_dataset,
)
from .model import ModelConfig, TinyTransformer, load_checkpoint, save_checkpoint


def cmd_init(args) -> int:
    torch.manual_seed(args.seed)
    cfg = ModelConfig(
        vocab_size=args.vocab_size,
        d_model=args.d_model,
        n_heads=args.n_heads,
        d_ff=args.d_ff,
        n_layers=args.n_layers,
    )
    model = TinyTransformer(cfg)
    save_checkpoint(args.out, model)
    print(f"wrote randomly initialized checkpoint {args.out} "
          f"(layers: {', '.join(model.target_linears())})")
    return 0


def cmd_export(args) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = ExportManifest(
        model_id=args.checkpoint,
        layers=args.layers or [],
        samples=args.samples,
        seq_len=args.seq_len,
    )
    if args.tokens:
        dataset = tokens_dataset(args.tokens, manifest.samples, manifest.seq_len)
    else:
        dataset = synthetic_dataset(
            model.cfg.vocab_size, manifest.samples, manifest.seq_len, seed=args.seed
        )
    cfg_path = export_fisher(
        model,
        dataset,
        manifest,
        args.out,
        pad_id=args.pad_id,
        max_act_rows=args.max_act_rows,
        ratio=args.ratio,
        policy=args.policy,
        clip=args.clip,
    )
    print(f"exported {len(manifest.layers) or len(model.target_linears())} layer(s) to {args.out}")
    print(f"wrote {cfg_path}; next: fgmp calibrate --config {cfg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calib-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ini = sub.add_parser("init", help="create a randomly initialized checkpoint")
    ini.add_argument("--out", required=True)
    ini.add_argument("--vocab-size", type=int, default=64)
    ini.add_argument("--d-model", type=int, default=32)
    ini.add_argument("--n-heads", type=int, default=2)
    ini.add_argument("--d-ff", type=int, default=64)
    ini.add_argument("--n-layers", type=int, default=2)
    ini.add_argument("--seed", type=int, default=0)
    ini.set_defaults(fn=cmd_init)

    exp = sub.add_parser("export", help="extract weights, fisher, and statistics")
    exp.add_argument("--checkpoint", required=True)
    exp.add_argument("--out", required=True, help="output directory")
    exp.add_argument("--layers", nargs="*", help="layer names (default: all)")
    exp.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    exp.add_argument("--seq-len", type=int, default=DEFAULT_SEQ_LEN)
    exp.add_argument("--seed", type=int, default=0, help="seed for the synthetic dataset")
    exp.add_argument("--tokens", help="token-id text file to calibrate on instead")
    exp.add_argument("--pad-id", type=int, default=None)
    exp.add_argument("--max-act-rows", type=int, default=512)
    exp.add_argument("--ratio", type=float, default=0.9)
    exp.add_argument("--policy", default="fisher", choices=["fisher", "qe", "oe"])
    exp.add_argument("--clip", default="sw", choices=["sw", "dynmax"])
    exp.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"calib-export: error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
