"""Per-layer Fisher information and statistics collection + .fgt emission.

For each exported linear layer this produces:
  * the weight matrix (out x in),
  * per-element weight Fisher: squared loss gradients averaged over the
    calibration samples,
  * per-input-channel activation Fisher: squared gradients of the layer
    input, averaged over every captured token position,
  * per-channel mean squared activation magnitude (output-error weighting),
  * the captured input activations themselves (tokens x in, capped), used
    as the activation calibration set downstream.

Gradients come from the standard next-token cross-entropy loss, averaged
over non-padding tokens, one calibration sample per backward pass.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import fgt
from .model import TinyTransformer

DEFAULT_SAMPLES = 512
DEFAULT_SEQ_LEN = 512


@dataclass
class ExportManifest:
    """What to export: model identity, layers, and calibration size."""

    model_id: str
    layers: list[str] = field(default_factory=list)  # empty = all
    samples: int = DEFAULT_SAMPLES
    seq_len: int = DEFAULT_SEQ_LEN

    def __post_init__(self):
        if self.samples < 1 or self.seq_len < 2:
            raise ValueError("need at least one sample of length >= 2")


@dataclass
class LayerStats:
    weight: np.ndarray
    weight_fisher: np.ndarray
    act_fisher: np.ndarray
    channel_mags: np.ndarray
    activations: np.ndarray


def synthetic_dataset(vocab_size: int, samples: int, seq_len: int, seed: int = 0):
    gen = torch.Generator().manual_seed(seed)
    for _ in range(samples):
        yield torch.randint(0, vocab_size, (seq_len,), generator=gen)


def tokens_dataset(path, samples: int, seq_len: int):
    """Whitespace-separated token ids, cut into consecutive samples."""
    with open(path, "r", encoding="utf-8") as fh:
        ids = [int(tok) for tok in fh.read().split()]
    need = samples * seq_len
    if len(ids) < need:
        raise ValueError(f"{path}: has {len(ids)} tokens, need {need}")
    for i in range(samples):
        yield torch.tensor(ids[i * seq_len : (i + 1) * seq_len], dtype=torch.long)


def _resolve_layers(model: TinyTransformer, names: list[str]) -> dict:
    available = model.target_linears()
    if not names:
        return available
    missing = [n for n in names if n not in available]
    if missing:
        raise ValueError(
            f"model has no layer(s) {missing}; available: {sorted(available)}"
        )
    return {n: available[n] for n in names}


def collect_statistics(
    model: TinyTransformer,
    dataset,
    layer_names: list[str] | None = None,
    pad_id: int | None = None,
    max_act_rows: int = 512,
) -> dict[str, LayerStats]:
    layers = _resolve_layers(model, layer_names or [])
    model.eval()

    captured: dict[str, torch.Tensor] = {}
    hooks = []

    def grab(name):
        def hook(_module, args):
            x = args[0]
            x.retain_grad()
            captured[name] = x

        return hook

    for name, lin in layers.items():
        hooks.append(lin.register_forward_pre_hook(grab(name)))

    acc = {
        name: {
            "w2": torch.zeros_like(lin.weight, dtype=torch.float64),
            "g2": torch.zeros(lin.in_features, dtype=torch.float64),
            "x2": torch.zeros(lin.in_features, dtype=torch.float64),
            "rows": 0,
            "acts": [],
            "act_rows": 0,
        }
        for name, lin in layers.items()
    }

    n_samples = 0
    try:
        for tokens in dataset:
            n_samples += 1
            tokens = tokens.to(dtype=torch.long).unsqueeze(0)
            model.zero_grad(set_to_none=True)
            captured.clear()
            logits = model(tokens)
            targets = tokens[:, 1:]
            step_logits = logits[:, :-1].reshape(-1, logits.shape[-1])
            flat_targets = targets.reshape(-1)
            if pad_id is not None:
                keep = flat_targets != pad_id
                if not keep.any():
                    raise ValueError("a sample contains only padding targets")
                loss = F.cross_entropy(step_logits[keep], flat_targets[keep])
            else:
                loss = F.cross_entropy(step_logits, flat_targets)
            loss.backward()

            for name, lin in layers.items():
                a = acc[name]
                a["w2"] += lin.weight.grad.double() ** 2
                x = captured[name].detach().reshape(-1, lin.in_features)
                g = captured[name].grad.reshape(-1, lin.in_features)
                a["g2"] += (g.double() ** 2).sum(dim=0)
                a["x2"] += (x.double() ** 2).sum(dim=0)
                a["rows"] += x.shape[0]
                if a["act_rows"] < max_act_rows:
                    take = min(max_act_rows - a["act_rows"], x.shape[0])
                    a["acts"].append(x[:take].float().clone())
                    a["act_rows"] += take
    finally:
        for h in hooks:
            h.remove()
        model.zero_grad(set_to_none=True)

    if n_samples == 0:
        raise ValueError("calibration dataset is empty")

    out = {}
    for name, lin in layers.items():
        a = acc[name]
        out[name] = LayerStats(
            weight=lin.weight.detach().float().numpy(),
            weight_fisher=(a["w2"] / n_samples).float().numpy(),
            act_fisher=(a["g2"] / a["rows"]).float().numpy(),
            channel_mags=(a["x2"] / a["rows"]).float().numpy(),
            activations=torch.cat(a["acts"]).numpy(),
        )
    return out


def export_fisher(
    model: TinyTransformer,
    dataset,
    manifest: ExportManifest,
    out_dir,
    *,
    pad_id: int | None = None,
    max_act_rows: int = 512,
    ratio: float = 0.9,
    policy: str = "fisher",
    clip: str = "sw",
) -> str:
    """Write per-layer .fgt files plus a config the fgmp CLI can consume.

    Returns the path of the written config.json.
    """
    stats = collect_statistics(
        model, dataset, manifest.layers, pad_id=pad_id, max_act_rows=max_act_rows
    )
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for name, st in stats.items():
        base = name.replace(".", "_")
        paths = {
            "weights": f"{base}.w.fgt",
            "weight_fisher": f"{base}.wf.fgt",
            "activations": f"{base}.x.fgt",
            "activation_fisher": f"{base}.xf.fgt",
            "channel_magnitudes": f"{base}.xm.fgt",
        }
        fgt.write_fgt(os.path.join(out_dir, paths["weights"]), st.weight, fgt.KIND_TENSOR)
        fgt.write_fgt(
            os.path.join(out_dir, paths["weight_fisher"]), st.weight_fisher, fgt.KIND_FISHER_ELEM
        )
        fgt.write_fgt(os.path.join(out_dir, paths["activations"]), st.activations, fgt.KIND_TENSOR)
        fgt.write_fgt(
            os.path.join(out_dir, paths["activation_fisher"]),
            st.act_fisher,
            fgt.KIND_FISHER_CHANNEL,
        )
        fgt.write_fgt(
            os.path.join(out_dir, paths["channel_magnitudes"]),
            st.channel_mags,
            fgt.KIND_CHANNEL_MAG,
        )
        entries.append({"name": base, **paths})

    config = {
        "policy": policy,
        "ratio": ratio,
        "scope": "global",
        "clip": clip,
        "layers": entries,
    }
    cfg_path = os.path.join(out_dir, "config.json")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    info = {
        "model_id": manifest.model_id,
        "layers": [e["name"] for e in entries],
        "samples": manifest.samples,
        "seq_len": manifest.seq_len,
    }
    with open(os.path.join(out_dir, "export_info.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return cfg_path
