"""A small decoder-only transformer with the four standard projections.

Every block exposes QKV_proj, O_proj, FC1, and FC2 as bias-free nn.Linear
modules (weights are out_features x in_features, matching the exporter's
rows =  output channels convention). Checkpoints bundle the config with
the state dict so a file is self-describing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

ROLES = ("QKV_proj", "O_proj", "FC1", "FC2")


@dataclass
class ModelConfig:
    vocab_size: int = 64
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    n_layers: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide evenly into heads")
        for dim, name in ((self.d_model, "d_model"), (self.d_ff, "d_ff")):
            if dim % 16:
                raise ValueError(f"{name} must be a multiple of 16 for block quantization")


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.QKV_proj = nn.Linear(cfg.d_model, 3 * cfg.d_model, bias=False)
        self.O_proj = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.FC1 = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.FC2 = nn.Linear(cfg.d_ff, cfg.d_model, bias=False)

    def forward(self, x):
        b, t, c = x.shape
        qkv = self.QKV_proj(self.ln1(x))
        q, k, v = qkv.split(c, dim=2)
        hd = c // self.n_heads
        q, k, v = (z.view(b, t, self.n_heads, hd).transpose(1, 2) for z in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        mask = torch.tril(torch.ones(t, t, dtype=torch.bool, device=x.device))
        att = att.masked_fill(~mask, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, c)
        x = x + self.O_proj(y)
        x = x + self.FC2(F.gelu(self.FC1(self.ln2(x))))
        return x


class TinyTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def forward(self, tokens):
        x = self.embed(tokens)
        for blk in self.blocks:
            x = blk(x)
        return self.lm_head(self.ln_f(x))

    def target_linears(self) -> dict[str, nn.Linear]:
        """Exportable projections, keyed 'blk<i>.<role>'."""
        out = {}
        for i, blk in enumerate(self.blocks):
            for role in ROLES:
                out[f"blk{i}.{role}"] = getattr(blk, role)
        return out


def save_checkpoint(path, model: TinyTransformer) -> None:
    torch.save({"config": asdict(model.cfg), "state_dict": model.state_dict()}, path)


def load_checkpoint(path) -> TinyTransformer:
    try:
        doc = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ValueError(f"cannot load checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or "config" not in doc or "state_dict" not in doc:
        raise ValueError(f"{path}: not a calib-export checkpoint (need config + state_dict)")
    model = TinyTransformer(ModelConfig(**doc["config"]))
    model.load_state_dict(doc["state_dict"])
    model.eval()
    return model
