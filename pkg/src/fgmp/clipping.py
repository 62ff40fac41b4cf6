"""Sensitivity-weighted per-block scale selection for NVFP4 weight blocks.

The per-block scale is an E4M3 code, so the search space is finite: every
positive finite E4M3 value up to (and including) the dynamic-max scale.
The chosen scale minimizes sum_i g2_i * (recon_i - v_i)^2 with float32
reconstructions; ties break toward the larger scale (less clipping).
Activations always use dynamic-max scales - an online search is not
affordable there.
"""

from __future__ import annotations

import numpy as np

from .blockquant import dynmax_scale, nvfp4_reconstruct, quantize_nvfp4_blocks
from .numerics import FP8_VALUES

__all__ = ["scale_candidates", "sw_clip_scale", "sw_clip_scales"]

# positive finite E4M3 codes, ascending decoded value: 0x01..0x7e
_POSITIVE_CODES = np.arange(1, 0x7F, dtype=np.uint8)
_POSITIVE_VALUES = FP8_VALUES[_POSITIVE_CODES]


def scale_candidates(block: np.ndarray) -> np.ndarray:
    """Candidate scale codes for a block: positive E4M3 values <= dynmax."""
    dyn = dynmax_scale(block)
    dyn_val = FP8_VALUES[dyn]
    return _POSITIVE_CODES[_POSITIVE_VALUES <= dyn_val]


def _objectives(block: np.ndarray, g2: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Weighted SSE of the block under every candidate scale code."""
    fp4 = quantize_nvfp4_blocks(np.broadcast_to(block, (len(codes), len(block))), codes)
    recon = nvfp4_reconstruct(fp4, codes)
    diff = recon.astype(np.float64) - np.asarray(block, dtype=np.float64)[None, :]
    acc = np.zeros(len(codes), dtype=np.float64)
    for i in range(diff.shape[1]):
        acc += g2[i] * diff[:, i] * diff[:, i]
    return acc


def sw_clip_scale(block: np.ndarray, g2: np.ndarray) -> int:
    """Scale code minimizing the g2-weighted squared reconstruction error.

    Ties resolve to the largest scale; all-zero g2 falls back to dynmax.
    """
    block = np.asarray(block, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g2.shape != block.shape:
        raise ValueError("g2 must align with the block")
    if (g2 < 0).any():
        raise ValueError("g2 entries must be nonnegative")
    if not g2.any():
        return dynmax_scale(block)
    codes = scale_candidates(block)
    objs = _objectives(block, g2, codes)
    best = np.flatnonzero(objs == objs.min())[-1]  # largest scale among ties
    return int(codes[best])


def sw_clip_scales(blocks: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Per-block sw_clip_scale over (nblocks, bs) arrays."""
    blocks = np.asarray(blocks, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    return np.array(
        [sw_clip_scale(blocks[b], g2[b]) for b in range(blocks.shape[0])], dtype=np.uint8
    )
