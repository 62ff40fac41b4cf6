"""Percentile thresholds and per-block precision assignment.

Calibration computes one impact score per block (quantizing each block
both ways to get the error deltas) and takes the nearest-rank R-th
percentile as the threshold - over one tensor's blocks (local scope) or
pooled across every tensor of a domain (global scope, the deployed mode:
a single threshold each for weights and for activations). A block is
stored FP8 exactly when its score is strictly greater than the threshold,
so ties stay low precision and the FP4 fraction on the calibration pool is
at least R.

`assign_online` replays the same scoring + comparison per activation
block, which is what the post-processing hardware does at inference time;
it is bit-identical to scoring offline and then applying the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blockquant import (
    BLOCK_SIZE,
    QuantizedTensor,
    Tensor,
    as_blocks,
    dynmax_scales,
    fp8_reconstruct,
    nvfp4_reconstruct,
    quantize_fp8_tensor,
    quantize_nvfp4_blocks,
)
from .clipping import sw_clip_scales
from .numerics import FP8_MAX, encode_fp8
from .sensitivity import ChannelMagnitudeMap, FisherMap, weighted_sq_sums

__all__ = [
    "Threshold",
    "PrecisionAssignment",
    "LayerData",
    "BlockScores",
    "percentile_nearest_rank",
    "score_blocks",
    "calibrate_threshold",
    "assign_precision",
    "emit_quantized",
    "quantize_weights_fgmp",
    "assign_online",
]

POLICIES = ("fisher", "qe", "oe")
SCOPES = ("local", "global")
CLIP_MODES = ("sw", "dynmax")


@dataclass(frozen=True)
class Threshold:
    value: float
    scope: str = "global"
    domain: str = "weights"  # "weights" | "activations"
    ratio: float = 0.0  # target low-precision fraction R

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("threshold must be nonnegative")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.domain not in ("weights", "activations"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")


@dataclass
class PrecisionAssignment:
    """Per-block precision bits (0 = NVFP4, 1 = FP8) plus their threshold."""

    bits: np.ndarray
    threshold: Threshold

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("bits must be 0 or 1")

    @property
    def fp8_fraction(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0


def percentile_nearest_rank(scores, ratio: float) -> float:
    """Nearest-rank percentile: sorted[ceil(R*n) - 1], clamped; R=0 -> min."""
    arr = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if arr.size == 0:
        raise ValueError("percentile of an empty pool")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    idx = min(max(math.ceil(ratio * arr.size) - 1, 0), arr.size - 1)
    return float(arr[idx])


@dataclass
class BlockScores:
    """Per-block scores with both candidate quantizations kept for reuse."""

    scores: np.ndarray  # (nblocks,) float64
    fp4_codes: np.ndarray  # (nblocks, 16) uint8
    fp4_scales: np.ndarray  # (nblocks,) uint8
    fp8_codes: np.ndarray  # (nblocks, 16) uint8
    fp8_scale: float
    rows: int
    cols: int


def _block_weights(tensor: Tensor, fisher, policy: str, channel_mags) -> np.ndarray:
    """Per-block, per-element weighting for the chosen policy."""
    rows, cols = tensor.rows, tensor.cols
    nb = rows * cols // BLOCK_SIZE
    if policy == "qe":
        return np.ones((nb, BLOCK_SIZE), dtype=np.float64)
    if policy == "oe":
        if channel_mags is None:
            raise ValueError("oe policy needs the opposing tensor's channel magnitudes")
        q2 = channel_mags.values
        if q2.shape[0] != cols:
            raise ValueError(f"channel magnitudes length {q2.shape[0]} != cols {cols}")
        return np.tile(q2.reshape(-1, BLOCK_SIZE), (rows, 1))
    if policy != "fisher":
        raise ValueError(f"unknown policy {policy!r}")
    if fisher is None:
        raise ValueError("fisher policy needs a FisherMap")
    if fisher.kind == "per_element":
        if fisher.values.shape != (rows, cols):
            raise ValueError(
                f"per-element fisher shape {fisher.values.shape} != tensor {(rows, cols)}"
            )
        return as_blocks(fisher.values)
    if fisher.values.shape[0] != cols:
        raise ValueError(f"per-channel fisher length {fisher.values.shape[0]} != cols {cols}")
    return np.tile(fisher.values.reshape(-1, BLOCK_SIZE), (rows, 1))


def score_blocks(
    tensor: Tensor,
    fisher: FisherMap | None = None,
    *,
    policy: str = "fisher",
    clip: str = "dynmax",
    fp8_scale: float | None = None,
    channel_mags: ChannelMagnitudeMap | None = None,
) -> BlockScores:
    """Score every block of a tensor and keep both quantized forms.

    The low-precision side is NVFP4 with dynmax scales, or sensitivity-
    weighted clipped scales for weights when clip="sw" (requires a
    per-element FisherMap). The high-precision side is FP8 under the
    per-tensor scale (amax/448 unless given). Scores are the chosen
    policy's weighted squared error deltas.
    """
    if clip not in CLIP_MODES:
        raise ValueError(f"unknown clip mode {clip!r}")
    values = tensor.values
    blocks = as_blocks(values)

    if clip == "sw":
        if tensor.role != "weight":
            raise ValueError("sensitivity-weighted clipping applies to weights only")
        if fisher is None or fisher.kind != "per_element":
            raise ValueError("clip='sw' needs a per-element FisherMap")
        fp4_scales = sw_clip_scales(blocks, as_blocks(fisher.values))
    else:
        fp4_scales = dynmax_scales(blocks)
    fp4_codes = quantize_nvfp4_blocks(blocks, fp4_scales)
    low = nvfp4_reconstruct(fp4_codes, fp4_scales)

    if fp8_scale is None:
        fp8_codes, fp8_scale = quantize_fp8_tensor(values)
    else:
        fp8_scale = float(np.float32(fp8_scale))
        fp8_codes = np.asarray(
            encode_fp8(values.astype(np.float64) / fp8_scale), dtype=np.uint8
        )
    high = as_blocks(fp8_reconstruct(fp8_codes, fp8_scale))

    v64 = blocks.astype(np.float64)
    delta = (low.astype(np.float64) - v64) - (high.astype(np.float64) - v64)
    weights = _block_weights(tensor, fisher, policy, channel_mags)
    scores = weighted_sq_sums(weights, delta)
    return BlockScores(
        scores=scores,
        fp4_codes=fp4_codes,
        fp4_scales=fp4_scales,
        fp8_codes=as_blocks(fp8_codes),
        fp8_scale=fp8_scale,
        rows=tensor.rows,
        cols=tensor.cols,
    )


@dataclass
class LayerData:
    """One calibration layer: the tensor plus whatever its policy needs."""

    tensor: Tensor
    fisher: FisherMap | None = None
    channel_mags: ChannelMagnitudeMap | None = None
    fp8_scale: float | None = None

    def score(self, policy: str, clip: str) -> BlockScores:
        clip = clip if self.tensor.role == "weight" else "dynmax"
        return score_blocks(
            self.tensor,
            self.fisher,
            policy=policy,
            clip=clip,
            fp8_scale=self.fp8_scale,
            channel_mags=self.channel_mags,
        )


def calibrate_threshold(
    layers,
    ratio: float,
    *,
    policy: str = "fisher",
    scope: str = "global",
    clip: str = "dynmax",
    domain: str | None = None,
):
    """Threshold(s) at the R-th percentile of the pooled impact scores.

    Global scope pools all blocks of all layers into one Threshold; local
    scope returns one Threshold per layer. Layers may be LayerData or
    (Tensor, FisherMap) pairs.
    """
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    layers = [ld if isinstance(ld, LayerData) else LayerData(*ld) for ld in layers]
    if not layers:
        raise ValueError("calibration needs at least one layer")
    roles = {ld.tensor.role for ld in layers}
    if len(roles) > 1:
        raise ValueError("weights and activations are calibrated separately")
    if domain is None:
        domain = "weights" if roles == {"weight"} else "activations"
    pools = [ld.score(policy, clip).scores for ld in layers]
    if scope == "local":
        return [
            Threshold(percentile_nearest_rank(p, ratio), "local", domain, ratio) for p in pools
        ]
    value = percentile_nearest_rank(np.concatenate(pools), ratio)
    return Threshold(value, "global", domain, ratio)


def assign_precision(scores, threshold: Threshold) -> PrecisionAssignment:
    """FP8 iff score > threshold; ties stay NVFP4."""
    scores = np.asarray(scores, dtype=np.float64)
    return PrecisionAssignment((scores > threshold.value).astype(np.uint8), threshold)


def emit_quantized(bs: BlockScores, assignment: PrecisionAssignment) -> QuantizedTensor:
    """Build the mixed tensor from pre-computed block quantizations."""
    bits = assignment.bits
    if bits.shape[0] != bs.scores.shape[0]:
        raise ValueError("assignment does not cover every block")
    codes = np.where(bits[:, None] == 1, bs.fp8_codes, bs.fp4_codes)
    return QuantizedTensor(
        rows=bs.rows,
        cols=bs.cols,
        codes=codes,
        scales=bs.fp4_scales.copy(),
        meta=bits.copy(),
        fp8_tensor_scale=bs.fp8_scale,
    )


def quantize_weights_fgmp(
    weights: Tensor,
    fisher: FisherMap,
    threshold: Threshold,
    clip: str = "dynmax",
) -> QuantizedTensor:
    """Score, assign, and emit a weight tensor in one pass."""
    if weights.role != "weight":
        raise ValueError("expected a weight tensor")
    bs = score_blocks(weights, fisher, policy="fisher", clip=clip)
    return emit_quantized(bs, assign_precision(bs.scores, threshold))


def assign_online(
    activations,
    g2_channels: FisherMap,
    threshold: Threshold,
    fp8_scale: float,
) -> tuple[QuantizedTensor, PrecisionAssignment]:
    """Online activation quantization as the post-processing unit does it.

    Each block is quantized both ways (dynmax NVFP4 and FP8 under the
    calibrated per-tensor scale), scored with the per-channel sensitivity,
    and written in FP8 exactly when the score exceeds the fixed threshold.
    """
    if not isinstance(activations, Tensor):
        activations = Tensor(np.asarray(activations), role="activation")
    if g2_channels.kind != "per_channel":
        raise ValueError("online assignment needs per-channel sensitivities")
    bs = score_blocks(
        activations, g2_channels, policy="fisher", clip="dynmax", fp8_scale=fp8_scale
    )
    assignment = assign_precision(bs.scores, threshold)
    return emit_quantized(bs, assignment), assignment
