"""NVFP4 / FP8 block quantization over 16-element blocks.

Tensors are dense 2-D float32 arrays whose columns are the dot-product
(reduction) dimension; weights are rows=output channels and activations
rows=tokens, both with cols=input channels. Blocks run row-major along the
columns, 16 elements each.

An NVFP4 block stores 16 E2M1 codes plus one positive E4M3 scale code;
an FP8 block stores 16 E4M3 codes scaled by a single per-tensor float32
scale. A one-bit-per-block meta vector (0 = NVFP4, 1 = FP8) tags each
block's format. Reconstruction multiplies decoded elements by the scale
in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    FP4_MAX,
    FP4_VALUES,
    FP8_CODE_ONE,
    FP8_MAX,
    FP8_VALUES,
    decode_fp8,
    encode_fp4,
    encode_fp8,
)

BLOCK_SIZE = 16

_FP4_F32 = FP4_VALUES.astype(np.float32)
_FP8_F32 = FP8_VALUES.astype(np.float32)


@dataclass
class Tensor:
    """A named 2-D float32 array with a role of "weight" or "activation"."""

    values: np.ndarray
    role: str = "weight"
    name: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"tensor {self.name!r} must be 2-D, got {self.values.ndim}-D")
        if self.role not in ("weight", "activation"):
            raise ValueError(f"unknown tensor role {self.role!r}")
        if not np.isfinite(self.values).all():
            raise ValueError(f"tensor {self.name!r} contains non-finite values")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def as_blocks(values: np.ndarray, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """View a (rows, cols) array as (nblocks, block_size), row-major block order."""
    values = np.asarray(values)
    rows, cols = values.shape
    if cols % block_size != 0:
        raise ValueError(f"cols ({cols}) not divisible by block size {block_size}")
    return values.reshape(rows * cols // block_size, block_size)


@dataclass
class QuantizedTensor:
    """Mixed NVFP4/FP8 block storage for one tensor.

    codes[b] holds E2M1 codes (0..15) when meta[b] == 0 and E4M3 codes when
    meta[b] == 1. scales[b] is the E4M3 per-block scale code, meaningful
    only for NVFP4 blocks (canonicalized to the code for 1.0 elsewhere).
    """

    rows: int
    cols: int
    codes: np.ndarray  # (nblocks, 16) uint8
    scales: np.ndarray  # (nblocks,) uint8
    meta: np.ndarray  # (nblocks,) uint8; 0 = NVFP4, 1 = FP8
    fp8_tensor_scale: float = 1.0
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.uint8)
        self.meta = np.ascontiguousarray(self.meta, dtype=np.uint8)
        nb = self.rows * self.cols // self.block_size
        if self.cols % self.block_size != 0:
            raise ValueError(f"cols ({self.cols}) not divisible by {self.block_size}")
        if self.codes.shape != (nb, self.block_size):
            raise ValueError(f"codes shape {self.codes.shape} != ({nb}, {self.block_size})")
        if self.scales.shape != (nb,) or self.meta.shape != (nb,):
            raise ValueError("scales/meta must have one entry per block")
        if not np.isin(self.meta, (0, 1)).all():
            raise ValueError("meta bits must be 0 or 1")
        nv = self.meta == 0
        if (self.codes[nv] > 15).any():
            raise ValueError("NVFP4 blocks carry 4-bit codes (0..15)")
        sv = FP8_VALUES[self.scales[nv]]
        if not (np.isfinite(sv).all() and (sv > 0).all()):
            raise ValueError("NVFP4 scale codes must be positive finite E4M3")
        if not (np.isfinite(self.fp8_tensor_scale) and self.fp8_tensor_scale > 0):
            raise ValueError("fp8_tensor_scale must be positive and finite")
        self.fp8_tensor_scale = float(np.float32(self.fp8_tensor_scale))
        # Canonical filler so equality/serialization ignore FP8-block scales.
        self.scales[self.meta == 1] = FP8_CODE_ONE

    @property
    def nblocks(self) -> int:
        return self.rows * self.cols // self.block_size


def dynmax_scale(block: np.ndarray) -> int:
    """Dynamic-max E4M3 block scale code: encode(amax/6), never zero.

    An all-zero block gets the code for 1.0. If encoding underflows to the
    zero code, the smallest positive subnormal code (0x01) is used instead
    so the scale stays positive.
    """
    block = np.asarray(block, dtype=np.float64)
    amax = float(np.max(np.abs(block))) if block.size else 0.0
    if amax == 0.0:
        return FP8_CODE_ONE
    code = int(encode_fp8(amax / FP4_MAX))
    return code if code != 0 else 1


def dynmax_scales(blocks: np.ndarray) -> np.ndarray:
    """Vectorized dynmax_scale over a (nblocks, bs) array."""
    amax = np.abs(np.asarray(blocks, dtype=np.float64)).max(axis=1)
    codes = np.asarray(encode_fp8(amax / FP4_MAX), dtype=np.uint8).reshape(-1)
    codes[codes == 0] = 1
    codes[amax == 0.0] = FP8_CODE_ONE
    return codes


def quantize_nvfp4(block: np.ndarray, scale_code: int) -> np.ndarray:
    """E2M1 codes for one block under the given E4M3 scale code."""
    s = decode_fp8(int(scale_code))
    if not (s > 0.0) or not np.isfinite(s):
        raise ValueError(f"scale code {scale_code:#x} is not a positive finite E4M3 value")
    block = np.asarray(block, dtype=np.float64)
    return np.asarray(encode_fp4(block / s), dtype=np.uint8)


def quantize_nvfp4_blocks(blocks: np.ndarray, scale_codes: np.ndarray) -> np.ndarray:
    """Vectorized quantize_nvfp4 over (nblocks, bs) with per-block scales."""
    s = FP8_VALUES[np.asarray(scale_codes, dtype=np.uint8)]
    if not (np.isfinite(s).all() and (s > 0).all()):
        raise ValueError("scale codes must decode to positive finite values")
    ratios = np.asarray(blocks, dtype=np.float64) / s[:, None]
    return np.asarray(encode_fp4(ratios), dtype=np.uint8)


def nvfp4_reconstruct(codes: np.ndarray, scale_codes) -> np.ndarray:
    """float32 reconstruction: decode(code) * decode(scale), fp32 product."""
    scale_codes = np.asarray(scale_codes, dtype=np.uint8)
    s = _FP8_F32[scale_codes]
    if codes.ndim == 2 and s.ndim == 1:
        s = s[:, None]
    return _FP4_F32[np.asarray(codes, dtype=np.uint8)] * s


def fp8_reconstruct(codes: np.ndarray, tensor_scale: float) -> np.ndarray:
    return _FP8_F32[np.asarray(codes, dtype=np.uint8)] * np.float32(tensor_scale)


def quantize_fp8_tensor(values: np.ndarray) -> tuple[np.ndarray, float]:
    """E4M3 codes plus the per-tensor float32 scale (amax/448, or 1.0).

    Returns codes with the same shape as `values`.
    """
    values = np.asarray(values)
    if not np.isfinite(values).all():
        raise ValueError("tensor contains non-finite values")
    amax = np.float32(np.max(np.abs(values))) if values.size else np.float32(0.0)
    scale = np.float32(1.0) if amax == 0 else np.float32(amax / np.float32(FP8_MAX))
    codes = np.asarray(encode_fp8(values.astype(np.float64) / float(scale)), dtype=np.uint8)
    return codes, float(scale)


def quant_error(v, reconstructed):
    """Signed quantization error: reconstructed - v."""
    return np.asarray(reconstructed, dtype=np.float64) - np.asarray(v, dtype=np.float64)


def quantize_tensor_mixed(
    values: np.ndarray,
    meta: np.ndarray,
    scale_codes: np.ndarray | None = None,
    fp8_scale: float | None = None,
) -> QuantizedTensor:
    """Quantize a tensor with a given per-block format assignment.

    NVFP4 blocks use `scale_codes` (dynmax by default); FP8 blocks share
    `fp8_scale` (amax/448 of the whole tensor by default).
    """
    values = np.ascontiguousarray(values, dtype=np.float32)
    rows, cols = values.shape
    blocks = as_blocks(values)
    meta = np.asarray(meta, dtype=np.uint8)
    if scale_codes is None:
        scale_codes = dynmax_scales(blocks)
    fp8_codes, derived_scale = quantize_fp8_tensor(values)
    if fp8_scale is None:
        fp8_scale = derived_scale
    else:
        fp8_codes = np.asarray(
            encode_fp8(values.astype(np.float64) / float(np.float32(fp8_scale))),
            dtype=np.uint8,
        )
    fp4_codes = quantize_nvfp4_blocks(blocks, scale_codes)
    codes = np.where(meta[:, None] == 1, as_blocks(fp8_codes), fp4_codes)
    return QuantizedTensor(
        rows=rows,
        cols=cols,
        codes=codes,
        scales=np.asarray(scale_codes, dtype=np.uint8),
        meta=meta,
        fp8_tensor_scale=float(np.float32(fp8_scale)),
    )


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """float32 reconstruction of every block per its format tag."""
    out = np.empty((qt.nblocks, qt.block_size), dtype=np.float32)
    nv = qt.meta == 0
    out[nv] = nvfp4_reconstruct(qt.codes[nv], qt.scales[nv])
    out[~nv] = fp8_reconstruct(qt.codes[~nv], qt.fp8_tensor_scale)
    return out.reshape(qt.rows, qt.cols)
