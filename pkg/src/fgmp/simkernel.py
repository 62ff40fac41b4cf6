"""Value-level model of the mixed-precision block dot-product datapath.

One block op is a 16-wide dot product between a weight block and an
activation block. The active unit is picked from the two blocks' format
bits (FP4x4, FP4w*FP8a, FP8w*FP4a, FP8x8); operands are dequantized
(scale multiplication folded in), multiplied in float32, and accumulated
in float32 in ascending element order. A GEMM reduces the per-block
partial sums in ascending block order, also in float32, so results are
bit-reproducible and can be checked 0-ULP against a scalar reference.

The trace records block-op counts per unit kind (timing is derived, not
simulated: one block op per lane per cycle) plus post-processing-unit
invocations, one per 16-element output block.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .assignment import PrecisionAssignment, Threshold, assign_online
from .blockquant import BLOCK_SIZE, QuantizedTensor, dequantize
from .numerics import FP8_MAX
from .sensitivity import FisherMap

__all__ = ["DotUnitKind", "GemmTrace", "TaggedBlock", "block", "block_dot", "gemm_fgmp", "ppu_pipeline"]


class DotUnitKind(enum.Enum):
    """Dot-product unit, keyed by (weight format, activation format)."""

    FP4_FP4 = "fp4w_fp4a"
    FP4W_FP8A = "fp4w_fp8a"
    FP8W_FP4A = "fp8w_fp4a"
    FP8_FP8 = "fp8w_fp8a"


_KIND_BY_META = {
    (0, 0): DotUnitKind.FP4_FP4,
    (0, 1): DotUnitKind.FP4W_FP8A,
    (1, 0): DotUnitKind.FP8W_FP4A,
    (1, 1): DotUnitKind.FP8_FP8,
}


@dataclass
class GemmTrace:
    """Block-op counts per dot unit plus PPU invocations."""

    counts: dict = field(default_factory=lambda: {k: 0 for k in DotUnitKind})
    ppu_invocations: int = 0

    def record(self, kind: DotUnitKind, n: int = 1) -> None:
        self.counts[kind] += n

    @property
    def total_block_ops(self) -> int:
        return sum(self.counts.values())

    @property
    def mixed_block_ops(self) -> int:
        return self.counts[DotUnitKind.FP4W_FP8A] + self.counts[DotUnitKind.FP8W_FP4A]

    def cycles(self, lanes: int = 16) -> int:
        """Derived cycle count: one block op per lane per cycle."""
        return -(-self.total_block_ops // lanes)

    def merge(self, other: "GemmTrace") -> "GemmTrace":
        out = GemmTrace()
        for k in DotUnitKind:
            out.counts[k] = self.counts[k] + other.counts[k]
        out.ppu_invocations = self.ppu_invocations + other.ppu_invocations
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "block_ops": {k.value: self.counts[k] for k in DotUnitKind},
                "ppu_invocations": self.ppu_invocations,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GemmTrace":
        doc = json.loads(text)
        if set(doc) != {"block_ops", "ppu_invocations"}:
            raise ValueError("trace record must have block_ops and ppu_invocations")
        by_value = {k.value: k for k in DotUnitKind}
        if set(doc["block_ops"]) != set(by_value):
            raise ValueError("trace block_ops must cover exactly the four unit kinds")
        trace = cls()
        for name, n in doc["block_ops"].items():
            if not isinstance(n, int) or n < 0:
                raise ValueError(f"bad count for {name}")
            trace.counts[by_value[name]] = n
        if not isinstance(doc["ppu_invocations"], int) or doc["ppu_invocations"] < 0:
            raise ValueError("bad ppu_invocations")
        trace.ppu_invocations = doc["ppu_invocations"]
        return trace


@dataclass(frozen=True)
class TaggedBlock:
    """One 16-element block with its format tag and scale."""

    codes: np.ndarray
    fp8: bool
    scale_code: int = 0x38  # NVFP4 per-block scale (E4M3 code)
    tensor_scale: float = 1.0  # FP8 per-tensor scale

    def reconstruct(self) -> np.ndarray:
        from .blockquant import fp8_reconstruct, nvfp4_reconstruct

        if self.fp8:
            return fp8_reconstruct(self.codes, self.tensor_scale)
        return nvfp4_reconstruct(self.codes, self.scale_code)


def block(qt: QuantizedTensor, index: int) -> TaggedBlock:
    """The index-th block of a quantized tensor (row-major block order)."""
    return TaggedBlock(
        codes=qt.codes[index],
        fp8=bool(qt.meta[index]),
        scale_code=int(qt.scales[index]),
        tensor_scale=qt.fp8_tensor_scale,
    )


def block_dot(wb: TaggedBlock, ab: TaggedBlock, trace: GemmTrace | None = None) -> np.float32:
    """16-wide dot product: fp32 products, fp32 accumulation, index order."""
    if len(wb.codes) != len(ab.codes):
        raise ValueError("operand blocks must have equal length")
    w = wb.reconstruct()
    a = ab.reconstruct()
    acc = np.float32(0.0)
    for i in range(len(w)):
        acc = np.float32(acc + np.float32(w[i] * a[i]))
    if trace is not None:
        trace.record(_KIND_BY_META[(int(wb.fp8), int(ab.fp8))])
    return acc


def gemm_fgmp(
    w_q: QuantizedTensor, x_q: QuantizedTensor, trace: GemmTrace | None = None
) -> tuple[np.ndarray, GemmTrace]:
    """Mixed-precision GEMM: weights (M, K) x activations (N, K) -> (N, M).

    Both operands carry blocks along their shared K columns; the output is
    tokens x output-channels, ready to stream into the next layer. Every
    output element reduces its K/16 block dots in ascending block order
    with float32 accumulation, matching block_dot element order exactly.
    """
    if w_q.cols != x_q.cols:
        raise ValueError(f"reduction dims differ: weights K={w_q.cols}, activations K={x_q.cols}")
    if trace is None:
        trace = GemmTrace()
    m, k = w_q.rows, w_q.cols
    n = x_q.rows
    wd = dequantize(w_q)  # (M, K) fp32
    xd = dequantize(x_q)  # (N, K) fp32
    y = np.zeros((n, m), dtype=np.float32)
    wm = w_q.meta.reshape(m, k // BLOCK_SIZE)
    xm = x_q.meta.reshape(n, k // BLOCK_SIZE)
    for kb in range(k // BLOCK_SIZE):
        partial = np.zeros((n, m), dtype=np.float32)
        for i in range(BLOCK_SIZE):
            col = kb * BLOCK_SIZE + i
            partial += xd[:, col][:, None] * wd[:, col][None, :]
        y += partial
        w8 = int(wm[:, kb].sum())
        x8 = int(xm[:, kb].sum())
        trace.record(DotUnitKind.FP4_FP4, (m - w8) * (n - x8))
        trace.record(DotUnitKind.FP4W_FP8A, (m - w8) * x8)
        trace.record(DotUnitKind.FP8W_FP4A, w8 * (n - x8))
        trace.record(DotUnitKind.FP8_FP8, w8 * x8)
    return y, trace


def ppu_pipeline(
    y: np.ndarray,
    g2_channels: FisherMap,
    threshold: Threshold,
    fp8_scale: float | None = None,
    trace: GemmTrace | None = None,
) -> tuple[QuantizedTensor, PrecisionAssignment]:
    """Quantize a float32 GEMM output to mixed precision, one block at a time.

    The per-channel sensitivities belong to the next layer's reduction
    dimension (= this output's columns). Counts one PPU invocation per
    output block on the trace.
    """
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != 2 or y.shape[1] % BLOCK_SIZE != 0:
        raise ValueError("output columns must be a positive multiple of 16")
    if fp8_scale is None:
        amax = float(np.abs(y).max()) if y.size else 0.0
        fp8_scale = float(np.float32(amax / FP8_MAX)) if amax else 1.0
    qt, pa = assign_online(y, g2_channels, threshold, fp8_scale)
    if trace is not None:
        trace.ppu_invocations += y.size // BLOCK_SIZE
    return qt, pa
