"""Memory and energy accounting for mixed-precision workloads.

Storage per 16-element block: NVFP4 = 64 element bits + 8 scale bits +
1 metadata bit = 73; FP8 = 128 + 1 = 129; the all-FP8 baseline (no
metadata) is 128. Datapath energy is relative to the FP8x8 block dot;
defaults are the calibrated per-unit ratios (FP4x4 = 0.67, FP4w*FP8a =
0.84, FP8w*FP4a = 0.83) with an optional additive mux tax on mixed-format
ops. The activation post-processing unit costs 25.7 pJ per 16-element
output block, amortized over the reduction dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .blockquant import QuantizedTensor
from .simkernel import DotUnitKind, GemmTrace

__all__ = [
    "EnergyCoefficients",
    "MemoryBits",
    "CostReport",
    "memory_bits",
    "datapath_energy",
    "ppu_energy",
    "ppu_energy_per_op_fj",
]

NVFP4_BLOCK_BITS = 16 * 4 + 8 + 1  # 73
FP8_BLOCK_BITS = 16 * 8 + 1  # 129
BASELINE_BLOCK_BITS = 16 * 8  # plain FP8, no metadata


@dataclass
class EnergyCoefficients:
    """Relative block-dot energies by unit kind plus the PPU block cost."""

    e88: float = 1.00
    e44: float = 0.67
    e48: float = 0.84  # FP4 weights x FP8 activations
    e84: float = 0.83  # FP8 weights x FP4 activations
    mux_tax: float = 0.0
    ppu_pj_per_block: float = 25.7

    def __post_init__(self):
        for name in ("e88", "e44", "e48", "e84", "ppu_pj_per_block"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mux_tax < 0:
            raise ValueError("mux_tax must be nonnegative")
        if not (self.e44 < self.e48 < self.e88 and self.e44 < self.e84 < self.e88):
            raise ValueError("expected e44 < e48, e84 < e88")

    def of(self, kind: DotUnitKind) -> float:
        return {
            DotUnitKind.FP8_FP8: self.e88,
            DotUnitKind.FP4_FP4: self.e44,
            DotUnitKind.FP4W_FP8A: self.e48,
            DotUnitKind.FP8W_FP4A: self.e84,
        }[kind]

    def to_dict(self) -> dict:
        return {
            "e88": self.e88,
            "e44": self.e44,
            "e48": self.e48,
            "e84": self.e84,
            "mux_tax": self.mux_tax,
            "ppu_pj_per_block": self.ppu_pj_per_block,
        }


@dataclass
class MemoryBits:
    nvfp4_blocks: int
    fp8_blocks: int

    @property
    def total_blocks(self) -> int:
        return self.nvfp4_blocks + self.fp8_blocks

    @property
    def element_bits(self) -> int:
        return self.nvfp4_blocks * 64 + self.fp8_blocks * 128

    @property
    def scale_bits(self) -> int:
        return self.nvfp4_blocks * 8

    @property
    def metadata_bits(self) -> int:
        return self.total_blocks

    @property
    def total_bits(self) -> int:
        return self.nvfp4_blocks * NVFP4_BLOCK_BITS + self.fp8_blocks * FP8_BLOCK_BITS

    @property
    def baseline_bits(self) -> int:
        return self.total_blocks * BASELINE_BLOCK_BITS

    @property
    def savings_pct(self) -> float:
        if self.total_blocks == 0:
            return 0.0
        return 100.0 * (1.0 - self.total_bits / self.baseline_bits)

    @property
    def avg_bits_per_element(self) -> float:
        return self.total_bits / (16 * self.total_blocks) if self.total_blocks else 0.0

    @property
    def compression_rate(self) -> float:
        """16 divided by the average stored bit width."""
        avg = self.avg_bits_per_element
        return 16.0 / avg if avg else 0.0

    def merge(self, other: "MemoryBits") -> "MemoryBits":
        return MemoryBits(
            self.nvfp4_blocks + other.nvfp4_blocks, self.fp8_blocks + other.fp8_blocks
        )


def memory_bits(qt: QuantizedTensor) -> MemoryBits:
    nv = int((qt.meta == 0).sum())
    return MemoryBits(nvfp4_blocks=nv, fp8_blocks=qt.nblocks - nv)


def datapath_energy(trace: GemmTrace, coeff: EnergyCoefficients | None = None) -> float:
    """Energy relative to an all-FP8 run of the same shape (1.0)."""
    coeff = coeff or EnergyCoefficients()
    total = trace.total_block_ops
    if total == 0:
        return 0.0
    raw = sum(trace.counts[k] * coeff.of(k) for k in DotUnitKind)
    raw += coeff.mux_tax * trace.mixed_block_ops
    return raw / (total * coeff.e88)


def ppu_energy(trace: GemmTrace, coeff: EnergyCoefficients | None = None) -> float:
    """Absolute PPU energy in pJ: invocations x per-block cost."""
    coeff = coeff or EnergyCoefficients()
    return trace.ppu_invocations * coeff.ppu_pj_per_block


def ppu_energy_per_op_fj(trace: GemmTrace, coeff: EnergyCoefficients | None = None) -> float:
    """PPU energy per MAC op in fJ: energy / (2*M*N*K) = energy / (32 * block ops)."""
    if trace.total_block_ops == 0:
        return 0.0
    return ppu_energy(trace, coeff) * 1000.0 / (32.0 * trace.total_block_ops)


@dataclass
class CostReport:
    """Aggregated memory + energy summary for one or more workloads."""

    memory: MemoryBits = field(default_factory=lambda: MemoryBits(0, 0))
    trace: GemmTrace = field(default_factory=GemmTrace)
    coeff: EnergyCoefficients = field(default_factory=EnergyCoefficients)

    @property
    def relative_datapath_energy(self) -> float:
        return datapath_energy(self.trace, self.coeff)

    @property
    def ppu_energy_pj(self) -> float:
        return ppu_energy(self.trace, self.coeff)

    def merge(self, other: "CostReport") -> "CostReport":
        return CostReport(
            memory=self.memory.merge(other.memory),
            trace=self.trace.merge(other.trace),
            coeff=self.coeff,
        )

    def to_dict(self) -> dict:
        mem = self.memory
        return {
            "memory": {
                "nvfp4_blocks": mem.nvfp4_blocks,
                "fp8_blocks": mem.fp8_blocks,
                "total_bits": mem.total_bits,
                "baseline_fp8_bits": mem.baseline_bits,
                "savings_pct": mem.savings_pct,
                "avg_bits_per_element": mem.avg_bits_per_element,
                "compression_rate": mem.compression_rate,
            },
            "datapath": {
                "block_ops": {k.value: self.trace.counts[k] for k in DotUnitKind},
                "relative_energy": self.relative_datapath_energy,
            },
            "ppu": {
                "invocations": self.trace.ppu_invocations,
                "energy_pj": self.ppu_energy_pj,
                "energy_per_op_fj": ppu_energy_per_op_fj(self.trace, self.coeff),
            },
            "coefficients": self.coeff.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        doc = json.loads(text)
        try:
            mem = MemoryBits(doc["memory"]["nvfp4_blocks"], doc["memory"]["fp8_blocks"])
            trace = GemmTrace()
            by_value = {k.value: k for k in DotUnitKind}
            for name, n in doc["datapath"]["block_ops"].items():
                trace.counts[by_value[name]] = int(n)
            trace.ppu_invocations = int(doc["ppu"]["invocations"])
            coeff = EnergyCoefficients(**doc["coefficients"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed cost report: {exc}") from exc
        return cls(memory=mem, trace=trace, coeff=coeff)

    def table(self) -> str:
        """Human-readable two-column summary."""
        mem = self.memory
        rows = [
            ("nvfp4 blocks", f"{mem.nvfp4_blocks}"),
            ("fp8 blocks", f"{mem.fp8_blocks}"),
            ("memory bits", f"{mem.total_bits}"),
            ("savings vs all-fp8", f"{mem.savings_pct:.2f}%"),
            ("avg bits/element", f"{mem.avg_bits_per_element:.4f}"),
            ("compression rate", f"{mem.compression_rate:.3f}"),
            ("block ops", f"{self.trace.total_block_ops}"),
            ("relative datapath energy", f"{self.relative_datapath_energy:.4f}"),
            ("ppu invocations", f"{self.trace.ppu_invocations}"),
            ("ppu energy", f"{self.ppu_energy_pj:.1f} pJ"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
