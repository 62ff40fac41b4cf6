#!/usr/bin/env python3
"""Print the memory-savings curve and the datapath/PPU energy corners."""

import numpy as np

from fgmp import blockquant as bq
from fgmp import costmodel as cm
from fgmp.simkernel import DotUnitKind, GemmTrace


def qt_with_fraction(fp4, fp8):
    nb = fp4 + fp8
    meta = np.r_[np.zeros(fp4, np.uint8), np.ones(fp8, np.uint8)]
    return bq.QuantizedTensor(
        1, nb * 16, np.zeros((nb, 16), np.uint8), np.full(nb, 0x38, np.uint8), meta
    )


def main():
    print("memory savings vs all-FP8 baseline (100-block tensor)")
    print(f"{'fp4 %':>6} {'bits/elem':>10} {'compression':>12} {'savings':>9}")
    for fp4 in range(0, 101, 10):
        m = cm.memory_bits(qt_with_fraction(fp4, 100 - fp4))
        print(f"{fp4:>5}% {m.avg_bits_per_element:>10.4f} {m.compression_rate:>12.3f} "
              f"{m.savings_pct:>8.2f}%")

    print("\nsingle-format datapath energy (relative to FP8xFP8)")
    for kind in DotUnitKind:
        trace = GemmTrace()
        trace.record(kind, 1000)
        print(f"  {kind.value}: {cm.datapath_energy(trace):.2f}")

    print("\nPPU energy per MAC op vs reduction depth K (M=N=16)")
    for k in (16, 64, 256, 1024, 4096, 16384):
        trace = GemmTrace()
        trace.record(DotUnitKind.FP4_FP4, 16 * 16 * (k // 16))
        trace.ppu_invocations = 16 * 16 // 16
        print(f"  K={k:>6}: {cm.ppu_energy_per_op_fj(trace):.3f} fJ/op")


if __name__ == "__main__":
    main()
