"""Independent reference implementations used as test oracles.

Everything here is written from the format definitions directly (explicit
bit-field walks, scalar loops) rather than reusing the library's vectorized
paths, so a bug in the library cannot hide in its own oracle.
"""

from __future__ import annotations

import math

import numpy as np


def e2m1_table() -> list[float]:
    """All 16 E2M1 values by code, via an explicit bit-field walk."""
    out = []
    for code in range(16):
        sign = -1.0 if code & 0b1000 else 1.0
        exp = (code >> 1) & 0b11
        man = code & 0b1
        if exp == 0:
            mag = man * 0.5  # subnormal: 2^(1-1) * m/2
        else:
            mag = 2.0 ** (exp - 1) * (1.0 + man / 2.0)
        out.append(sign * mag)
    return out


def e4m3_table() -> list[float]:
    """All 256 E4M3 values by code (NaN at 0x7f/0xff)."""
    out = []
    for code in range(256):
        sign = -1.0 if code & 0x80 else 1.0
        exp = (code >> 3) & 0xF
        man = code & 0x7
        if exp == 15 and man == 7:
            out.append(math.nan)
        elif exp == 0:
            out.append(sign * man / 8.0 * 2.0**-6)
        else:
            out.append(sign * 2.0 ** (exp - 7) * (1.0 + man / 8.0))
    return out


def _nearest_code(v: float, table: list[float], mantissa_lsb_of) -> int:
    """Brute-force nearest code with ties to even mantissa bit.

    Scans non-NaN codes of the sign-matching half so that -0.0 keeps its
    sign, mirroring the encoder contract.
    """
    neg = math.copysign(1.0, v) < 0
    best = None
    best_d = None
    for code, dec in enumerate(table):
        if math.isnan(dec):
            continue
        if (math.copysign(1.0, dec) < 0) != neg:
            continue
        d = abs(v - dec)
        if best is None or d < best_d:
            best, best_d = code, d
        elif d == best_d and mantissa_lsb_of(code) == 0 and mantissa_lsb_of(best) == 1:
            best = code
    return best


def encode_fp4_oracle(v: float) -> int:
    return _nearest_code(float(np.clip(v, -6.0, 6.0)), e2m1_table(), lambda c: c & 1)


def encode_fp8_oracle(v: float) -> int:
    return _nearest_code(float(np.clip(v, -448.0, 448.0)), e4m3_table(), lambda c: c & 1)


def encode_fp4_oracle_bulk(values: np.ndarray) -> np.ndarray:
    """Vectorized brute-force argmin with tie-to-even, for large draws."""
    return _bulk_nearest(values, np.asarray(e2m1_table()[:8]), 3)


def encode_fp8_oracle_bulk(values: np.ndarray) -> np.ndarray:
    finite = [x for x in e4m3_table()[:128] if not math.isnan(x)]
    return _bulk_nearest(values, np.asarray(finite), 7)


def _bulk_nearest(values: np.ndarray, mags: np.ndarray, sign_shift: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    m = np.minimum(np.abs(v), mags[-1])
    d = np.abs(m[:, None] - mags[None, :])
    first = np.argmin(d, axis=1)  # lower index among any tie
    upper = np.minimum(first + 1, len(mags) - 1)
    tied = d[np.arange(len(m)), first] == d[np.arange(len(m)), upper]
    pick_upper = tied & (first % 2 == 1) & (upper != first)
    idx = np.where(pick_upper, upper, first)
    return (idx | (np.signbit(v).astype(np.int64) << sign_shift)).astype(np.uint8)


def random_quantized(rng, rows, cols):
    """Directly sampled codes/scales/meta (wider coverage than quantizing)."""
    from fgmp import blockquant as bq
    from fgmp.numerics import FP8_NAN_CODES

    nb = rows * cols // 16
    meta = rng.integers(0, 2, size=nb, dtype=np.uint8)
    codes = np.empty((nb, 16), dtype=np.uint8)
    fp8_pool = np.array([c for c in range(256) if c not in FP8_NAN_CODES], np.uint8)
    for b in range(nb):
        if meta[b]:
            codes[b] = rng.choice(fp8_pool, size=16)
        else:
            codes[b] = rng.integers(0, 16, size=16)
    scales = rng.integers(1, 0x7F, size=nb, dtype=np.uint8)
    return bq.QuantizedTensor(
        rows, cols, codes, scales, meta, fp8_tensor_scale=float(rng.uniform(0.001, 2.0))
    )


def dequantize_oracle(qt) -> np.ndarray:
    """Scalar dequantization from the independently built decode tables."""
    t4 = e2m1_table()
    t8 = e4m3_table()
    out = np.empty((qt.nblocks, 16), dtype=np.float32)
    for b in range(qt.nblocks):
        for i in range(16):
            if qt.meta[b]:
                out[b, i] = np.float32(t8[qt.codes[b, i]]) * np.float32(qt.fp8_tensor_scale)
            else:
                out[b, i] = np.float32(t4[qt.codes[b, i]]) * np.float32(t8[qt.scales[b]])
    return out.reshape(qt.rows, qt.cols)


def gemm_oracle(w_q, x_q) -> np.ndarray:
    """Reference GEMM: sequential fp32 reduction per output element.

    Vectorized only over weight rows; every output element performs the
    exact scalar operation sequence of the defined order (fp32 products,
    fp32 accumulation, ascending element then ascending block).
    """
    wd = dequantize_oracle(w_q)
    xd = dequantize_oracle(x_q)
    m, k = wd.shape
    n = xd.shape[0]
    y = np.zeros((n, m), dtype=np.float32)
    for row in range(n):
        acc = np.zeros(m, dtype=np.float32)
        for kb in range(k // 16):
            partial = np.zeros(m, dtype=np.float32)
            for i in range(16):
                col = kb * 16 + i
                partial = partial + wd[:, col] * np.float32(xd[row, col])
            acc = acc + partial
        y[row] = acc
    return y


def seq_f32_dot(w: np.ndarray, a: np.ndarray) -> np.float32:
    """16-wide dot product: fp32 products, fp32 accumulation, index order."""
    acc = np.float32(0.0)
    for i in range(len(w)):
        acc = np.float32(acc + np.float32(np.float32(w[i]) * np.float32(a[i])))
    return acc


def seq_weighted_sq_sum(weights, deltas) -> float:
    """sum_i w_i * d_i^2 in float64, strictly ascending index order."""
    acc = 0.0
    for wi, di in zip(weights, deltas):
        acc += float(wi) * float(di) * float(di)
    return acc
