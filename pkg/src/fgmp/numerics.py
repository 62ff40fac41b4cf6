"""Bit-exact codecs for the two element formats: E2M1 (FP4) and E4M3 (FP8).

E2M1: 1 sign / 2 exponent / 1 mantissa bit, bias 1. The positive magnitude
table is {0, 0.5, 1, 1.5, 2, 3, 4, 6} and the magnitude code equals the
index into that table, so a full code is ``sign << 3 | index``.

E4M3: 1 sign / 4 exponent / 3 mantissa bits, bias 7, no infinities. The two
all-ones codes (0x7f, 0xff) are NaN; the max finite magnitude is 448.
Positive codes 0x00..0x7e enumerate the 127 nonnegative magnitudes in
ascending order.

Encoding is round-to-nearest with ties to the even mantissa bit, and
saturates finite out-of-range inputs to the max-magnitude code. -0.0 maps
to the negative-zero code. NaN codes decode (to NaN) for file robustness
but are never produced by the encoders.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "FP4_MAX",
    "FP8_MAX",
    "FP8_NAN_CODES",
    "FP8_CODE_ONE",
    "FP4_VALUES",
    "FP8_VALUES",
    "decode_fp4",
    "encode_fp4",
    "decode_fp8",
    "encode_fp8",
]

FP4_MAX = 6.0
FP8_MAX = 448.0
FP8_NAN_CODES = (0x7F, 0xFF)


def _e2m1_magnitudes() -> np.ndarray:
    mags = [0.0, 0.5]  # zero + the single subnormal
    for e in range(1, 4):
        for m in range(2):
            mags.append(2.0 ** (e - 1) * (1.0 + m / 2.0))
    return np.asarray(mags)


def _e4m3_magnitudes() -> np.ndarray:
    mags = [m * 2.0**-9 for m in range(8)]  # zero + subnormals
    for e in range(1, 16):
        for m in range(8):
            if e == 15 and m == 7:
                continue  # NaN slot
            mags.append(2.0 ** (e - 7) * (1.0 + m / 8.0))
    return np.asarray(mags)


_FP4_MAGS = _e2m1_magnitudes()
_FP8_MAGS = _e4m3_magnitudes()

#: Decode tables indexed by code. FP8 has NaN at 0x7f/0xff.
FP4_VALUES = np.concatenate([_FP4_MAGS, -_FP4_MAGS])
FP8_VALUES = np.concatenate([_FP8_MAGS, [np.nan], -_FP8_MAGS, [np.nan]])

FP8_CODE_ONE = int(np.searchsorted(_FP8_MAGS, 1.0))  # 0x38


def _decode(codes, table: np.ndarray, ncodes: int) -> float | np.ndarray:
    arr = np.asarray(codes)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("codes must be integers")
    if arr.size and (arr.min() < 0 or arr.max() >= ncodes):
        raise ValueError(f"code out of range [0, {ncodes})")
    out = table[arr]
    return float(out) if arr.ndim == 0 else out


def _encode(values, mags: np.ndarray, sign_shift: int) -> int | np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("cannot encode non-finite values")
    sign = np.signbit(arr)
    m = np.minimum(np.abs(arr), mags[-1])
    idx = np.searchsorted(mags, m, side="left")
    idx = np.minimum(idx, len(mags) - 1)
    lo = np.maximum(idx - 1, 0)
    # Exact-midpoint detection via 2m vs (lo + hi): both sides are exact in
    # float64 for these value sets, so ties are judged without rounding.
    pair_sum = mags[lo] + mags[idx]
    two_m = 2.0 * m
    exact = mags[idx] == m
    pick_hi = (two_m > pair_sum) | ((two_m == pair_sum) & (idx % 2 == 0))
    code = np.where(exact | pick_hi, idx, lo).astype(np.uint8)
    code |= (sign.astype(np.uint8)) << sign_shift
    return int(code) if arr.ndim == 0 else code


def decode_fp4(code) -> float | np.ndarray:
    """Exact real value of an E2M1 code (scalar or array of 0..15)."""
    return _decode(code, FP4_VALUES, 16)


def encode_fp4(value) -> int | np.ndarray:
    """Nearest E2M1 code, ties to even mantissa, saturating at |v| = 6."""
    return _encode(value, _FP4_MAGS, 3)


def decode_fp8(code) -> float | np.ndarray:
    """Exact real value of an E4M3 code; the two NaN codes decode to NaN."""
    return _decode(code, FP8_VALUES, 256)


def encode_fp8(value) -> int | np.ndarray:
    """Nearest E4M3 code, ties to even mantissa, saturating at |v| = 448."""
    return _encode(value, _FP8_MAGS, 7)
