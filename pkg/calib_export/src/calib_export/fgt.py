"""Writer/reader for the .fgt tensor file format.

Implemented from the published format so this package stays decoupled from
the fgmp internals: magic "FGT1", dtype u8 (0 = binary32), kind u8, ndim
u8, pad u8, ndim x u64 little-endian dims, row-major binary32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

KIND_TENSOR = 0
KIND_FISHER_ELEM = 1
KIND_FISHER_CHANNEL = 2
KIND_CHANNEL_MAG = 3

_MAGIC = b"FGT1"


def write_fgt(path, values: np.ndarray, kind: int) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim not in (1, 2):
        raise ValueError(f"tensor files hold 1-D or 2-D data, got {arr.ndim}-D")
    if kind not in (KIND_TENSOR, KIND_FISHER_ELEM, KIND_FISHER_CHANNEL, KIND_CHANNEL_MAG):
        raise ValueError(f"unknown kind {kind}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{path}: refusing to export non-finite values")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sBBBB", _MAGIC, 0, kind, arr.ndim, 0))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_fgt(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    _, dtype, kind, ndim, _pad = struct.unpack("<4sBBBB", blob[:8])
    if dtype != 0 or ndim not in (1, 2):
        raise ValueError(f"{path}: unsupported header")
    off = 8 + 8 * ndim
    dims = struct.unpack(f"<{ndim}Q", blob[8:off])
    arr = np.frombuffer(blob[off:], dtype="<f4")
    if arr.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload length mismatch")
    return arr.reshape(dims).copy(), kind
