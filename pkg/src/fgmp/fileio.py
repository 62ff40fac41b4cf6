"""Binary file formats: .fgt (float tensors) and .fgq (quantized tensors).

All fields are little-endian and fixed width; parsers validate the magic,
every count, and reject trailing bytes, so write -> read -> write is
byte-identical.

.fgt layout:
    magic "FGT1" | dtype u8 (0 = binary32) | kind u8 | ndim u8 | pad u8
    dims: ndim x u64 | payload: row-major binary32

kind: 0 = tensor, 1 = per-element fisher, 2 = per-channel fisher,
3 = channel magnitudes.

.fgq layout:
    magic "FGQ1" | block size u16 (= 16) | rows u64 | cols u64
    fp8 tensor scale binary32
    metadata bitmap, ceil(nblocks/8) bytes, bit i = block i, LSB-first
    block payloads in block order:
        NVFP4: 8 bytes packed nibbles (low nibble = even element index)
               + 1 byte E4M3 scale code
        FP8:   16 bytes E4M3 codes
"""

from __future__ import annotations

import struct

import numpy as np

from .blockquant import BLOCK_SIZE, QuantizedTensor

__all__ = [
    "FileFormatError",
    "KIND_TENSOR",
    "KIND_FISHER_ELEM",
    "KIND_FISHER_CHANNEL",
    "KIND_CHANNEL_MAG",
    "KIND_NAMES",
    "write_tensor_file",
    "read_tensor_file",
    "write_quant_file",
    "read_quant_file",
]

FGT_MAGIC = b"FGT1"
FGQ_MAGIC = b"FGQ1"

KIND_TENSOR = 0
KIND_FISHER_ELEM = 1
KIND_FISHER_CHANNEL = 2
KIND_CHANNEL_MAG = 3
KIND_NAMES = {
    KIND_TENSOR: "tensor",
    KIND_FISHER_ELEM: "per-element fisher",
    KIND_FISHER_CHANNEL: "per-channel fisher",
    KIND_CHANNEL_MAG: "channel magnitudes",
}


class FileFormatError(ValueError):
    pass


def write_tensor_file(path, values: np.ndarray, kind: int = KIND_TENSOR) -> None:
    if kind not in KIND_NAMES:
        raise FileFormatError(f"unknown tensor kind {kind}")
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim not in (1, 2):
        raise FileFormatError(f"tensor files hold 1-D or 2-D data, got {arr.ndim}-D")
    header = struct.pack("<4sBBBB", FGT_MAGIC, 0, kind, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.tobytes())


def read_tensor_file(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != FGT_MAGIC:
        raise FileFormatError(f"{path}: not a tensor file (bad magic)")
    _, dtype, kind, ndim, pad = struct.unpack("<4sBBBB", blob[:8])
    if dtype != 0:
        raise FileFormatError(f"{path}: unsupported dtype code {dtype}")
    if kind not in KIND_NAMES:
        raise FileFormatError(f"{path}: unknown kind {kind}")
    if ndim not in (1, 2):
        raise FileFormatError(f"{path}: unsupported ndim {ndim}")
    if pad != 0:
        raise FileFormatError(f"{path}: nonzero pad byte")
    off = 8 + 8 * ndim
    if len(blob) < off:
        raise FileFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{ndim}Q", blob[8:off])
    count = int(np.prod(dims))
    if len(blob) != off + 4 * count:
        raise FileFormatError(
            f"{path}: payload is {len(blob) - off} bytes, expected {4 * count}"
        )
    arr = np.frombuffer(blob[off:], dtype="<f4").reshape(dims)
    return arr.copy(), kind


def _pack_nibbles(codes: np.ndarray) -> bytes:
    lo = codes[0::2]
    hi = codes[1::2]
    return ((hi << 4) | lo).astype(np.uint8).tobytes()


def _unpack_nibbles(raw: bytes) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    out = np.empty(len(raw) * 2, dtype=np.uint8)
    out[0::2] = b & 0x0F
    out[1::2] = b >> 4
    return out


def write_quant_file(path, qt: QuantizedTensor) -> None:
    if qt.block_size != BLOCK_SIZE:
        raise FileFormatError(f"file format fixes block size 16, got {qt.block_size}")
    header = struct.pack(
        "<4sHQQf", FGQ_MAGIC, BLOCK_SIZE, qt.rows, qt.cols, np.float32(qt.fp8_tensor_scale)
    )
    bitmap = np.packbits(qt.meta, bitorder="little").tobytes()
    parts = [header, bitmap]
    for b in range(qt.nblocks):
        if qt.meta[b]:
            parts.append(qt.codes[b].astype(np.uint8).tobytes())
        else:
            parts.append(_pack_nibbles(qt.codes[b]))
            parts.append(bytes([int(qt.scales[b])]))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_quant_file(path) -> QuantizedTensor:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_len = struct.calcsize("<4sHQQf")
    if len(blob) < head_len or blob[:4] != FGQ_MAGIC:
        raise FileFormatError(f"{path}: not a quantized-tensor file (bad magic)")
    _, bs, rows, cols, scale = struct.unpack("<4sHQQf", blob[:head_len])
    if bs != BLOCK_SIZE:
        raise FileFormatError(f"{path}: block size {bs} unsupported (must be 16)")
    if rows == 0 or cols == 0 or cols % BLOCK_SIZE != 0:
        raise FileFormatError(f"{path}: bad dims {rows}x{cols}")
    nb = rows * cols // BLOCK_SIZE
    bitmap_len = (nb + 7) // 8
    off = head_len + bitmap_len
    if len(blob) < off:
        raise FileFormatError(f"{path}: truncated metadata bitmap")
    meta = np.unpackbits(
        np.frombuffer(blob[head_len:off], dtype=np.uint8), bitorder="little"
    )
    if meta[nb:].any():
        raise FileFormatError(f"{path}: nonzero padding bits in metadata bitmap")
    meta = meta[:nb]
    expect = off + int(meta.sum()) * 16 + int((meta == 0).sum()) * 9
    if len(blob) != expect:
        raise FileFormatError(f"{path}: file is {len(blob)} bytes, expected {expect}")
    codes = np.empty((nb, BLOCK_SIZE), dtype=np.uint8)
    scales = np.full(nb, 0x38, dtype=np.uint8)
    for b in range(nb):
        if meta[b]:
            codes[b] = np.frombuffer(blob[off : off + 16], dtype=np.uint8)
            off += 16
        else:
            codes[b] = _unpack_nibbles(blob[off : off + 8])
            scales[b] = blob[off + 8]
            off += 9
    try:
        return QuantizedTensor(
            rows=rows, cols=cols, codes=codes, scales=scales, meta=meta,
            fp8_tensor_scale=float(scale),
        )
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
