"""Minimal deterministic PNG encode/decode for the formats this package emits.

Supports exactly: 8-bit RGB (color channels), 8-bit grayscale, and 16-bit
grayscale (depth in millimeter-style integer units, instance ids).  Filter
type 0 on every row and a fixed zlib level keep output byte-stable, which the
dataset determinism guarantees rely on.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DatasetError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png(path, image: np.ndarray) -> None:
    """Write uint8 HxW / HxWx3 or uint16 HxW images."""
    img = np.asarray(image)
    if img.dtype == np.uint8 and img.ndim == 3 and img.shape[2] == 3:
        color_type, bit_depth = 2, 8
        raw = img
    elif img.dtype == np.uint8 and img.ndim == 2:
        color_type, bit_depth = 0, 8
        raw = img[:, :, None]
    elif img.dtype == np.uint16 and img.ndim == 2:
        color_type, bit_depth = 0, 16
        raw = img[:, :, None].astype(">u2")
    else:
        raise DatasetError(f"unsupported image dtype/shape: {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    rows = raw.tobytes()
    stride = w * raw.shape[2] * (bit_depth // 8)
    filtered = bytearray()
    for r in range(h):
        filtered.append(0)  # filter type None
        filtered += rows[r * stride : (r + 1) * stride]
    header = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    data = (
        _SIGNATURE
        + _chunk(b"IHDR", header)
        + _chunk(b"IDAT", zlib.compress(bytes(filtered), 6))
        + _chunk(b"IEND", b"")
    )
    with open(path, "wb") as f:
        f.write(data)


def read_png(path) -> np.ndarray:
    """Read PNGs produced by write_png (also tolerates filtered rows)."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(_SIGNATURE):
        raise DatasetError(f"{path}: not a PNG file")
    pos = len(_SIGNATURE)
    idat = b""
    header = None
    while pos + 8 <= len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        if len(payload) != length:
            raise DatasetError(f"{path}: truncated chunk {tag!r}")
        if tag == b"IHDR":
            header = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
        pos += 12 + length
    if header is None:
        raise DatasetError(f"{path}: missing IHDR")
    w, h, bit_depth, color_type, _, _, interlace = header
    if interlace != 0:
        raise DatasetError(f"{path}: interlaced PNG not supported")
    if (color_type, bit_depth) not in ((2, 8), (0, 8), (0, 16)):
        raise DatasetError(
            f"{path}: unsupported PNG format (color {color_type}, depth {bit_depth})"
        )
    channels = 3 if color_type == 2 else 1
    bpp = channels * (bit_depth // 8)
    stride = w * bpp
    try:
        decompressed = zlib.decompress(idat)
    except zlib.error as e:
        raise DatasetError(f"{path}: corrupt PNG data ({e})") from e
    if len(decompressed) != h * (stride + 1):
        raise DatasetError(f"{path}: truncated PNG pixel data")
    out = bytearray(h * stride)
    prev = bytearray(stride)
    for r in range(h):
        ftype = decompressed[r * (stride + 1)]
        row = bytearray(decompressed[r * (stride + 1) + 1 : (r + 1) * (stride + 1)])
        if ftype == 1:  # Sub
            for i in range(bpp, stride):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                row[i] = (row[i] + prev[i]) & 0xFF
        elif ftype not in (0, 1, 2):
            raise DatasetError(f"{path}: unsupported PNG row filter {ftype}")
        out[r * stride : (r + 1) * stride] = row
        prev = row
    if bit_depth == 16:
        arr = np.frombuffer(bytes(out), dtype=">u2").reshape(h, w).astype(np.uint16)
    elif channels == 3:
        arr = np.frombuffer(bytes(out), dtype=np.uint8).reshape(h, w, 3).copy()
    else:
        arr = np.frombuffer(bytes(out), dtype=np.uint8).reshape(h, w).copy()
    return arr
