"""File formats: 8-bit PGM, raw float32 signals, metrics JSON.

The float signal format (``.fsig``) is little-endian: a 16-byte header
made of the magic ``b"FSIG"``, a ``u32`` rank (1 or 2) and two ``u32``
dimensions (unused ones are zero), followed by the samples as ``float32``
in row-major order.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_fsig",
    "write_fsig",
    "read_image",
    "write_metrics",
    "metrics_json",
]

FSIG_MAGIC = b"FSIG"
_HEADER = struct.Struct("<4sIII")


def _pgm_tokens(data: bytes, count: int):
    """First `count` whitespace-separated header tokens and the data offset."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM as a float64 array of shape (rows, cols)."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixels, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)


def write_pgm(path, image) -> None:
    """Write a 2-D image as P5 PGM, rounding and clipping to ``[0, 255]``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError(f"PGM images are 2-D, got shape {img.shape}")
    raster = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())


def write_fsig(path, signal) -> None:
    sig = np.asarray(signal)
    if sig.ndim not in (1, 2):
        raise FormatError(f"FSIG stores rank 1 or 2 signals, got rank {sig.ndim}")
    dims = list(sig.shape) + [0] * (2 - sig.ndim)
    header = _HEADER.pack(FSIG_MAGIC, sig.ndim, *dims)
    Path(path).write_bytes(header + np.ascontiguousarray(sig, dtype="<f4").tobytes())


def read_fsig(path) -> np.ndarray:
    """Read an FSIG file; samples are returned as float64."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the FSIG header")
    magic, rank, d0, d1 = _HEADER.unpack_from(data)
    if magic != FSIG_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if rank not in (1, 2):
        raise FormatError(f"{path}: unsupported rank {rank}")
    shape = (d0,) if rank == 1 else (d0, d1)
    payload = data[_HEADER.size :]
    if len(payload) != 4 * math.prod(shape):
        raise FormatError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def read_image(path) -> np.ndarray:
    """Dispatch on the file content: FSIG or P5 PGM."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == FSIG_MAGIC:
        return read_fsig(path)
    if magic[:2] == b"P5":
        return read_pgm(path)
    raise FormatError(f"{path}: unrecognized image format")


def _json_number(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def metrics_json(snr_db, ssim, iterations, seconds) -> str:
    """One-line JSON ``{snr_db, ssim, iterations, seconds}``; non-finite as strings."""
    return json.dumps(
        {
            "snr_db": _json_number(snr_db),
            "ssim": _json_number(ssim),
            "iterations": int(iterations),
            "seconds": _json_number(seconds),
        }
    )


def write_metrics(path, snr_db, ssim, iterations, seconds) -> str:
    line = metrics_json(snr_db, ssim, iterations, seconds)
    Path(path).write_text(line + "\n")
    return line
