"""On-disk formats: PADT/PADC tensor containers plus P5/P6 pixmaps.

PADT layout (all little-endian)::

    b"PADT" | u32 version=1 | u32 rank | rank x u32 dims | float64 payload

PADC layout::

    b"PADC" | u32 count | count x (u32 name_len | utf-8 name | PADT blob)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .tensor import Tensor

__all__ = [
    "FormatError",
    "write_padt",
    "read_padt",
    "padt_bytes",
    "write_padc",
    "read_padc",
    "Pixmap",
    "read_pixmap",
    "write_pixmap",
    "load_image",
]

PADT_MAGIC = b"PADT"
PADC_MAGIC = b"PADC"
PADT_VERSION = 1


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected end of file (wanted {n} bytes, got {len(buf)})")
    return buf


def _dump_padt(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shape, unlike ascontiguousarray
    fh.write(PADT_MAGIC)
    fh.write(struct.pack("<II", PADT_VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _load_padt(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != PADT_MAGIC:
        raise FormatError("not a PADT tensor (bad magic)")
    version, rank = struct.unpack("<II", _read_exact(fh, 8))
    if version != PADT_VERSION:
        raise FormatError(f"unsupported PADT version {version}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(fh, 8 * count)
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def padt_bytes(t) -> bytes:
    buf = io.BytesIO()
    _dump_padt(buf, t.data if isinstance(t, Tensor) else np.asarray(t))
    return buf.getvalue()


def write_padt(path, t) -> None:
    Path(path).write_bytes(padt_bytes(t))


def read_padt(path) -> Tensor:
    with open(path, "rb") as fh:
        arr = _load_padt(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after PADT payload")
    return Tensor(arr)


def write_padc(path, records: Iterable[tuple[str, object]]) -> None:
    records = list(records)
    names = [n for n, _ in records]
    if len(set(names)) != len(names):
        raise FormatError("checkpoint names must be unique")
    buf = io.BytesIO()
    buf.write(PADC_MAGIC)
    buf.write(struct.pack("<I", len(records)))
    for name, t in records:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        _dump_padt(buf, t.data if isinstance(t, Tensor) else np.asarray(t))
    Path(path).write_bytes(buf.getvalue())


def read_padc(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != PADC_MAGIC:
            raise FormatError(f"{path}: not a PADC checkpoint (bad magic)")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        out = []
        for _ in range(count):
            (length,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, length).decode("utf-8")
            out.append((name, _load_padt(fh)))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after checkpoint records")
    return out


# ---------------------------------------------------------------------------
# Netpbm


class Pixmap:
    """Decoded P5/P6 image: integer samples ``[C, H, W]`` and their max value."""

    def __init__(self, samples: np.ndarray, maxval: int):
        if maxval not in (255, 65535):
            raise FormatError(f"sample depth must be 255 or 65535, got {maxval}")
        self.samples = samples
        self.maxval = maxval

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def to_float(self) -> np.ndarray:
        return self.samples.astype(np.float64) / self.maxval

    @classmethod
    def from_float(cls, arr: np.ndarray, maxval: int = 255) -> "Pixmap":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        q = np.rint(np.clip(arr, 0.0, 1.0) * maxval).astype(np.int64)
        return cls(q, maxval)


def _header_tokens(data: bytes) -> tuple[list[bytes], int]:
    """Magic + width + height + maxval, honoring '#' comments."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated pixmap header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after pixmap header")
    return tokens, pos + 1


def read_pixmap(path) -> Pixmap:
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported pixmap type {magic!r} (P5/P6 only)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric pixmap header") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: dimensions must be positive")
    channels = 3 if magic == b"P6" else 1
    if maxval not in (255, 65535):
        raise FormatError(f"{path}: sample depth must be 255 or 65535, got {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raster = data[offset : offset + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise FormatError(f"{path}: raster is truncated")
    arr = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    arr = arr.reshape(height, width, channels).transpose(2, 0, 1)
    return Pixmap(np.ascontiguousarray(arr), maxval)


def write_pixmap(path, pix: Pixmap) -> None:
    c, h, w = pix.samples.shape
    if c not in (1, 3):
        raise FormatError(f"pixmaps hold 1 or 3 channels, got {c}")
    if pix.samples.min() < 0 or pix.samples.max() > pix.maxval:
        raise FormatError("samples out of range for the declared max value")
    magic = b"P6" if c == 3 else b"P5"
    dtype = ">u2" if pix.maxval > 255 else "u1"
    header = magic + b"\n%d %d\n%d\n" % (w, h, pix.maxval)
    raster = pix.samples.transpose(1, 2, 0).astype(dtype).tobytes()
    Path(path).write_bytes(header + raster)


def load_image(path) -> Tensor:
    """Read a pixmap (floats in [0, 1]) or a PADT tensor as ``[C, H, W]``."""
    path = Path(path)
    if path.suffix.lower() == ".padt":
        t = read_padt(path)
        return t if t.ndim == 3 else Tensor(t.data.reshape((1,) * (3 - t.ndim) + t.shape))
    return Tensor(read_pixmap(path).to_float())
