"""Readers and writers for Radiance RGBE (.hdr), PFM and binary PPM (P6).

Images are held as ``(height, width, 3)`` numpy arrays: float32 linear
radiance for :class:`HdrImage`, uint8 code values for :class:`LdrImage`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Raised when a file does not follow the expected grammar."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EncodeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HdrImage:
    """Linear RGB radiance map, row-major, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise ValueError("radiance must be finite")
        if np.any(data < 0):
            raise ValueError("radiance must be non-negative")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class LdrImage:
    """8-bit RGB image, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {data.shape}")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise ValueError("LDR code values must lie in 0..255")
            data = data.astype(np.uint8)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# Radiance RGBE
# ---------------------------------------------------------------------------

_RESOLUTION = re.compile(rb"^-Y (\d+) \+X (\d+)$")
_ANY_RESOLUTION = re.compile(rb"^[-+][XY] \d+ [-+][XY] \d+$")


def _read_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError("unterminated header line", pos)
    return buf[pos:end], end + 1


def _decode_rle_channel(buf: bytes, pos: int, width: int, out: np.ndarray) -> int:
    x = 0
    n = len(buf)
    while x < width:
        if pos >= n:
            raise FormatError("truncated RLE scanline", pos)
        count = buf[pos]
        pos += 1
        if count > 128:
            count -= 128
            if x + count > width:
                raise FormatError("RLE run overflows scanline", pos - 1)
            if pos >= n:
                raise FormatError("truncated RLE run", pos)
            out[x:x + count] = buf[pos]
            pos += 1
        else:
            if count == 0 or x + count > width:
                raise FormatError("bad RLE literal length", pos - 1)
            if pos + count > n:
                raise FormatError("truncated RLE literal", pos)
            out[x:x + count] = np.frombuffer(buf, np.uint8, count, pos)
            pos += count
        x += count
    return pos


def decode_rgbe(buf: bytes) -> HdrImage:
    """Decode a Radiance .hdr byte string (flat or new-style RLE scanlines)."""
    buf = bytes(buf)
    line, pos = _read_line(buf, 0)
    if not (line.startswith(b"#?RADIANCE") or line.startswith(b"#?RGBE")):
        raise FormatError("missing #?RADIANCE / #?RGBE signature", 0)
    while True:
        start = pos
        line, pos = _read_line(buf, pos)
        if not line.strip():
            break
        if line.startswith(b"FORMAT=") and line.strip() != b"FORMAT=32-bit_rle_rgbe":
            raise FormatError(f"unsupported pixel format {line.decode(errors='replace')!r}", start)
    start = pos
    line, pos = _read_line(buf, pos)
    m = _RESOLUTION.match(line.strip())
    if m is None:
        if _ANY_RESOLUTION.match(line.strip()):
            raise FormatError("unsupported orientation (only '-Y h +X w')", start)
        raise FormatError("malformed resolution line", start)
    height, width = int(m.group(1)), int(m.group(2))
    if height < 1 or width < 1:
        raise FormatError("empty image", start)

    rgbe = np.empty((height, width, 4), dtype=np.uint8)
    n = len(buf)
    for y in range(height):
        if pos + 4 <= n and 8 <= width < 0x8000 and buf[pos] == 2 and buf[pos + 1] == 2 and buf[pos + 2] < 128:
            if (buf[pos + 2] << 8 | buf[pos + 3]) != width:
                raise FormatError("RLE scanline width mismatch", pos)
            pos += 4
            for c in range(4):
                pos = _decode_rle_channel(buf, pos, width, rgbe[y, :, c])
        else:
            if pos + 4 * width > n:
                raise FormatError(f"truncated flat scanline {y}", pos)
            rgbe[y] = np.frombuffer(buf, np.uint8, 4 * width, pos).reshape(width, 4)
            pos += 4 * width

    e = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(np.float32(1.0 / 256.0), e - 128).astype(np.float32)
    scale[e == 0] = 0.0
    data = rgbe[..., :3].astype(np.float32) * scale[..., None]
    return HdrImage(data)


def encode_rgbe(img: HdrImage) -> bytes:
    """Encode as a Radiance file with flat scanlines."""
    data = np.asarray(img.data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise EncodeError("non-finite radiance cannot be encoded")
    peak = data.max(axis=2)
    mant, exp = np.frexp(peak)
    # mant*256 in [128, 256), so the dominant channel keeps 7+ bits
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(peak > 1e-32, mant * 256.0 / peak, 0.0)
    rgbe = np.zeros(data.shape[:2] + (4,), dtype=np.uint8)
    rgbe[..., :3] = np.clip(np.floor(data * scale[..., None]), 0, 255).astype(np.uint8)
    rgbe[..., 3] = np.where(peak > 1e-32, np.clip(exp + 128, 0, 255), 0).astype(np.uint8)
    header = (
        b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n"
        + f"-Y {img.height} +X {img.width}\n".encode()
    )
    return header + rgbe.tobytes()


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def _tokens(buf: bytes, pos: int, count: int) -> tuple[list[bytes], int]:
    """Read whitespace-separated header tokens; the last one consumes exactly one whitespace byte."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header", pos)
        out.append(buf[start:pos])
    if pos >= n:
        raise FormatError("missing payload", pos)
    return out, pos + 1


def decode_pfm(buf: bytes) -> HdrImage:
    buf = bytes(buf)
    (magic, w, h, scale), pos = _tokens(buf, 0, 4)
    if magic == b"Pf":
        raise FormatError("grayscale PFM ('Pf') is not supported", 0)
    if magic != b"PF":
        raise FormatError("missing PF signature", 0)
    try:
        width, height, scale_v = int(w), int(h), float(scale)
    except ValueError:
        raise FormatError("malformed PFM dimensions or scale", pos) from None
    if width < 1 or height < 1 or scale_v == 0 or not np.isfinite(scale_v):
        raise FormatError("invalid PFM dimensions or scale", pos)
    dtype = "<f4" if scale_v < 0 else ">f4"
    count = width * height * 3
    if len(buf) - pos < 4 * count:
        raise FormatError("truncated PFM payload", pos)
    data = np.frombuffer(buf, dtype, count, pos).astype(np.float32)
    # scanlines are stored bottom to top
    data = data.reshape(height, width, 3)[::-1]
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise FormatError("PFM payload holds non-finite or negative values", pos)
    return HdrImage(np.ascontiguousarray(data))


def encode_pfm(img: HdrImage) -> bytes:
    header = f"PF\n{img.width} {img.height}\n-1.0\n".encode()
    return header + np.ascontiguousarray(img.data[::-1], dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# PPM (P6)
# ---------------------------------------------------------------------------

def decode_ppm(buf: bytes) -> LdrImage:
    buf = bytes(buf)
    (magic, w, h, maxval), pos = _tokens(buf, 0, 4)
    if magic != b"P6":
        raise FormatError("missing P6 signature", 0)
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("malformed PPM header", pos) from None
    if maxv != 255:
        raise FormatError(f"unsupported maxval {maxv} (only 255)", pos)
    count = width * height * 3
    if len(buf) - pos < count:
        raise FormatError("truncated PPM payload", pos)
    data = np.frombuffer(buf, np.uint8, count, pos).reshape(height, width, 3).copy()
    return LdrImage(data)


def encode_ppm(img: LdrImage) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode() + img.data.tobytes()


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def read_hdr(path) -> HdrImage:
    """Read an HDR image, dispatching on the file extension (.hdr or .pfm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".hdr", ".rgbe", ".pic"):
        return decode_rgbe(path.read_bytes())
    if suffix == ".pfm":
        return decode_pfm(path.read_bytes())
    raise FormatError(f"unsupported HDR file type {path.suffix!r}")


def write_hdr(path, img: HdrImage) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        path.write_bytes(encode_pfm(img))
    elif suffix in (".hdr", ".rgbe", ".pic"):
        path.write_bytes(encode_rgbe(img))
    else:
        raise EncodeError(f"unsupported HDR file type {path.suffix!r}")


def read_ppm(path) -> LdrImage:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, img: LdrImage) -> None:
    Path(path).write_bytes(encode_ppm(img))
