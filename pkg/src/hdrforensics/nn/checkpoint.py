"""Checkpoint files.

Layout: 8-byte magic, little-endian u32 version, u32 header length, a UTF-8
JSON header (model description, normalization statistics, and the tensor
table as ``[name, kind, shape]`` triples), then each tensor's raw
little-endian float32 payload in table order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..hdr_io import FormatError

MAGIC = b"HDRFCKPT"
VERSION = 1


def encode_checkpoint(meta: dict, tensors: list[tuple[str, str, np.ndarray]]) -> bytes:
    table = [[name, kind, list(arr.shape)] for name, kind, arr in tensors]
    header = json.dumps({"meta": meta, "tensors": table}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for _, _, arr in tensors:
        if not np.all(np.isfinite(arr)):
            raise ValueError("refusing to write non-finite tensor")
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[dict, list[tuple[str, str, np.ndarray]]]:
    if buf[:8] != MAGIC:
        raise FormatError("not a checkpoint file", 0)
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    pos = 16 + hlen
    tensors = []
    for name, kind, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        if pos + 4 * count > len(buf):
            raise FormatError(f"truncated tensor {name}", pos)
        arr = np.frombuffer(buf, "<f4", count, pos).reshape(shape).astype(np.float32)
        tensors.append((name, kind, arr))
        pos += 4 * count
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", pos)
    return header["meta"], tensors


def save_checkpoint(path, meta, tensors) -> None:
    Path(path).write_bytes(encode_checkpoint(meta, tensors))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
