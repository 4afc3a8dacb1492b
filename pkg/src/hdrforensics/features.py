"""Hand-crafted block descriptors for the SVM comparison arm.

HOG (324 values), uniform LBP (944) and second-order SPAM (686), each
computed on a 64x64 block. The ``*_batch`` functions take a stack of
blocks shaped (n, 64, 64); the single-block functions wrap them.
"""

from __future__ import annotations

import enum
import json
import struct
from pathlib import Path

import numpy as np

from .dataset import BLOCK_SIZE
from .hdr_io import FormatError

HOG_CELL = 16
HOG_BINS = 9
HOG_CLIP = 0.2
HOG_EPS = 1e-6
LBP_REGION = 16
LBP_BINS = 59
SPAM_T = 3

FEATURE_MAGIC = b"HDRFFEAT"
FEATURE_VERSION = 1


class FeatureKind(str, enum.Enum):
    HOG = "HOG"
    LBP = "LBP"
    SPAM = "SPAM"

    @property
    def dims(self) -> int:
        return {"HOG": 324, "LBP": 944, "SPAM": 686}[self.value]


def _as_stack(blocks) -> np.ndarray:
    x = np.asarray(blocks, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (BLOCK_SIZE, BLOCK_SIZE):
        raise ValueError(f"expected {BLOCK_SIZE}x{BLOCK_SIZE} blocks, got shape {np.shape(blocks)}")
    if not np.isfinite(x).all():
        raise ValueError("blocks contain non-finite values")
    return x


# ---------------------------------------------------------------------------
# HOG
# ---------------------------------------------------------------------------

def _l2_hys(v: np.ndarray) -> np.ndarray:
    v = v / np.sqrt((v * v).sum(axis=-1, keepdims=True) + HOG_EPS ** 2)
    v = np.minimum(v, HOG_CLIP)
    return v / np.sqrt((v * v).sum(axis=-1, keepdims=True) + HOG_EPS ** 2)


def hog_batch(blocks) -> np.ndarray:
    """[-1, 0, 1] gradients, 9 unsigned bins per 16x16 cell, 2x2-cell blocks at 1-cell stride.

    Each pixel votes its magnitude into the bin whose center (0, 20, ..., 160
    degrees) is nearest its orientation; border pixels have zero gradient.
    """
    x = _as_stack(blocks)
    n, s = x.shape[0], BLOCK_SIZE
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    gx[:, :, 1:-1] = x[:, :, 2:] - x[:, :, :-2]
    gy[:, 1:-1, :] = x[:, 2:, :] - x[:, :-2, :]
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.rint(ang / (180.0 / HOG_BINS)).astype(np.int64) % HOG_BINS

    cells = s // HOG_CELL
    cell_of = np.arange(s) // HOG_CELL
    cell_idx = cell_of[:, None] * cells + cell_of[None, :]
    flat = (np.arange(n)[:, None, None] * cells * cells + cell_idx[None]) * HOG_BINS + bins
    hist = np.bincount(flat.ravel(), weights=mag.ravel(), minlength=n * cells * cells * HOG_BINS)
    hist = hist.reshape(n, cells, cells, HOG_BINS)

    out = []
    for by in range(cells - 1):
        for bx in range(cells - 1):
            out.append(_l2_hys(hist[:, by:by + 2, bx:bx + 2, :].reshape(n, -1)))
    return np.concatenate(out, axis=1)


def hog(block) -> np.ndarray:
    return hog_batch(block)[0]


# ---------------------------------------------------------------------------
# uniform LBP
# ---------------------------------------------------------------------------

# neighbors in circular order, starting top-left
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def uniform_table() -> np.ndarray:
    """Map 8-bit codes to 59 bins: uniform codes in ascending order, then one bin for the rest."""
    table = np.full(256, LBP_BINS - 1, dtype=np.int64)
    nxt = 0
    for code in range(256):
        if _transitions(code) <= 2:
            table[code] = nxt
            nxt += 1
    assert nxt == LBP_BINS - 1
    return table


_UNIFORM = uniform_table()


def lbp_codes(region: np.ndarray) -> np.ndarray:
    """8-neighbor radius-1 codes of the interior pixels of ``region`` (..., h, w) -> (..., h-2, w-2).

    A bit is set when the neighbor is strictly greater than the center, so a
    flat patch gives code 0.
    """
    h, w = region.shape[-2:]
    center = region[..., 1:h - 1, 1:w - 1]
    code = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        nb = region[..., 1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        code |= (nb > center).astype(np.int64) << bit
    return code


def lbp_batch(blocks) -> np.ndarray:
    """59-bin uniform-pattern histogram per 16x16 region on a 4x4 grid (944 values).

    Each region uses only its own pixels, so its histogram counts 14 x 14
    interior codes.
    """
    x = _as_stack(blocks)
    n, g = x.shape[0], BLOCK_SIZE // LBP_REGION
    regions = x.reshape(n, g, LBP_REGION, g, LBP_REGION).transpose(0, 1, 3, 2, 4)
    bins = _UNIFORM[lbp_codes(regions)]
    offset = (np.arange(n * g * g) * LBP_BINS).reshape(n, g, g, 1, 1)
    hist = np.bincount((bins + offset).ravel(), minlength=n * g * g * LBP_BINS)
    return hist.reshape(n, g * g * LBP_BINS).astype(np.float64)


def lbp_uniform(block) -> np.ndarray:
    return lbp_batch(block)[0]


# ---------------------------------------------------------------------------
# SPAM
# ---------------------------------------------------------------------------

_SPAM_STRAIGHT = ((0, 1), (0, -1), (1, 0), (-1, 0))
_SPAM_DIAGONAL = ((1, 1), (-1, -1), (1, -1), (-1, 1))
_SPAM_LEVELS = 2 * SPAM_T + 1


def quantize_8bit(x: np.ndarray) -> np.ndarray:
    """Min-max quantization of each block in (n, h, w) to integers 0..255."""
    lo = x.min(axis=(1, 2), keepdims=True)
    span = x.max(axis=(1, 2), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.rint((x - lo) / safe * 255.0).astype(np.int64)


def _shift(a: np.ndarray, dy: int, dx: int, k: int, margin: int) -> np.ndarray:
    """View of ``a`` at p + k*(dy, dx) for every p whose p + margin*(dy, dx) is in bounds."""
    h, w = a.shape[-2:]

    def span(d, size):
        start = k * d - min(0, margin * d)
        return slice(start, size - max(0, margin * d) + k * d)

    return a[..., span(dy, h), span(dx, w)]


def spam_transitions(q: np.ndarray, direction: tuple[int, int]) -> np.ndarray:
    """Counts of (d1, d2, d3) difference triples along ``direction``: (n, 7, 7, 7)."""
    dy, dx = direction
    d = [np.clip(_shift(q, dy, dx, k, 3) - _shift(q, dy, dx, k + 1, 3), -SPAM_T, SPAM_T) + SPAM_T
         for k in range(3)]
    idx = (d[0] * _SPAM_LEVELS + d[1]) * _SPAM_LEVELS + d[2]
    n = q.shape[0]
    idx = idx.reshape(n, -1) + (np.arange(n) * _SPAM_LEVELS ** 3)[:, None]
    counts = np.bincount(idx.ravel(), minlength=n * _SPAM_LEVELS ** 3)
    return counts.reshape(n, _SPAM_LEVELS, _SPAM_LEVELS, _SPAM_LEVELS).astype(np.float64)


def conditional(counts: np.ndarray) -> np.ndarray:
    """Pr(d3 | d1, d2); rows never observed become uniform."""
    total = counts.sum(axis=-1, keepdims=True)
    return np.where(total > 0, counts / np.where(total > 0, total, 1.0), 1.0 / _SPAM_LEVELS)


def spam_batch(blocks) -> np.ndarray:
    """Second-order SPAM with T = 3 on the 8-bit quantized block (686 values).

    The four straight and the four diagonal directions are each averaged
    into a 343-value transition model. A constant block has no defined
    quantization and maps to the uniform model.
    """
    x = _as_stack(blocks)
    q = quantize_8bit(x)
    groups = []
    for dirs in (_SPAM_STRAIGHT, _SPAM_DIAGONAL):
        m = sum(conditional(spam_transitions(q, d)) for d in dirs) / len(dirs)
        groups.append(m.reshape(x.shape[0], -1))
    out = np.concatenate(groups, axis=1)
    flat = np.ptp(x, axis=(1, 2)) == 0
    out[flat] = 1.0 / _SPAM_LEVELS
    return out


def spam(block) -> np.ndarray:
    return spam_batch(block)[0]


# ---------------------------------------------------------------------------
# dispatch and persistence
# ---------------------------------------------------------------------------

_BATCH = {FeatureKind.HOG: hog_batch, FeatureKind.LBP: lbp_batch, FeatureKind.SPAM: spam_batch}


def extract(kind: FeatureKind | str, blocks, chunk: int = 512) -> np.ndarray:
    """Feature matrix (n, dims) as float32 for a stack of raw (unnormalized) blocks."""
    kind = FeatureKind(kind)
    x = _as_stack(blocks)
    parts = [_BATCH[kind](x[i:i + chunk]) for i in range(0, len(x), chunk)]
    out = np.concatenate(parts) if parts else np.zeros((0, kind.dims))
    if out.shape[1] != kind.dims:
        raise AssertionError(f"{kind.value} produced {out.shape[1]} values, expected {kind.dims}")
    return out.astype(np.float32)


def save_features(path, kind: FeatureKind | str, matrix: np.ndarray, keys: list) -> None:
    """Magic, version, JSON header (kind, dims, rows, entry keys), then little-endian f32 rows."""
    kind = FeatureKind(kind)
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[1] != kind.dims or len(keys) != matrix.shape[0]:
        raise ValueError("feature matrix shape does not match kind or keys")
    header = json.dumps({"kind": kind.value, "dims": kind.dims, "rows": matrix.shape[0],
                         "keys": [list(k) for k in keys]}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", FEATURE_VERSION, len(header)) + header)
        fh.write(matrix.astype("<f4").tobytes())


def load_features(path) -> tuple[FeatureKind, np.ndarray, list]:
    raw = Path(path).read_bytes()
    if raw[:8] != FEATURE_MAGIC:
        raise FormatError("not a feature file", 0)
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}", 8)
    header = json.loads(raw[16:16 + hlen])
    kind, dims, rows = FeatureKind(header["kind"]), header["dims"], header["rows"]
    body = raw[16 + hlen:]
    if len(body) != rows * dims * 4:
        raise FormatError(f"expected {rows * dims * 4} payload bytes, found {len(body)}", 16 + hlen)
    matrix = np.frombuffer(body, dtype="<f4").reshape(rows, dims).astype(np.float32)
    return kind, matrix, [tuple(k) for k in header["keys"]]
