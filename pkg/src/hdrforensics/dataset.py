"""Preprocessing and dataset construction.

Luminance, log transform, area resize and 64x64 tiling turn an HDR image
into blocks; :func:`build_manifest` splits a corpus into TRAIN / VERIFY1 /
VERIFY2 and :class:`BlockStore` keeps the tiled blocks on disk.
"""

from __future__ import annotations

import enum
import json
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hdr_io import FormatError, HdrImage, LdrImage

LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)
LOG_EPSILON = 1e-6
BLOCK_SIZE = 64

MANIFEST_MAGIC = "#HDRF-MANIFEST"
MANIFEST_VERSION = 1
SHARD_MAGIC = b"HDRFBLK\x00"
SHARD_VERSION = 1


class Label(enum.IntEnum):
    MHDR = 0
    IHDR = 1


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    VERIFY1 = "VERIFY1"
    VERIFY2 = "VERIFY2"


class DatasetError(ValueError):
    """Raised when a corpus cannot satisfy the requested split."""


# ---------------------------------------------------------------------------
# per-image preprocessing
# ---------------------------------------------------------------------------

def compute_luminance(img: HdrImage) -> np.ndarray:
    """Relative luminance (Rec. 709 weights) as a (h, w) float32 map."""
    r, g, b = (img.data[..., i].astype(np.float64) for i in range(3))
    lum = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return lum.astype(np.float32)


def log_transform(lum: np.ndarray, epsilon: float = LOG_EPSILON) -> np.ndarray:
    """Natural log of ``lum + epsilon``; finite for every non-negative input."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    lum = np.asarray(lum, dtype=np.float64)
    return np.log(lum + epsilon).astype(np.float32)


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) box-filter weights: each output cell averages the input span it covers."""
    scale = n_in / n_out
    edges = np.arange(n_out + 1) * scale
    weights = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        j0, j1 = int(math.floor(lo)), min(int(math.ceil(hi)), n_in)
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap
    return weights / weights.sum(axis=1, keepdims=True)


def resize_area(lum: np.ndarray, max_dim: int = 1024) -> np.ndarray:
    """Downscale so the longer side equals ``max_dim``; smaller maps pass through."""
    if max_dim < BLOCK_SIZE:
        raise ValueError(f"max_dim must be >= {BLOCK_SIZE}")
    h, w = lum.shape
    if max(h, w) <= max_dim:
        return lum
    factor = max_dim / max(h, w)
    new_h = max(1, int(round(h * factor)))
    new_w = max(1, int(round(w * factor)))
    rows = _area_matrix(h, new_h)
    cols = _area_matrix(w, new_w)
    out = rows @ np.asarray(lum, dtype=np.float64) @ cols.T
    return out.astype(np.float32)


def normalize_pixels_8bit(img: HdrImage) -> np.ndarray:
    """Per-image min-max luminance in [0, 1] (the "normalized pixel value" input).

    A constant image maps to 0.5 everywhere.
    """
    lum = compute_luminance(img).astype(np.float64)
    lo, hi = lum.min(), lum.max()
    if hi <= lo:
        return np.full(lum.shape, 0.5, dtype=np.float32)
    return ((lum - lo) / (hi - lo)).astype(np.float32)


@dataclass(eq=False)
class LogLumBlock:
    pixels: np.ndarray
    label: Label | None = None
    source_id: str = ""
    origin: tuple[int, int] = (0, 0)
    normalized: bool = False

    def __post_init__(self):
        if self.pixels.shape != (BLOCK_SIZE, BLOCK_SIZE):
            raise ValueError(f"block must be {BLOCK_SIZE}x{BLOCK_SIZE}, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("block contains non-finite values")


def tile_grid(lum: np.ndarray, size: int = BLOCK_SIZE) -> np.ndarray:
    """Non-overlapping tiles as an array of shape (rows, cols, size, size)."""
    h, w = lum.shape
    nr, nc = h // size, w // size
    cropped = np.asarray(lum, dtype=np.float32)[: nr * size, : nc * size]
    return cropped.reshape(nr, size, nc, size).transpose(0, 2, 1, 3).copy()


def tile_blocks(lum: np.ndarray, size: int = BLOCK_SIZE, label: Label | None = None,
                source_id: str = "") -> list[LogLumBlock]:
    """Cut a map into row-major size x size tiles, discarding right/bottom remainders."""
    h, w = lum.shape
    if h < size or w < size:
        warnings.warn(f"map {w}x{h} is smaller than one {size}x{size} tile", RuntimeWarning, stacklevel=2)
        return []
    grid = tile_grid(lum, size)
    return [
        LogLumBlock(grid[r, c], label, source_id, (r * size, c * size))
        for r in range(grid.shape[0])
        for c in range(grid.shape[1])
    ]


def preprocess(img: HdrImage, input_mode: str = "log", max_dim: int = 1024,
               epsilon: float = LOG_EPSILON) -> np.ndarray:
    """Image -> CNN input map: resized log-luminance, or min-max pixel values."""
    if input_mode == "log":
        return log_transform(resize_area(compute_luminance(img), max_dim), epsilon)
    if input_mode == "pixel":
        return resize_area(normalize_pixels_8bit(img), max_dim)
    raise ValueError(f"unknown input mode {input_mode!r}")


# ---------------------------------------------------------------------------
# multi-exposure fusion
# ---------------------------------------------------------------------------

def hat_weight(z: np.ndarray) -> np.ndarray:
    return 1.0 - np.abs(2.0 * np.asarray(z, dtype=np.float64) / 255.0 - 1.0)


def fuse_exposures(stack: Sequence[LdrImage], exposure_times: Sequence[float],
                   gamma: float = 2.2) -> HdrImage:
    """Merge bracketed 8-bit exposures into a radiance map.

    Each code value is linearized with ``(z/255)**gamma``, divided by its
    exposure time, and averaged with hat weights that vanish at 0 and 255.
    Pixels saturated or black in every frame take the mid exposure's value.
    """
    if len(stack) < 2:
        raise ValueError("fusion needs at least two exposures")
    if len(stack) != len(exposure_times):
        raise ValueError("one exposure time per image required")
    times = [float(t) for t in exposure_times]
    if any(not t > 0 or not math.isfinite(t) for t in times):
        raise ValueError("exposure times must be positive and finite")
    shape = stack[0].data.shape
    for i, img in enumerate(stack):
        if img.data.shape != shape:
            raise ValueError(f"exposure {i} is {img.data.shape[1]}x{img.data.shape[0]}, "
                             f"expected {shape[1]}x{shape[0]}")

    num = np.zeros(shape)
    den = np.zeros(shape)
    for img, t in zip(stack, times):
        z = img.data.astype(np.float64)
        w = hat_weight(z)
        num += w * (z / 255.0) ** gamma / t
        den += w
    mid = int(np.argsort(times)[len(times) // 2])
    fallback = (stack[mid].data.astype(np.float64) / 255.0) ** gamma / times[mid]
    with np.errstate(invalid="ignore", divide="ignore"):
        radiance = np.where(den > 0, num / np.where(den > 0, den, 1.0), fallback)
    return HdrImage(radiance.astype(np.float32))


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceImage:
    """One corpus image after preprocessing, described by its tile grid."""

    path: str
    label: Label
    tag: str
    rows: int
    cols: int

    @property
    def n_blocks(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Label
    split: Split
    tag: str
    row: int
    col: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    norm_mean: float = float("nan")
    norm_std: float = float("nan")
    settings: dict = field(default_factory=dict)

    def split(self, split: Split | str) -> list[ManifestEntry]:
        split = Split(split)
        return [e for e in self.entries if e.split is split]

    def images(self, split: Split | str) -> list[str]:
        """Distinct source paths contributing to ``split``, in entry order."""
        seen = {}
        for e in self.split(split):
            seen.setdefault(e.path, None)
        return list(seen)

    def itmo_tags(self) -> dict[str, str]:
        return {e.path: e.tag for e in self.entries}

    def block_counts(self, split: Split | str) -> dict[Label, int]:
        counts = {Label.MHDR: 0, Label.IHDR: 0}
        for e in self.split(split):
            counts[e.label] += 1
        return counts

    def to_text(self) -> str:
        lines = [f"{MANIFEST_MAGIC} v{MANIFEST_VERSION}", f"seed = {self.seed}",
                 f"norm_mean = {self.norm_mean!r}", f"norm_std = {self.norm_std!r}"]
        for key in sorted(self.settings):
            lines.append(f"{key} = {self.settings[key]}")
        lines.append("---")
        lines.append("path\tclass\tsplit\ttag\trow\tcol")
        for e in self.entries:
            lines.append(f"{e.path}\t{e.label.name}\t{e.split.value}\t{e.tag}\t{e.row}\t{e.col}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        lines = text.splitlines()
        if not lines or lines[0] != f"{MANIFEST_MAGIC} v{MANIFEST_VERSION}":
            raise FormatError("not a version-1 dataset manifest", 0)
        header: dict[str, str] = {}
        i = 1
        while i < len(lines) and lines[i] != "---":
            key, _, value = lines[i].partition(" = ")
            header[key.strip()] = value.strip()
            i += 1
        if i >= len(lines) - 1:
            raise FormatError("manifest has no entry table")
        entries = []
        for line in lines[i + 2:]:
            path, label, split, tag, row, col = line.split("\t")
            entries.append(ManifestEntry(path, Label[label], Split(split), tag, int(row), int(col)))
        seed = int(header.pop("seed"))
        mean = float(header.pop("norm_mean"))
        std = float(header.pop("norm_std"))
        return cls(entries, seed, mean, std, header)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _pick_verify(images: list[SourceImage], count: int, rng: np.random.Generator) -> list[SourceImage]:
    """Seeded choice of ``count`` images covering every tag at least once."""
    by_tag: dict[str, list[SourceImage]] = {}
    for img in images:
        by_tag.setdefault(img.tag, []).append(img)
    tags = sorted(by_tag)
    if len(tags) > count:
        raise DatasetError(f"{len(tags)} operator tags cannot be covered by {count} verification images")
    chosen = [by_tag[t][int(rng.integers(len(by_tag[t])))] for t in tags]
    taken = {img.path for img in chosen}
    rest = [img for img in images if img.path not in taken]
    extra = rng.choice(len(rest), size=count - len(chosen), replace=False)
    chosen += [rest[int(i)] for i in sorted(extra)]
    return chosen


def build_manifest(images: Iterable[SourceImage], seed: int, verify_images_per_class: int = 40,
                   train_blocks_total: int = 60000, store: "BlockStore | None" = None,
                   settings: dict | None = None) -> DatasetManifest:
    """Split a corpus into whole-image VERIFY1, class-balanced TRAIN blocks, and VERIFY2.

    VERIFY1 takes ``verify_images_per_class`` whole images per class, covering
    every operator tag. TRAIN samples ``train_blocks_total / 2`` blocks per class
    without replacement from the remaining images; VERIFY2 gets the rest.
    With a ``store``, normalization statistics are computed over TRAIN.
    """
    images = sorted(images, key=lambda s: s.path)
    if len({s.path for s in images}) != len(images):
        raise DatasetError("duplicate image paths in corpus")
    if train_blocks_total % 2:
        raise DatasetError("train_blocks_total must be even for a 1:1 class ratio")
    per_class_train = train_blocks_total // 2
    rng = np.random.default_rng(seed)

    split_of: dict[tuple[str, int, int], Split] = {}
    for label in Label:
        members = [s for s in images if s.label is label]
        if len(members) <= verify_images_per_class:
            raise DatasetError(f"class {label.name} has {len(members)} images; "
                               f"need more than {verify_images_per_class}")
        verify = {s.path for s in _pick_verify(members, verify_images_per_class, rng)}
        pool = []
        for s in members:
            for r in range(s.rows):
                for c in range(s.cols):
                    key = (s.path, r * BLOCK_SIZE, c * BLOCK_SIZE)
                    if s.path in verify:
                        split_of[key] = Split.VERIFY1
                    else:
                        pool.append(key)
        if len(pool) < per_class_train:
            raise DatasetError(f"class {label.name}: {len(pool)} blocks outside VERIFY1, "
                               f"{per_class_train} needed for TRAIN")
        train_idx = set(rng.choice(len(pool), size=per_class_train, replace=False).tolist())
        for i, key in enumerate(pool):
            split_of[key] = Split.TRAIN if i in train_idx else Split.VERIFY2

    entries = []
    for s in images:
        for r in range(s.rows):
            for c in range(s.cols):
                key = (s.path, r * BLOCK_SIZE, c * BLOCK_SIZE)
                entries.append(ManifestEntry(s.path, s.label, split_of[key], s.tag, key[1], key[2]))

    meta = {"block_size": BLOCK_SIZE, "log_base": "e", "epsilon": repr(LOG_EPSILON),
            "verify_images_per_class": verify_images_per_class,
            "train_blocks_total": train_blocks_total}
    meta.update(settings or {})
    manifest = DatasetManifest(entries, int(seed), settings=meta)
    if store is not None:
        manifest = with_norm_stats(manifest, store)
    return manifest


def with_norm_stats(manifest: DatasetManifest, store: "BlockStore") -> DatasetManifest:
    """Copy of ``manifest`` carrying mean/std over all TRAIN block pixels."""
    total = 0.0
    total_sq = 0.0
    count = 0
    for e in manifest.split(Split.TRAIN):
        px = store.block(e.path, e.row, e.col).astype(np.float64)
        total += px.sum()
        count += px.size
    if count == 0:
        raise DatasetError("TRAIN split is empty")
    mean = total / count
    for e in manifest.split(Split.TRAIN):
        px = store.block(e.path, e.row, e.col).astype(np.float64)
        total_sq += ((px - mean) ** 2).sum()
    std = math.sqrt(total_sq / count)
    if not std > 0:
        raise DatasetError("TRAIN blocks have zero variance")
    return replace(manifest, norm_mean=float(mean), norm_std=float(std))


def normalize_array(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    if not std > 0 or not math.isfinite(std):
        raise DatasetError(f"degenerate normalization std {std}")
    return ((np.asarray(x, dtype=np.float32) - np.float32(mean)) / np.float32(std)).astype(np.float32)


def normalize_blocks(blocks: Sequence[LogLumBlock], manifest: DatasetManifest) -> list[LogLumBlock]:
    """Standardize blocks with the TRAIN statistics stored in the manifest."""
    return [
        replace(b, pixels=normalize_array(b.pixels, manifest.norm_mean, manifest.norm_std), normalized=True)
        for b in blocks
    ]


# ---------------------------------------------------------------------------
# block store
# ---------------------------------------------------------------------------

def write_shard(path, grid: np.ndarray) -> None:
    """Write a (rows, cols, 64, 64) tile grid: magic, version, dims, little-endian f32."""
    rows, cols, bh, bw = grid.shape
    header = SHARD_MAGIC + struct.pack("<5I", SHARD_VERSION, rows, cols, bh, bw)
    Path(path).write_bytes(header + np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_shard(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:8] != SHARD_MAGIC:
        raise FormatError(f"{path}: not a block shard", 0)
    version, rows, cols, bh, bw = struct.unpack_from("<5I", buf, 8)
    if version != SHARD_VERSION:
        raise FormatError(f"{path}: unsupported shard version {version}", 8)
    count = rows * cols * bh * bw
    if len(buf) - 28 != 4 * count:
        raise FormatError(f"{path}: shard payload size mismatch", 28)
    return np.frombuffer(buf, "<f4", count, 28).reshape(rows, cols, bh, bw).astype(np.float32)


class BlockStore:
    """Tile grids keyed by source path, optionally backed by a shard directory."""

    def __init__(self, grids: dict[str, np.ndarray] | None = None, root=None):
        self.grids = dict(grids or {})
        self.root = Path(root) if root is not None else None
        self._index: dict[str, str] = {}
        if self.root is not None and (self.root / "index.json").exists():
            self._index = json.loads((self.root / "index.json").read_text(encoding="utf-8"))

    def add(self, path: str, grid: np.ndarray) -> None:
        self.grids[path] = grid

    def grid(self, path: str) -> np.ndarray:
        if path not in self.grids:
            if path not in self._index:
                raise KeyError(f"no blocks stored for {path!r}")
            self.grids[path] = read_shard(self.root / self._index[path])
        return self.grids[path]

    def block(self, path: str, row: int, col: int) -> np.ndarray:
        return self.grid(path)[row // BLOCK_SIZE, col // BLOCK_SIZE]

    def stack(self, entries: Sequence[ManifestEntry]) -> np.ndarray:
        """(n, 64, 64) array of the listed blocks, in entry order."""
        out = np.empty((len(entries), BLOCK_SIZE, BLOCK_SIZE), dtype=np.float32)
        for i, e in enumerate(entries):
            out[i] = self.block(e.path, e.row, e.col)
        return out

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        index = {}
        for i, path in enumerate(sorted(self.grids)):
            name = f"shard_{i:05d}.blk"
            write_shard(root / name, self.grids[path])
            index[path] = name
        (root / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True), encoding="utf-8")
        self.root, self._index = root, index

    @classmethod
    def open(cls, root) -> "BlockStore":
        root = Path(root)
        if not (root / "index.json").exists():
            raise FormatError(f"{root}: no block store index")
        return cls(root=root)

    def paths(self) -> list[str]:
        return sorted(set(self.grids) | set(self._index))
