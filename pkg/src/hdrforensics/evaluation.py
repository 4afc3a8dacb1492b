"""Block accuracy, ROC/AUC, confusion counts and image-level majority voting.

Reports come in two shapes: VERIFY1 gets one row per class with block
accuracy, AUC and the accuracy after majority voting over each image's
blocks; VERIFY2 gets a single pooled block accuracy.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import BlockStore, DatasetManifest, Label, Split, normalize_array
from .features import extract
from .models import Classifier
from .svm import SvmModel


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray  # (k, 2) rows of (fpr, tpr) from (0, 0) to (1, 1)
    auc: float

    def to_csv(self) -> str:
        return "fpr,tpr\n" + "".join(f"{float(f)!r},{float(t)!r}\n" for f, t in self.points)


def roc_auc(scores, labels, positive: int = Label.IHDR) -> RocCurve:
    """ROC from a sweep over the distinct scores, highest first; AUC by trapezoids.

    Tied scores move the curve diagonally, which is what makes the trapezoid
    area equal the Mann-Whitney statistic with ties counted one half. The
    area is accumulated in integers and divided once.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) == positive
    if s.shape != pos.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    if not np.isfinite(s).all():
        raise ValueError("scores contain non-finite values")
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(pos)[last]].astype(np.int64)
    fp = np.r_[0, np.cumsum(~pos)[last]].astype(np.int64)
    twice_area = int(((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])).sum())
    points = np.stack([fp / n_neg, tp / n_pos], axis=1)
    return RocCurve(points, twice_area / (2 * n_pos * n_neg))


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("preds and labels must be non-empty and the same length")
    return float((preds == labels).mean())


def confusion(preds, labels) -> np.ndarray:
    """2x2 counts, rows = true class (MHDR, IHDR), columns = predicted class."""
    preds, labels = np.asarray(preds, dtype=np.int64), np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must be the same length")
    return np.bincount(labels * 2 + preds, minlength=4).reshape(2, 2)


# ---------------------------------------------------------------------------
# majority voting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VoteResult:
    image: str
    predictions: tuple[tuple[int, float], ...]
    votes: tuple[int, int]
    final: Label
    mean_confidence: float
    tie: bool


def majority_vote(block_preds, image: str = "") -> VoteResult:
    """Most votes wins; a tie goes to the class with the larger summed confidence, then to MHDR."""
    preds = tuple((int(c), float(p)) for c, p in block_preds)
    if not preds:
        raise ValueError("majority_vote needs at least one block")
    votes = [0, 0]
    conf = [0.0, 0.0]
    for c, p in preds:
        votes[c] += 1
        conf[c] += p
    tie = votes[0] == votes[1]
    if not tie:
        final = Label.IHDR if votes[1] > votes[0] else Label.MHDR
    else:
        # sum in a fixed order so permuting the input cannot change the outcome
        c0 = float(np.sort([p for c, p in preds if c == 0]).sum())
        c1 = float(np.sort([p for c, p in preds if c == 1]).sum())
        final = Label.IHDR if c1 > c0 else Label.MHDR
    mean_conf = float(np.mean(np.sort([p for _, p in preds])))
    return VoteResult(image, preds, (votes[0], votes[1]), final, mean_conf, tie)


# ---------------------------------------------------------------------------
# scoring models on blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockScores:
    pred: np.ndarray        # predicted class per block
    ihdr_score: np.ndarray  # larger means more iHDR-like (p_ihdr or SVM margin)
    confidence: np.ndarray  # weight used by the vote tie rule


def score_blocks(model, raw_blocks: np.ndarray) -> BlockScores:
    """Score raw (unnormalized) blocks with a CNN classifier or a feature SVM."""
    raw = np.asarray(raw_blocks, dtype=np.float32)
    if isinstance(model, Classifier):
        p = model.predict_proba(model.normalize(raw))
        pred = p.argmax(axis=1)
        return BlockScores(pred, p[:, 1], p.max(axis=1))
    if isinstance(model, SvmModel):
        if not model.kind:
            raise ValueError("SVM model has no feature kind recorded")
        margin = model.decision(extract(model.kind, raw))
        return BlockScores((margin > 0).astype(np.int64), margin, np.abs(margin))
    raise TypeError(f"cannot score blocks with {type(model).__name__}")


def model_id(model_bytes: bytes) -> str:
    """Short content hash used to name report files."""
    return hashlib.sha256(model_bytes).hexdigest()[:12]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    name: str
    blocks: int
    images: int
    block_accuracy: float
    auc: float | None
    mvs_accuracy: float | None

    def table_cell(self) -> str:
        acc = f"{100 * self.block_accuracy:.2f}"
        return acc if self.mvs_accuracy is None else f"{acc}({100 * self.mvs_accuracy:.2f})"


@dataclass
class Report:
    split: Split
    rows: list[ReportRow]
    roc: RocCurve | None = None
    votes: list[VoteResult] = field(default_factory=list)
    confusion: np.ndarray | None = None

    def row(self, name: str) -> ReportRow:
        return next(r for r in self.rows if r.name == name)

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        lines = ["split,class,blocks,images,block_accuracy,auc,mvs_accuracy,table"]
        for r in self.rows:
            lines.append(f"{self.split.value},{r.name},{r.blocks},{r.images},{fmt(r.block_accuracy)},"
                         f"{fmt(r.auc)},{fmt(r.mvs_accuracy)},{r.table_cell()}")
        return "\n".join(lines) + "\n"


def evaluate_verify1(model, manifest: DatasetManifest, store: BlockStore) -> Report:
    """Per-class block accuracy, per-class AUC and majority-vote image accuracy on VERIFY1.

    For the AUC of a class, that class is the positive one and its score is
    the block's score toward it.
    """
    entries = manifest.split(Split.VERIFY1)
    if not entries:
        raise ValueError("manifest has no VERIFY1 blocks")
    labels = np.array([int(e.label) for e in entries], dtype=np.int64)
    sc = score_blocks(model, store.stack(entries))

    per_image: OrderedDict[str, list] = OrderedDict()
    image_label: dict[str, int] = {}
    for e, c, p in zip(entries, sc.pred, sc.confidence):
        per_image.setdefault(e.path, []).append((int(c), float(p)))
        image_label[e.path] = int(e.label)
    votes = [majority_vote(preds, path) for path, preds in per_image.items()]

    rows = []
    for label in (Label.MHDR, Label.IHDR):
        mask = labels == label
        sign = 1.0 if label == Label.IHDR else -1.0
        auc = roc_auc(sign * sc.ihdr_score, labels, positive=label).auc if 0 < mask.sum() < len(labels) else None
        cls_votes = [v for v in votes if image_label[v.image] == label]
        rows.append(ReportRow(label.name, int(mask.sum()), len(cls_votes),
                              accuracy(sc.pred[mask], labels[mask]) if mask.any() else float("nan"), auc,
                              float(np.mean([v.final == label for v in cls_votes])) if cls_votes else None))
    both = len(set(labels.tolist())) == 2
    roc = roc_auc(sc.ihdr_score, labels) if both else None
    rows.append(ReportRow("ALL", len(labels), len(votes), accuracy(sc.pred, labels),
                          roc.auc if roc else None,
                          float(np.mean([v.final == image_label[v.image] for v in votes]))))
    return Report(Split.VERIFY1, rows, roc, votes, confusion(sc.pred, labels))


def evaluate_blocks(model, manifest: DatasetManifest, store: BlockStore, split: Split | str = Split.VERIFY2) -> Report:
    """Single pooled block accuracy over a split (the VERIFY2 report)."""
    split = Split(split)
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no {split.value} blocks")
    labels = np.array([int(e.label) for e in entries], dtype=np.int64)
    sc = score_blocks(model, store.stack(entries))
    roc = roc_auc(sc.ihdr_score, labels) if len(set(labels.tolist())) == 2 else None
    row = ReportRow("ALL", len(labels), len({e.path for e in entries}), accuracy(sc.pred, labels),
                    roc.auc if roc else None, None)
    return Report(split, [row], roc, [], confusion(sc.pred, labels))


def evaluate(model, manifest: DatasetManifest, store: BlockStore, split: Split | str) -> Report:
    split = Split(split)
    if split == Split.VERIFY1:
        return evaluate_verify1(model, manifest, store)
    return evaluate_blocks(model, manifest, store, split)


# ---------------------------------------------------------------------------
# ROC plot
# ---------------------------------------------------------------------------

def roc_svg(curves: dict[str, RocCurve], size: int = 360) -> str:
    """Standalone SVG with one polyline per named curve and the chance diagonal."""
    pad = 40
    span = size - 2 * pad
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

    def xy(f, t):
        return f"{pad + f * span:.2f},{pad + (1 - t) * span:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">',
             f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#444"/>',
             f'<polyline points="{xy(0, 0)} {xy(1, 1)}" fill="none" stroke="#aaa" stroke-dasharray="4 3"/>',
             f'<text x="{size / 2}" y="{size - 10}" text-anchor="middle">false positive rate</text>',
             f'<text x="12" y="{size / 2}" text-anchor="middle" transform="rotate(-90 12 {size / 2})">'
             f'true positive rate</text>']
    for i, (name, roc) in enumerate(curves.items()):
        color = colors[i % len(colors)]
        pts = " ".join(xy(f, t) for f, t in roc.points)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{pad + span - 4}" y="{pad + span - 8 - 14 * i}" text-anchor="end" '
                     f'fill="{color}">{name} (AUC {roc.auc:.4f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(report: Report, out_dir, stem: str) -> list[Path]:
    """Write ``<stem>_report.csv`` plus, when a ROC exists, ``<stem>_roc.csv`` and ``<stem>_roc.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / f"{stem}_report.csv"]
    written[0].write_text(report.to_csv())
    if report.roc is not None:
        written.append(out / f"{stem}_roc.csv")
        written[-1].write_text(report.roc.to_csv())
        written.append(out / f"{stem}_roc.svg")
        written[-1].write_text(roc_svg({"iHDR": report.roc}))
    return written
