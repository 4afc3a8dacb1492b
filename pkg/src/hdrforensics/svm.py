"""Linear soft-margin SVM trained by seeded Pegasos with grid search over C.

Features are standardized with training statistics, a constant 1 is
appended so the bias is learned as an ordinary weight, and the returned
weights are the average of the second half of the iterates. Labels follow
:class:`~hdrforensics.dataset.Label`: IHDR is the positive side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Label

C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
CV_FOLDS = 5


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    c: float
    mean: np.ndarray
    std: np.ndarray
    kind: str = ""
    cv_accuracy: dict = field(default_factory=dict)

    @property
    def dims(self) -> int:
        return self.weights.shape[0]

    def decision(self, x: np.ndarray) -> np.ndarray:
        """Signed margins w . standardize(x) + b for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dims:
            raise ValueError(f"model expects {self.dims} features, got {x.shape[1]}")
        return ((x - self.mean) / self.std) @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c, "bias": self.bias,
                "weights": self.weights.tolist(), "mean": self.mean.tolist(), "std": self.std.tolist(),
                "cv_accuracy": {repr(k): v for k, v in self.cv_accuracy.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(np.array(d["weights"], dtype=np.float64), float(d["bias"]), float(d["c"]),
                   np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   d.get("kind", ""), {float(k): v for k, v in d.get("cv_accuracy", {}).items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _signs(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.isin(y, (Label.MHDR, Label.IHDR)).all():
        raise ValueError("labels must be a 1-D array of 0 (MHDR) / 1 (IHDR)")
    return np.where(y == Label.IHDR, 1.0, -1.0)


def standardize_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


def pegasos(x: np.ndarray, y: np.ndarray, lam: float, iterations: int, batch: int,
            rng: np.random.Generator) -> np.ndarray:
    """Mini-batch Pegasos on rows of ``x`` (already augmented) with targets y in {-1, +1}.

    Returns the average of the iterates from the second half of the run.
    """
    n, d = x.shape
    w = np.zeros(d)
    avg = np.zeros(d)
    radius = 1.0 / math.sqrt(lam)
    start = iterations // 2
    k = min(batch, n)
    for t in range(1, iterations + 1):
        idx = rng.integers(0, n, size=k) if k < n else np.arange(n)
        xb, yb = x[idx], y[idx]
        viol = yb * (xb @ w) < 1.0
        eta = 1.0 / (lam * t)
        w *= 1.0 - eta * lam
        if viol.any():
            w += (eta / k) * (yb[viol] @ xb[viol])
        norm = float(np.linalg.norm(w))
        if norm > radius:
            w *= radius / norm
        if t > start:
            avg += w
    return avg / (iterations - start)


def objective(w: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    """lam/2 |w|^2 + mean hinge loss, on augmented rows."""
    return 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - y * (x @ w)).mean())


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def fit_linear(x: np.ndarray, labels, c: float, seed: int = 0, iterations: int = 2000,
               batch: int = 64) -> tuple[np.ndarray, float]:
    """Weights and bias for standardized rows ``x``; lambda = 1 / (C n)."""
    y = _signs(labels)
    lam = 1.0 / (c * x.shape[0])
    w = pegasos(_augment(x), y, lam, iterations, batch, np.random.default_rng(seed))
    return w[:-1], float(w[-1])


def svm_train(features, labels, grid=C_GRID, seed: int = 0, folds: int = CV_FOLDS,
              iterations: int = 2000, batch: int = 64, kind: str = "") -> SvmModel:
    """Grid search over C by ``folds``-fold cross-validated accuracy, then refit on everything.

    Ties in CV accuracy go to the smaller C. Folds come from a seeded
    permutation that ignores labels, so flipping every label yields the
    negated model.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    y = _signs(labels)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with one label per row")
    if min((y > 0).sum(), (y < 0).sum()) < 2:
        raise ValueError("svm_train needs at least two examples of each class")
    if not np.isfinite(x).all():
        raise ValueError("features contain non-finite values")

    n = x.shape[0]
    perm = np.random.default_rng([seed, 1]).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % folds
    scores = {}
    for c in grid:
        correct = 0
        for f in range(folds):
            tr, te = fold_of != f, fold_of == f
            mean, std = standardize_stats(x[tr])
            w, b = fit_linear((x[tr] - mean) / std, labels[tr], c, seed, iterations, batch)
            margin = ((x[te] - mean) / std) @ w + b
            correct += int(((margin > 0) == (y[te] > 0)).sum())
        scores[float(c)] = correct / n
    best = max(scores, key=lambda c: (scores[c], -c))
    mean, std = standardize_stats(x)
    w, b = fit_linear((x - mean) / std, labels, best, seed, iterations, batch)
    return SvmModel(w, b, best, mean, std, kind, scores)


def svm_predict(model: SvmModel, feature) -> tuple[Label, float]:
    """Class and signed margin for one feature vector; margin > 0 means IHDR."""
    margin = float(model.decision(feature)[0])
    return (Label.IHDR if margin > 0 else Label.MHDR), margin


def svm_predict_batch(model: SvmModel, features) -> tuple[np.ndarray, np.ndarray]:
    margin = model.decision(features)
    return (margin > 0).astype(np.int64), margin
