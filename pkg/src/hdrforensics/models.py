"""The two block classifiers and their training loop.

PLAIN is a VGG-style stack (three conv-conv-pool stages, three dense
layers); RESIDUAL replaces the convolutions with residual blocks behind a
large-kernel stem and an overlapping average pool, and ends in global
average pooling. Both map a (1, 64, 64) block to two logits, index 0 for
mHDR and index 1 for iHDR.
"""

from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import BLOCK_SIZE, BlockStore, DatasetManifest, Label, LogLumBlock, Split, normalize_array
from .nn import functional as F
from .nn.checkpoint import decode_checkpoint, encode_checkpoint
from .nn.layers import (AvgPool, BatchNorm, Conv2d, Dense, Dropout, Flatten, GlobalAvgPool, MaxPool, Network,
                        ReLU, ResidualBlock, named_buffers, named_params)
from .nn.optim import Adam, NumericalError

log = logging.getLogger(__name__)


class Architecture(str, enum.Enum):
    PLAIN = "PLAIN"
    RESIDUAL = "RESIDUAL"


@dataclass(frozen=True)
class ModelSpec:
    architecture: Architecture = Architecture.PLAIN
    widths: tuple[int, int, int] = (64, 128, 256)
    dense_units: int = 512
    dropout: float = 0.5
    stem_channels: int = 32
    stem_kernel: int = 7
    blocks_per_stage: int = 2

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{**d, "widths": tuple(d["widths"])})


def _plain_layers(spec: ModelSpec) -> list:
    layers = []
    cin = 1
    for width in spec.widths:
        for _ in range(2):
            # conv -> ReLU -> BN ordering per layer
            layers += [Conv2d(cin, width, 3, 1, 1), ReLU(), BatchNorm(width)]
            cin = width
        layers.append(MaxPool(2, 2))
    side = BLOCK_SIZE // 2 ** len(spec.widths)
    flat = cin * side * side
    d = spec.dense_units
    layers += [Flatten(), Dense(flat, d), ReLU(), Dropout(spec.dropout),
               Dense(d, d), ReLU(), Dropout(spec.dropout), Dense(d, 2)]
    return layers


def _residual_layers(spec: ModelSpec) -> list:
    s = spec.stem_channels
    layers = [Conv2d(1, s, spec.stem_kernel, 1, spec.stem_kernel // 2), BatchNorm(s), ReLU(), AvgPool(3, 2, 1)]
    cin = s
    for stage, width in enumerate(spec.widths):
        for i in range(spec.blocks_per_stage):
            stride = 2 if (stage > 0 and i == 0) else 1
            layers.append(ResidualBlock(cin, width, stride))
            cin = width
    layers += [GlobalAvgPool(), Dense(cin, 2)]
    return layers


HEAD_INIT_SCALE = 0.01


def build_model(spec: ModelSpec = ModelSpec(), seed: int = 0) -> Network:
    """Network with He-normal weights, zero biases, BN gamma 1 / beta 0.

    The output layer's He draw is scaled by ``HEAD_INIT_SCALE`` so the
    untrained network predicts close to 50/50.
    """
    layers = _plain_layers(spec) if spec.architecture is Architecture.PLAIN else _residual_layers(spec)
    net = Network(layers)
    layers[0].skip_input_grad = True
    rng = np.random.default_rng(seed)
    for _, layer, key in named_params(net):
        if key != "weight":
            continue
        w = layer.params[key]
        fan_in = int(np.prod(w.shape[1:]))
        scale = math.sqrt(2.0 / fan_in) * (HEAD_INIT_SCALE if layer is layers[-1] else 1.0)
        layer.params[key] = (rng.standard_normal(w.shape) * scale).astype(np.float32)
    net.output_shape((1, BLOCK_SIZE, BLOCK_SIZE))
    return net


# ---------------------------------------------------------------------------
# classifier wrapper
# ---------------------------------------------------------------------------

class Classifier:
    """A network plus the normalization statistics its inputs must carry."""

    def __init__(self, spec: ModelSpec, net: Network, norm_mean: float = 0.0, norm_std: float = 1.0,
                 input_mode: str = "log"):
        self.spec, self.net = spec, net
        self.norm_mean, self.norm_std, self.input_mode = float(norm_mean), float(norm_std), input_mode

    @classmethod
    def create(cls, spec: ModelSpec = ModelSpec(), seed: int = 0, **kw) -> "Classifier":
        return cls(spec, build_model(spec, seed), **kw)

    def normalize(self, pixels: np.ndarray) -> np.ndarray:
        return normalize_array(pixels, self.norm_mean, self.norm_std)

    def logits(self, x: np.ndarray, batch: int = 128) -> np.ndarray:
        """Eval-mode logits for normalized blocks shaped (n, 64, 64) or (n, 1, 64, 64)."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 3:
            x = x[:, None]
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains NaN or infinite values")
        out = [self.net.forward(x[i:i + batch], train=False) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, 2), dtype=np.float32)

    def predict_proba(self, x: np.ndarray, batch: int = 128) -> np.ndarray:
        return F.softmax(self.logits(x, batch).astype(np.float64))

    def predict_block(self, block: LogLumBlock) -> tuple[float, float]:
        """(p_mhdr, p_ihdr) for one normalized block."""
        if not block.normalized:
            raise ValueError("block is not normalized; apply normalize_blocks or Classifier.normalize first")
        p = self.predict_proba(block.pixels[None])[0]
        return float(p[0]), float(p[1])

    # -- persistence -----------------------------------------------------

    def state_tensors(self) -> list[tuple[str, str, np.ndarray]]:
        out = [(f"{name}.{key}", layer.kind, layer.params[key]) for name, layer, key in named_params(self.net)]
        out += [(f"{name}.{key}", "buffer", layer.buffers[key]) for name, layer, key in named_buffers(self.net)]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, layer, key in named_params(self.net):
            layer.params[key] = tensors[f"{name}.{key}"].astype(np.float32).reshape(layer.params[key].shape)
        for name, layer, key in named_buffers(self.net):
            layer.buffers[key][...] = tensors[f"{name}.{key}"]

    def meta(self) -> dict:
        return {"spec": self.spec.to_dict(), "norm_mean": self.norm_mean, "norm_std": self.norm_std,
                "input_mode": self.input_mode, "layers": self.net.describe()["layers"]}

    def to_bytes(self, extra_meta: dict | None = None, optimizer: Adam | None = None) -> bytes:
        tensors = self.state_tensors()
        if optimizer is not None:
            tensors += [(f"adam/{k}", "adam", v) for k, v in optimizer.state().items()]
        meta = self.meta()
        meta.update(extra_meta or {})
        return encode_checkpoint(meta, tensors)

    def save(self, path, **kw) -> None:
        Path(path).write_bytes(self.to_bytes(**kw))

    @classmethod
    def from_bytes(cls, buf: bytes) -> tuple["Classifier", dict, dict]:
        """(classifier, meta, optimizer state) from checkpoint bytes."""
        meta, tensors = decode_checkpoint(buf)
        spec = ModelSpec.from_dict(meta["spec"])
        clf = cls(spec, build_model(spec, 0), meta["norm_mean"], meta["norm_std"], meta.get("input_mode", "log"))
        table = {name: arr for name, _, arr in tensors}
        clf.load_state(table)
        opt_state = {name[5:]: arr for name, arr in table.items() if name.startswith("adam/")}
        return clf, meta, opt_state

    @classmethod
    def load(cls, path) -> "Classifier":
        return cls.from_bytes(Path(path).read_bytes())[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 1
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 2:
            raise ValueError("batch must be >= 2 (batch norm)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    verify_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,train_acc,verify_acc"]
        for i, (l, a, v) in enumerate(zip(self.train_loss, self.train_acc, self.verify_acc)):
            rows.append(f"{i + 1},{float(l)!r},{float(a)!r},{float(v)!r}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        h = cls()
        for line in text.strip().splitlines()[1:]:
            _, l, a, v = line.split(",")
            h.train_loss.append(float(l))
            h.train_acc.append(float(a))
            h.verify_acc.append(float(v))
        return h


class TrainingAborted(NumericalError):
    def __init__(self, message: str, last_good: bytes | None):
        super().__init__(message)
        self.last_good = last_good


def _grads_and_params(net: Network):
    params, grads = {}, {}
    for name, layer, key in named_params(net):
        params[f"{name}.{key}"] = layer.params[key]
        grads[f"{name}.{key}"] = layer.grads[key]
    return params, grads


def fit(clf: Classifier, x: np.ndarray, y: np.ndarray, config: TrainConfig,
        verify: tuple[np.ndarray, np.ndarray] | None = None, history: TrainHistory | None = None,
        optimizer: Adam | None = None, start_epoch: int = 0, on_epoch=None):
    """Train on normalized blocks ``x`` (n, 64, 64) with integer labels ``y``.

    Epoch ``e`` shuffles with ``default_rng([seed, e])`` and draws dropout
    masks from ``default_rng([seed, e, 1])``, so resuming at an epoch
    boundary replays an uninterrupted run exactly. Returns
    ``(best_state_bytes, history, optimizer)``; the best state is the one with
    the highest verification accuracy (the last one without a verify set).
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[:, None]
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty training set")
    history = history or TrainHistory()
    optimizer = optimizer or Adam(lr=config.lr)
    net = clf.net
    best_acc = max((v for v in history.verify_acc if not math.isnan(v)), default=-1.0)
    best_state = None
    last_good = clf.to_bytes()
    steps = 0

    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(x))
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        loss_sum = 0.0
        correct = 0
        seen = 0
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            if len(idx) < 2:
                continue
            logits = net.forward(x[idx], train=True, rng=drop_rng)
            loss, dlogits = F.softmax_cross_entropy(logits.astype(np.float64), y[idx])
            if not math.isfinite(loss):
                raise TrainingAborted(f"non-finite loss at epoch {epoch + 1}, batch starting {start}", last_good)
            net.backward(dlogits.astype(np.float32))
            params, grads = _grads_and_params(net)
            try:
                optimizer.step(params, grads)
            except NumericalError as exc:
                raise TrainingAborted(f"epoch {epoch + 1}: {exc}", last_good) from exc
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
            seen += len(idx)
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        history.train_loss.append(loss_sum / max(seen, 1))
        history.train_acc.append(correct / max(seen, 1))
        evaluate_now = verify is not None and (
            (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs)
        if evaluate_now:
            vx, vy = verify
            acc = float((clf.logits(vx).argmax(axis=1) == vy).mean())
        else:
            acc = float("nan")
        history.verify_acc.append(acc)
        last_good = clf.to_bytes()
        if verify is None or (evaluate_now and acc > best_acc):
            best_acc = acc
            best_state = last_good
            history.best_epoch = epoch + 1
        log.info("epoch %d loss %.4f train acc %.4f verify acc %.4f", epoch + 1,
                 history.train_loss[-1], history.train_acc[-1], acc)
        if on_epoch is not None:
            on_epoch(epoch + 1, history, optimizer)
        if config.max_steps is not None and steps >= config.max_steps:
            break
    if best_state is None:
        best_state = last_good
    return best_state, history, optimizer


def split_arrays(manifest: DatasetManifest, store: BlockStore, split: Split | str,
                 mean: float | None = None, std: float | None = None):
    """Normalized (x, y) arrays for one split using the manifest's TRAIN statistics."""
    entries = manifest.split(split)
    mean = manifest.norm_mean if mean is None else mean
    std = manifest.norm_std if std is None else std
    x = normalize_array(store.stack(entries), mean, std)
    y = np.array([int(e.label) for e in entries], dtype=np.int64)
    return x, y


def train(clf: Classifier, manifest: DatasetManifest, store: BlockStore, config: TrainConfig, **kw):
    """Train on the manifest's TRAIN split, selecting the best epoch on VERIFY1 block accuracy."""
    counts = manifest.block_counts(Split.TRAIN)
    if counts[Label.MHDR] == 0 or counts[Label.MHDR] != counts[Label.IHDR]:
        raise ValueError(f"TRAIN split must be non-empty and balanced, got {counts}")
    clf.norm_mean, clf.norm_std = manifest.norm_mean, manifest.norm_std
    clf.input_mode = manifest.settings.get("input_mode", clf.input_mode)
    x, y = split_arrays(manifest, store, Split.TRAIN)
    verify = split_arrays(manifest, store, Split.VERIFY1) if manifest.split(Split.VERIFY1) else None
    return fit(clf, x, y, config, verify=verify, **kw)


def shuffled_labels(y: np.ndarray, seed: int) -> np.ndarray:
    """Random 0/1 labels carrying no information about ``y`` (negative control).

    Within every true class, half of the members get each label, so the
    sample correlation between old and new labels is zero rather than merely
    small, and the overall class ratio is kept.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    out = np.empty(len(y), dtype=np.int64)
    for i, c in enumerate(np.unique(y)):
        idx = np.flatnonzero(y == c)
        out[idx] = rng.permutation((np.arange(len(idx)) + i) % 2)
    return out


def copy_classifier(clf: Classifier) -> Classifier:
    return copy.deepcopy(clf)
