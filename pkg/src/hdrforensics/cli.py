"""Command-line entry point: ``hdrforensics <command> [options]``.

Commands: toy, synth, fuse, build, train, eval, features, svm, report.
Options may also come from a flat ``key = value`` file given with
``--config``; flags win over file values. Every command writes the fully
resolved configuration next to its outputs (``config.resolved.txt``) and
keeps timestamps out of everything except the ``run.log`` sidecar.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure during training.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_NAME = "config.resolved.txt"
LOG_NAME = "run.log"

log = logging.getLogger("hdrforensics")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def write_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    from . import __version__

    values = {k: v for k, v in vars(args).items() if k not in ("func", "config", "command")}
    lines = [f"command = {command}", f"version = {__version__}"]
    for key in sorted(values):
        v = values[key]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _start_log(out_dir: Path) -> logging.Handler:
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / LOG_NAME, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_toy(args) -> int:
    from .hdr_io import write_hdr
    from .synthetic import toy_corpus

    out = Path(args.out)
    corpus = toy_corpus(args.seed, args.mhdr, args.per_operator, (args.size, args.size))
    tags = []
    for item in corpus:
        sub = out / ("mhdr" if item.label == 0 else "ihdr")
        sub.mkdir(parents=True, exist_ok=True)
        write_hdr(sub / f"{item.name}.hdr", item.image)
        if item.label == 1:
            tags.append(f"{item.name}.hdr\t{item.tag}")
    (out / "ihdr" / "tags.txt").write_text("\n".join(tags) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus)} images under {out}")
    return EXIT_OK


def _read_tags(path: Path) -> dict[str, str]:
    if not path.exists():
        return {}
    tags = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            name, _, tag = line.partition("\t")
            tags[name] = tag.strip()
    return tags


def cmd_synth(args) -> int:
    from .hdr_io import read_ppm, write_hdr
    from .itmo import ItmoParams, apply_itmo

    src, out = Path(args.ldr_dir), Path(args.out_dir)
    if not src.is_dir():
        raise DataError(f"input directory {src} does not exist")
    params = ItmoParams(operator=args.operator, gamma=args.gamma, l_max=args.l_max,
                        highlight_threshold=args.highlight_threshold, boost=args.boost, sigma_s=args.sigma_s)
    inputs = sorted(p for p in src.iterdir() if p.suffix.lower() == ".ppm")
    if not inputs:
        raise DataError(f"no .ppm files in {src}")
    out.mkdir(parents=True, exist_ok=True)
    targets = [out / f"{p.stem}.hdr" for p in inputs]
    clash = [t.name for t in targets if t.exists()]
    if clash:
        raise DataError(f"output already exists in {out}: {', '.join(clash[:5])}")
    tags = _read_tags(out / "tags.txt")
    for p, t in zip(inputs, targets):
        try:
            ldr = read_ppm(p)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read {p}: {exc}") from exc
        write_hdr(t, apply_itmo(ldr, params))
        tags[t.name] = params.operator.value
    (out / "tags.txt").write_text("".join(f"{k}\t{tags[k]}\n" for k in sorted(tags)), encoding="utf-8")
    print(f"{len(inputs)} images expanded with {params.operator.value} into {out}")
    return EXIT_OK


def read_stack_manifest(path: Path) -> dict[str, list[tuple[float, Path]]]:
    """Lines of ``stack_name exposure_time ldr_path``; paths are relative to the manifest."""
    stacks: dict[str, list[tuple[float, Path]]] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read stack manifest {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{n}: expected 'name exposure_time path'")
        try:
            t = float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{n}: bad exposure time {parts[1]!r}") from exc
        stacks.setdefault(parts[0], []).append((t, path.parent / parts[2]))
    if not stacks:
        raise DataError(f"{path}: no stacks listed")
    return stacks


def cmd_fuse(args) -> int:
    from .dataset import fuse_exposures
    from .hdr_io import read_ppm, write_hdr

    stacks = read_stack_manifest(Path(args.stacks))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, frames in stacks.items():
        target = out / f"{name}.hdr"
        if target.exists():
            raise DataError(f"output already exists: {target}")
        try:
            ldrs = [read_ppm(p) for _, p in frames]
        except (OSError, ValueError) as exc:
            raise DataError(f"stack {name}: {exc}") from exc
        shapes = {img.data.shape for img in ldrs}
        if len(shapes) != 1:
            raise DataError(f"stack {name}: frames have mismatched dimensions {sorted(shapes)}")
        try:
            fused = fuse_exposures(ldrs, [t for t, _ in frames])
        except ValueError as exc:
            raise DataError(f"stack {name}: {exc}") from exc
        write_hdr(target, fused)
    print(f"fused {len(stacks)} stacks into {out}")
    return EXIT_OK


def _hdr_files(d: Path) -> list[Path]:
    if not d.is_dir():
        raise DataError(f"class directory {d} does not exist")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".hdr", ".pfm"))
    if not files:
        raise DataError(f"no .hdr or .pfm images in {d}")
    return files


def cmd_build(args) -> int:
    from .dataset import BlockStore, Label, SourceImage, build_manifest, preprocess, tile_grid
    from .hdr_io import read_hdr

    out = Path(args.out)
    store = BlockStore()
    images = []
    for label, d in ((Label.MHDR, Path(args.mhdr_dir)), (Label.IHDR, Path(args.ihdr_dir))):
        tags = _read_tags(d / "tags.txt")
        for p in _hdr_files(d):
            try:
                img = read_hdr(p)
            except (OSError, ValueError) as exc:
                raise DataError(f"cannot read {p}: {exc}") from exc
            grid = tile_grid(preprocess(img, args.input_mode, args.max_dim, args.epsilon))
            if grid.shape[0] == 0 or grid.shape[1] == 0:
                log.warning("%s is smaller than one block after preprocessing; skipped", p)
                continue
            key = f"{label.name.lower()}/{p.name}"
            tag = "FUSION" if label == Label.MHDR else tags.get(p.name, "UNKNOWN")
            store.add(key, grid)
            images.append(SourceImage(key, label, tag, grid.shape[0], grid.shape[1]))
    settings = {"input_mode": args.input_mode, "max_dim": args.max_dim, "epsilon": repr(args.epsilon),
                "store": "blocks"}
    try:
        manifest = build_manifest(images, args.seed, args.verify_per_class, args.train_blocks, store, settings)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    store.save(out / "blocks")
    manifest.save(out / "manifest.txt")
    for split in ("TRAIN", "VERIFY1", "VERIFY2"):
        c = manifest.block_counts(split)
        print(f"{split}: {c[Label.MHDR]} mHDR blocks, {c[Label.IHDR]} iHDR blocks")
    return EXIT_OK


def _open_manifest(path):
    from .dataset import BlockStore, DatasetManifest

    path = Path(path)
    try:
        manifest = DatasetManifest.load(path)
        store = BlockStore.open(path.parent / manifest.settings.get("store", "blocks"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    return manifest, store


def cmd_train(args) -> int:
    from .dataset import Split
    from .models import (Classifier, ModelSpec, TrainConfig, TrainHistory, TrainingAborted, fit, shuffled_labels,
                         split_arrays)
    from .nn.optim import Adam

    manifest, store = _open_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr, seed=args.seed,
                         eval_every=args.eval_every, max_steps=args.max_steps)
    history, optimizer, start = None, None, 0
    if args.resume:
        try:
            clf, meta, opt_state = Classifier.from_bytes(Path(args.resume).read_bytes())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot resume from {args.resume}: {exc}") from exc
        history = TrainHistory.from_csv(meta["history"])
        history.best_epoch = int(meta.get("best_epoch", -1))
        start = int(meta["epoch"])
        optimizer = Adam(lr=args.lr)
        optimizer.load_state(opt_state)
    else:
        spec = ModelSpec(architecture=args.arch, widths=tuple(args.widths), dense_units=args.dense_units,
                         dropout=args.dropout)
        clf = Classifier.create(spec, args.seed)
    clf.norm_mean, clf.norm_std = manifest.norm_mean, manifest.norm_std
    clf.input_mode = manifest.settings.get("input_mode", "log")
    x, y = split_arrays(manifest, store, Split.TRAIN)
    if args.shuffle_labels:
        y = shuffled_labels(y, args.seed)
    verify = split_arrays(manifest, store, Split.VERIFY1)

    def on_epoch(epoch, hist, opt):
        extra = {"epoch": epoch, "history": hist.to_csv(), "best_epoch": hist.best_epoch}
        (out / "last.ckpt").write_bytes(clf.to_bytes(extra, opt))
        if hist.best_epoch == epoch:
            (out / "best.ckpt").write_bytes(clf.to_bytes({"epoch": epoch}))
        (out / "history.csv").write_text(hist.to_csv(), encoding="utf-8")

    try:
        _, history, _ = fit(clf, x, y, config, verify, history, optimizer, start, on_epoch)
    except TrainingAborted as exc:
        if exc.last_good is not None:
            (out / "last_good.ckpt").write_bytes(exc.last_good)
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not history.verify_acc:
        raise UsageError(f"nothing to do: checkpoint already at epoch {start}, epochs = {args.epochs}")
    print(f"best epoch {history.best_epoch}: VERIFY1 block accuracy "
          f"{max(v for v in history.verify_acc if v == v):.4f}")
    return EXIT_OK


def _load_model(path: Path):
    from .models import Classifier
    from .svm import SvmModel

    try:
        raw = path.read_bytes()
        if raw[:8] == b"HDRFCKPT":
            return Classifier.from_bytes(raw)[0], raw
        return SvmModel.load(path), raw
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc


def cmd_eval(args) -> int:
    from .evaluation import evaluate, model_id, write_report

    manifest, store = _open_manifest(args.manifest)
    model, raw = _load_model(Path(args.model))
    report = evaluate(model, manifest, store, args.split)
    stem = f"{model_id(raw)}_seed{manifest.seed}_{args.split}"
    for p in write_report(report, Path(args.out), stem):
        print(f"wrote {p}")
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_features(args) -> int:
    from .features import extract, save_features

    manifest, store = _open_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in args.splits:
        entries = manifest.split(split)
        if not entries:
            raise DataError(f"split {split} is empty")
        matrix = extract(args.kind, store.stack(entries))
        keys = [(e.path, e.row, e.col, int(e.label)) for e in entries]
        target = out / f"{args.kind.lower()}_{split}.feat"
        save_features(target, args.kind, matrix, keys)
        print(f"wrote {target}: {matrix.shape[0]} rows x {matrix.shape[1]} values")
    return EXIT_OK


def cmd_svm(args) -> int:
    import numpy as np

    from .features import load_features
    from .svm import svm_train

    try:
        kind, matrix, keys = load_features(args.features)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read features {args.features}: {exc}") from exc
    if matrix.shape[1] != kind.dims:
        raise DataError(f"{args.features}: {matrix.shape[1]} values per row, {kind.value} needs {kind.dims}")
    labels = np.array([int(k[3]) for k in keys])
    try:
        model = svm_train(matrix, labels, tuple(args.grid), args.seed, iterations=args.iterations,
                          batch=args.svm_batch, kind=kind.value)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"svm_{kind.value.lower()}.json"
    model.save(target)
    for c, acc in model.cv_accuracy.items():
        print(f"C = {c:g}: cv accuracy {acc:.4f}")
    print(f"chosen C = {model.c:g}; wrote {target}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .evaluation import RocCurve, roc_svg

    rows = ["model,split,class,blocks,images,block_accuracy,auc,mvs_accuracy,table"]
    curves = {}
    for item in args.inputs:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"expected NAME=report.csv, got {item!r}")
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
        if not lines or not lines[0].startswith("split,class"):
            raise DataError(f"{path} is not a report CSV")
        rows += [f"{name},{line}" for line in lines[1:] if line]
        roc_path = path.with_name(path.name.replace("_report.csv", "_roc.csv"))
        if roc_path.exists() and roc_path != path:
            import numpy as np

            pts = np.loadtxt(roc_path, delimiter=",", skiprows=1, ndmin=2)
            area = float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2))
            curves[name] = RocCurve(pts, area)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print("\n".join(rows))
    if curves:
        (out / "comparison_roc.svg").write_text(roc_svg(curves), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hdrforensics", description="Tell fused (mHDR) from inverse-tone-mapped (iHDR) images.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS/OpenMP threads; effective when the CLI starts in a fresh process")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value file; flags override its values")
        p.set_defaults(func=func)
        return p

    p = add("toy", cmd_toy, "generate a synthetic mHDR/iHDR corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mhdr", type=int, default=60, help="number of fused images")
    p.add_argument("--per-operator", type=int, default=15, help="iHDR images per operator")
    p.add_argument("--size", type=int, default=256, help="square image side in pixels")

    from .itmo import Operator

    p = add("synth", cmd_synth, "expand every LDR .ppm in a directory with one iTMO")
    p.add_argument("--ldr-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--operator", required=True, choices=[o.value for o in Operator])
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--l-max", type=float, default=1000.0)
    p.add_argument("--highlight-threshold", type=float, default=0.92)
    p.add_argument("--boost", type=float, default=4.0)
    p.add_argument("--sigma-s", type=float, default=0.6)

    p = add("fuse", cmd_fuse, "fuse exposure stacks listed in a stack manifest")
    p.add_argument("--stacks", required=True, help="text file: stack_name exposure_time ldr.ppm per line")
    p.add_argument("--out-dir", required=True)

    p = add("build", cmd_build, "preprocess, tile and split a corpus into a manifest + block store")
    p.add_argument("--mhdr-dir", required=True)
    p.add_argument("--ihdr-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--verify-per-class", type=int, default=40)
    p.add_argument("--train-blocks", type=int, default=60000)
    p.add_argument("--input-mode", choices=["log", "pixel"], default="log")
    p.add_argument("--max-dim", type=int, default=1024)
    p.add_argument("--epsilon", type=float, default=1e-6)

    p = add("train", cmd_train, "train a block classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", choices=["PLAIN", "RESIDUAL"], default="PLAIN")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--widths", type=_ints, default=[64, 128, 256])
    p.add_argument("--dense-units", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--shuffle-labels", type=int, choices=[0, 1], default=0,
                   help="1 = train on permuted labels (negative control)")
    p.add_argument("--resume", default=None, help="last.ckpt of an earlier run")

    p = add("eval", cmd_eval, "score a checkpoint or SVM model on a split")
    p.add_argument("--model", required=True, help="CNN checkpoint or SVM .json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True, choices=["TRAIN", "VERIFY1", "VERIFY2"])
    p.add_argument("--out", required=True)

    p = add("features", cmd_features, "extract HOG / LBP / SPAM feature matrices")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True, choices=["HOG", "LBP", "SPAM"])
    p.add_argument("--splits", type=lambda s: [v.strip() for v in s.split(",")], default=["TRAIN"])
    p.add_argument("--out", required=True)

    p = add("svm", cmd_svm, "grid-searched linear SVM on a feature matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=_floats, default=[0.01, 0.1, 1.0, 10.0, 100.0])
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--svm-batch", type=int, default=64)

    p = add("report", cmd_report, "merge report CSVs into one comparison table and ROC plot")
    p.add_argument("--inputs", nargs="+", required=True, help="NAME=path/to/..._report.csv")
    p.add_argument("--out", required=True)
    return parser


SEEDED = {"toy", "synth", "build", "train", "svm"}


def _flag_value(argv: list[str], flag: str) -> str | None:
    for i, a in enumerate(argv):
        if a.startswith(flag + "="):
            return a.partition("=")[2]
        if a == flag and i + 1 < len(argv):
            return argv[i + 1]
    return None


def parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in commands), None)
    config = _flag_value(argv, "--config")
    if command is not None and config is not None:
        values = read_config(config)
        sub = commands[command]
        known = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        # file values become defaults (converted by each option's type), so explicit flags still win
        for action in sub._actions:
            if action.dest in values:
                raw = values[action.dest]
                try:
                    value = action.type(raw) if action.type else raw
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"{config}: bad value for {action.dest}: {raw!r}") from exc
                if action.choices is not None and value not in action.choices:
                    raise UsageError(f"{config}: {action.dest} must be one of {', '.join(map(str, action.choices))}")
                sub.set_defaults(**{action.dest: value})
                action.required = False
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required (see --help)")
    if args.command in SEEDED and args.seed is None:
        raise UsageError(f"{args.command}: --seed is required")
    return args


def _output_dir(args) -> Path | None:
    for key in ("out", "out_dir"):
        if getattr(args, key, None):
            return Path(getattr(args, key))
    return None


def _cap_threads(argv: list[str]) -> None:
    """Export thread caps for ``--threads N`` before the parser pulls in numpy."""
    for i, a in enumerate(argv):
        value = a.partition("=")[2] if a.startswith("--threads=") else (
            argv[i + 1] if a == "--threads" and i + 1 < len(argv) else None)
        if value is not None and value.isdigit() and int(value) > 0:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = value
            return


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _cap_threads(argv)
    try:
        args = parse(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    from .nn.optim import NumericalError

    out = _output_dir(args)
    handler = None
    try:
        if out is not None:
            write_config(out, args.command, args)
            handler = _start_log(out)
        log.info("command %s %s", args.command, " ".join(argv))
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
