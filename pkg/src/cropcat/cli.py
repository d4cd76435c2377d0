"""Command-line front end: generate, import-csv, preprocess, augment, train, evaluate.

Failures print one JSON line to stderr, ``{"error": {"code": N, "kind": ..., "message": ...}}``,
and exit with 1 (usage), 2 (I/O), 3 (data invariant) or 4 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .augment import METHODS, AugConfig, augment_batch
from .preprocess import FilterSpec, preprocess_dataset
from .signal_core import (
    Dataset,
    FormatError,
    Trial,
    atomic_write_bytes,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .trainer import (
    NumericError,
    TrainConfig,
    cross_validate,
    load_model,
    mixing_config,
    save_model,
    score,
)

log = logging.getLogger("cropcat")

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# fixed stream keys so each stage draws from its own generator
STAGE_GENERATE = 0
STAGE_AUGMENT = 1
STAGE_TRAIN = 2
STAGE_SCORE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def _write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _write_manifest(args, config: dict, inputs, outputs, started: float, path=None) -> None:
    out = Path(outputs[0])
    manifest = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "duration_s": time.time() - started,
    }
    _write_json(path or _manifest_path(out), manifest)


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


def _require_parent(path) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    return p


def _validated(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    started = time.time()
    out = _require_parent(args.out)
    if args.classes < 2:
        raise UsageError(f"--classes must be >= 2, got {args.classes}")
    config = {
        "n_per_class": args.per_class,
        "C": args.channels,
        "T": args.timepoints,
        "K": args.classes,
        "class_separation": args.separation,
        "noise_sd": args.noise_sd,
        "sample_rate_hz": args.sample_rate,
        "n_subjects": args.subjects,
    }
    ds = _validated(generate_synthetic, seed=stage_seed(args.seed, STAGE_GENERATE), **config)
    save_dataset(ds, out)
    _write_manifest(args, config, [], [out], started)
    log.info("wrote %d trials to %s", len(ds), out)
    return 0


_CSV_LABEL = re.compile(r"label[_-]?(\d+)", re.IGNORECASE)
_CSV_SUBJECT = re.compile(r"(?:subj|subject)[_-]?(\d+)", re.IGNORECASE)


def cmd_import_csv(args) -> int:
    """One trial per CSV file (C rows x T columns); label and subject come from the filename."""
    started = time.time()
    out = _require_parent(args.out)
    paths = [_require_file(p) for p in args.files]
    trials = []
    for p in paths:
        m = _CSV_LABEL.search(p.name)
        if not m:
            raise UsageError(f"cannot find 'label<k>' in file name {p.name}")
        s = _CSV_SUBJECT.search(p.name)
        data = np.loadtxt(p, delimiter=",", ndmin=2)
        trials.append(Trial(data, int(s.group(1)) if s else 0, int(m.group(1))))
    ds = Dataset(tuple(trials), args.classes, args.sample_rate)
    save_dataset(ds, out)
    _write_manifest(args, {"K": args.classes, "sample_rate_hz": args.sample_rate}, paths, [out], started)
    return 0


def cmd_preprocess(args) -> int:
    started = time.time()
    src = _require_file(args.inp)
    out = _require_parent(args.out)
    if not 0 < args.alpha < 1 or not args.eps > 0:
        raise UsageError("--alpha must lie in (0, 1) and --eps must be positive")
    ds = load_dataset(src)
    spec = _validated(FilterSpec, ds.sample_rate_hz, args.cutoff, args.order)
    result = preprocess_dataset(ds, spec, args.alpha, args.eps)
    save_dataset(result, out)
    config = {"cutoff_hz": args.cutoff, "order": args.order, "alpha": args.alpha, "eps": args.eps}
    _write_manifest(args, config, [src], [out], started)
    return 0


def _aug_config(args) -> AugConfig:
    return _validated(
        AugConfig,
        method=args.method,
        lam=args.lam,
        mask_ratio=args.mask_ratio,
        noise_scale=args.noise_scale,
        seed=args.seed,
    )


def cmd_augment(args) -> int:
    started = time.time()
    src = _require_file(args.inp)
    out = _require_parent(args.out)
    prov_path = _require_parent(args.emit_provenance) if args.emit_provenance else None
    aug = _aug_config(args)
    if args.batch < 1:
        raise UsageError("--batch must be >= 1")
    ds = load_dataset(src)
    rng = np.random.default_rng(stage_seed(args.seed, STAGE_AUGMENT))

    trials, lines = [], []
    for start in range(0, len(ds), args.batch):
        chunk = list(ds.trials[start : start + args.batch])
        for i, (base, pair) in enumerate(zip(chunk, augment_batch(chunk, aug, ds.num_classes, rng))):
            trials.append(Trial(pair.data, base.subject_id, base.label))
            rec = {
                "base_index": start + i,
                "material_index": None,
                "axis": None,
                "window_start": None,
                "window_end": None,
                "realized_ratio": None,
                "probs": pair.label.probs.tolist(),
            }
            if pair.provenance is not None:
                rec.update(pair.provenance.to_dict())
                rec["base_index"] = start + pair.provenance.base_index
                rec["material_index"] = start + pair.provenance.material_index
            lines.append(json.dumps(rec, sort_keys=True))

    save_dataset(ds.with_trials(trials), out)
    outputs = [out]
    if prov_path is not None:
        atomic_write_bytes(prov_path, ("\n".join(lines) + "\n").encode() if lines else b"")
        outputs.append(prov_path)
    config = {
        "method": aug.method,
        "lambda": aug.lam,
        "mask_ratio": aug.mask_ratio,
        "noise_scale": aug.noise_scale,
        "batch": args.batch,
    }
    _write_manifest(args, config, [src], outputs, started)
    return 0


def _replace_dir(tmp: Path, target: Path) -> None:
    backup = None
    if target.exists():
        if not target.is_dir():
            raise FileExistsError(f"output path exists and is not a directory: {target}")
        backup = target.with_name(f".{target.name}.old-{os.getpid()}")
        os.replace(target, backup)
    os.replace(tmp, target)
    if backup is not None:
        shutil.rmtree(backup)


def cmd_train(args) -> int:
    started = time.time()
    data_path = _require_file(args.data)
    holdout_path = _require_file(args.holdout) if args.holdout else None
    out = _require_parent(args.out)
    aug = _aug_config(args)
    config = _validated(
        TrainConfig,
        epochs=args.epochs,
        batch_size=args.batch,
        lr0=args.lr,
        eta_min=args.eta_min,
        folds=args.folds,
        aug=aug,
        seed=stage_seed(args.seed, STAGE_TRAIN),
    )
    ds = load_dataset(data_path)
    holdout = load_dataset(holdout_path) if holdout_path else None
    if holdout is not None and holdout.shape != ds.shape:
        raise FormatError(f"shape mismatch: holdout {holdout.shape} vs training {ds.shape}")

    models = cross_validate(ds, config)

    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for f, m in enumerate(models):
            save_model(m, tmp / f"fold_{f:02d}.ccml")
        if holdout is not None:
            metrics = score(
                models, holdout, mixing_config(aug), stage_seed(args.seed, STAGE_SCORE), config.batch_size
            )
            _write_json(tmp / "metrics.json", metrics.to_dict())
        resolved = {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "lr0": config.lr0,
            "eta_min": config.eta_min,
            "folds": config.folds,
            "method": aug.method,
            "lambda": aug.lam,
            "mask_ratio": aug.mask_ratio,
            "noise_scale": aug.noise_scale,
            "best_epochs": [m.best_epoch for m in models],
            "best_losses": [m.best_loss for m in models],
        }
        inputs = [data_path] + ([holdout_path] if holdout_path else [])
        _write_manifest(args, resolved, inputs, [out], started, path=tmp / "manifest.json")
        _replace_dir(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    model_dir = Path(args.models)
    if not model_dir.is_dir():
        raise FileNotFoundError(f"model directory not found: {model_dir}")
    data_path = _require_file(args.data)
    report = _require_parent(args.report)
    mix = _validated(AugConfig, method=args.method, lam=args.lam)
    if mix.method not in ("cropcat_spatial", "cropcat_temporal"):
        raise UsageError("--method for evaluate must be cropcat_spatial or cropcat_temporal")
    files = sorted(model_dir.glob("*.ccml"))
    if not files:
        raise FileNotFoundError(f"no .ccml model files in {model_dir}")
    models = [load_model(p) for p in files]
    ds = load_dataset(data_path)
    F = ds.shape[0] if ds.shape else 0
    for p, m in zip(files, models):
        if m.num_features != F or m.num_classes != ds.num_classes:
            raise FormatError(
                f"shape mismatch: model {p.name} expects K={m.num_classes}, F={m.num_features}; "
                f"data has K={ds.num_classes}, C={F}"
            )
    metrics = score(models, ds, mix, stage_seed(args.seed, STAGE_SCORE), args.batch)
    _write_json(report, metrics.to_dict())
    config = {"method": mix.method, "lambda": mix.lam, "batch": args.batch, "n_models": len(models)}
    _write_manifest(args, config, [data_path] + files, [report], started)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_aug_flags(p, method_required=True):
    p.add_argument("--method", required=method_required, default="none", choices=METHODS)
    p.add_argument("--lambda", dest="lam", type=float, default=0.125, help="CropCat ratio cap (<= 0.5)")
    p.add_argument("--mask-ratio", type=float, default=0.1)
    p.add_argument("--noise-scale", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cropcat", description="CropCat augmentation and training pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--timepoints", type=int, default=500)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--sample-rate", type=float, default=250.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("import-csv", help="pack per-trial CSV files into a dataset")
    p.add_argument("files", nargs="+")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--sample-rate", type=float, default=250.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_csv)

    p = sub.add_parser("preprocess", help="low-pass filter and standardize every trial")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff", type=float, default=38.0)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="augment every trial once")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_aug_flags(p)
    p.add_argument("--batch", type=int, default=64, help="material is drawn from the same batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-provenance", metavar="JSONL")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="k-fold training; writes one model file per fold")
    p.add_argument("--data", required=True)
    p.add_argument("--holdout")
    _add_aug_flags(p)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--eta-min", type=float, default=0.0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a directory of fold models")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--method", default="cropcat_temporal", help="CropCat variant for mixed probes")
    p.add_argument("--lambda", dest="lam", type=float, default=0.125)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _configure_logging():
    level = os.environ.get("CROPCAT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": {"code": code, "kind": kind, "message": message}}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except FormatError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except OSError as exc:
        msg = str(exc) if not getattr(exc, "filename", None) else f"{exc.strerror}: {exc.filename}"
        return _fail(EXIT_IO, "io", msg)
    except (NumericError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", str(exc))


if __name__ == "__main__":
    sys.exit(main())
