"""Command-line entry points: train, eval, predict, gradcheck, report.

Exit codes: 0 success, 1 usage or config error, 2 data error (unreadable
inputs, bad checkpoints), 3 numeric failure (non-finite loss, gradient
check failure).  All outputs land under the --out directory.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import (CheckpointFormatError, CheckpointIntegrityError,
                         load_checkpoint)
from .config import ConfigError, RunConfig, load_run_config, run_config_to_ini
from .data import (DataError, DatasetManifest, discover_dataset, split_dataset,
                   synth_dataset)
from .gradcheck_suite import run_suite
from .metrics import METRIC_COLUMNS
from .model import build
from .train import NumericError, evaluate_model, predict_batched, train_model

log = logging.getLogger("defunet")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub):
    sub.add_argument("--config", help="INI run configuration")
    sub.add_argument("--data-dir", help="dataset root directory")
    sub.add_argument("--out", help="output directory (default runs/<command>)")
    sub.add_argument("--checkpoint", help="checkpoint file to load")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--synthetic", action="store_true", help="use generated data")
    sub.add_argument("--size", type=int, help="image side length")
    sub.add_argument("--cross", choices=("m2s", "s2m"),
                     help="cross-manufacturer protocol (montgomery/shenzhen)")
    sub.add_argument("--format", choices=("csv", "md"), default="csv",
                     help="table output format")


def build_parser() -> _Parser:
    parser = _Parser(prog="defunet",
                     description="dual-encoder fusion U-Net for lung segmentation")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("train", "train a model and write the best checkpoint"),
        ("eval", "evaluate a checkpoint over a dataset split"),
        ("predict", "segment one image, writing mask and overlay PNGs"),
        ("gradcheck", "run the finite-difference gradient suite"),
        ("report", "collate run summaries into one table"),
    ):
        sub = commands.add_parser(name, help=text)
        _add_common(sub)
        if name == "eval":
            sub.add_argument("--split", choices=("train", "val", "test", "all"),
                             default="test")
            sub.add_argument("--manifest", help="manifest file mapping ids to splits")
        if name == "predict":
            sub.add_argument("--input", required=True, help="input PNG")
            sub.add_argument("--gt", help="ground-truth mask PNG for the overlay")
        if name == "report":
            sub.add_argument("runs_dir", help="directory containing run subdirectories")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.data_dir:
        cfg.data.data_dir = args.data_dir
    if args.synthetic:
        cfg.data.synthetic = True
    if args.size is not None:
        cfg.data.size = args.size
    elif cfg.data.synthetic and not args.config:
        cfg.data.size = 64
    if getattr(args, "cross", None):
        cfg.data.cross = args.cross
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_samples(cfg: RunConfig):
    if cfg.data.synthetic:
        return synth_dataset(cfg.data.synthetic_n, cfg.data.size, cfg.seed)
    if not cfg.data.data_dir:
        raise UsageError("need --data-dir or a synthetic data configuration")
    return discover_dataset(cfg.data.data_dir, cfg.data.size,
                            cfg.data.dilate_radius, cfg.data.dilate_iterations)


def _split_samples(samples, cfg: RunConfig):
    """Returns (manifest, split -> list of samples)."""
    counts = cfg.data.counts
    if cfg.data.synthetic and sum(counts) > len(samples):
        log.info("split counts %s exceed %d synthetic samples; training on all",
                 counts, len(samples))
        counts = (len(samples), 0, 0)
    manifest = split_dataset(samples, counts=counts, seed=cfg.seed,
                             cross=cfg.data.cross, val_fraction=cfg.data.val_fraction)
    by_id = {s.id: s for s in samples}
    groups = {split: [by_id[i] for i in manifest.ids(split)]
              for split in ("train", "val", "test")}
    return manifest, groups


def _write_summary(path, name: str, summary: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run",) + METRIC_COLUMNS)
        writer.writerow([name] + [_fmt_cell(summary.get(col)) for col in METRIC_COLUMNS])


def _fmt_cell(value) -> str:
    return "" if value is None else f"{value:.6f}"


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    samples = _load_samples(cfg)
    manifest, groups = _split_samples(samples, cfg)
    manifest.write(out / "manifest.txt")
    (out / "config.ini").write_text(run_config_to_ini(cfg), encoding="utf-8")
    if not groups["train"]:
        raise DataError("training split is empty")
    model = build(cfg.model, seed=cfg.seed)
    log.info("training %s (%d params) on %d samples, val %d",
             cfg.model.arch, sum(p.data.size for p in model.parameters()),
             len(groups["train"]), len(groups["val"]))
    ckpt_path = out / "model.ckpt"
    history = train_model(
        model, groups["train"], groups["val"], cfg.train,
        aug_cfg=cfg.augment, seed=cfg.seed,
        checkpoint_path=ckpt_path, log_path=out / "metrics.csv",
    )
    best_model, _, best_epoch = load_checkpoint(ckpt_path)
    monitor = groups["val"] or groups["train"]
    summary, _ = evaluate_model(best_model, monitor, cfg.train.threshold,
                                pooled_auc=cfg.train.pooled_auc)
    _write_summary(out / "summary.csv", out.name, summary)
    log.info("best epoch %d: dice %.4f (checkpoint %s)",
             best_epoch, summary["Dice"], ckpt_path)
    print(f"trained {len(history)} epochs; best epoch {best_epoch}; "
          f"dice {summary['Dice']:.4f}; outputs in {out}")
    return EXIT_OK


def _eval_samples(args, cfg: RunConfig):
    samples = _load_samples(cfg)
    if args.split == "all":
        return samples
    if args.manifest:
        manifest = DatasetManifest.read(args.manifest)
        wanted = set(manifest.ids(args.split))
        chosen = [s for s in samples if s.id in wanted]
    else:
        _, groups = _split_samples(samples, cfg)
        chosen = groups[args.split]
        if not chosen and args.split == "test":
            log.info("no test split available; evaluating every sample")
            chosen = samples
    if not chosen:
        raise DataError(f"split {args.split!r} selected no samples")
    return chosen


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("eval requires --checkpoint")
    cfg = _resolve_config(args)
    out = _out_dir(args)
    model, _, _ = load_checkpoint(args.checkpoint)
    cfg.model = model.config
    samples = _eval_samples(args, cfg)
    summary, reports = evaluate_model(model, samples, cfg.train.threshold,
                                      pooled_auc=cfg.train.pooled_auc)
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id",) + METRIC_COLUMNS)
        for sample, report in zip(samples, reports):
            row = report.as_row()
            writer.writerow([sample.id] + [_fmt_cell(row[col]) for col in METRIC_COLUMNS])
    _write_summary(out / "summary.csv", out.name, summary)
    print(f"evaluated {len(samples)} samples ({args.split})")
    for col in METRIC_COLUMNS:
        print(f"  {col:10s} {_fmt_cell(summary.get(col)) or 'n/a'}")
    if cfg.data.cross:
        print(f"  Test Dice/F1 Score: {summary['Dice']:.4f}/{summary['F1 Score']:.4f}")
    return EXIT_OK


def _read_gray_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.float64) / 255.0


def cmd_predict(args) -> int:
    if not args.checkpoint:
        raise UsageError("predict requires --checkpoint")
    out = _out_dir(args)
    model, _, _ = load_checkpoint(args.checkpoint)
    image = _read_gray_png(args.input)
    h, w = image.shape
    div = model.config.divisor()
    pad_h = (-h) % div
    pad_w = (-w) % div
    padded = np.pad(image, ((0, pad_h), (0, pad_w)))
    if pad_h or pad_w:
        log.info("padded %dx%d input to %dx%d (multiple of %d); output cropped back",
                 h, w, h + pad_h, w + pad_w, div)
    x = padded.astype(np.float32)[None, None]
    probs = predict_batched(model, x)[0, 0][:h, :w]
    mask = probs >= 0.5
    stem = Path(args.input).stem
    mask_path = out / f"{stem}_mask.png"
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(mask_path)
    print(f"wrote {mask_path}")
    if args.gt:
        gt = _read_gray_png(args.gt) > 0.5
        if gt.shape != mask.shape:
            raise DataError(f"ground truth {gt.shape} does not match input {mask.shape}")
        overlay = np.zeros((h, w, 3), dtype=np.uint8)
        overlay[gt] = (128, 128, 128)
        overlay[mask] = (255, 0, 0)
        overlay_path = out / f"{stem}_overlay.png"
        Image.fromarray(overlay, mode="RGB").save(overlay_path)
        print(f"wrote {overlay_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok, _ = run_suite(printer=print)
    return EXIT_OK if ok else EXIT_NUMERIC


def _collect_runs(runs_dir: Path):
    rows = []
    for sub in sorted(runs_dir.iterdir()):
        summary = sub / "summary.csv"
        if not sub.is_dir() or not summary.exists():
            continue
        with open(summary, newline="", encoding="utf-8") as fh:
            for record in csv.DictReader(fh):
                rows.append({"run": record.get("run", sub.name),
                             **{c: record.get(c, "") for c in METRIC_COLUMNS}})
    return rows


def cmd_report(args) -> int:
    runs_dir = Path(args.runs_dir)
    if not runs_dir.is_dir():
        raise DataError(f"runs directory not found: {runs_dir}")
    rows = _collect_runs(runs_dir)
    if not rows:
        raise DataError(f"no run summaries under {runs_dir}")
    header = ("run",) + METRIC_COLUMNS
    if args.format == "md":
        print("| " + " | ".join(header) + " |")
        print("|" + "|".join("---" for _ in header) + "|")
        for row in rows:
            print("| " + " | ".join(str(row[c]) for c in header) + " |")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[c] for c in header])
    if args.out:
        out = _out_dir(args)
        with open(out / f"report.{args.format}", "w", newline="", encoding="utf-8") as fh:
            if args.format == "md":
                fh.write("| " + " | ".join(header) + " |\n")
                fh.write("|" + "|".join("---" for _ in header) + "|\n")
                for row in rows:
                    fh.write("| " + " | ".join(str(row[c]) for c in header) + " |\n")
            else:
                writer = csv.writer(fh)
                writer.writerow(header)
                for row in rows:
                    writer.writerow([row[c] for c in header])
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointFormatError, CheckpointIntegrityError,
            FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
