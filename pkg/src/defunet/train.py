"""Training and evaluation loops.

One epoch = shuffled mini-batches through the taped forward/backward and
an Adam step each, then a full eval-mode metrics pass over the train and
validation sets.  The validation dice loss drives both the plateau
scheduler and the early stopper, and the best-so-far model is what lands
in the checkpoint.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import AugmentConfig, batches, stack
from .losses import dice_loss
from .metrics import METRIC_COLUMNS, auc_roc, evaluate_pair, summarize
from .optim import Adam, EarlyStopper, PlateauScheduler

log = logging.getLogger(__name__)

__all__ = ["NumericError", "evaluate_model", "train_model", "LOG_COLUMNS"]

LOG_COLUMNS = ("epoch", "split", "loss") + METRIC_COLUMNS + ("lr",)


class NumericError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def predict_batched(model, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
    """Eval-mode probabilities for a stack of images, in input order."""
    was_training = model.training
    model.eval()
    outs = []
    for start in range(0, images.shape[0], batch_size):
        outs.append(model(images[start : start + batch_size]).data)
    model.train(was_training)
    return np.concatenate(outs, axis=0)


def evaluate_model(model, samples, threshold: float = 0.5, batch_size: int = 4,
                   pooled_auc: bool = False):
    """Per-image metric reports plus their dataset summary.

    Returns ``(summary, reports)``; with ``pooled_auc`` the summary's AUC
    is computed over all pixels of all images at once instead of
    averaging per-image values.
    """
    samples = list(samples)
    images, masks = stack(samples)
    probs = predict_batched(model, images, batch_size)
    reports = [evaluate_pair(masks[i, 0], probs[i, 0], threshold)
               for i in range(len(samples))]
    summary = summarize(reports)
    if pooled_auc:
        summary["AUC"] = auc_roc(masks, probs)
    return summary, reports


def _write_log_row(writer, epoch, split, summary, lr):
    row = {"epoch": epoch, "split": split, "loss": f"{summary['loss']:.6f}", "lr": f"{lr:.3e}"}
    for col in METRIC_COLUMNS:
        value = summary.get(col)
        row[col] = "" if value is None else f"{value:.6f}"
    writer.writerow(row)


def train_model(model, train_samples, val_samples, cfg: TrainConfig,
                aug_cfg: AugmentConfig | None = None, seed: int = 0,
                checkpoint_path=None, log_path=None, quiet: bool = False):
    """Run the full training protocol; returns the history of epoch records.

    ``val_samples`` may be empty, in which case the scheduler and stopper
    monitor the training loss instead.  ``cfg.stop_train_dice`` (when
    positive) ends the run once the eval-mode train dice reaches the
    target, a desk-scale convenience for overfitting runs.
    """
    rng = np.random.default_rng(seed)
    params = model.parameters()
    optimizer = Adam(params, lr=cfg.lr)
    scheduler = PlateauScheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience,
                                 min_lr=cfg.min_lr)
    stopper = EarlyStopper(cfg.early_stop_patience) if cfg.early_stop_patience > 0 else None
    aug = aug_cfg if (aug_cfg is not None and cfg.augment) else None
    history = []
    best_val = np.inf
    best_epoch = 0
    log_file = writer = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            model.train()
            epoch_losses = []
            for images, masks in batches(train_samples, cfg.batch_size, rng, aug):
                with Tape() as tape:
                    probs = model(images)
                    loss = dice_loss(masks, probs)
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise NumericError(f"non-finite loss at epoch {epoch}: {loss_value}")
                grads = tape.backward(loss, params)
                optimizer.step(grads)
                epoch_losses.append(loss_value)
            train_summary, _ = evaluate_model(model, train_samples, cfg.threshold,
                                              pooled_auc=cfg.pooled_auc)
            val_summary = None
            if val_samples:
                val_summary, _ = evaluate_model(model, val_samples, cfg.threshold,
                                                pooled_auc=cfg.pooled_auc)
            monitored = (val_summary or train_summary)["loss"]
            record = {
                "epoch": epoch,
                "lr": optimizer.lr,
                "batch_loss": float(np.mean(epoch_losses)),
                "train": train_summary,
                "val": val_summary,
            }
            history.append(record)
            if writer is not None:
                _write_log_row(writer, epoch, "train", train_summary, optimizer.lr)
                if val_summary is not None:
                    _write_log_row(writer, epoch, "val", val_summary, optimizer.lr)
                log_file.flush()
            if not quiet:
                msg = (f"epoch {epoch:3d}  loss {record['batch_loss']:+.4f}  "
                       f"train dice {train_summary['Dice']:.4f}")
                if val_summary is not None:
                    msg += f"  val dice {val_summary['Dice']:.4f}"
                log.info(msg)
            if monitored < best_val:
                best_val = monitored
                best_epoch = epoch
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model, optimizer, epoch)
            new_lr = scheduler.update(monitored)
            optimizer.lr = new_lr
            if cfg.stop_train_dice > 0 and train_summary["Dice"] >= cfg.stop_train_dice:
                log.info("train dice target %.3f reached at epoch %d",
                         cfg.stop_train_dice, epoch)
                break
            if stopper is not None and stopper.update(monitored):
                log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break
    finally:
        if log_file is not None:
            log_file.close()
    return history
