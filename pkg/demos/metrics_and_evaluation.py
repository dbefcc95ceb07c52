"""Segmentation metrics on worked examples, plus the run comparison report.

The metric set follows the usual binary-segmentation protocol: Dice and
IoU on thresholded masks, the confusion-matrix family (accuracy,
precision, recall, F1), and threshold-free ROC AUC on the raw
probabilities.  Small hand-checkable arrays make each definition
concrete; the end shows the ``defunet report`` table that compares
training runs.
"""

import contextlib
import io
import os
import tempfile

import numpy as np

from defunet.cli import main
from defunet.losses import dice_coef, dice_loss_value, iou
from defunet.metrics import METRIC_COLUMNS, auc_roc, confusion_metrics, evaluate_pair, summarize

# ---------------------------------------------------------------------------
# 1. overlap scores on a 4-pixel toy: gt marks 2 pixels, prediction hits
#    1 of them and adds nothing else
# ---------------------------------------------------------------------------
gt = np.array([1.0, 1.0, 0.0, 0.0])
pr = np.array([1.0, 0.0, 0.0, 0.0])
print("gt", gt, "pred", pr)
print(f"  dice = 2*1/(2+1) = {dice_coef(gt, pr):.6f}")
print(f"  iou  =   1/(2+1-1) = {iou(gt, pr):.6f}")

# the training loss is the negated smoothed dice, so perfect overlap
# bottoms out at exactly -1
print(f"  dice loss at perfect overlap: {dice_loss_value(gt, gt):.1f}")

# ---------------------------------------------------------------------------
# 2. confusion-matrix family at a 0.5 threshold
# ---------------------------------------------------------------------------
probs = np.array([0.9, 0.4, 0.6, 0.1])   # thresholds to [1, 0, 1, 0]
counts, ac, precision, recall, f1 = confusion_metrics(gt, probs)
print()
print("probabilities", probs, "against gt", gt)
print(f"  counts: tp={counts.tp} fp={counts.fp} fn={counts.fn} tn={counts.tn}")
print(f"  AC {ac:.4f}  Precision {precision:.4f}  Recall {recall:.4f}  F1 {f1:.4f}")

# AUC ranks every positive/negative pixel pair; it ignores the threshold
print(f"  AUC: {auc_roc(gt, probs):.4f}  (3 of 4 pairs ranked correctly -> 0.75)")

# ---------------------------------------------------------------------------
# 3. evaluate_pair bundles everything for one image; summarize averages
#    the per-image reports into the row the CLI logs per epoch
# ---------------------------------------------------------------------------
rng = np.random.default_rng(3)
reports = []
for _ in range(4):
    mask = (rng.random((32, 32)) > 0.7).astype(np.float64)
    noisy = np.clip(mask * 0.55 + rng.random((32, 32)) * 0.55, 0.0, 1.0)
    reports.append(evaluate_pair(mask, noisy))

summary = summarize(reports)
print()
print("metric columns:", METRIC_COLUMNS)
print("mean over 4 noisy images:",
      {k: None if v is None else round(v, 4) for k, v in summary.items()})

# ---------------------------------------------------------------------------
# 4. the report command: one row per run directory, read from summary.csv
# ---------------------------------------------------------------------------
HEADER = "split," + ",".join(METRIC_COLUMNS)
RUNS = {
    "dual_encoder": "test,0.9640,0.9891,0.9312,0.9702,0.9585,0.9643,0.9940",
    "unet_baseline": "test,0.9581,0.9868,0.9205,0.9641,0.9528,0.9584,0.9921",
}

with tempfile.TemporaryDirectory() as tmp:
    for name, row in RUNS.items():
        os.makedirs(os.path.join(tmp, name))
        with open(os.path.join(tmp, name, "summary.csv"), "w") as fh:
            fh.write(HEADER + "\n" + row + "\n")

    print()
    print("defunet report <runs_dir> --format md")
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["report", tmp, "--format", "md"])
    print(buf.getvalue().rstrip())
    print("exit code:", code)
