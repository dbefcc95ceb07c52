"""defunet: a dual-encoder fusion U-Net on a small numpy autodiff engine."""

from . import ops
from .autodiff import Node, Parameter, Tape, grad_check, registered_ops
from .blocks import (DCRCBlock, InceptionDilationBlock, RecurrentConvUnit,
                     effective_kernel)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DataConfig, RunConfig, TrainConfig, load_run_config
from .data import AugmentConfig, Sample, augment, dilate_mask, split_dataset, synth_dataset
from .losses import dice_coef, dice_loss, iou
from .metrics import MetricsReport, auc_roc, confusion_metrics, evaluate_pair
from .model import DEFUNetModel, ModelConfig, UNetBaseline, build, count_params
from .optim import Adam, EarlyStopper, PlateauScheduler
from .tensor import ConvSpec, ShapeError, default_dtype, precision, set_default_dtype
from .train import evaluate_model, train_model

__version__ = "0.1.0"
