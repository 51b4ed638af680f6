"""Numpy-only 2-D U-net: layers, losses, Nadam, training, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import (
    check_unet_gradients,
    layer_gradient_report,
    max_rel_error,
    numeric_partials,
)
from .losses import cross_entropy_loss, one_hot, soft_dice_loss
from .optim import Nadam, NadamConfig
from .train import TrainConfig, TrainResult, init_unet, predict_slices, train_unet
from .unet import UNet, UNetConfig, build_unet

__all__ = [
    "UNet",
    "UNetConfig",
    "build_unet",
    "Nadam",
    "NadamConfig",
    "one_hot",
    "cross_entropy_loss",
    "soft_dice_loss",
    "TrainConfig",
    "TrainResult",
    "init_unet",
    "train_unet",
    "predict_slices",
    "check_unet_gradients",
    "layer_gradient_report",
    "max_rel_error",
    "numeric_partials",
    "save_checkpoint",
    "load_checkpoint",
]
