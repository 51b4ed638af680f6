"""Epoch-driven training loop for the 2-D U-nets.

Shuffling, augmentation, and initialization each pull from their own
counter-based substreams keyed by (purpose, stage, epoch, batch), never
from a shared sequential generator.  Consequently the augmentation arm
has no influence on the draws of the operations it shares with other
arms: disabling the shading augmentation reproduces the flip/rotation
stream of the arm that has it enabled, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..augment import AugmentConfig, SliceDraw, compose_batch
from ..errors import TrainingDivergedError
from ..rng import StreamKey, substream
from ..volume import Slice2D
from .losses import cross_entropy_loss, soft_dice_loss
from .optim import Nadam, NadamConfig
from .unet import UNet, UNetConfig, build_unet

__all__ = ["TrainConfig", "TrainResult", "init_unet", "train_unet", "predict_slices"]

LOSS_NAMES = ("ce", "dice")


@dataclass(frozen=True)
class TrainConfig:
    stage: str  # "icv" | "tissue"; keys the RNG streams
    epochs: int
    batch_size: int
    loss: str  # "ce" | "dice"
    augment: AugmentConfig
    seed: int
    optimizer: NadamConfig = NadamConfig()
    dice_eps: float = 1.0
    divergence_threshold: float = 1e6
    log_draws: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0
    draws: list[list[list[SliceDraw]]] = field(default_factory=list)  # [epoch][batch]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def init_unet(arch: UNetConfig, seed: int, stage: str) -> UNet:
    """Build a U-net whose weights depend only on (seed, stage, arch)."""
    return build_unet(arch, substream(seed, "init", stage))


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def train_unet(
    net: UNet,
    dataset: list[tuple[Slice2D, Slice2D]],
    config: TrainConfig,
    progress=None,
) -> TrainResult:
    """Train in place on (intensity, label) slice pairs.

    Every epoch reshuffles from the ("order", stage, epoch) substream and
    every batch is augmented under the ("augment", stage, epoch, batch)
    stream key.  ``progress``, if given, is called as progress(epoch,
    mean_loss) after each epoch.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    n_classes = net.config.n_classes
    loss_fn = (
        cross_entropy_loss
        if config.loss == "ce"
        else lambda p, y: soft_dice_loss(p, y, eps=config.dice_eps)
    )
    optimizer = Nadam(net.parameters(), config.optimizer)
    result = TrainResult()

    for epoch in range(config.epochs):
        order = substream(config.seed, "order", config.stage, epoch).permutation(
            len(dataset)
        )
        epoch_draws: list[list[SliceDraw]] = []
        batch_losses: list[float] = []
        for b, idx in enumerate(_batches(order, config.batch_size)):
            pairs = [dataset[int(i)] for i in idx]
            key = StreamKey(config.seed).child("augment", config.stage, epoch, b)
            augmented, draws = compose_batch(pairs, config.augment, key)
            x = np.stack([img.data for img, _ in augmented])[:, None, :, :]
            y = np.stack([lab.data for _, lab in augmented]).astype(np.intp)
            if y.max() >= n_classes:
                raise ValueError(
                    f"label {y.max()} out of range for a {n_classes}-class net"
                )
            probs = net.forward(x.astype(np.float32), training=True)
            loss, gprobs = loss_fn(probs, y)
            if not np.isfinite(loss) or abs(loss) > config.divergence_threshold:
                raise TrainingDivergedError(
                    f"loss {loss} at epoch {epoch} batch {b} ({config.stage})"
                )
            net.backward(gprobs)
            optimizer.step(net.grads())
            batch_losses.append(loss)
            result.steps += 1
            if config.log_draws:
                epoch_draws.append(draws)
        result.epoch_losses.append(float(np.mean(batch_losses)))
        if config.log_draws:
            result.draws.append(epoch_draws)
        if progress is not None:
            progress(epoch, result.epoch_losses[-1])
    return result


def predict_slices(net: UNet, slices: list[Slice2D], batch_size: int = 32):
    """Eval-mode forward over normalized slices; returns stacked probabilities."""
    from ..volume import normalize_slice

    outs = []
    for i in range(0, len(slices), batch_size):
        chunk = slices[i : i + batch_size]
        x = np.stack([normalize_slice(s).data for s in chunk])[:, None, :, :]
        outs.append(net.forward(x.astype(np.float32), training=False))
    return np.concatenate(outs, axis=0)
