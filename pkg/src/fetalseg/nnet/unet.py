"""Small 2-D U-net assembled from the explicit-gradient layer kernels.

Architecture (depth D, base channels B): D encoder levels of two
(3x3 conv + BN + ReLU) stages followed by 2x2 max pooling, a bottleneck
of the same double-conv shape, then D decoder levels of nearest-neighbor
upsampling + a channel-halving 2x2 conv (padding (0,1),(0,1)) + BN + ReLU,
concatenation with the encoder skip (skip channels first), and another
double conv.  The head is a 1x1 conv + BN + channel softmax; the logits
get no ReLU.

Parameter creation order is fixed and doubles as the checkpoint layout and
the RNG draw order for initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm2D,
    Conv2D,
    MaxPool2x2,
    ReLU,
    UpsampleNearest2x2,
    softmax_backward,
    softmax_channels,
)

__all__ = ["UNetConfig", "UNet", "build_unet"]


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    n_classes: int = 8
    depth: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1 or self.in_channels < 1 or self.n_classes < 2:
            raise ValueError("channel counts out of range")

    def level_channels(self, level: int) -> int:
        return self.base_channels * (2**level)


def _he_conv(rng: np.random.Generator, c_out: int, c_in: int, kh: int, kw: int):
    std = np.sqrt(2.0 / (c_in * kh * kw))
    w = (rng.standard_normal((c_out, c_in, kh, kw)) * std).astype(np.float32)
    b = np.zeros(c_out, dtype=np.float32)
    return w, b


def _fresh_bn(channels: int) -> BatchNorm2D:
    return BatchNorm2D(
        gamma=np.ones(channels, dtype=np.float32),
        beta=np.zeros(channels, dtype=np.float32),
        running_mean=np.zeros(channels, dtype=np.float32),
        running_var=np.ones(channels, dtype=np.float32),
    )


class UNet:
    def __init__(self, config: UNetConfig, rng: np.random.Generator):
        self.config = config
        self._named: list[tuple[str, object]] = []
        self.blocks: dict[str, list] = {}

        c = config.in_channels
        for lvl in range(config.depth):
            c = self._add_double_conv(f"enc{lvl}", rng, c, config.level_channels(lvl))
        c = self._add_double_conv("bottleneck", rng, c, config.level_channels(config.depth))

        self.pools = [MaxPool2x2() for _ in range(config.depth)]
        self.upsamples = [UpsampleNearest2x2() for _ in range(config.depth)]
        self.upconvs: dict[int, list] = {}
        for lvl in reversed(range(config.depth)):
            ch = config.level_channels(lvl)
            w, b = _he_conv(rng, ch, c, 2, 2)
            conv = Conv2D(w, b, pad=((0, 1), (0, 1)))
            bn = _fresh_bn(ch)
            self.upconvs[lvl] = [conv, bn, ReLU()]
            self._named.append((f"up{lvl}.conv", conv))
            self._named.append((f"up{lvl}.bn", bn))
            c = self._add_double_conv(f"dec{lvl}", rng, 2 * ch, ch)

        w, b = _he_conv(rng, config.n_classes, c, 1, 1)
        self.head_conv = Conv2D(w, b, pad=((0, 0), (0, 0)))
        self.head_bn = _fresh_bn(config.n_classes)
        self._named.append(("head.conv", self.head_conv))
        self._named.append(("head.bn", self.head_bn))
        self._probs: np.ndarray | None = None

    def _add_double_conv(self, name, rng, c_in, c_out) -> int:
        seq = []
        for stage, ci in ((1, c_in), (2, c_out)):
            w, b = _he_conv(rng, c_out, ci, 3, 3)
            conv = Conv2D(w, b, pad=((1, 1), (1, 1)))
            bn = _fresh_bn(c_out)
            seq += [conv, bn, ReLU()]
            self._named.append((f"{name}.conv{stage}", conv))
            self._named.append((f"{name}.bn{stage}", bn))
        self.blocks[name] = seq
        return c_out

    # ---- execution ----

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        """Map (N, C_in, H, W) to per-class probabilities (N, K, H, W)."""
        div = 2**self.config.depth
        if x.shape[2] % div or x.shape[3] % div:
            raise ValueError(
                f"spatial dims {x.shape[2]}x{x.shape[3]} must be divisible by {div}"
            )
        h = x
        skips = []
        for lvl in range(self.config.depth):
            for layer in self.blocks[f"enc{lvl}"]:
                h = layer.forward(h, training)
            skips.append(h)
            h = self.pools[lvl].forward(h, training)
        for layer in self.blocks["bottleneck"]:
            h = layer.forward(h, training)
        self._skip_channels = [s.shape[1] for s in skips]
        for lvl in reversed(range(self.config.depth)):
            h = self.upsamples[lvl].forward(h, training)
            for layer in self.upconvs[lvl]:
                h = layer.forward(h, training)
            h = np.concatenate([skips[lvl], h], axis=1)
            for layer in self.blocks[f"dec{lvl}"]:
                h = layer.forward(h, training)
        h = self.head_conv.forward(h, training)
        h = self.head_bn.forward(h, training)
        probs = softmax_channels(h)
        self._probs = probs
        return probs

    def backward(self, gprobs: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(probs); fills every layer's grads and
        returns d(loss)/d(input)."""
        if self._probs is None:
            raise RuntimeError("backward requires a prior forward")
        g = softmax_backward(self._probs, gprobs)
        g = self.head_bn.backward(g)
        g = self.head_conv.backward(g)
        gskips: list[np.ndarray | None] = [None] * self.config.depth
        for lvl in range(self.config.depth):
            for layer in reversed(self.blocks[f"dec{lvl}"]):
                g = layer.backward(g)
            ch = self._skip_channels[lvl]
            gskips[lvl] = g[:, :ch]
            g = g[:, ch:]
            for layer in reversed(self.upconvs[lvl]):
                g = layer.backward(g)
            g = self.upsamples[lvl].backward(g)
        for layer in reversed(self.blocks["bottleneck"]):
            g = layer.backward(g)
        for lvl in reversed(range(self.config.depth)):
            g = self.pools[lvl].backward(g)
            g = g + gskips[lvl]
            for layer in reversed(self.blocks[f"enc{lvl}"]):
                g = layer.backward(g)
        self._probs = None
        return g

    # ---- parameter access ----

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for lname, layer in self._named:
            for pname, arr in layer.params():
                out.append((f"{lname}.{pname}", arr))
        return out

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for lname, layer in self._named:
            for pname, arr in layer.grads():
                out.append((f"{lname}.{pname}", arr))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for lname, layer in self._named:
            if isinstance(layer, BatchNorm2D):
                for bname, arr in layer.buffers():
                    out.append((f"{lname}.{bname}", arr))
        return out

    def parameters(self) -> list[np.ndarray]:
        return [arr for _, arr in self.named_parameters()]

    def grads(self) -> list[np.ndarray]:
        return [arr for _, arr in self.named_grads()]

    def param_count(self) -> int:
        return sum(arr.size for arr in self.parameters())

    def astype(self, dtype) -> "UNet":
        """Convert parameters, grads, and buffers in place (for f64 checks)."""
        for _, layer in self._named:
            if isinstance(layer, Conv2D):
                layer.weight = layer.weight.astype(dtype)
                layer.bias = layer.bias.astype(dtype)
                layer.grad_weight = layer.grad_weight.astype(dtype)
                layer.grad_bias = layer.grad_bias.astype(dtype)
            elif isinstance(layer, BatchNorm2D):
                layer.gamma = layer.gamma.astype(dtype)
                layer.beta = layer.beta.astype(dtype)
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
                layer.grad_gamma = layer.grad_gamma.astype(dtype)
                layer.grad_beta = layer.grad_beta.astype(dtype)
        return self

    def load_named_arrays(self, params: dict, buffers: dict) -> None:
        """Copy values into existing arrays; shapes must match exactly."""
        for name, arr in self.named_parameters():
            src = params[name]
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src
        for name, arr in self.named_buffers():
            src = buffers[name]
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src


def build_unet(config: UNetConfig, rng: np.random.Generator) -> UNet:
    return UNet(config, rng)
