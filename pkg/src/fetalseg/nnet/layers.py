"""Minimal 2-D layer kernels with explicit forward/backward passes.

Everything is stride-1 NCHW numpy.  Convolutions use the shift-and-matmul
trick: one tensordot per kernel offset, which keeps all heavy lifting in
BLAS without materializing im2col buffers.  Layers cache what backward
needs on the instance, so each layer object is used once per forward pass.
Arrays keep whatever float dtype they arrive in (f32 for training, f64 for
gradient checking).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Conv2D",
    "BatchNorm2D",
    "ReLU",
    "MaxPool2x2",
    "UpsampleNearest2x2",
    "softmax_channels",
    "softmax_backward",
]

Pad2D = tuple[tuple[int, int], tuple[int, int]]


class Conv2D:
    """Stride-1 convolution (cross-correlation) with configurable padding."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, pad: Pad2D):
        if weight.ndim != 4:
            raise ValueError("conv weight must be (out, in, kh, kw)")
        self.weight = weight
        self.bias = bias
        self.pad = pad
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self._x_padded: np.ndarray | None = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grads(self):
        return [("weight", self.grad_weight), ("bias", self.grad_bias)]

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        (pt, pb), (pl, pr) = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        kh, kw = self.weight.shape[2:]
        ho = xp.shape[2] - kh + 1
        wo = xp.shape[3] - kw + 1
        acc = np.zeros((self.weight.shape[0], x.shape[0], ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i : i + ho, j : j + wo]
                acc += np.tensordot(self.weight[:, :, i, j], patch, axes=([1], [1]))
        out = acc.transpose(1, 0, 2, 3).copy()
        out += self.bias.reshape(1, -1, 1, 1)
        self._x_padded = xp
        self._x_shape = x.shape
        return out

    def backward(self, gy: np.ndarray) -> np.ndarray:
        xp = self._x_padded
        kh, kw = self.weight.shape[2:]
        ho, wo = gy.shape[2], gy.shape[3]
        self.grad_bias[...] = gy.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i : i + ho, j : j + wo]
                self.grad_weight[:, :, i, j] = np.tensordot(
                    gy, patch, axes=([0, 2, 3], [0, 2, 3])
                )
                spread = np.tensordot(gy, self.weight[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i : i + ho, j : j + wo] += spread.transpose(0, 3, 1, 2)
        (pt, _), (pl, _) = self.pad
        _, _, h, w = self._x_shape
        self._x_padded = None
        return gxp[:, :, pt : pt + h, pl : pl + w]


class BatchNorm2D:
    """Per-channel batch normalization over (N, H, W).

    Running statistics use momentum 0.9 on the biased batch variance; eval
    mode normalizes with the running estimates.
    """

    def __init__(self, gamma, beta, running_mean, running_var, momentum=0.9, eps=1e-5):
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.momentum = momentum
        self.eps = eps
        self.grad_gamma = np.zeros_like(gamma)
        self.grad_beta = np.zeros_like(beta)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grads(self):
        return [("gamma", self.grad_gamma), ("beta", self.grad_beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mean
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        out = self.gamma.reshape(1, -1, 1, 1) * xhat + self.beta.reshape(1, -1, 1, 1)
        if training:
            self._xhat = xhat
            self._inv_std = inv_std
        else:
            self._xhat = None
        return out

    def backward(self, gy: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        if xhat is None:
            raise RuntimeError("backward requires a training-mode forward")
        m = gy.shape[0] * gy.shape[2] * gy.shape[3]
        self.grad_gamma[...] = (gy * xhat).sum(axis=(0, 2, 3))
        self.grad_beta[...] = gy.sum(axis=(0, 2, 3))
        g = self.gamma.reshape(1, -1, 1, 1)
        inv = self._inv_std.reshape(1, -1, 1, 1)
        gxhat = gy * g
        term_mean = gxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1) / m
        term_var = (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1) / m
        self._xhat = None
        return inv * (gxhat - term_mean - xhat * term_var)


class ReLU:
    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, gy: np.ndarray) -> np.ndarray:
        mask = self._mask
        self._mask = None
        return np.where(mask, gy, gy.dtype.type(0))


class MaxPool2x2:
    """2x2 max pooling, stride 2.  Ties route the gradient to the first
    maximum in row-major window order."""

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        windows = (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        self._argmax = windows.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(windows, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        n, c, h, w = self._in_shape
        gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
        np.put_along_axis(gwin, self._argmax[..., None], gy[..., None], axis=-1)
        self._argmax = None
        return (
            gwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class UpsampleNearest2x2:
    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        self._in_shape = x.shape
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        n, c, h, w = self._in_shape
        return gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def softmax_channels(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the channel axis of NCHW."""
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, gprobs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. softmax input given gradient w.r.t. its output."""
    inner = (gprobs * probs).sum(axis=1, keepdims=True)
    return probs * (gprobs - inner)
