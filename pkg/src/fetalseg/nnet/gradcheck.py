"""Central-finite-difference verification of the analytic gradients.

Every parameter tensor (and the input) is spot-checked at a few sampled
entries; the comparison uses a globally normalized relative error so that
tensors with tiny gradients do not spuriously fail.  Everything runs in
float64, where truncation plus round-off stays well under 1e-6 for the
individual layers and under 1e-4 through a whole (kink-bearing) network.
"""

from __future__ import annotations

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
from .losses import cross_entropy_loss, soft_dice_loss
from .unet import UNet

__all__ = [
    "max_rel_error",
    "numeric_partials",
    "check_unet_gradients",
    "layer_gradient_report",
]


def max_rel_error(
    analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8
) -> float:
    """max |a - n| normalized by the largest magnitude in either array.

    When both sides sit below ``atol`` the gradient is structurally zero
    (e.g. a conv bias feeding a batch norm, whose mean subtraction absorbs
    any per-channel shift) and both estimators return pure round-off; that
    counts as exact agreement rather than noise-to-noise comparison.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if denom < atol:
        return 0.0
    return float(np.abs(a - n).max(initial=0.0) / denom)


def numeric_partials(f, arr: np.ndarray, flat_indices, h: float) -> np.ndarray:
    """Central differences of scalar f() w.r.t. selected entries of arr,
    perturbing arr in place and restoring it afterwards."""
    flat = arr.reshape(-1)
    out = np.empty(len(flat_indices), dtype=np.float64)
    for k, idx in enumerate(flat_indices):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = f()
        flat[idx] = orig - h
        f_minus = f()
        flat[idx] = orig
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out


def check_unet_gradients(
    net: UNet,
    x: np.ndarray,
    labels: np.ndarray,
    loss: str = "ce",
    h: float = 1e-6,
    samples_per_tensor: int = 4,
    seed: int = 0,
) -> dict[str, float]:
    """Compare backprop against finite differences through the whole net.

    Returns {tensor name: rel error} including an "input" entry.  The net
    should be float64 (see UNet.astype) for meaningful tolerances.
    """
    loss_fn = cross_entropy_loss if loss == "ce" else soft_dice_loss

    def loss_value() -> float:
        probs = net.forward(x, training=True)
        value, _ = loss_fn(probs, labels)
        return value

    probs = net.forward(x, training=True)
    _, gprobs = loss_fn(probs, labels)
    gx = net.backward(gprobs)
    analytic = {name: grad.copy() for name, grad in net.named_grads()}

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, param in net.named_parameters():
        k = min(samples_per_tensor, param.size)
        idx = rng.choice(param.size, size=k, replace=False)
        numeric = numeric_partials(loss_value, param, idx, h)
        errors[name] = max_rel_error(analytic[name].reshape(-1)[idx], numeric)

    k = min(samples_per_tensor, x.size)
    idx = rng.choice(x.size, size=k, replace=False)
    numeric = numeric_partials(loss_value, x, idx, h)
    errors["input"] = max_rel_error(gx.reshape(-1)[idx], numeric)
    return errors


def _check_op(forward, backward, tensors, rng, h, samples) -> float:
    """Check one op through the scalar loss sum(forward() * R).

    ``tensors`` are the arrays the loss depends on (input and parameters);
    ``backward(R)`` must return their analytic gradients in the same order.
    Returns the worst relative error over all of them.
    """
    out = forward()
    weights = rng.standard_normal(out.shape)

    def loss_value() -> float:
        return float((forward() * weights).sum())

    analytic = backward(weights)
    worst = 0.0
    for arr, grad in zip(tensors, analytic):
        k = min(samples, arr.size)
        idx = rng.choice(arr.size, size=k, replace=False)
        numeric = numeric_partials(loss_value, arr, idx, h)
        worst = max(worst, max_rel_error(grad.reshape(-1)[idx], numeric))
    return worst


def layer_gradient_report(
    seed: int = 0, h: float = 1e-6, samples: int = 6
) -> dict[str, float]:
    """Worst finite-difference relative error per layer type, in float64."""
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}

    def conv_case(name, c_in, c_out, kh, kw, pad, hw):
        w = rng.standard_normal((c_out, c_in, kh, kw))
        b = rng.standard_normal(c_out)
        conv = Conv2D(w, b, pad)
        x = rng.standard_normal((2, c_in, hw, hw))
        report[name] = _check_op(
            lambda: conv.forward(x),
            lambda r: (conv.backward(r), conv.grad_weight, conv.grad_bias),
            (x, w, b),
            rng,
            h,
            samples,
        )

    conv_case("conv3x3", 3, 4, 3, 3, ((1, 1), (1, 1)), 6)
    conv_case("conv2x2", 4, 2, 2, 2, ((0, 1), (0, 1)), 6)
    conv_case("conv1x1", 3, 5, 1, 1, ((0, 0), (0, 0)), 5)

    bn = BatchNorm2D(
        gamma=rng.standard_normal(3) + 2.0,
        beta=rng.standard_normal(3),
        running_mean=np.zeros(3),
        running_var=np.ones(3),
    )
    x = rng.standard_normal((3, 3, 5, 5))
    report["batchnorm"] = _check_op(
        lambda: bn.forward(x, training=True),
        lambda r: (bn.backward(r), bn.grad_gamma, bn.grad_beta),
        (x, bn.gamma, bn.beta),
        rng,
        h,
        samples,
    )

    relu = ReLU()
    x = rng.standard_normal((2, 3, 6, 6))
    x[np.abs(x) < 1e-3] += 0.1  # stay away from the kink
    report["relu"] = _check_op(
        lambda: relu.forward(x), lambda r: (relu.backward(r),), (x,), rng, h, samples
    )

    pool = MaxPool2x2()
    x = rng.standard_normal((2, 3, 6, 6))
    report["maxpool2x2"] = _check_op(
        lambda: pool.forward(x), lambda r: (pool.backward(r),), (x,), rng, h, samples
    )

    up = UpsampleNearest2x2()
    x = rng.standard_normal((2, 3, 4, 4))
    report["upsample2x2"] = _check_op(
        lambda: up.forward(x), lambda r: (up.backward(r),), (x,), rng, h, samples
    )

    x = rng.standard_normal((2, 4, 5, 5))
    report["softmax"] = _check_op(
        lambda: softmax_channels(x),
        lambda r: (softmax_backward(softmax_channels(x), r),),
        (x,),
        rng,
        h,
        samples,
    )

    # losses: scalar outputs, gradients w.r.t. probabilities
    labels = rng.integers(0, 4, size=(2, 5, 5))
    logits = rng.standard_normal((2, 4, 5, 5))
    for name, loss_fn in (("cross_entropy", cross_entropy_loss), ("soft_dice", soft_dice_loss)):
        probs = softmax_channels(logits)  # valid distribution, away from 0/1

        def loss_value() -> float:
            return loss_fn(probs, labels)[0]

        _, grad = loss_fn(probs, labels)
        k = min(samples, probs.size)
        idx = rng.choice(probs.size, size=k, replace=False)
        numeric = numeric_partials(loss_value, probs, idx, h)
        report[name] = max_rel_error(grad.reshape(-1)[idx], numeric)
    return report
