"""Nadam optimizer (Adam with Nesterov momentum, constant-momentum form).

Update at step t (1-based), per parameter tensor:

    g_hat = g / (1 - b1^t)
    m     = b1*m + (1-b1)*g;   m_hat = m / (1 - b1^(t+1))
    v     = b2*v + (1-b2)*g^2; v_hat = v / (1 - b2^t)
    theta -= lr * (b1*m_hat + (1-b1)*g_hat) / (sqrt(v_hat) + eps)

which is the standard Nesterov-accelerated Adam with a constant momentum
schedule.  Non-finite gradients or parameters abort training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TrainingDivergedError

__all__ = ["NadamConfig", "Nadam"]


@dataclass(frozen=True)
class NadamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")


class Nadam:
    def __init__(self, params: list[np.ndarray], config: NadamConfig = NadamConfig()):
        self.params = params
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        c = self.config
        b1, b2 = c.beta1, c.beta2
        corr_g = 1.0 - b1**self.t
        corr_m = 1.0 - b1 ** (self.t + 1)
        corr_v = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if not np.isfinite(g).all():
                raise TrainingDivergedError(
                    f"non-finite gradient at optimizer step {self.t}"
                )
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            m_hat = m / corr_m
            g_hat = g / corr_g
            v_hat = v / corr_v
            p -= c.lr * (b1 * m_hat + (1.0 - b1) * g_hat) / (np.sqrt(v_hat) + c.eps)
