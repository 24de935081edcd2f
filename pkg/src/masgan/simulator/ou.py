"""Discrete-time Ornstein-Uhlenbeck fundamental value."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class OUParams:
    r_bar: float = 100.0
    kappa: float = 1e-3
    sigma: float = 0.01
    dt: float = 1.0

    def __post_init__(self):
        if self.kappa < 0 or self.sigma < 0 or not self.dt > 0:
            raise ConfigError("OU params need kappa >= 0, sigma >= 0, dt > 0")

    @property
    def decay(self) -> float:
        return math.exp(-self.kappa * self.dt)

    @property
    def step_std(self) -> float:
        if self.kappa == 0:
            return self.sigma * math.sqrt(self.dt)
        return self.sigma * math.sqrt(-math.expm1(-2.0 * self.kappa * self.dt) / (2.0 * self.kappa))


def ou_step(r_prev: float, ou: OUParams, gaussian_draw: float) -> float:
    """Exact one-step transition of the OU process."""
    return ou.r_bar + ou.decay * (r_prev - ou.r_bar) + ou.step_std * gaussian_draw


def ou_path(r0: float, ou: OUParams, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """``n_steps + 1`` values starting at ``r0``."""
    draws = rng.standard_normal(n_steps)
    out = np.empty(n_steps + 1)
    out[0] = r = r0
    a, s, m = ou.decay, ou.step_std, ou.r_bar
    for i in range(n_steps):
        r = m + a * (r - m) + s * draws[i]
        out[i + 1] = r
    return out
