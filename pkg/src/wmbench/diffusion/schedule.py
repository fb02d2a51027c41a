from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from ..core import Latent, RngStream


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step ``alphas`` (length T) and their cumulative products.

    ``alpha_bar[t]`` is indexed by timestep with ``alpha_bar[0] == 1`` for the
    clean latent, so the array has T + 1 entries.
    """

    alphas: np.ndarray
    derivation: str = "linear-beta"

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size == 0 or np.any(a <= 0) or np.any(a >= 1):
            raise ValueError("alphas must be a nonempty vector in (0, 1)")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)
        ab = np.concatenate([[1.0], np.cumprod(a)])
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return int(self.alphas.size)

    @classmethod
    def linear_beta(cls, T: int, beta_start: float, beta_end: float) -> "NoiseSchedule":
        return cls(1.0 - np.linspace(beta_start, beta_end, T), "linear-beta")

    @classmethod
    def cosine(cls, T: int, s: float = 0.008) -> "NoiseSchedule":
        f = np.cos((np.arange(T + 1) / T + s) / (1 + s) * np.pi / 2) ** 2
        ab = f / f[0]
        alphas = np.clip(ab[1:] / ab[:-1], 1e-4, 1 - 1e-6)
        return cls(alphas, "cosine")

    def digest(self) -> str:
        return hashlib.sha256(self.alphas.tobytes()).hexdigest()[:16]


def strength_to_timestep(s: float, T: int) -> int:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"strength must lie in [0, 1], got {s}")
    return int(math.floor(s * T))


def forward_noise(z: Latent, s: float, schedule: NoiseSchedule, rng: RngStream):
    """Noise a clean latent to timestep floor(s * T).

    Returns ``(z_tau, tau)`` with ``z_tau = sqrt(ab) z + sqrt(1 - ab) eps``.
    ``s = 0`` returns ``z`` unchanged without consuming the stream.
    """
    tau = strength_to_timestep(s, schedule.T)
    if tau == 0:
        return z.tagged(0), 0
    eps = rng.normal(z.shape)
    return Latent(noise_with(z.values, eps, schedule.alpha_bar[tau]), tau), tau


def noise_with(z: np.ndarray, eps: np.ndarray, alpha_bar: float) -> np.ndarray:
    """The forward-noising formula with an explicit noise draw."""
    return math.sqrt(alpha_bar) * z + math.sqrt(1.0 - alpha_bar) * eps
