from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..nn import tensor as T
from ..nn.tensor import ShapeMismatch, Tensor

ALPHA_BAR_FLOOR = 1e-12
MAX_BETA = 0.999


class BadT(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray  # length T + 1, index t
    sigma: np.ndarray

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.alpha_bar).tobytes())
        h.update(np.ascontiguousarray(self.sigma).tobytes())
        return h.hexdigest()[:16]


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise BadT(f"T must be a positive integer, got {T!r}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
    alpha_bar = f / f[0]
    # per-step retention 1 - beta_t is kept >= 1 - MAX_BETA; this only bites at
    # the very last step, where cos(pi/2) would otherwise drive abar to ~1e-33
    for k in range(1, T + 1):
        alpha_bar[k] = max(alpha_bar[k], alpha_bar[k - 1] * (1.0 - MAX_BETA))
    sigma = np.sqrt(1.0 - alpha_bar)
    alpha_bar.setflags(write=False)
    sigma.setflags(write=False)
    return NoiseSchedule(int(T), alpha_bar, sigma)


def forward_noise(y0, t: int, noise, mask, schedule: NoiseSchedule) -> np.ndarray:
    """``Y_t = sqrt(abar_t) Y0 + sigma_t (E * M)``; forbidden entries come out exactly 0."""
    y0 = np.asarray(y0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not (y0.shape == noise.shape == mask.shape):
        raise ShapeMismatch(f"forward_noise: {y0.shape}, {noise.shape}, {mask.shape}")
    out = np.sqrt(schedule.alpha_bar[t]) * y0 + schedule.sigma[t] * np.where(mask, noise, 0.0)
    return np.where(mask, out, 0.0)


def reconstruct_y0(y_t, eps_hat, t: int, schedule: NoiseSchedule):
    """Clean estimate ``(Y_t - sigma_t eps) / sqrt(abar_t)``; works on arrays and tensors."""
    a = max(float(schedule.alpha_bar[t]), ALPHA_BAR_FLOOR)
    k = 1.0 / np.sqrt(a)
    sig = float(schedule.sigma[t])
    if isinstance(y_t, Tensor) or isinstance(eps_hat, Tensor):
        return T.scale(T.sub(T.const(y_t), T.scale(T.const(eps_hat), sig)), k)
    return (np.asarray(y_t) - sig * np.asarray(eps_hat)) * k
