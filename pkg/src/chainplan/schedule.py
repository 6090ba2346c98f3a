"""Noise schedule, forward noising, and the deterministic DDIM mean."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep signal levels and DDIM noise scales.

    ``alpha_bar`` has T+1 entries with ``alpha_bar[0] == 1``; ``sigma[t]``
    is the stochastic scale of the step t -> t-1 and ``sigma[0]`` is unused
    (kept 0 for indexing symmetry).
    """

    T: int
    alpha_bar: np.ndarray
    sigma: np.ndarray
    eta_ddim: float
    # original timestep carried by each entry; differs from 1..T only for
    # strided sub-schedules (used for the model's time conditioning)
    timesteps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.timesteps is None:
            object.__setattr__(self, "timesteps", np.arange(self.T + 1))
        ab = self.alpha_bar
        if ab[0] != 1.0 or np.any(np.diff(ab) >= 0) or not (0.0 < ab[-1] < 1.0):
            raise ScheduleError("alpha_bar must start at 1 and strictly decrease into (0, 1)")
        if np.any(self.sigma[1:] ** 2 > (1.0 - ab[:-1]) + 1e-12):
            raise ScheduleError("sigma_t^2 exceeds 1 - alpha_bar_{t-1}")

    def subsample(self, steps: int) -> "NoiseSchedule":
        """Evenly strided sub-schedule of ``steps`` entries including t=T and t=1."""
        if not 1 <= steps <= self.T:
            raise ConfigError(f"steps must be in [1, {self.T}], got {steps}")
        if steps == self.T:
            return self
        picks = np.unique(np.round(np.linspace(1, self.T, steps)).astype(int))
        ab = np.concatenate([[1.0], self.alpha_bar[picks]])
        return NoiseSchedule(
            T=len(picks),
            alpha_bar=ab,
            sigma=_sigma_from_alpha_bar(ab, self.eta_ddim),
            eta_ddim=self.eta_ddim,
            timesteps=np.concatenate([[0], picks]),
        )

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.alpha_bar).tobytes())
        h.update(np.float64(self.eta_ddim).tobytes())
        return h.hexdigest()[:16]


def _sigma_from_alpha_bar(alpha_bar: np.ndarray, eta_ddim: float) -> np.ndarray:
    ab_prev, ab = alpha_bar[:-1], alpha_bar[1:]
    s = eta_ddim * np.sqrt((1.0 - ab_prev) / (1.0 - ab)) * np.sqrt(1.0 - ab / ab_prev)
    return np.concatenate([[0.0], s])


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                          eta_ddim: float = 1.0) -> NoiseSchedule:
    """Linearly spaced per-step noise rates compounded into alpha_bar."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    if not 0.0 <= eta_ddim <= 1.0:
        raise ConfigError(f"eta_ddim must be in [0, 1], got {eta_ddim}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T=T, alpha_bar=alpha_bar,
                         sigma=_sigma_from_alpha_bar(alpha_bar, eta_ddim),
                         eta_ddim=eta_ddim)


def noise_forward(sched: NoiseSchedule, x0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Draw from the forward process at step t given the clean sample and noise."""
    if not 0 <= t <= sched.T:
        raise ScheduleError(f"t={t} out of range [0, {sched.T}]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatch(x0.shape, eps.shape)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


class ShapeMismatch(ValueError):
    def __init__(self, a, b):
        super().__init__(f"shape mismatch: {a} vs {b}")


def ddim_mu(sched: NoiseSchedule, x_t: np.ndarray, x0_hat: np.ndarray, t: int) -> np.ndarray:
    """Deterministic part of the reverse step t -> t-1 (stochastic term excluded)."""
    if not 1 <= t <= sched.T:
        raise ScheduleError(f"t={t} out of range [1, {sched.T}]")
    if np.shape(x_t) != np.shape(x0_hat):
        raise ShapeMismatch(np.shape(x_t), np.shape(x0_hat))
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    sig2 = sched.sigma[t] ** 2
    if sig2 > 1.0 - ab_prev + 1e-12:
        raise ScheduleError(f"sigma_{t}^2={sig2} exceeds 1 - alpha_bar_{t-1}")
    coef = np.sqrt(max(1.0 - ab_prev - sig2, 0.0)) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_prev) * x0_hat + coef * (x_t - np.sqrt(ab_t) * x0_hat)
