"""Closed-form diffusion math: noise schedule, forward noising, clean-image recovery.

All operations here are pure and dtype-agnostic: they accept either numpy
arrays or torch tensors and return the same kind. Cumulative products are
always accumulated in 64-bit, whatever the image dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError

__all__ = ["NoiseSchedule", "make_schedule", "q_sample", "predict_x0"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative signal coefficients.

    Step indices are 1-based in every public signature; internally ``beta``
    is stored 0-based, so ``beta[t - 1]`` is the variance of step ``t``.
    ``alpha_bar`` has ``T + 1`` entries with ``alpha_bar[0] == 1``.
    Stochasticity is fixed to zero: the sampler built on top is deterministic.
    """

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"step count must be >= 1, got {self.T}")
        if self.beta.shape != (self.T,):
            raise ConfigError("beta must have exactly T entries")
        if self.alpha_bar.shape != (self.T + 1,):
            raise ConfigError("alpha_bar must have exactly T+1 entries")
        if not (np.all(self.beta > 0.0) and np.all(self.beta < 1.0)):
            raise ConfigError("all beta values must lie in (0, 1)")
        if np.any(np.diff(self.beta) < 0.0):
            raise ConfigError("beta must be non-decreasing")
        if self.alpha_bar[0] != 1.0 or np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ConfigError("alpha_bar must start at 1 and strictly decrease")
        if self.alpha_bar[-1] <= 0.0:
            raise ConfigError("alpha_bar[T] must stay positive")

    def alpha_bar_at(self, t):
        """ᾱ_t for a scalar step or an array of steps in [0, T]."""
        return self.alpha_bar[np.asarray(t)] if not np.isscalar(t) else float(self.alpha_bar[t])


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear variance schedule from ``beta_start`` to ``beta_end`` inclusive."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    np.cumprod(1.0 - beta, out=alpha_bar[1:])
    return NoiseSchedule(T=int(T), beta=beta, alpha_bar=alpha_bar)


def _check_step(sched: NoiseSchedule, t, lo: int = 1):
    t_arr = np.asarray(t)
    if t_arr.dtype.kind not in "iu":
        raise ValueError(f"step index must be integral, got dtype {t_arr.dtype}")
    if np.any(t_arr < lo) or np.any(t_arr > sched.T):
        raise ValueError(f"step index out of range [{lo}, {sched.T}]: {t}")


def _coef(values, like):
    """Shape schedule coefficients so they broadcast against image ``like``.

    A scalar step yields a plain float; an array of per-sample steps yields
    a (B, 1, ..., 1) array/tensor matching the backend and dtype of ``like``.
    """
    if np.isscalar(values) or np.ndim(values) == 0:
        return float(values)
    shape = (-1,) + (1,) * (like.ndim - 1)
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(values, dtype=like.dtype, device=like.device).reshape(shape)
    return np.asarray(values, dtype=like.dtype).reshape(shape)


def q_sample(sched: NoiseSchedule, x0, t, eps):
    """Noisy image at step ``t``: √ᾱ_t·x0 + √(1−ᾱ_t)·eps."""
    _check_step(sched, t)
    if tuple(x0.shape) != tuple(eps.shape):
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    t = np.asarray(t) if not np.isscalar(t) else t
    ab = sched.alpha_bar[t]
    return _coef(np.sqrt(ab), x0) * x0 + _coef(np.sqrt(1.0 - ab), x0) * eps


def predict_x0(sched: NoiseSchedule, x_t, t, eps_pred, clamp: bool = False):
    """Recover the clean image implied by a noise estimate at step ``t``.

    Exact algebraic inverse of :func:`q_sample` when ``eps_pred`` equals the
    injected noise. ``clamp`` optionally clips the result to [-1, 1]; defaults
    off so the inverse identity holds exactly.
    """
    if np.all(np.asarray(t) == 0):
        raise ValueError("t=0 carries no noise; nothing to estimate")
    _check_step(sched, t)
    if tuple(x_t.shape) != tuple(eps_pred.shape):
        raise ValueError(f"x_t shape {tuple(x_t.shape)} != eps shape {tuple(eps_pred.shape)}")
    t = np.asarray(t) if not np.isscalar(t) else t
    ab = sched.alpha_bar[t]
    x0 = (x_t - _coef(np.sqrt(1.0 - ab), x_t) * eps_pred) * _coef(1.0 / np.sqrt(ab), x_t)
    if clamp:
        x0 = x0.clamp(-1.0, 1.0) if isinstance(x0, torch.Tensor) else np.clip(x0, -1.0, 1.0)
    return x0
