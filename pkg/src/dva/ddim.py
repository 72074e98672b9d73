"""Deterministic DDIM stepping in both directions, generic over the noise estimator.

The estimator is any callable ``(x_t, t, z_face) -> eps`` returning a tensor of
``x_t``'s shape. All samplers here use the zero-stochasticity update, so
encoding (invert) and decoding (sample) are exact inverses whenever the
estimator is self-consistent along the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .schedule import NoiseSchedule, predict_x0

__all__ = [
    "StepSchedule",
    "make_step_schedule",
    "reverse_step",
    "forward_step",
    "sample",
    "invert",
]


@dataclass(frozen=True)
class StepSchedule:
    """Strictly increasing step indices t_1 < ... < t_S, with implicit t_0 = 0."""

    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        if steps.ndim != 1 or steps.size < 1:
            raise ConfigError("step schedule must be a non-empty 1-D index vector")
        if steps[0] < 1 or np.any(np.diff(steps) <= 0):
            raise ConfigError("step schedule must be strictly increasing and start >= 1")
        object.__setattr__(self, "steps", steps)

    @property
    def S(self) -> int:
        return int(self.steps.size)

    def pairs_descending(self):
        """(t_s, t_{s-1}) pairs for the reverse fold, ending at (t_1, 0)."""
        padded = np.concatenate(([0], self.steps))
        return [(int(padded[s]), int(padded[s - 1])) for s in range(self.S, 0, -1)]

    def pairs_ascending(self):
        """(t_{s-1}, t_s) pairs for the forward fold, starting at (0, t_1)."""
        return [(b, a) for a, b in reversed(self.pairs_descending())]


def make_step_schedule(T: int, S: int) -> StepSchedule:
    """Evenly spaced sub-schedule: t_s = round(s*T/S) for s=1..S, deduplicated.

    Rounds half away from zero so the result is platform-stable; the last
    entry is always T. Duplicates (possible when S is close to T) collapse,
    so the effective length may be below the requested S.
    """
    if not (1 <= S <= T):
        raise ConfigError(f"need 1 <= S <= T, got S={S}, T={T}")
    raw = np.floor(np.arange(1, S + 1, dtype=np.float64) * T / S + 0.5).astype(np.int64)
    return StepSchedule(steps=np.unique(raw))


def _check_pair(sched: NoiseSchedule, t_prev: int, t: int):
    if not (0 <= t_prev < t <= sched.T):
        raise ValueError(f"need 0 <= t_prev < t <= T={sched.T}, got t_prev={t_prev}, t={t}")


def reverse_step(sched: NoiseSchedule, estimator, x_t, t: int, t_prev: int, z_face=None):
    """One denoising step t -> t_prev: √ᾱ_{t_prev}·f_θ(x_t,t) + √(1−ᾱ_{t_prev})·ε_θ(x_t,t)."""
    _check_pair(sched, t_prev, t)
    eps = estimator(x_t, t, z_face)
    f = predict_x0(sched, x_t, t, eps)
    ab_prev = sched.alpha_bar[t_prev]
    return float(np.sqrt(ab_prev)) * f + float(np.sqrt(1.0 - ab_prev)) * eps


def forward_step(sched: NoiseSchedule, estimator, x_t_prev, t_prev: int, t: int, z_face=None):
    """One inversion step t_prev -> t, reusing the generative formula.

    The estimate is taken at the source step t_prev. At t_prev = 0 the clean
    image itself plays the role of f_θ and the estimator is evaluated at the
    target step instead (the smallest positive step of the fold).
    """
    _check_pair(sched, t_prev, t)
    if t_prev == 0:
        f = x_t_prev
        eps = estimator(x_t_prev, t, z_face)
    else:
        eps = estimator(x_t_prev, t_prev, z_face)
        f = predict_x0(sched, x_t_prev, t_prev, eps)
    ab_t = sched.alpha_bar[t]
    return float(np.sqrt(ab_t)) * f + float(np.sqrt(1.0 - ab_t)) * eps


def sample(sched: NoiseSchedule, estimator, x_T, step_schedule: StepSchedule, z_face=None):
    """Decode x_{t_S} down to a clean image by folding reverse_step to step 0."""
    x = x_T
    for t, t_prev in step_schedule.pairs_descending():
        x = reverse_step(sched, estimator, x, t, t_prev, z_face)
    return x


def invert(sched: NoiseSchedule, estimator, x0, step_schedule: StepSchedule, z_face=None):
    """Encode a clean image up to x_{t_S} by folding forward_step from step 0."""
    x = x0
    for t_prev, t in step_schedule.pairs_ascending():
        x = forward_step(sched, estimator, x, t_prev, t, z_face)
    return x
