"""Variance-preserving forward process: schedule tables and eps/x0/score conversions.

Tables are indexed by integer timestep t in [0, T] with the convention
alpha_bar[0] = 1 (clean data); beta[0] is a placeholder zero. sigma_t is the
marginal noise scale sqrt(1 - alpha_bar_t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.T + 1,):
                raise DimensionError(f"{name} must have length T+1={self.T + 1}")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def a(self, t) -> np.ndarray | float:
        """Signal scale sqrt(alpha_bar_t)."""
        return np.sqrt(self.alpha_bar[t])

    def log_snr_half(self, t) -> np.ndarray | float:
        """lambda_t = log(a_t / sigma_t); +inf at t = 0."""
        with np.errstate(divide="ignore"):
            return 0.5 * np.log(self.alpha_bar[t]) - np.log(self.sigma[t])


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule inclusive of both endpoints; alpha_bar is the running product."""
    if T < 2:
        raise ValidationError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(1.0 - alpha_bar)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def _check_t(sched: NoiseSchedule, t: int, allow_zero: bool = False) -> int:
    t = int(t)
    lo = 0 if allow_zero else 1
    if not (lo <= t <= sched.T):
        raise ValidationError(f"t={t} outside [{lo}, {sched.T}]")
    return t


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    t = _check_t(sched, t)
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    return sched.a(t) * x0 + sched.sigma[t] * eps


def x0_to_eps(x_t: np.ndarray, x0_pred: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Implied noise: eps = (x_t - sqrt(alpha_bar_t) x0) / sigma_t."""
    t = int(t)
    if t == 0:
        raise NumericError("eps undefined at t=0 (sigma=0)")
    t = _check_t(sched, t)
    x_t, x0_pred = np.asarray(x_t), np.asarray(x0_pred)
    if x_t.shape != x0_pred.shape:
        raise DimensionError(f"x_t shape {x_t.shape} != x0_pred shape {x0_pred.shape}")
    return (x_t - sched.a(t) * x0_pred) / sched.sigma[t]


def eps_to_x0(x_t: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Inverse of x0_to_eps: x0 = (x_t - sigma_t eps) / sqrt(alpha_bar_t)."""
    t = _check_t(sched, t)
    return (np.asarray(x_t) - sched.sigma[t] * np.asarray(eps)) / sched.a(t)


def eps_to_score(eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """score = -eps / sigma_t, the score of the marginal at noise level t."""
    t = int(t)
    if t == 0:
        raise NumericError("score conversion undefined at t=0 (sigma=0)")
    t = _check_t(sched, t)
    return -np.asarray(eps) / sched.sigma[t]


def score_to_eps(score: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    t = int(t)
    if t == 0:
        raise NumericError("eps conversion undefined at t=0 (sigma=0)")
    t = _check_t(sched, t)
    return -np.asarray(score) * sched.sigma[t]
