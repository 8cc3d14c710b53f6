"""Reverse-process samplers over an abstract x0-predicting denoiser.

Two methods are provided:

* ``ddpm`` — generalized ancestral sampling, written in the x0/eps
  parameterization so arbitrary timestep jumps are exact. With ``eta=1`` the
  single-step update is algebraically identical to the standard ancestral
  update; with ``eta=0`` it is the deterministic (DDIM-style) limit.
* ``dpmpp-multistep`` — the multistep DPM-Solver++ data-prediction solver up
  to third order, warming up through lower orders while history fills.

Samplers are bit-deterministic given (seed, config, denoiser); ensemble member
i draws from its own stream seeded by (seed, i).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ValidationError
from .grids import ConditioningSet
from .guidance import GuidedEps, SubsetWeights, direct_eps, evaluate_guided_eps
from .schedule import NoiseSchedule, eps_to_x0

METHODS = ("ddpm", "dpmpp-multistep")


class Denoiser(Protocol):
    """x0-predicting denoiser over batched multichannel grids."""

    sample_shape: tuple[int, int, int]

    def __call__(self, x_t: np.ndarray, cond: ConditioningSet, t: int) -> np.ndarray: ...


class CountingDenoiser:
    """Wraps a denoiser and counts per-sample evaluations (batch of B adds B)."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.sample_shape = inner.sample_shape
        self.calls = 0
        self.samples_evaluated = 0

    def __call__(self, x_t: np.ndarray, cond: ConditioningSet, t: int) -> np.ndarray:
        self.calls += 1
        self.samples_evaluated += int(np.prod(x_t.shape[:-3])) if x_t.ndim > 3 else 1
        return self.inner(x_t, cond, t)


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "dpmpp-multistep"
    steps: int = 10
    order: int = 3
    rng_seed: int = 0
    ensemble_count: int = 1
    eta: float = 1.0  # ddpm only; 0 gives the deterministic limit

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown sampler method {self.method!r}")
        if self.order not in (1, 2, 3):
            raise ValidationError(f"order must be 1, 2 or 3, got {self.order}")
        if self.steps < self.order:
            raise ValidationError(f"steps ({self.steps}) must be >= order ({self.order})")
        if self.ensemble_count < 1:
            raise ValidationError("ensemble_count must be >= 1")
        if not (0.0 <= self.eta <= 1.0):
            raise ValidationError(f"eta must be in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class SampleResult:
    samples: np.ndarray  # (ensemble, C, H, W)
    views_per_step: int
    steps: int
    ensemble_count: int

    @property
    def nfe_total(self) -> int:
        """Denoiser evaluations counted per sample: views x steps x members."""
        return self.views_per_step * self.steps * self.ensemble_count


def timestep_grid(sched: NoiseSchedule, steps: int) -> np.ndarray:
    """Uniformly spaced integer times T = tau_0 > ... > tau_steps = 0."""
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    taus = np.round(np.linspace(sched.T, 0, steps + 1)).astype(int)
    if np.any(np.diff(taus) >= 0):
        raise ValidationError(f"steps={steps} too large for schedule with T={sched.T}")
    return taus


def ddpm_jump(
    x_t: np.ndarray,
    guided_eps: np.ndarray,
    t_cur: int,
    t_next: int,
    sched: NoiseSchedule,
    noise: np.ndarray | None = None,
    eta: float = 1.0,
) -> np.ndarray:
    """Ancestral update from t_cur to t_next < t_cur; injects no noise into the final jump."""
    if not (0 <= t_next < t_cur <= sched.T):
        raise ValidationError(f"need 0 <= t_next < t_cur <= T, got ({t_cur}, {t_next})")
    x0 = eps_to_x0(x_t, guided_eps, t_cur, sched)
    if t_next == 0:
        return x0
    ab_cur, ab_next = sched.alpha_bar[t_cur], sched.alpha_bar[t_next]
    var = (eta ** 2) * (1.0 - ab_next) / (1.0 - ab_cur) * (1.0 - ab_cur / ab_next)
    eps_coef = np.sqrt(max(1.0 - ab_next - var, 0.0))
    out = np.sqrt(ab_next) * x0 + eps_coef * np.asarray(guided_eps)
    if var > 0.0:
        if noise is None:
            raise ValidationError("noisy ddpm jump needs a noise array")
        out = out + np.sqrt(var) * np.asarray(noise)
    return out


def ddpm_step(
    x_t: np.ndarray,
    guided_eps: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    eta: float = 1.0,
) -> np.ndarray:
    """Single ancestral step t -> t-1. The t=1 step is deterministic by contract."""
    noise = None
    if t > 1 and eta > 0.0:
        if rng is None:
            raise ValidationError("ddpm_step needs an rng for noisy steps")
        noise = rng.standard_normal(np.shape(x_t))
    return ddpm_jump(x_t, guided_eps, t, t - 1, sched, noise=noise, eta=eta)


def dpmpp_step(
    x: np.ndarray,
    history: list[tuple[int, np.ndarray]],
    t_next: int,
    sched: NoiseSchedule,
    order: int = 3,
) -> np.ndarray:
    """One multistep DPM-Solver++ update using the x0-prediction history.

    ``history`` holds (t, x0_pred) pairs, most recent last; the effective order
    is capped by the history length. The final jump to t=0 is the first-order
    limit x0_pred exactly (higher orders are singular there because the
    log-SNR is infinite at sigma=0).
    """
    if order not in (1, 2, 3):
        raise ValidationError(f"order must be 1, 2 or 3, got {order}")
    if not history:
        raise ValidationError("dpmpp_step needs at least one denoiser evaluation")
    order = min(order, len(history))
    t_cur, x0_cur = history[-1]
    if t_next == 0:
        return np.asarray(x0_cur).copy()

    lam = sched.log_snr_half
    a_next = sched.a(t_next)
    sig_next, sig_cur = sched.sigma[t_next], sched.sigma[t_cur]
    h = lam(t_next) - lam(t_cur)
    phi_1 = np.expm1(-h)

    x_next = (sig_next / sig_cur) * np.asarray(x) - a_next * phi_1 * np.asarray(x0_cur)
    if order == 1:
        return x_next

    t_prev1, x0_prev1 = history[-2]
    h_0 = lam(t_cur) - lam(t_prev1)
    r0 = h_0 / h
    d1_0 = (1.0 / r0) * (np.asarray(x0_cur) - np.asarray(x0_prev1))
    phi_2 = phi_1 / h + 1.0
    if order == 2:
        return x_next + a_next * phi_2 * d1_0

    t_prev2, x0_prev2 = history[-3]
    h_1 = lam(t_prev1) - lam(t_prev2)
    r1 = h_1 / h
    d1_1 = (1.0 / r1) * (np.asarray(x0_prev1) - np.asarray(x0_prev2))
    d1 = d1_0 + (r0 / (r0 + r1)) * (d1_0 - d1_1)
    d2 = (1.0 / (r0 + r1)) * (d1_0 - d1_1)
    phi_3 = phi_2 / h - 0.5
    return x_next + a_next * phi_2 * d1 - a_next * phi_3 * d2


def _member_rngs(seed: int, members: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence((seed, i))) for i in range(members)]


def ddpm_noise_bank(
    seed: int, members: int, shape: tuple[int, int, int], taus: np.ndarray, eta: float
) -> tuple[np.ndarray, list[np.ndarray | None]]:
    """Pre-draw the initial noise and per-step injections for an ancestral run.

    Member i consumes only its own stream, so the draws are identical whether
    the run is batched or member-by-member. Both the numpy sampler and the
    differentiable rollout read from this bank, keeping common random numbers
    exact across implementations.
    """
    rngs = _member_rngs(seed, members)
    x0 = np.stack([r.standard_normal(shape) for r in rngs])
    zs: list[np.ndarray | None] = []
    for j in range(len(taus) - 1):
        if int(taus[j + 1]) > 0 and eta > 0.0:
            zs.append(np.stack([r.standard_normal(shape) for r in rngs]))
        else:
            zs.append(None)
    return x0, zs


def sample(
    denoiser: Denoiser,
    cond: ConditioningSet,
    config: SamplerConfig,
    sched: NoiseSchedule,
    weights: SubsetWeights | None = None,
) -> SampleResult:
    """Run the full reverse loop; guidance (if any) is evaluated once per step.

    ``weights=None`` is direct inference (1 view per step); otherwise the
    composite-guided estimate is used and costs one view per distinct
    conditioning subset plus the full and unconditional views.
    """
    shape = denoiser.sample_shape
    taus = timestep_grid(sched, config.steps)
    members = config.ensemble_count

    def guided(x_now: np.ndarray, t: int) -> GuidedEps:
        if weights is None:
            return direct_eps(denoiser, x_now, cond, t, sched)
        return evaluate_guided_eps(denoiser, x_now, cond, t, weights, sched)

    views_per_step = 0
    if config.method == "ddpm":
        x, z_bank = ddpm_noise_bank(config.rng_seed, members, shape, taus, config.eta)
        for j in range(len(taus) - 1):
            t_cur, t_next = int(taus[j]), int(taus[j + 1])
            ge = guided(x, t_cur)
            views_per_step = ge.views_evaluated
            x = ddpm_jump(x, ge.eps, t_cur, t_next, sched, noise=z_bank[j], eta=config.eta)
    else:
        rngs = _member_rngs(config.rng_seed, members)
        x = np.stack([rng.standard_normal(shape) for rng in rngs])
        history: list[tuple[int, np.ndarray]] = []
        for j in range(len(taus) - 1):
            t_cur, t_next = int(taus[j]), int(taus[j + 1])
            ge = guided(x, t_cur)
            views_per_step = ge.views_evaluated
            history.append((t_cur, eps_to_x0(x, ge.eps, t_cur, sched)))
            if len(history) > 3:
                history.pop(0)
            x = dpmpp_step(x, history, t_next, sched, order=config.order)
    return SampleResult(
        samples=x,
        views_per_step=views_per_step,
        steps=config.steps,
        ensemble_count=members,
    )
