"""Subset-weight selection: simplex-constrained descent with periodic greedy pruning.

Starting from uniform weights over every subset omitting at most p groups, each
iteration samples a small batch with the inner 5-step ancestral sampler under
the current composite guidance, takes a gradient step on the reconstruction
loss plus weight decay, periodically removes the lowest-weight subset, and
projects back to the W-simplex, finishing with exactly m weighted subsets.

Gradients come from central finite differences under common random numbers by
default (the weight vector is low-dimensional and each probe is a cheap
5-step sample); an exact autograd path through the rollout is available for
torch-backed denoisers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .errors import ValidationError
from .grids import ConditioningSet, SamplePair, apply_dropout, assemble_targets
from .guidance import SubsetFamily, SubsetWeights, enumerate_subsets
from .samplers import SamplerConfig, ddpm_noise_bank, sample, timestep_grid
from .schedule import NoiseSchedule


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum(w) = total} by sort and threshold."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValidationError("cannot project an empty vector")
    if total <= 0:
        raise ValidationError(f"simplex total must be positive, got {total}")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def raw_weights(family: SubsetFamily, values: np.ndarray) -> SubsetWeights:
    """SubsetWeights without simplex validation; for optimizer probes only."""
    w = SubsetWeights.__new__(SubsetWeights)
    object.__setattr__(w, "family", family)
    object.__setattr__(w, "weights", np.asarray(values, dtype=np.float64))
    object.__setattr__(w, "total", float(np.sum(values)))
    return w


@dataclass(frozen=True)
class SelectionConfig:
    p: int = 1
    m: int = 2
    iterations: int = 30
    total_weight: float = 1.5
    alpha: float = 1e-3  # L1 decay; constant on the simplex, kept for completeness
    beta: float = 1e-3   # L2 decay (Euclidean norm, not squared)
    eta: float = 0.5
    batch: int = 2
    inner_sampler: SamplerConfig = field(
        default_factory=lambda: SamplerConfig(method="ddpm", steps=5, order=1)
    )
    gradient_mode: str = "finite-difference"
    fd_step: float = 1e-3
    seed: int = 0
    variables: tuple[str, ...] = ()  # empty = all dataset inputs

    def __post_init__(self):
        if self.gradient_mode not in ("finite-difference", "analytic"):
            raise ValidationError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.total_weight <= 0 or self.eta <= 0:
            raise ValidationError("total_weight and eta must be positive")
        if self.m < 1:
            raise ValidationError("subset budget m must be >= 1")
        if self.batch < 1 or self.iterations < 0:
            raise ValidationError("bad batch size or iteration count")


@dataclass(frozen=True)
class PruneEvent:
    iteration: int
    subset: tuple[str, ...]
    weight: float


@dataclass(frozen=True)
class SelectionTrace:
    losses: tuple[float, ...]
    weight_snapshots: tuple[tuple[float, ...], ...]
    subset_snapshots: tuple[tuple[tuple[str, ...], ...], ...]
    prune_events: tuple[PruneEvent, ...]

    def to_text(self) -> str:
        lines = ["iteration\tloss\tpruned\tweights"]
        events = {e.iteration: e for e in self.prune_events}
        for i, (loss, ws, subs) in enumerate(
            zip(self.losses, self.weight_snapshots, self.subset_snapshots), start=1
        ):
            pruned = "+".join(events[i].subset) if i in events else "-"
            pairs = " ".join(f"{'+'.join(s)}:{w:.6g}" for s, w in zip(subs, ws))
            lines.append(f"{i}\t{loss:.9g}\t{pruned}\t{pairs}")
        return "\n".join(lines) + "\n"


def _restrict(pair: SamplePair, variables: tuple[str, ...]) -> SamplePair:
    if not variables:
        return pair
    return SamplePair(
        hr_targets=pair.hr_targets,
        conditioning=pair.conditioning.subset_variables(list(variables)),
        stats=pair.stats,
        timestamp_id=pair.timestamp_id,
        scale_factor=pair.scale_factor,
    )


def _iteration_seed(seed: int, iteration: int, pair_index: int) -> int:
    return int(np.random.SeedSequence((seed, iteration, pair_index)).generate_state(1)[0])


def selection_loss(
    weights: SubsetWeights,
    batch: list[SamplePair],
    denoiser,
    config: SelectionConfig,
    sched: NoiseSchedule,
    iteration: int = 0,
) -> float:
    """Reconstruction loss of guided samples plus weight decay, under fixed noise.

    Mean absolute error is computed in standardized target space. The noise
    seeds depend only on (config.seed, iteration, pair), never on the weights,
    so finite differences see a smooth function.
    """
    if not batch:
        raise ValidationError("selection batch must be non-empty")
    err = 0.0
    for idx, pair in enumerate(batch):
        pair = _restrict(pair, config.variables)
        inner = replace(config.inner_sampler,
                        rng_seed=_iteration_seed(config.seed, iteration, idx),
                        ensemble_count=1)
        res = sample(denoiser, pair.conditioning, inner, sched, weights=weights)
        err += float(np.abs(res.samples[0] - assemble_targets(pair)).mean())
    w = weights.weights
    return (err / len(batch)
            + config.alpha * float(np.abs(w).sum())
            + config.beta * float(np.linalg.norm(w)))


def _fd_gradient(family, w, batch, denoiser, config, sched, iteration) -> np.ndarray:
    grad = np.zeros_like(w)
    h = config.fd_step
    for i in range(w.size):
        up, down = w.copy(), w.copy()
        up[i] += h
        down[i] -= h
        loss_up = selection_loss(raw_weights(family, up), batch, denoiser, config,
                                 sched, iteration)
        loss_down = selection_loss(raw_weights(family, down), batch, denoiser, config,
                                   sched, iteration)
        grad[i] = (loss_up - loss_down) / (2 * h)
    return grad


def selection_loss_torch(
    family: SubsetFamily,
    w_tensor,
    batch: list[SamplePair],
    denoiser,
    config: SelectionConfig,
    sched: NoiseSchedule,
    iteration: int = 0,
):
    """Differentiable twin of selection_loss for torch-backed denoisers.

    Mirrors the ancestral sampler update for update, reading the same noise
    bank, so its value matches selection_loss to float precision and autograd
    yields the exact gradient in the weights.
    """
    import torch

    net = denoiser.net
    dtype = next(net.parameters()).dtype
    taus = timestep_grid(sched, config.inner_sampler.steps)
    eta = config.inner_sampler.eta
    universe = family.universe
    total_err = None
    for idx, pair in enumerate(batch):
        pair = _restrict(pair, config.variables)
        cond = pair.conditioning
        all_groups = set(cond.dropout_groups())

        views: dict = {}
        key_of: dict = {}
        for present in [universe, *family.subsets, ()]:
            v = apply_dropout(cond, all_groups - set(present))
            key = v.presence_key()
            key_of[present] = key
            if key not in views:
                views[key] = torch.as_tensor(denoiser._assembled(v), dtype=dtype)[None]

        shape = denoiser.sample_shape
        seed = _iteration_seed(config.seed, iteration, idx)
        x0_bank, z_bank = ddpm_noise_bank(seed, 1, shape, taus, eta)
        x = torch.as_tensor(x0_bank, dtype=dtype)

        for j in range(len(taus) - 1):
            t_cur, t_next = int(taus[j]), int(taus[j + 1])
            a_cur = float(sched.a(t_cur))
            sig_cur = float(sched.sigma[t_cur])
            t_tensor = torch.full((1,), float(t_cur), dtype=dtype)
            eps_views = {}
            for key, cond_t in views.items():
                x0 = net(torch.cat([x, cond_t], dim=1), t_tensor)
                eps_views[key] = (x - a_cur * x0) / sig_cur
            eps = eps_views[key_of[universe]]
            eps_unc = eps_views[key_of[()]]
            for wi, sub in zip(w_tensor, family.subsets):
                eps = eps + wi * (eps_views[key_of[sub]] - eps_unc)
            x0_hat = (x - sig_cur * eps) / a_cur
            if t_next == 0:
                x = x0_hat
            else:
                ab_cur = float(sched.alpha_bar[t_cur])
                ab_next = float(sched.alpha_bar[t_next])
                var = (eta ** 2) * (1 - ab_next) / (1 - ab_cur) * (1 - ab_cur / ab_next)
                coef = float(np.sqrt(max(1 - ab_next - var, 0.0)))
                x = float(np.sqrt(ab_next)) * x0_hat + coef * eps
                if var > 0:
                    x = x + float(np.sqrt(var)) * torch.as_tensor(z_bank[j], dtype=dtype)

        target = torch.as_tensor(assemble_targets(pair), dtype=dtype)[None]
        err = (x - target).abs().mean()
        total_err = err if total_err is None else total_err + err
    loss = total_err / len(batch)
    return loss + config.alpha * w_tensor.abs().sum() + config.beta * torch.norm(w_tensor)


def _analytic_gradient(family, w, batch, denoiser, config, sched, iteration) -> np.ndarray:
    import torch

    w_t = torch.tensor(w, dtype=torch.float64, requires_grad=True)
    loss = selection_loss_torch(family, w_t, batch, denoiser, config, sched, iteration)
    loss.backward()
    return w_t.grad.numpy().copy()


def prune_least_impactful(weights: SubsetWeights, budget: int) -> SubsetWeights:
    """Drop the minimal-weight subset (ties: lowest index) and re-project to the simplex."""
    if weights.m <= budget:
        warnings.warn("already at subset budget; prune is a no-op", stacklevel=2)
        return weights
    drop = int(np.argmin(weights.weights))
    keep = [i for i in range(weights.m) if i != drop]
    family = weights.family.keep(keep)
    projected = project_simplex(weights.weights[keep], weights.total)
    return SubsetWeights(family=family, weights=projected, total=weights.total)


def run_selection(
    dataset: Dataset,
    denoiser,
    config: SelectionConfig,
    sched: NoiseSchedule,
    universe: tuple[str, ...] | None = None,
) -> tuple[SubsetWeights, SelectionTrace]:
    """Full selection loop; returns exactly m subsets with weights summing to W."""
    if len(dataset) == 0:
        raise ValidationError("selection needs a non-empty dataset")
    if universe is None:
        cond = _restrict(dataset.pairs[0], config.variables).conditioning
        universe = cond.dropout_groups()
    family = enumerate_subsets(universe, config.p)
    n_p = family.size
    if not (1 <= config.m <= n_p):
        raise ValidationError(f"budget m={config.m} outside [1, {n_p}]")
    n_prunes = n_p - config.m
    if config.iterations < n_prunes + 1 and n_prunes > 0:
        raise ValidationError(
            f"need at least n_p - m + 1 = {n_prunes + 1} iterations, got {config.iterations}"
        )
    interval = int(np.ceil(config.iterations / (n_prunes + 1)))

    grad_fn = (_analytic_gradient if config.gradient_mode == "analytic"
               else _fd_gradient)
    w = np.full(n_p, config.total_weight / n_p)
    losses, snapshots, subset_snaps, events = [], [], [], []
    for it in range(1, config.iterations + 1):
        base = (it - 1) * config.batch
        batch = [dataset.pairs[(base + j) % len(dataset)] for j in range(config.batch)]
        loss = selection_loss(raw_weights(family, w), batch, denoiser, config, sched, it)
        grad = grad_fn(family, w, batch, denoiser, config, sched, it)
        w = w - config.eta * grad
        if interval and it % interval == 0 and family.size > config.m:
            drop = int(np.argmin(w))
            events.append(PruneEvent(iteration=it, subset=family.subsets[drop],
                                     weight=float(w[drop])))
            keep = [i for i in range(family.size) if i != drop]
            family = family.keep(keep)
            w = w[keep]
        w = project_simplex(w, config.total_weight)
        losses.append(loss)
        snapshots.append(tuple(float(v) for v in w))
        subset_snaps.append(family.subsets)

    final = SubsetWeights(family=family, weights=w, total=config.total_weight)
    trace = SelectionTrace(
        losses=tuple(losses),
        weight_snapshots=tuple(snapshots),
        subset_snapshots=tuple(subset_snaps),
        prune_events=tuple(events),
    )
    return final, trace
