"""Classifier-free guidance and its composite generalization over conditioning subsets.

A guidance configuration is a family of conditioning subsets K_1..K_m with
nonnegative weights summing to a total W. The guided noise estimate is

    eps_full + sum_i w_i * (eps_{K_i} - eps_uncond)

where each eps is the denoiser's implied noise under one conditioning view.
Views are deduplicated by presence mask, so a subset equal to the full set
never costs an extra denoiser evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DimensionError, ValidationError
from .grids import ConditioningSet, apply_dropout
from .schedule import NoiseSchedule, x0_to_eps


@dataclass(frozen=True)
class SubsetFamily:
    """Subsets of the conditioning-group universe, each omitting at most max_omitted groups."""

    universe: tuple[str, ...]
    subsets: tuple[tuple[str, ...], ...]
    max_omitted: int

    def __post_init__(self):
        if len(set(self.universe)) != len(self.universe):
            raise ValidationError("universe contains duplicate group names")
        uni = set(self.universe)
        seen = set()
        for sub in self.subsets:
            if not sub:
                raise ValidationError("subsets must be non-empty")
            if set(sub) - uni:
                raise ValidationError(f"subset {sub} not within universe")
            if len(self.universe) - len(sub) > self.max_omitted:
                raise ValidationError(f"subset {sub} omits more than {self.max_omitted} groups")
            key = frozenset(sub)
            if key in seen:
                raise ValidationError(f"duplicate subset {sub}")
            seen.add(key)

    @property
    def size(self) -> int:
        return len(self.subsets)

    def bitmask(self, index: int) -> str:
        present = set(self.subsets[index])
        return "".join("1" if g in present else "0" for g in self.universe)

    def keep(self, indices: list[int]) -> "SubsetFamily":
        return SubsetFamily(
            universe=self.universe,
            subsets=tuple(self.subsets[i] for i in indices),
            max_omitted=self.max_omitted,
        )


def enumerate_subsets(universe: tuple[str, ...] | list[str], max_omitted: int) -> SubsetFamily:
    """All non-empty subsets omitting at most max_omitted groups.

    Deterministic order: by omission count, then lexicographic in the omitted
    index combination, so serialized weight files are stable.
    """
    universe = tuple(universe)
    k = len(universe)
    if not (0 <= max_omitted <= k):
        raise ValidationError(f"max_omitted must be in [0, {k}], got {max_omitted}")
    subsets = []
    for n_omit in range(max_omitted + 1):
        if n_omit == k:
            continue  # the empty subset is excluded by construction
        for omitted in combinations(range(k), n_omit):
            drop = set(omitted)
            subsets.append(tuple(g for i, g in enumerate(universe) if i not in drop))
    return SubsetFamily(universe=universe, subsets=tuple(subsets), max_omitted=max_omitted)


@dataclass(frozen=True)
class SubsetWeights:
    """A subset family with nonnegative weights on the W-simplex (sum = total)."""

    family: SubsetFamily
    weights: np.ndarray
    total: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.ndim != 1 or w.size != self.family.size:
            raise ValidationError(
                f"need one weight per subset ({self.family.size}), got shape {w.shape}"
            )
        if w.size < 1:
            raise ValidationError("at least one weighted subset is required")
        if np.any(w < -1e-12):
            raise ValidationError("weights must be nonnegative")
        w = np.maximum(w, 0.0)
        if self.total <= 0:
            raise ValidationError(f"total weight must be positive, got {self.total}")
        if abs(float(w.sum()) - self.total) > 1e-9:
            raise ValidationError(
                f"weights sum to {w.sum():.12g}, expected {self.total:.12g}"
            )
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.family.size

    def to_text(self) -> str:
        lines = [
            "SUBSET-WEIGHTS 1",
            f"W {self.total!r}",
            "groups " + " ".join(self.family.universe),
            f"max_omitted {self.family.max_omitted}",
        ]
        for i, w in enumerate(self.weights):
            lines.append(f"subset {self.family.bitmask(i)} {float(w)!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "SubsetWeights":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split() != ["SUBSET-WEIGHTS", "1"]:
            raise ValidationError("bad subset-weights header")
        total = None
        universe: tuple[str, ...] = ()
        max_omitted = 0
        masks, values = [], []
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "W":
                total = float(parts[1])
            elif parts[0] == "groups":
                universe = tuple(parts[1:])
            elif parts[0] == "max_omitted":
                max_omitted = int(parts[1])
            elif parts[0] == "subset":
                masks.append(parts[1])
                values.append(float(parts[2]))
            else:
                raise ValidationError(f"unrecognized subset-weights line: {ln!r}")
        if total is None or not universe:
            raise ValidationError("subset-weights text missing W or groups")
        subsets = []
        for mask in masks:
            if len(mask) != len(universe) or set(mask) - {"0", "1"}:
                raise ValidationError(f"bad subset bitmask {mask!r}")
            subsets.append(tuple(g for g, bit in zip(universe, mask) if bit == "1"))
        family = SubsetFamily(universe=universe, subsets=tuple(subsets), max_omitted=max_omitted)
        return SubsetWeights(family=family, weights=np.array(values), total=total)


def cfg_weights(universe: tuple[str, ...] | list[str], w: float) -> SubsetWeights:
    """Standard classifier-free guidance as the m=1, K_1=universe special case."""
    universe = tuple(universe)
    family = SubsetFamily(universe=universe, subsets=(universe,), max_omitted=0)
    return SubsetWeights(family=family, weights=np.array([w]), total=w)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """eps_cond + w * (eps_cond - eps_uncond)."""
    eps_cond, eps_uncond = np.asarray(eps_cond), np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_cond + w * (eps_cond - eps_uncond)


def ccfg_combine(
    eps_full: np.ndarray,
    eps_subsets: list[np.ndarray],
    eps_uncond: np.ndarray,
    weights: SubsetWeights,
) -> np.ndarray:
    """eps_full + sum_i w_i * (eps_{K_i} - eps_uncond)."""
    eps_full, eps_uncond = np.asarray(eps_full), np.asarray(eps_uncond)
    if len(eps_subsets) != weights.m:
        raise ValidationError(
            f"expected {weights.m} subset estimates, got {len(eps_subsets)}"
        )
    if eps_full.shape != eps_uncond.shape:
        raise DimensionError(f"shape mismatch {eps_full.shape} vs {eps_uncond.shape}")
    out = eps_full.astype(np.float64, copy=True)
    for w, eps_k in zip(weights.weights, eps_subsets):
        eps_k = np.asarray(eps_k)
        if eps_k.shape != eps_full.shape:
            raise DimensionError(f"subset eps shape {eps_k.shape} != {eps_full.shape}")
        out += w * (eps_k - eps_uncond)
    return out


@dataclass(frozen=True)
class GuidedEps:
    eps: np.ndarray
    views_evaluated: int


def evaluate_guided_eps(
    denoiser,
    x_t: np.ndarray,
    cond: ConditioningSet,
    t: int,
    weights: SubsetWeights,
    sched: NoiseSchedule,
) -> GuidedEps:
    """Evaluate the composite-guided noise estimate at one step.

    Runs the denoiser once per distinct conditioning view (full set, each
    subset, unconditional); identical views share one evaluation. Groups of
    ``cond`` outside the weight universe stay dropped in every view.
    """
    universe = weights.family.universe
    all_groups = set(cond.dropout_groups())
    missing = set(universe) - all_groups
    if missing:
        raise ValidationError(f"weight universe groups missing from conditioning: {sorted(missing)}")

    def view(present: tuple[str, ...]) -> ConditioningSet:
        return apply_dropout(cond, all_groups - set(present))

    cache: dict[tuple[bool, ...], np.ndarray] = {}

    def implied_eps(present: tuple[str, ...]) -> np.ndarray:
        v = view(present)
        key = v.presence_key()
        if key not in cache:
            x0 = denoiser(x_t, v, t)
            cache[key] = x0_to_eps(x_t, x0, t, sched)
        return cache[key]

    eps_full = implied_eps(universe)
    eps_subsets = [implied_eps(sub) for sub in weights.family.subsets]
    eps_uncond = implied_eps(())
    guided = ccfg_combine(eps_full, eps_subsets, eps_uncond, weights)
    return GuidedEps(eps=guided, views_evaluated=len(cache))


def direct_eps(denoiser, x_t: np.ndarray, cond: ConditioningSet, t: int,
               sched: NoiseSchedule) -> GuidedEps:
    """Unguided inference: the fully conditioned estimate alone (1 view)."""
    x0 = denoiser(x_t, cond, t)
    return GuidedEps(eps=x0_to_eps(x_t, x0, t, sched), views_evaluated=1)
