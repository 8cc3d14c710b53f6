"""Domain types for paired wind fields and the preprocessing transforms applied to them.

Grids hold physical values (m/s, degrees, meters, ...); standardization to
model space happens at assembly time so one sample can be viewed under any
dropout state without mutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ValidationError

KINDS = ("target", "input")
RESOLUTIONS = ("high", "low", "static")
ENCODINGS = ("scalar", "direction-sincos")


@dataclass(frozen=True)
class FieldGrid:
    """A single-variable 2-D grid of physical values with units metadata."""

    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"grid must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"grid must be at least 1x1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("grid contains non-finite values")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class VariableSpec:
    """Declares one dataset variable: its role, resolution, encoding and dropout group."""

    name: str
    kind: str
    resolution: str
    encoding: str = "scalar"
    dropout_group: str = ""
    units: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}")
        if self.resolution not in RESOLUTIONS:
            raise ValidationError(f"unknown resolution {self.resolution!r}")
        if self.encoding not in ENCODINGS:
            raise ValidationError(f"unknown encoding {self.encoding!r}")
        if self.kind == "input" and not self.dropout_group:
            object.__setattr__(self, "dropout_group", self.name)

    @property
    def channels(self) -> int:
        # direction variables expand to separate sine and cosine channels
        return 2 if self.encoding == "direction-sincos" else 1


@dataclass(frozen=True)
class StandardizationStats:
    """Per-variable mean and standard deviation used to map physical values to model space.

    Variables absent from the table standardize with (0, 1), i.e. pass through
    unchanged; this is how bounded channels like direction sine/cosine are handled.
    """

    table: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, (mean, std) in self.table.items():
            mean, std = float(mean), float(std)
            if not (math.isfinite(mean) and math.isfinite(std)):
                raise ValidationError(f"non-finite stats for {name!r}")
            if std <= 0:
                raise ValidationError(f"std must be strictly positive for {name!r}, got {std}")
            clean[name] = (mean, std)
        object.__setattr__(self, "table", clean)

    def mean(self, name: str) -> float:
        return self.table.get(name, (0.0, 1.0))[0]

    def std(self, name: str) -> float:
        return self.table.get(name, (0.0, 1.0))[1]


@dataclass(frozen=True)
class ConditioningVariable:
    spec: VariableSpec
    grids: tuple[FieldGrid, ...]

    def __post_init__(self):
        if len(self.grids) != self.spec.channels:
            raise DimensionError(
                f"{self.spec.name!r} needs {self.spec.channels} grid(s), got {len(self.grids)}"
            )
        shapes = {g.shape for g in self.grids}
        if len(shapes) > 1:
            raise DimensionError(f"{self.spec.name!r} channel grids disagree on shape: {shapes}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grids[0].shape


@dataclass(frozen=True)
class ConditioningSet:
    """The ordered collection of conditioning variables plus a per-group presence mask.

    Assembly substitutes all-zero channels for absent groups, so the same
    sample can be viewed under any conditioning subset without copying data.
    """

    variables: tuple[ConditioningVariable, ...]
    presence: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        presence = dict(self.presence)
        for var in self.variables:
            presence.setdefault(var.spec.dropout_group, True)
        known = self.dropout_groups()
        unknown = set(presence) - set(known)
        if unknown:
            raise ValidationError(f"presence mask names unknown groups: {sorted(unknown)}")
        object.__setattr__(self, "presence", presence)

    def dropout_groups(self) -> tuple[str, ...]:
        """Distinct dropout groups in first-appearance order."""
        seen: list[str] = []
        for var in self.variables:
            if var.spec.dropout_group not in seen:
                seen.append(var.spec.dropout_group)
        return tuple(seen)

    def present_groups(self) -> tuple[str, ...]:
        return tuple(g for g in self.dropout_groups() if self.presence[g])

    def presence_key(self) -> tuple[bool, ...]:
        """Hashable view of the presence mask, in group order."""
        return tuple(self.presence[g] for g in self.dropout_groups())

    def channel_count(self) -> int:
        return sum(v.spec.channels for v in self.variables)

    def get(self, name: str) -> ConditioningVariable:
        for var in self.variables:
            if var.spec.name == name:
                return var
        raise ValidationError(f"no conditioning variable named {name!r}")

    def subset_variables(self, names: list[str]) -> "ConditioningSet":
        """Restrict to the named variables (declared order preserved)."""
        missing = set(names) - {v.spec.name for v in self.variables}
        if missing:
            raise ValidationError(f"unknown variables: {sorted(missing)}")
        kept = tuple(v for v in self.variables if v.spec.name in set(names))
        groups = {v.spec.dropout_group for v in kept}
        presence = {g: p for g, p in self.presence.items() if g in groups}
        return ConditioningSet(variables=kept, presence=presence)


@dataclass(frozen=True)
class SamplePair:
    """One timestamp: high-res targets, the conditioning set, and standardization stats."""

    hr_targets: tuple[ConditioningVariable, ...]
    conditioning: ConditioningSet
    stats: StandardizationStats
    timestamp_id: str = ""
    scale_factor: int = 8

    def __post_init__(self):
        hr_shapes = {v.shape for v in self.hr_targets}
        if len(hr_shapes) != 1:
            raise DimensionError(f"high-res targets disagree on shape: {hr_shapes}")
        hr = next(iter(hr_shapes))
        if hr[0] % self.scale_factor or hr[1] % self.scale_factor:
            raise DimensionError(f"hr shape {hr} not divisible by scale factor {self.scale_factor}")
        lr = (hr[0] // self.scale_factor, hr[1] // self.scale_factor)
        for var in self.conditioning.variables:
            want = lr if var.spec.resolution == "low" else hr
            if var.shape != want:
                raise DimensionError(
                    f"{var.spec.name!r} has shape {var.shape}, expected {want}"
                )

    @property
    def hr_shape(self) -> tuple[int, int]:
        return self.hr_targets[0].shape

    def target_channel_count(self) -> int:
        return sum(v.spec.channels for v in self.hr_targets)


def coarsen(grid: FieldGrid, factor: int) -> FieldGrid:
    """Average-pool a grid by an integer factor; each output cell is its block mean."""
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    h, w = grid.shape
    if h % factor or w % factor:
        raise DimensionError(f"shape {grid.shape} not divisible by factor {factor}")
    v = grid.values.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))
    return FieldGrid(values=v, units=grid.units)


def _bilinear_axis_positions(n_in: int, n_out: int) -> np.ndarray:
    # align-corners convention: endpoints of the output land on endpoints of the input
    if n_in == 1 or n_out == 1:
        return np.zeros(n_out)
    return np.arange(n_out) * (n_in - 1) / (n_out - 1)


def upsample_bilinear(grid: FieldGrid, factor: int) -> FieldGrid:
    """Bilinearly upsample by an integer factor using the align-corners convention."""
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return grid
    return FieldGrid(values=resize_bilinear(grid.values, (grid.height * factor, grid.width * factor)),
                     units=grid.units)


def resize_bilinear(values: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Separable align-corners bilinear resize of a 2-D array."""
    values = np.asarray(values, dtype=np.float64)
    h_in, w_in = values.shape
    h_out, w_out = out_shape

    def interp_axis(arr: np.ndarray, n_in: int, n_out: int, axis: int) -> np.ndarray:
        pos = _bilinear_axis_positions(n_in, n_out)
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = pos - lo
        a = np.take(arr, lo, axis=axis)
        b = np.take(arr, hi, axis=axis)
        shape = [1, 1]
        shape[axis] = n_out
        f = frac.reshape(shape)
        return a * (1 - f) + b * f

    out = interp_axis(values, h_in, h_out, axis=0)
    out = interp_axis(out, w_in, w_out, axis=1)
    return out


def encode_direction(theta_degrees: float) -> tuple[float, float]:
    """Encode a direction in degrees as its (sine, cosine) pair."""
    if not math.isfinite(theta_degrees):
        raise ValidationError(f"direction must be finite, got {theta_degrees}")
    rad = math.radians(theta_degrees % 360.0)
    return math.sin(rad), math.cos(rad)


def decode_direction(sin_component: float, cos_component: float) -> float:
    """Invert encode_direction via the two-argument arctangent; result in [0, 360)."""
    return math.degrees(math.atan2(sin_component, cos_component)) % 360.0


def encode_direction_grid(grid: FieldGrid) -> tuple[FieldGrid, FieldGrid]:
    rad = np.radians(grid.values % 360.0)
    return (FieldGrid(values=np.sin(rad), units=""), FieldGrid(values=np.cos(rad), units=""))


def decode_direction_grid(sin_grid: np.ndarray, cos_grid: np.ndarray) -> np.ndarray:
    return np.degrees(np.arctan2(sin_grid, cos_grid)) % 360.0


def standardize(grid: FieldGrid, mean: float, std: float) -> FieldGrid:
    """Map physical values to model space: (x - mean) / std."""
    if std <= 0:
        raise ValidationError(f"std must be strictly positive, got {std}")
    return FieldGrid(values=(grid.values - mean) / std, units=grid.units)


def destandardize(grid: FieldGrid, mean: float, std: float) -> FieldGrid:
    """Inverse of standardize: x * std + mean."""
    if std <= 0:
        raise ValidationError(f"std must be strictly positive, got {std}")
    return FieldGrid(values=grid.values * std + mean, units=grid.units)


def apply_dropout(cond: ConditioningSet, dropped_groups: set[str]) -> ConditioningSet:
    """Mark the given dropout groups absent; their assembled channels become exactly zero."""
    known = set(cond.dropout_groups())
    unknown = set(dropped_groups) - known
    if unknown:
        raise ValidationError(f"unknown dropout groups: {sorted(unknown)}")
    presence = dict(cond.presence)
    for g in dropped_groups:
        presence[g] = False
    return replace(cond, presence=presence)


def assemble_conditioning(
    cond: ConditioningSet,
    hr_shape: tuple[int, int],
    stats: StandardizationStats,
    scale_factor: int,
) -> np.ndarray:
    """Assemble the standardized conditioning tensor (C, H, W) in manifest order.

    Low-resolution variables are bilinearly upsampled to the high-res shape;
    absent groups contribute all-zero channels.
    """
    channels: list[np.ndarray] = []
    lr_shape = (hr_shape[0] // scale_factor, hr_shape[1] // scale_factor)
    for var in cond.variables:
        if not cond.presence[var.spec.dropout_group]:
            for _ in range(var.spec.channels):
                channels.append(np.zeros(hr_shape))
            continue
        for g in var.grids:
            z = standardize(g, stats.mean(var.spec.name), stats.std(var.spec.name))
            if var.spec.resolution == "low":
                if g.shape != lr_shape:
                    raise DimensionError(
                        f"{var.spec.name!r} low-res shape {g.shape} != {lr_shape}"
                    )
                channels.append(resize_bilinear(z.values, hr_shape))
            else:
                if g.shape != hr_shape:
                    raise DimensionError(f"{var.spec.name!r} shape {g.shape} != {hr_shape}")
                channels.append(np.asarray(z.values))
    if not channels:
        return np.zeros((0,) + hr_shape)
    return np.stack(channels, axis=0)


def assemble_targets(pair: SamplePair) -> np.ndarray:
    """Stack the standardized high-res target channels as (C, H, W)."""
    channels = []
    for var in pair.hr_targets:
        for g in var.grids:
            z = standardize(g, pair.stats.mean(var.spec.name), pair.stats.std(var.spec.name))
            channels.append(np.asarray(z.values))
    return np.stack(channels, axis=0)


def _crop_variable(var: ConditioningVariable, r0: int, c0: int, size: int,
                   scale_factor: int) -> ConditioningVariable:
    if var.spec.resolution == "low":
        r, c, s = r0 // scale_factor, c0 // scale_factor, size // scale_factor
    else:
        r, c, s = r0, c0, size
    grids = tuple(FieldGrid(values=g.values[r:r + s, c:c + s], units=g.units) for g in var.grids)
    return ConditioningVariable(spec=var.spec, grids=grids)


def sample_crop(pair: SamplePair, size: int, rng_seed: int = 0, centered: bool = False) -> SamplePair:
    """Cut a spatially aligned square crop from every grid of the pair.

    Crop offsets are multiples of the scale factor so high-res and low-res
    windows stay aligned. Centered crops are deterministic; random crops are a
    pure function of rng_seed.
    """
    h, w = pair.hr_shape
    f = pair.scale_factor
    if size > h or size > w:
        raise DimensionError(f"crop size {size} exceeds grid shape {pair.hr_shape}")
    if size % f:
        raise DimensionError(f"crop size {size} not divisible by scale factor {f}")
    if centered:
        r0 = ((h - size) // 2 // f) * f
        c0 = ((w - size) // 2 // f) * f
    else:
        rng = np.random.default_rng(rng_seed)
        r0 = int(rng.integers(0, (h - size) // f + 1)) * f
        c0 = int(rng.integers(0, (w - size) // f + 1)) * f
    hr_targets = tuple(_crop_variable(v, r0, c0, size, f) for v in pair.hr_targets)
    cond_vars = tuple(_crop_variable(v, r0, c0, size, f) for v in pair.conditioning.variables)
    conditioning = ConditioningSet(variables=cond_vars, presence=dict(pair.conditioning.presence))
    return SamplePair(
        hr_targets=hr_targets,
        conditioning=conditioning,
        stats=pair.stats,
        timestamp_id=pair.timestamp_id,
        scale_factor=f,
    )
