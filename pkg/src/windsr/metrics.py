"""Evaluation metrics for super-resolved wind fields.

All aggregate metrics operate on wind speed in physical units (m/s). RMSE
metrics reduce an ensemble to its per-timestamp mean; CRPS uses the full
empirical distribution of the ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .grids import FieldGrid, SamplePair, decode_direction_grid

# Keys cubic convolution kernel parameter (Catmull-Rom); interpolates
# constants and straight ramps exactly away from clamped edges.
_CUBIC_A = -0.5


@dataclass(frozen=True)
class PredictionSet:
    """Per-timestamp ensembles of predicted high-res grids with matching truths."""

    predictions: np.ndarray  # (n_timestamps, ensemble, H, W)
    truths: np.ndarray       # (n_timestamps, H, W)
    nfe_total: int = 0

    def __post_init__(self):
        p = np.asarray(self.predictions, dtype=np.float64)
        t = np.asarray(self.truths, dtype=np.float64)
        if p.ndim != 4 or t.ndim != 3:
            raise DimensionError(
                f"predictions must be (n, ens, H, W) and truths (n, H, W); "
                f"got {p.shape} and {t.shape}"
            )
        if p.shape[0] != t.shape[0] or p.shape[2:] != t.shape[1:]:
            raise DimensionError(f"predictions {p.shape} do not match truths {t.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError("need at least one timestamp and one ensemble member")
        if self.nfe_total < 0:
            raise ValidationError("nfe_total must be nonnegative")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "truths", t)

    @property
    def ensemble_size(self) -> int:
        return self.predictions.shape[1]


def mean_map(stack: np.ndarray) -> np.ndarray:
    """Per-pixel mean over timestamps; ensembles are averaged within each timestamp first."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 4:
        stack = stack.mean(axis=1)
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise DimensionError(f"expected (n, H, W) or (n, ens, H, W), got {stack.shape}")
    return stack.mean(axis=0)


def mm_rmse(pred_mean_map: np.ndarray, true_mean_map: np.ndarray) -> float:
    """Root mean squared difference of two mean maps, averaged over pixels."""
    a, b = np.asarray(pred_mean_map), np.asarray(true_mean_map)
    if a.shape != b.shape:
        raise DimensionError(f"mean map shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def t_rmse(predictions: np.ndarray, truths: np.ndarray) -> float:
    """Per-timestamp RMSE: mean over pixels and timestamps of squared error.

    Ensembles reduce to their per-timestamp mean prediction.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.ndim == 4:
        p = p.mean(axis=1)
    if p.shape != t.shape:
        raise DimensionError(f"predictions {p.shape} do not match truths {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def crps(ensemble: np.ndarray, observation: float) -> float:
    """CRPS of an empirical ensemble at one point, via the closed energy form.

    CRPS(F, y) = E|X - y| - (1/2) E|X - X'| with X, X' drawn uniformly from the
    ensemble (including X = X'), which equals the integral of the squared
    difference between the empirical CDF and the observation step function.
    A single-member ensemble gives exactly the absolute error.
    """
    ens = np.asarray(ensemble, dtype=np.float64).ravel()
    if ens.size < 1:
        raise ValidationError("ensemble must contain at least one member")
    term1 = np.mean(np.abs(ens - observation))
    term2 = np.mean(np.abs(ens[:, None] - ens[None, :])) / 2.0
    return float(term1 - term2)


def crps_field(ensemble: np.ndarray, observation: np.ndarray) -> np.ndarray:
    """Vectorized CRPS per pixel; ensemble on axis 0."""
    ens = np.asarray(ensemble, dtype=np.float64)
    obs = np.asarray(observation, dtype=np.float64)
    if ens.ndim != obs.ndim + 1 or ens.shape[1:] != obs.shape:
        raise DimensionError(f"ensemble {ens.shape} does not match observation {obs.shape}")
    term1 = np.abs(ens - obs).mean(axis=0)
    term2 = np.abs(ens[:, None] - ens[None, :]).mean(axis=(0, 1)) / 2.0
    return term1 - term2


def t_crps(predictions: np.ndarray, truths: np.ndarray) -> float:
    """Mean per-pixel ensemble CRPS across all timestamps (m/s)."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.ndim != 4 or p.shape[0] != t.shape[0] or p.shape[2:] != t.shape[1:]:
        raise DimensionError(f"predictions {p.shape} do not match truths {t.shape}")
    vals = [crps_field(p[i], t[i]) for i in range(p.shape[0])]
    return float(np.mean(vals))


def mm_crps(predictions: np.ndarray, truths: np.ndarray) -> float:
    """Mean-map CRPS: one mean map per ensemble member, scored per pixel.

    The ensemble structure over mean maps is one map per member (member m's
    map averages member m's predictions over all timestamps).
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    member_maps = p.mean(axis=0)  # (ens, H, W)
    true_map = t.mean(axis=0)
    return float(np.mean(crps_field(member_maps, true_map)))


def metric_report(pred_set: PredictionSet) -> dict[str, float]:
    """All speed metrics for one prediction set."""
    return {
        "mm_rmse": mm_rmse(mean_map(pred_set.predictions), mean_map(pred_set.truths)),
        "t_rmse": t_rmse(pred_set.predictions, pred_set.truths),
        "mm_crps": mm_crps(pred_set.predictions, pred_set.truths),
        "t_crps": t_crps(pred_set.predictions, pred_set.truths),
    }


def _cubic_kernel(s: np.ndarray) -> np.ndarray:
    s = np.abs(s)
    a = _CUBIC_A
    near = (a + 2) * s ** 3 - (a + 3) * s ** 2 + 1
    far = a * (s ** 3 - 5 * s ** 2 + 8 * s - 4)
    return np.where(s <= 1, near, np.where(s < 2, far, 0.0))


def resize_bicubic(values: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Separable cubic-convolution resize, align-corners, replicate edges."""
    values = np.asarray(values, dtype=np.float64)

    def interp_axis(arr: np.ndarray, n_in: int, n_out: int, axis: int) -> np.ndarray:
        if n_in == 1 or n_out == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        base = np.floor(pos).astype(int)
        out = None
        for k in (-1, 0, 1, 2):
            idx = base + k
            w = _cubic_kernel(pos - idx)
            sampled = np.take(arr, np.clip(idx, 0, n_in - 1), axis=axis)
            shape = [1, 1]
            shape[axis] = n_out
            contrib = sampled * w.reshape(shape)
            out = contrib if out is None else out + contrib
        return out

    h_in, w_in = values.shape
    h_out, w_out = out_shape
    out = interp_axis(values, h_in, h_out, axis=0)
    return interp_axis(out, w_in, w_out, axis=1)


def bicubic_baseline(pair: SamplePair) -> dict[str, FieldGrid]:
    """Deterministic baseline: bicubic upsampling of the low-res wind to high-res.

    Returns the predicted speed grid plus the decoded direction (degrees).
    """
    f = pair.scale_factor
    hr_shape = pair.hr_shape
    lr_speed = pair.conditioning.get("lr_speed").grids[0]
    speed = resize_bicubic(lr_speed.values, hr_shape)
    out = {"speed": FieldGrid(speed, units=lr_speed.units)}
    try:
        lr_dir = pair.conditioning.get("lr_direction")
    except ValidationError:
        return out
    s = resize_bicubic(lr_dir.grids[0].values, hr_shape)
    c = resize_bicubic(lr_dir.grids[1].values, hr_shape)
    out["direction"] = FieldGrid(decode_direction_grid(s, c), units="degrees")
    return out
