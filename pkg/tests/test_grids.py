import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from windsr.errors import DimensionError, ValidationError
from windsr.grids import (
    ConditioningSet,
    ConditioningVariable,
    FieldGrid,
    SamplePair,
    StandardizationStats,
    VariableSpec,
    apply_dropout,
    assemble_conditioning,
    coarsen,
    decode_direction,
    destandardize,
    encode_direction,
    resize_bilinear,
    sample_crop,
    standardize,
    upsample_bilinear,
)
from windsr.synthetic import generate_synthetic_pair


def grid(values, units=""):
    return FieldGrid(np.asarray(values, dtype=float), units)


class TestFieldGrid:
    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            grid([[1.0, np.nan]])

    def test_rejects_wrong_rank(self):
        with pytest.raises(DimensionError):
            FieldGrid(np.zeros(4))

    def test_shape_metadata(self):
        g = grid(np.ones((3, 5)), units="m/s")
        assert (g.height, g.width) == (3, 5)
        assert g.units == "m/s"


class TestCoarsen:
    def test_constant_grid_stays_constant(self):
        g = grid(np.full((8, 8), 3.25))
        out = coarsen(g, 4)
        assert out.shape == (2, 2)
        np.testing.assert_array_equal(out.values, np.full((2, 2), 3.25))

    def test_two_by_two_mean(self):
        out = coarsen(grid([[1, 2], [3, 4]]), 2)
        np.testing.assert_array_equal(out.values, [[2.5]])

    def test_preserves_global_mean(self, rng):
        # oracle: direct summation over the raw grid
        v = rng.normal(size=(32, 32))
        out = coarsen(grid(v), 8)
        assert abs(out.values.mean() - v.sum() / v.size) < 1e-12

    def test_units_carried(self):
        assert coarsen(grid(np.ones((4, 4)), "m/s"), 2).units == "m/s"

    def test_non_divisible_shape_errors(self):
        with pytest.raises(DimensionError):
            coarsen(grid(np.ones((6, 6))), 4)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_mean_preservation_property(self, hb, wb, seed):
        f = 4
        v = np.random.default_rng(seed).normal(size=(hb * f, wb * f))
        out = coarsen(grid(v), f)
        assert abs(out.values.mean() - v.mean()) < 1e-10 * max(1.0, abs(v.mean()))


class TestUpsampleBilinear:
    def test_constant(self):
        out = upsample_bilinear(grid(np.full((3, 3), 2.0)), 4)
        np.testing.assert_allclose(out.values, 2.0)
        assert out.shape == (12, 12)

    def test_factor_one_is_identity(self):
        g = grid(np.arange(9.0).reshape(3, 3))
        np.testing.assert_array_equal(upsample_bilinear(g, 1).values, g.values)

    def test_known_column_ramp(self):
        # align-corners: output positions j * (n_in - 1) / (n_out - 1)
        out = upsample_bilinear(grid([[0.0, 1.0], [0.0, 1.0]]), 2)
        expected_row = [0.0, 1 / 3, 2 / 3, 1.0]
        for row in out.values:
            np.testing.assert_allclose(row, expected_row, atol=1e-15)

    def test_against_scalar_interpolation_oracle(self, rng):
        v = rng.normal(size=(3, 4))
        out = resize_bilinear(v, (9, 8))

        def oracle(r, c):
            pr = r * (3 - 1) / (9 - 1)
            pc = c * (4 - 1) / (8 - 1)
            r0, c0 = int(math.floor(pr)), int(math.floor(pc))
            r1, c1 = min(r0 + 1, 2), min(c0 + 1, 3)
            fr, fc = pr - r0, pc - c0
            top = v[r0, c0] * (1 - fc) + v[r0, c1] * fc
            bot = v[r1, c0] * (1 - fc) + v[r1, c1] * fc
            return top * (1 - fr) + bot * fr

        for r in range(9):
            for c in range(8):
                assert abs(out[r, c] - oracle(r, c)) < 1e-12


class TestDirectionEncoding:
    def test_cardinal_points(self):
        assert encode_direction(0.0) == pytest.approx((0.0, 1.0), abs=1e-15)
        assert encode_direction(90.0) == pytest.approx((1.0, 0.0), abs=1e-15)

    def test_round_trip(self):
        s, c = encode_direction(37.0)
        assert abs(decode_direction(s, c) - 37.0) < 1e-9

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            encode_direction(float("nan"))

    @given(st.floats(-1e6, 1e6, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_unit_norm_property(self, theta):
        s, c = encode_direction(theta)
        assert abs(s * s + c * c - 1.0) < 1e-12


class TestStandardize:
    def test_identity_stats(self):
        g = grid([[1.0, -2.0]])
        np.testing.assert_array_equal(standardize(g, 0.0, 1.0).values, g.values)

    def test_all_mean_values_map_to_zero(self):
        g = grid(np.full((4, 4), 6.5))
        np.testing.assert_array_equal(standardize(g, 6.5, 2.0).values, 0.0)

    def test_round_trip(self, rng):
        g = grid(rng.normal(5.0, 3.0, size=(8, 8)))
        back = destandardize(standardize(g, 5.0, 3.0), 5.0, 3.0)
        assert np.max(np.abs(back.values - g.values)) < 1e-9

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ValidationError):
            standardize(grid([[1.0]]), 0.0, 0.0)


@pytest.fixture
def pair():
    return generate_synthetic_pair(seed=3, hr_size=32, scale_factor=8)


class TestDropout:
    def test_empty_set_is_identity(self, pair):
        out = apply_dropout(pair.conditioning, set())
        assert out.presence == pair.conditioning.presence

    def test_direction_channels_zeroed_together(self, pair):
        cond = apply_dropout(pair.conditioning, {"lr_direction"})
        assembled = assemble_conditioning(cond, pair.hr_shape, pair.stats, pair.scale_factor)
        names = []
        for var in cond.variables:
            names.extend([var.spec.name] * var.spec.channels)
        idx = [i for i, n in enumerate(names) if n == "lr_direction"]
        assert len(idx) == 2
        for i in idx:
            np.testing.assert_array_equal(assembled[i], 0.0)
        for i in range(assembled.shape[0]):
            if i not in idx:
                assert np.any(assembled[i] != 0.0)

    def test_drop_all_groups_zeroes_everything(self, pair):
        cond = apply_dropout(pair.conditioning, set(pair.conditioning.dropout_groups()))
        assembled = assemble_conditioning(cond, pair.hr_shape, pair.stats, pair.scale_factor)
        np.testing.assert_array_equal(assembled, 0.0)

    def test_unknown_group_errors(self, pair):
        with pytest.raises(ValidationError):
            apply_dropout(pair.conditioning, {"no_such_group"})

    def test_idempotent_and_commutes_on_disjoint_groups(self, pair):
        a = apply_dropout(apply_dropout(pair.conditioning, {"topography"}), {"topography"})
        b = apply_dropout(pair.conditioning, {"topography"})
        assert a.presence == b.presence
        ab = apply_dropout(apply_dropout(pair.conditioning, {"topography"}), {"lr_speed"})
        ba = apply_dropout(apply_dropout(pair.conditioning, {"lr_speed"}), {"topography"})
        assert ab.presence == ba.presence


class TestSampleCrop:
    def test_full_size_is_identity(self, pair):
        out = sample_crop(pair, size=32, centered=True)
        np.testing.assert_array_equal(out.hr_targets[0].grids[0].values,
                                      pair.hr_targets[0].grids[0].values)

    def test_same_seed_same_crop(self):
        big = generate_synthetic_pair(seed=5, hr_size=64, scale_factor=8)
        a = sample_crop(big, size=32, rng_seed=99)
        b = sample_crop(big, size=32, rng_seed=99)
        np.testing.assert_array_equal(a.hr_targets[0].grids[0].values,
                                      b.hr_targets[0].grids[0].values)

    def test_centered_offset(self):
        big = generate_synthetic_pair(seed=5, hr_size=48, scale_factor=8)
        out = sample_crop(big, size=32, centered=True)
        # offset floor((48-32)/2) = 8
        np.testing.assert_array_equal(out.hr_targets[0].grids[0].values,
                                      big.hr_targets[0].grids[0].values[8:40, 8:40])

    def test_lr_alignment(self):
        big = generate_synthetic_pair(seed=5, hr_size=64, scale_factor=8)
        out = sample_crop(big, size=32, rng_seed=4)
        hr_speed = out.hr_targets[0]
        lr_speed = out.conditioning.get("lr_speed")
        assert coarsen(hr_speed.grids[0], 8).shape == lr_speed.shape

    def test_too_large_errors(self, pair):
        with pytest.raises(DimensionError):
            sample_crop(pair, size=40)
        with pytest.raises(DimensionError):
            sample_crop(pair, size=12)  # not divisible by 8


class TestSamplePairValidation:
    def test_shape_mismatch_rejected(self):
        spec = VariableSpec("speed", "target", "high", units="m/s")
        tv = ConditioningVariable(spec, (grid(np.ones((16, 16))),))
        bad = ConditioningVariable(
            VariableSpec("lr_speed", "input", "low", dropout_group="lr_speed"),
            (grid(np.ones((3, 3))),),
        )
        with pytest.raises(DimensionError):
            SamplePair(hr_targets=(tv,), conditioning=ConditioningSet(variables=(bad,)),
                       stats=StandardizationStats({}), scale_factor=8)
