import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpamp.nonlinearity import (
    Affine,
    CoordinateBlocks,
    Identity,
    NonlinearitySchedule,
    RidgeProxAffine,
    ScaledTanh,
    ScheduleError,
    SmoothSoftThreshold,
    Zero,
    check_lipschitz,
    default_check_grid,
    family_from_config,
)

ALL_FAMILIES = [
    Identity(),
    Affine(a=2.0, b=3.0),
    Affine(a=-0.5, b=0.0),
    ScaledTanh(alpha=1.0, beta=1.0),
    ScaledTanh(alpha=3.0, beta=0.7),
    SmoothSoftThreshold(theta=1.0, delta=0.1),
    SmoothSoftThreshold(theta=0.5, delta=0.05),
    RidgeProxAffine(lam=1.0, tau=2.0, center=0.3),
    Zero(),
]


class TestFamilies:
    def test_identity(self):
        z = np.array([-1.0, 0.0, 2.5])
        fam = Identity()
        assert np.array_equal(fam.eval(z), z)
        assert np.array_equal(fam.deriv(z), np.ones(3))

    def test_scaled_tanh_at_origin(self):
        fam = ScaledTanh(1.0, 1.0)
        assert fam.eval(np.zeros(1))[0] == 0.0
        assert fam.deriv(np.zeros(1))[0] == 1.0

    def test_affine_values(self):
        fam = Affine(a=2.0, b=3.0)
        z = np.array([1.0, -1.0])
        assert np.array_equal(fam.eval(z), np.array([5.0, 1.0]))
        assert np.array_equal(fam.deriv(z), np.array([2.0, 2.0]))

    def test_smooth_soft_threshold_odd_and_zero_at_origin(self):
        fam = SmoothSoftThreshold(theta=1.0, delta=0.1)
        z = np.linspace(-4, 4, 101)
        np.testing.assert_allclose(fam.eval(z), -fam.eval(-z), atol=1e-14)
        assert fam.eval(np.zeros(1))[0] == 0.0

    def test_smooth_soft_threshold_matches_hinge_far_out(self):
        fam = SmoothSoftThreshold(theta=1.0, delta=0.05)
        assert fam.eval(np.array([10.0]))[0] == pytest.approx(9.0, abs=1e-8)

    def test_ridge_prox_affine_is_prox_of_quadratic(self):
        # prox of mu -> (lam/2) * tau * mu^2 is x / (1 + lam*tau)
        lam, tau, center = 0.7, 1.3, 0.25
        fam = RidgeProxAffine(lam=lam, tau=tau, center=center)
        v = np.array([0.4, -1.1])
        expected = (center - v) / (1.0 + lam * tau) - center
        np.testing.assert_allclose(fam.eval(v), expected, atol=1e-15)

    @pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f.name)
    def test_finite_everywhere(self, family):
        z = np.array([-1e8, -1.0, 0.0, 1.0, 1e8])
        assert np.all(np.isfinite(family.eval(z)))
        assert np.all(np.isfinite(family.deriv(z)))

    @pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f.name)
    def test_derivative_matches_finite_differences(self, family):
        grid = np.linspace(-5.0, 5.0, 201)
        step = 1e-5
        numeric = (family.eval(grid + step) - family.eval(grid - step)) / (2 * step)
        analytic = family.deriv(grid)
        scale = np.maximum(np.abs(analytic), 1.0)
        assert np.max(np.abs(numeric - analytic) / scale) <= 1e-6

    @pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f.name)
    def test_declared_lipschitz_bound_holds_on_grid(self, family):
        grid = default_check_grid()
        assert check_lipschitz(family, family.lipschitz_bound() + 1e-12, grid)


class TestCheckLipschitz:
    def test_identity_bound_one(self):
        assert check_lipschitz(Identity(), 1.0, default_check_grid())

    def test_steep_tanh_fails_low_claim(self):
        assert not check_lipschitz(ScaledTanh(3.0, 1.0), 2.0, default_check_grid())

    def test_smoothed_threshold_just_above_one(self):
        fam = SmoothSoftThreshold(theta=1.0, delta=0.1)
        assert check_lipschitz(fam, 1.01, np.linspace(-50, 50, 200001))


class TestCoordinateBlocks:
    def test_blocks_apply_to_own_slices(self):
        fam = CoordinateBlocks(blocks=((0, 2, Zero()), (2, 4, Identity())))
        z = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(fam.eval(z), [0.0, 0.0, 3.0, 4.0])
        np.testing.assert_array_equal(fam.deriv(z), [0.0, 0.0, 1.0, 1.0])

    def test_blocks_respect_leading_axes(self):
        fam = CoordinateBlocks(blocks=((0, 1, Affine(a=2.0)), (1, 3, Identity())))
        z = np.arange(6.0).reshape(2, 3)
        out = fam.eval(z)
        np.testing.assert_array_equal(out[:, 0], 2.0 * z[:, 0])
        np.testing.assert_array_equal(out[:, 1:], z[:, 1:])


class TestSchedule:
    def test_minus_one_is_zero_function(self):
        sched = NonlinearitySchedule.constant(Identity(), 3, 4)
        z = np.ones(4)
        assert np.all(sched.eval(-1, z) == 0.0)
        assert np.all(sched.deriv(-1, z) == 0.0)

    def test_out_of_range_iteration(self):
        sched = NonlinearitySchedule.constant(Identity(), 3, 4)
        with pytest.raises(ScheduleError):
            sched.eval(4, np.ones(4))

    def test_length_mismatch(self):
        sched = NonlinearitySchedule.constant(Identity(), 3, 4)
        with pytest.raises(ScheduleError):
            sched.eval(0, np.ones(5))

    def test_per_t_table_overrides_default(self):
        sched = NonlinearitySchedule(
            2, 3, default=Identity(), per_t={1: Affine(a=0.0, b=1.0)}
        )
        z = np.full(3, 2.0)
        assert np.all(sched.eval(0, z) == 2.0)
        assert np.all(sched.eval(1, z) == 1.0)

    def test_missing_iteration_rejected(self):
        with pytest.raises(ScheduleError):
            NonlinearitySchedule(2, 3, per_t={0: Identity()})

    def test_global_lipschitz_bound(self):
        sched = NonlinearitySchedule(
            1, 3, default=ScaledTanh(2.0, 1.5), per_t={1: Identity()}
        )
        assert sched.lipschitz_bound() == pytest.approx(3.0)

    @given(st.floats(-30, 30))
    @settings(max_examples=50, deadline=None)
    def test_smooth_soft_threshold_slope_below_one(self, x):
        fam = SmoothSoftThreshold(theta=1.0, delta=0.1)
        assert abs(fam.deriv(np.array([x]))[0]) <= 1.0


class TestFamilyFromConfig:
    def test_builds_named_family(self):
        fam = family_from_config({"family": "scaled_tanh", "params": {"alpha": 2.0}})
        assert isinstance(fam, ScaledTanh)
        assert fam.alpha == 2.0

    def test_vector_parameters(self):
        fam = family_from_config(
            {"family": "affine", "params": {"a": [1.0, 2.0], "b": 0.0}}
        )
        np.testing.assert_array_equal(fam.eval(np.ones(2)), [1.0, 2.0])

    def test_unknown_family(self):
        with pytest.raises(KeyError):
            family_from_config({"family": "bogus"})
