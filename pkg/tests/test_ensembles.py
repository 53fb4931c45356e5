import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpamp.ensembles import (
    MaskMode,
    ProfileKind,
    ProfileShapeError,
    VarianceProfile,
    block_profile,
    constant_profile,
    iid_abs_gaussian_profile,
    mask_leave_out,
    profile_from_csv,
    sample_rectangular,
    sample_rectangular_entries,
    sample_symmetric,
)


class TestVarianceProfile:
    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError):
            VarianceProfile(np.array([[1.0, -0.1], [-0.1, 1.0]]), ProfileKind.SYMMETRIC)

    def test_rejects_asymmetric_for_symmetric_kind(self):
        with pytest.raises(ProfileShapeError):
            VarianceProfile(np.array([[1.0, 0.5], [0.2, 1.0]]), ProfileKind.SYMMETRIC)

    def test_rejects_entries_above_bound(self):
        with pytest.raises(ValueError):
            VarianceProfile(np.full((2, 2), 5.0), ProfileKind.SYMMETRIC, bound=2.0)

    def test_entries_are_read_only(self):
        profile = constant_profile(3, 3)
        with pytest.raises(ValueError):
            profile.entries[0, 0] = 2.0


class TestSampleSymmetric:
    def test_zero_profile_gives_zero_matrix(self):
        profile = constant_profile(8, 8, value=0.0)
        assert np.all(sample_symmetric(profile, 3).values == 0.0)

    def test_fixed_seed_is_bit_identical(self):
        profile = constant_profile(20, 20)
        first = sample_symmetric(profile, 42).values
        second = sample_symmetric(profile, 42).values
        assert np.array_equal(first, second)

    def test_different_seeds_differ(self):
        profile = constant_profile(20, 20)
        assert not np.array_equal(
            sample_symmetric(profile, 1).values, sample_symmetric(profile, 2).values
        )

    def test_entry_second_moment_matches_one_over_n(self):
        # Oracle: upper-triangle entries are i.i.d. with variance 1/n, so
        # their squared sample mean has relative MC error ~ sqrt(2 / count),
        # far inside the 5% band at n = 500.
        n = 500
        profile = constant_profile(n, n)
        a = sample_symmetric(profile, 123).values
        upper = a[np.triu_indices(n)]
        mean_sq = np.mean(upper**2)
        assert 0.95 / n <= mean_sq <= 1.05 / n

    def test_rejects_rectangular_profile(self):
        profile = constant_profile(4, 6)
        with pytest.raises(ProfileShapeError):
            sample_symmetric(profile, 0)

    @given(seed=st.integers(min_value=0, max_value=2**63), n=st.integers(2, 12))
    @settings(max_examples=25, deadline=None)
    def test_output_exactly_symmetric(self, seed, n):
        profile = iid_abs_gaussian_profile(n, n, seed=7)
        a = sample_symmetric(profile, seed).values
        assert np.array_equal(a, a.T)

    def test_operator_norm_stays_below_three(self):
        # Loose check against the spectral edge of the scaled semicircle.
        n, trials = 500, 200
        profile = constant_profile(n, n)
        failures = 0
        for seed in range(trials):
            a = sample_symmetric(profile, seed).values
            if np.max(np.abs(np.linalg.eigvalsh(a))) >= 3.0:
                failures += 1
        assert failures <= 2


class TestSampleRectangular:
    def test_zero_profile(self):
        profile = constant_profile(5, 9, value=0.0)
        assert np.all(sample_rectangular(profile, 1).values == 0.0)

    def test_entry_variance_is_one_over_m(self):
        m, n = 100, 200
        profile = constant_profile(m, n)
        a = sample_rectangular(profile, 99).values
        var = np.mean(a**2)
        assert 0.95 / m <= var <= 1.05 / m

    def test_reproducible(self):
        profile = constant_profile(7, 11)
        assert np.array_equal(
            sample_rectangular(profile, 5).values, sample_rectangular(profile, 5).values
        )

    def test_rejects_symmetric_profile(self):
        with pytest.raises(ProfileShapeError):
            sample_rectangular(constant_profile(4, 4), 0)

    @pytest.mark.parametrize("distribution", ["bernoulli", "t10"])
    def test_alternative_entries_are_standardized(self, distribution):
        m, n = 200, 300
        profile = constant_profile(m, n)
        a = sample_rectangular_entries(profile, 17, distribution).values
        assert abs(np.mean(a**2) * m - 1.0) < 0.05


class TestMaskLeaveOut:
    def test_empty_set_returns_equal_copy(self):
        matrix = sample_symmetric(constant_profile(6, 6), 0)
        masked = mask_leave_out(matrix, [])
        assert np.array_equal(masked.values, matrix.values)
        assert masked.values is not matrix.values

    def test_single_index_zeroes_row_and_column(self):
        matrix = sample_symmetric(constant_profile(6, 6), 0)
        masked = mask_leave_out(matrix, [2]).values
        assert np.all(masked[2, :] == 0)
        assert np.all(masked[:, 2] == 0)
        assert np.array_equal(masked, masked.T)

    def test_all_indices_gives_zero_matrix(self):
        matrix = sample_symmetric(constant_profile(5, 5), 0)
        assert np.all(mask_leave_out(matrix, range(5)).values == 0)

    def test_input_unchanged(self):
        matrix = sample_symmetric(constant_profile(5, 5), 0)
        before = matrix.values.copy()
        mask_leave_out(matrix, [1, 3])
        assert np.array_equal(matrix.values, before)

    def test_idempotent(self):
        matrix = sample_symmetric(constant_profile(8, 8), 4)
        once = mask_leave_out(matrix, [1, 5])
        twice = mask_leave_out(once, [1, 5])
        assert np.array_equal(once.values, twice.values)

    def test_nested_sets_compose(self):
        matrix = sample_symmetric(constant_profile(8, 8), 4)
        via_p = mask_leave_out(mask_leave_out(matrix, [2]), [2, 6])
        direct = mask_leave_out(matrix, [2, 6])
        assert np.array_equal(via_p.values, direct.values)

    def test_out_of_range_raises(self):
        matrix = sample_symmetric(constant_profile(4, 4), 0)
        with pytest.raises(IndexError):
            mask_leave_out(matrix, [4])

    def test_row_and_column_requires_symmetric(self):
        matrix = sample_rectangular(constant_profile(3, 5), 0)
        with pytest.raises(ProfileShapeError):
            mask_leave_out(matrix, [0], MaskMode.ROW_AND_COLUMN)

    def test_row_only_on_rectangular(self):
        matrix = sample_rectangular(constant_profile(3, 5), 0)
        masked = mask_leave_out(matrix, [1], MaskMode.ROW_ONLY).values
        assert np.all(masked[1, :] == 0)
        assert np.array_equal(masked[0], matrix.values[0])


class TestProfileConstruction:
    def test_csv_roundtrip(self, tmp_path):
        path = tmp_path / "v.csv"
        entries = np.array([[1.0, 0.5], [0.5, 2.0]])
        np.savetxt(path, entries, delimiter=",")
        profile = profile_from_csv(path, ProfileKind.SYMMETRIC)
        assert np.allclose(profile.entries, entries)

    def test_block_profile_layout(self):
        profile = block_profile([2, 3], [2, 3], [[1.0, 2.0], [2.0, 0.5]])
        assert profile.kind is ProfileKind.SYMMETRIC
        assert profile.entries[0, 0] == 1.0
        assert profile.entries[0, 4] == 2.0
        assert profile.entries[4, 4] == 0.5

    def test_iid_abs_gaussian_symmetric(self):
        profile = iid_abs_gaussian_profile(10, 10, seed=3)
        assert profile.kind is ProfileKind.SYMMETRIC
        assert np.all(profile.entries >= 0)
        assert np.array_equal(profile.entries, profile.entries.T)
