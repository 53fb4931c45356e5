import numpy as np
import pytest
from scipy.integrate import quad

from vpamp.ensembles import ProfileKind, VarianceProfile, constant_profile
from vpamp.nonlinearity import Affine, Identity, NonlinearitySchedule, ScaledTanh, Zero
from vpamp.state_evolution import (
    DEFAULT_RULE,
    QuadratureError,
    QuadratureRule,
    SePath,
    gaussian_expectation_2d,
    sample_se_sequence,
    se_asymmetric,
    se_onsager,
    se_onsager_asymmetric,
    se_symmetric,
    sigma_star,
)

RULE81 = QuadratureRule.gauss_hermite(81)


def scalar_tanh_se(sigma1_sq: float, steps: int) -> list[float]:
    """Independent adaptive-integration recursion for the constant profile.

    sigma_{t+1}^2 = E tanh^2(N(0, sigma_t^2)) evaluated with scipy.quad.
    """
    out = [sigma1_sq]
    for _ in range(steps):
        s2 = out[-1]
        sd = np.sqrt(s2)
        val, _ = quad(
            lambda x: np.tanh(x) ** 2
            * np.exp(-(x**2) / (2 * s2))
            / (sd * np.sqrt(2 * np.pi)),
            -12 * sd,
            12 * sd,
        )
        out.append(val)
    return out


class TestQuadratureRule:
    def test_weights_sum_to_one(self):
        assert abs(DEFAULT_RULE.weights.sum() - 1.0) < 1e-12

    def test_moments_exact_up_to_degree(self):
        # E X^{2j} = (2j-1)!! for a standard normal; exact for 2j <= 2*order-1.
        double_factorial = 1.0
        for j in range(1, 12):
            double_factorial *= 2 * j - 1
            approx = float(np.sum(DEFAULT_RULE.weights * DEFAULT_RULE.nodes ** (2 * j)))
            assert abs(approx - double_factorial) <= 1e-12 * max(1.0, double_factorial)

    def test_odd_moments_vanish(self):
        for j in (1, 3, 5):
            assert abs(np.sum(DEFAULT_RULE.weights * DEFAULT_RULE.nodes ** j)) < 1e-12

    def test_expect_1d_vectorized_over_coordinates(self):
        variances = np.array([0.0, 1.0, 4.0])
        out = DEFAULT_RULE.expect_1d(lambda x: x**2, variances)
        np.testing.assert_allclose(out, variances, atol=1e-12)


class TestGaussianExpectation2d:
    def test_identity_identity_gives_correlation(self):
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        val = gaussian_expectation_2d(lambda x: x, lambda y: y, cov)
        assert val == pytest.approx(0.5, abs=1e-12)

    def test_square_square_wick(self):
        # Isserlis: E X^2 Y^2 = 1 + 2 rho^2 at unit variances.
        cov = np.array([[1.0, 0.5], [0.5, 1.0]])
        val = gaussian_expectation_2d(lambda x: x**2, lambda y: y**2, cov)
        assert val == pytest.approx(1.5, abs=1e-10)
        mc = np.random.Generator(np.random.Philox(key=9))
        l = np.linalg.cholesky(cov)
        draws = mc.standard_normal((200_000, 2)) @ l.T
        mc_val = np.mean(draws[:, 0] ** 2 * draws[:, 1] ** 2)
        assert val == pytest.approx(mc_val, abs=4 * 2.45 / np.sqrt(200_000))

    def test_zero_covariance_is_point_mass(self):
        val = gaussian_expectation_2d(
            lambda x: x + 2.0, lambda y: y - 3.0, np.zeros((2, 2))
        )
        assert val == pytest.approx(-6.0, abs=1e-12)

    def test_rank_one_covariance(self):
        # Perfectly correlated: Y = 2X with var X = 1.
        cov = np.array([[1.0, 2.0], [2.0, 4.0]])
        val = gaussian_expectation_2d(lambda x: x, lambda y: y, cov)
        assert val == pytest.approx(2.0, abs=1e-12)

    def test_non_psd_raises(self):
        with pytest.raises(QuadratureError):
            gaussian_expectation_2d(
                lambda x: x, lambda y: y, np.array([[1.0, 2.0], [2.0, 1.0]])
            )


class TestSeSymmetric:
    def test_identity_keeps_variance_constant(self):
        n = 12
        profile = constant_profile(n, n)
        z0 = np.full(n, 1.3)
        sched = NonlinearitySchedule.constant(Identity(), 5, n)
        se = se_symmetric(profile, sched, z0, 5)
        sigma1_sq = np.mean(z0**2)
        for t in range(1, 6):
            np.testing.assert_allclose(se.variances(t), sigma1_sq, rtol=1e-12)

    def test_tanh_matches_scalar_recursion(self):
        n = 10
        profile = constant_profile(n, n)
        z0 = np.ones(n)
        horizon = 4
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), horizon, n)
        se = se_symmetric(profile, sched, z0, horizon)
        oracle = scalar_tanh_se(np.tanh(1.0) ** 2, horizon - 1)
        for t in range(1, horizon + 1):
            assert se.variances(t)[0] == pytest.approx(oracle[t - 1], abs=1e-8)

    def test_heterogeneous_two_coordinate_matches_direct_mc(self):
        # Independent oracle: rerun the covariance recursion with plain
        # Monte Carlo estimates of every Gaussian expectation.
        v = VarianceProfile(
            np.array([[1.0, 0.7], [0.7, 0.4]]), ProfileKind.SYMMETRIC
        )
        z0 = np.array([1.0, -0.5])
        horizon = 3
        n = 2
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), horizon, n)
        se = se_symmetric(v, sched, z0, horizon)

        rng = np.random.Generator(np.random.Philox(key=2024))
        draws = 1_000_000
        v2 = v.squared
        cov_mc = np.zeros((n, horizon + 1, horizon + 1))
        mc_se = np.zeros((n, horizon + 1, horizon + 1))
        f0 = np.tanh(z0)
        for t in range(horizon):
            for s in range(t + 1):
                prods = np.empty((draws, n))
                for k in range(n):
                    if t == 0 and s == 0:
                        prods[:, k] = f0[k] ** 2
                        continue
                    block = cov_mc[k][np.ix_([t, s], [t, s])]
                    eigval, eigvec = np.linalg.eigh(block)
                    root = eigvec * np.sqrt(np.clip(eigval, 0, None))
                    zz = rng.standard_normal((draws, 2)) @ root.T
                    if s == 0:
                        prods[:, k] = np.tanh(zz[:, 0]) * f0[k]
                    else:
                        prods[:, k] = np.tanh(zz[:, 0]) * np.tanh(zz[:, 1])
                mean = v2 @ prods.mean(axis=0) / n
                stderr = v2 @ prods.std(axis=0) / n / np.sqrt(draws)
                cov_mc[:, t + 1, s + 1] = cov_mc[:, s + 1, t + 1] = mean
                mc_se[:, t + 1, s + 1] = mc_se[:, s + 1, t + 1] = stderr
        for k in range(n):
            for t in range(1, horizon + 1):
                for s in range(1, t + 1):
                    tol = 3 * mc_se[k, t, s] + 1e-4
                    assert abs(se.cov[k, t, s] - cov_mc[k, t, s]) <= tol

    def test_blocks_are_psd(self):
        profile = constant_profile(6, 6)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), 4, 6)
        se = se_symmetric(profile, sched, np.ones(6), 4)
        for k in range(6):
            eigvals = np.linalg.eigvalsh(se.block(k))
            assert eigvals.min() >= -1e-10
        assert se.clip_magnitude <= 1e-8

    def test_permutation_equivariance(self):
        rng = np.random.Generator(np.random.Philox(key=5))
        n = 5
        entries = np.abs(rng.normal(1, 0.5, (n, n)))
        entries = np.triu(entries) + np.triu(entries, 1).T
        profile = VarianceProfile(entries, ProfileKind.SYMMETRIC)
        z0 = rng.normal(size=n)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), 3, n)
        se = se_symmetric(profile, sched, z0, 3)
        perm = np.array([3, 0, 4, 1, 2])
        se_p = se_symmetric(profile.permuted(perm), sched, z0[perm], 3)
        np.testing.assert_allclose(se_p.cov, se.cov[perm], atol=1e-12)

    def test_profile_scaling_power_law(self):
        # For the identity map, scaling V by c scales sigma_t^2 by c^{2t}.
        n, c, horizon = 4, 1.5, 3
        base = constant_profile(n, n)
        scaled = constant_profile(n, n, value=c)
        sched = NonlinearitySchedule.constant(Identity(), horizon, n)
        z0 = np.linspace(0.5, 1.0, n)
        se_base = se_symmetric(base, sched, z0, horizon)
        se_scaled = se_symmetric(scaled, sched, z0, horizon)
        for t in range(1, horizon + 1):
            np.testing.assert_allclose(
                se_scaled.variances(t), c ** (2 * t) * se_base.variances(t), rtol=1e-10
            )

    def test_quadrature_order_doubling_is_stable(self):
        profile = constant_profile(8, 8)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), 4, 8)
        z0 = np.ones(8)
        se41 = se_symmetric(profile, sched, z0, 4, rule=DEFAULT_RULE)
        se81 = se_symmetric(profile, sched, z0, 4, rule=RULE81)
        assert np.max(np.abs(se41.cov - se81.cov)) <= 1e-9


class TestSigmaStar:
    def _path_with_variances(self, variances):
        variances = np.asarray(variances, dtype=float)
        n, horizon = variances.shape
        cov = np.zeros((n, horizon + 1, horizon + 1))
        for t in range(horizon):
            cov[:, t + 1, t + 1] = variances[:, t]
        profile = constant_profile(n, n)
        return SePath(
            kind=ProfileKind.SYMMETRIC,
            horizon=horizon,
            profile=profile,
            init=np.zeros(n),
            cov=cov,
        )

    def test_capped_at_one(self):
        se = self._path_with_variances(np.full((3, 2), 4.0))
        assert sigma_star(se, 2) == 1.0

    def test_small_variance_dominates(self):
        variances = np.full((3, 2), 1.0)
        variances[1, 0] = 0.04
        se = self._path_with_variances(variances)
        assert sigma_star(se, 2) == pytest.approx(0.2)

    def test_goe_tanh_path_matches_scalar_oracle(self):
        n, horizon = 10, 4
        profile = constant_profile(n, n)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), horizon, n)
        se = se_symmetric(profile, sched, np.ones(n), horizon)
        oracle = scalar_tanh_se(np.tanh(1.0) ** 2, horizon - 1)
        assert sigma_star(se, horizon) == pytest.approx(
            min(1.0, np.sqrt(min(oracle))), abs=1e-8
        )


class TestSampleSeSequence:
    def test_diagonal_block_gives_uncorrelated_draws(self):
        se = TestSigmaStar()._path_with_variances(np.array([[1.0, 2.0]]))
        draws = sample_se_sequence(se, 0, 40_000, seed=1)
        corr = np.corrcoef(draws.T)[0, 1]
        assert abs(corr) <= 3 / np.sqrt(40_000)

    def test_zero_block_gives_zero_draws(self):
        se = TestSigmaStar()._path_with_variances(np.zeros((2, 3)))
        draws = sample_se_sequence(se, 0, 100, seed=2)
        assert np.all(draws == 0.0)

    def test_sample_covariance_converges(self):
        n, horizon = 4, 3
        profile = constant_profile(n, n)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), horizon, n)
        se = se_symmetric(profile, sched, np.ones(n), horizon)
        b = 200_000
        draws = sample_se_sequence(se, 2, b, seed=3)
        emp = np.cov(draws.T, ddof=1)
        target = se.block(2)[1:, 1:]
        assert np.linalg.norm(emp - target) <= 5 / np.sqrt(b)


class TestSeOnsager:
    def test_identity_gives_profile_row_means(self):
        n = 6
        rng = np.random.Generator(np.random.Philox(key=8))
        entries = np.abs(rng.normal(1, 0.3, (n, n)))
        entries = np.triu(entries) + np.triu(entries, 1).T
        profile = VarianceProfile(entries, ProfileKind.SYMMETRIC)
        sched = NonlinearitySchedule.constant(Identity(), 3, n)
        se = se_symmetric(profile, sched, np.ones(n), 3)
        for t in range(1, 4):
            np.testing.assert_allclose(
                se_onsager(se, sched, t), profile.squared.mean(axis=1), rtol=1e-12
            )

    def test_tanh_matches_adaptive_integration(self):
        n = 8
        profile = constant_profile(n, n)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), 3, n)
        se = se_symmetric(profile, sched, np.ones(n), 3)
        t = 2
        s2 = se.variances(t)[0]
        sd = np.sqrt(s2)
        oracle, _ = quad(
            lambda x: (1 - np.tanh(x) ** 2)
            * np.exp(-(x**2) / (2 * s2))
            / (sd * np.sqrt(2 * np.pi)),
            -12 * sd,
            12 * sd,
        )
        assert se_onsager(se, sched, t)[0] == pytest.approx(oracle, abs=1e-8)

    def test_degenerate_variance_collapses_to_point_mass(self):
        # Zero-profile first step: sigma_1 = 0, so the t=1 correction uses F'(0).
        n = 4
        profile = constant_profile(n, n)
        sched = NonlinearitySchedule.constant(ScaledTanh(2.0, 1.0), 2, n)
        se = se_symmetric(profile, sched, np.zeros(n), 2)
        assert se.variances(1)[0] == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(se_onsager(se, sched, 1), 2.0, rtol=1e-12)

    def test_time_zero_evaluates_at_initialization(self):
        n = 3
        profile = constant_profile(n, n)
        sched = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), 2, n)
        z0 = np.array([0.5, -1.0, 2.0])
        se = se_symmetric(profile, sched, z0, 2)
        expected = np.mean(1 - np.tanh(z0) ** 2)
        np.testing.assert_allclose(se_onsager(se, sched, 0), expected, rtol=1e-12)


class TestSeAsymmetric:
    def test_first_row_variance_is_exact(self):
        m, n = 3, 5
        rng = np.random.Generator(np.random.Philox(key=4))
        entries = np.abs(rng.normal(1, 0.4, (m, n)))
        profile = VarianceProfile(entries, ProfileKind.RECTANGULAR)
        v0 = rng.normal(size=n)
        fs = NonlinearitySchedule.constant(ScaledTanh(1.0, 1.0), 3, n)
        gs = NonlinearitySchedule(3, m, default=Identity(), per_t={0: Zero()})
        se = se_asymmetric(profile, fs, gs, v0, 3)
        expected = profile.squared @ (np.tanh(v0) ** 2) / m
        np.testing.assert_allclose(se.variances(1, side="u"), expected, rtol=1e-12)

    def test_identity_alternation_matches_scalar_recursion(self):
        # Identity maps and a constant profile: each round multiplies the
        # variance by phi^{-1} on the row side and copies it back, so
        # var U^(t) = var V^(t) = phi^{-t} * mean(v0^2).
        m, n = 6, 12
        inv_phi = n / m
        profile = constant_profile(m, n)
        v0 = np.full(n, 0.8)
        horizon = 3
        fs = NonlinearitySchedule.constant(Identity(), horizon, n)
        gs = NonlinearitySchedule(horizon + 1, m, default=Identity(), per_t={0: Zero()})
        se = se_asymmetric(profile, fs, gs, v0, horizon)
        for t in range(1, horizon + 1):
            expected = inv_phi**t * np.mean(v0**2)
            np.testing.assert_allclose(se.variances(t, side="u"), expected, rtol=1e-12)
            np.testing.assert_allclose(se.variances(t, side="v"), expected, rtol=1e-12)

    def test_onsager_identity_values(self):
        m, n = 4, 6
        profile = constant_profile(m, n)
        fs = NonlinearitySchedule.constant(Identity(), 2, n)
        gs = NonlinearitySchedule(2, m, default=Identity(), per_t={0: Zero()})
        se = se_asymmetric(profile, fs, gs, np.ones(n), 2)
        bf, bg = se_onsager_asymmetric(se, fs, gs, 1)
        np.testing.assert_allclose(bf, n / m, rtol=1e-12)
        np.testing.assert_allclose(bg, 1.0, rtol=1e-12)
