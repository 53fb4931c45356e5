"""Replicate orchestration and empirical-vs-theory statistical checks.

Replicate r always samples with seed `base_seed XOR r`; derived streams
inside a replicate (noise vectors, theory-side Gaussian draws, the per-k
leave-out family) occupy disjoint strata of the 64-bit key space via
large odd strides, so no two draws in an experiment share a key.
Aggregation is a plain reduce over the replicate-ordered result list and
is therefore independent of execution schedule.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np
import scipy.stats

from . import amp as amp_mod
from . import ridge as ridge_mod
from .ensembles import (
    ProfileKind,
    constant_profile,
    iid_abs_gaussian_profile,
    sample_rectangular_entries,
    sample_symmetric,
)
from .nonlinearity import NonlinearitySchedule, ScaledTanh
from .state_evolution import DEFAULT_RULE, QuadratureRule, SePath, se_symmetric

_MASK64 = 2**64 - 1
_NOISE_STRIDE = 0xC2B2AE3D27D4EB4F
_THEORY_STRIDE = 0x165667B19E3779F9


def replicate_seed(base_seed: int, replicate: int) -> int:
    return (base_seed ^ replicate) & _MASK64


def stratum_seed(base_seed: int, stride: int, index: int = 0) -> int:
    return (base_seed + stride * (index + 1)) & _MASK64


def run_replicates(fn, count: int, base_seed: int, workers: int = 1) -> list:
    """Evaluate fn(seed) for replicate seeds base^0 .. base^(count-1).

    Results come back ordered by replicate index regardless of the
    execution schedule; a thread pool is used since replicate work is
    dominated by BLAS calls.  Failures are collected and re-raised
    together with the offending seeds.
    """
    seeds = [replicate_seed(base_seed, r) for r in range(count)]

    def guarded(seed):
        try:
            return True, fn(seed)
        except Exception as exc:  # noqa: BLE001 - aggregated and re-raised
            return False, (seed, repr(exc))

    if workers <= 1:
        outcomes = [guarded(seed) for seed in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(guarded, seeds))
    failures = [payload for ok, payload in outcomes if not ok]
    if failures:
        raise RuntimeError(f"{len(failures)} replicate(s) failed: {failures[:3]}")
    return [payload for ok, payload in outcomes if ok]


@dataclass(frozen=True)
class SummaryStats:
    """Empirical moments against a theory value."""

    mean: float
    stderr: float | None
    count: int
    theory: float
    label: str = ""

    @property
    def zscore(self) -> float | None:
        if self.stderr is None or self.stderr == 0:
            return None
        return (self.mean - self.theory) / self.stderr

    @property
    def flagged(self) -> bool:
        z = self.zscore
        return z is not None and abs(z) > 4


def summarize(values, theory: float, label: str = "") -> SummaryStats:
    values = np.asarray(values, dtype=float)
    count = values.size
    stderr = float(values.std(ddof=1) / math.sqrt(count)) if count >= 2 else None
    return SummaryStats(
        mean=float(values.mean()), stderr=stderr, count=count, theory=theory, label=label
    )


# ---------------------------------------------------------------------------
# Test functions (pseudo-Lipschitz of order <= 2)
# ---------------------------------------------------------------------------

def _huber(x, delta):
    absx = np.abs(x)
    return np.where(absx <= delta, 0.5 * x * x, delta * (absx - 0.5 * delta))


@dataclass(frozen=True)
class PsiSpec:
    """Named test function applied to the tail of an iterate trajectory.

    The theory side is evaluated by quadrature when the function
    factorizes over one or two iterates (all named choices here), and
    would fall back to sampling the state-evolution Gaussian otherwise.
    """

    name: str
    delta: float = 1.0

    def apply_final(self, last, prev=None, truth=None):
        """Evaluate on final-iterate samples (and companions where needed)."""
        if self.name == "square":
            return last**2
        if self.name == "abs":
            return np.abs(last)
        if self.name == "huber":
            return _huber(last, self.delta)
        if self.name == "product_last_two":
            return last * prev
        if self.name == "product_with_truth":
            return last * truth
        raise KeyError(f"unknown test function {self.name!r}")

    def empirical(self, iterates: np.ndarray, z0: np.ndarray) -> np.ndarray:
        """Per-coordinate value from a realized (T+1, n) iterate array."""
        return self.apply_final(iterates[-1], prev=iterates[-2], truth=z0)

    def theory(self, se: SePath, t: int, rule: QuadratureRule = DEFAULT_RULE) -> np.ndarray:
        """Per-coordinate E[psi] under the state-evolution law at iterate t."""
        variances = se.variances(t)
        if self.name == "square":
            return variances
        if self.name == "abs":
            return np.sqrt(2.0 / np.pi) * np.sqrt(variances)
        if self.name == "huber":
            return rule.expect_1d(lambda x: _huber(x, self.delta), variances)
        if self.name == "product_last_two":
            return se.cov[:, t, t - 1]
        if self.name == "product_with_truth":
            return np.zeros_like(variances)
        raise KeyError(f"unknown test function {self.name!r}")


def psi_from_name(name: str) -> PsiSpec:
    if name.startswith("huber"):
        inner = name[len("huber"):].strip("()")
        return PsiSpec("huber", delta=float(inner) if inner else 1.0)
    return PsiSpec(name)


def entrywise_compare(
    trajectories, se: SePath, coordinate: int, psi: PsiSpec, t: int | None = None
) -> SummaryStats:
    """Replicate mean of psi at one coordinate against the Gaussian law."""
    t = se.horizon if t is None else t
    values = [
        psi.empirical(traj.iterates[: t + 1], se.init)[coordinate]
        for traj in trajectories
    ]
    theory = float(psi.theory(se, t)[coordinate])
    return SummaryStats(
        mean=float(np.mean(values)),
        stderr=float(np.std(values, ddof=1) / math.sqrt(len(values)))
        if len(values) >= 2
        else None,
        count=len(values),
        theory=theory,
        label=f"{psi.name}[k={coordinate}]",
    )


def averaged_compare(
    trajectories, se: SePath, psi: PsiSpec, t: int | None = None
) -> SummaryStats:
    """Coordinate-averaged psi against theory; informative even for one run."""
    t = se.horizon if t is None else t
    per_seed = [
        float(psi.empirical(traj.iterates[: t + 1], se.init).mean())
        for traj in trajectories
    ]
    theory = float(psi.theory(se, t).mean())
    return summarize(per_seed, theory, label=f"avg-{psi.name}") if len(per_seed) >= 2 else SummaryStats(
        mean=per_seed[0], stderr=None, count=1, theory=theory, label=f"avg-{psi.name}"
    )


# ---------------------------------------------------------------------------
# Distributional checks
# ---------------------------------------------------------------------------

def ks_statistic(samples, sigma: float) -> float:
    """Two-sided Kolmogorov distance against N(0, sigma^2).

    A zero sigma matches only identically-zero samples (distance 0);
    anything else is reported as an infinite distance.
    """
    samples = np.asarray(samples, dtype=float)
    if sigma == 0:
        return 0.0 if np.all(samples == 0) else float("inf")
    return float(scipy.stats.kstest(samples, scipy.stats.norm(scale=sigma).cdf).statistic)


def ks_threshold(count: int, alpha: float = 0.01, n_tests: int = 1) -> float:
    """Asymptotic two-sided critical distance at level alpha / n_tests."""
    level = alpha / n_tests
    return math.sqrt(-0.5 * math.log(level / 2.0)) / math.sqrt(count)


def normality_check(
    samples, sigma: float, alpha: float = 0.01, n_tests: int = 1
) -> tuple[bool, float, float]:
    """(passed, distance, threshold) for the KS test against N(0, sigma^2)."""
    samples = np.asarray(samples, dtype=float)
    distance = ks_statistic(samples, sigma)
    threshold = ks_threshold(samples.size, alpha, n_tests)
    return distance < threshold, distance, threshold


def rate_slope(values, sizes) -> tuple[float, float]:
    """Least-squares slope of log(value) against log(size).

    Returns (slope, 1.96 * standard error); the half width is zero for a
    two-point fit.  Nonpositive values are rejected.
    """
    values = np.asarray(values, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two sizes")
    if np.any(values <= 0):
        raise ValueError("rate fitting needs positive values")
    x = np.log(sizes)
    y = np.log(values)
    xbar = x.mean()
    sxx = float(((x - xbar) ** 2).sum())
    slope = float(((x - xbar) * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * xbar)
    if values.size == 2:
        return slope, 0.0
    residuals = y - intercept - slope * x
    se = math.sqrt(float((residuals**2).sum()) / (values.size - 2) / sxx)
    return slope, 1.96 * se


# ---------------------------------------------------------------------------
# Experiment drivers (shared by the CLI and the acceptance suite)
# ---------------------------------------------------------------------------

def _tanh_schedule(n: int, horizon: int, alpha: float = 1.0, beta: float = 1.0):
    return NonlinearitySchedule.constant(ScaledTanh(alpha, beta), horizon, n)


def loo_rate_experiment(
    n_list,
    seeds: int,
    horizon: int = 3,
    base_seed: int = 20240 ,
    workers: int = 1,
):
    """Decay, in n, of the leave-one-out representation error.

    Constant unit profile, tanh nonlinearity, all-ones initialization,
    state-evolution corrections.  Returns the per-n seed medians of the
    final-step worst-coordinate error, the fitted slope, and the largest
    step-0 error encountered (identically zero by construction).
    """
    medians = {}
    worst_t0 = 0.0
    for n in n_list:
        profile = constant_profile(n, n)
        schedule = _tanh_schedule(n, horizon)
        z0 = np.ones(n)
        se = se_symmetric(profile, schedule, z0, horizon)

        def one(seed, profile=profile, schedule=schedule, z0=z0, se=se):
            matrix = sample_symmetric(profile, seed)
            errors = amp_mod.leave_one_out_error_profile(
                matrix, schedule, z0, horizon, amp_mod.StateEvolution(), se=se
            )
            return errors[0].max(), errors[-1].max()

        results = run_replicates(one, seeds, base_seed, workers=workers)
        worst_t0 = max(worst_t0, max(r[0] for r in results))
        medians[n] = float(np.median([r[1] for r in results]))
    slope, halfwidth = rate_slope([medians[n] for n in n_list], list(n_list))
    return {
        "medians": medians,
        "slope": slope,
        "slope_halfwidth": halfwidth,
        "max_t0_error": worst_t0,
    }


def onsager_gap_experiment(
    n_list,
    seeds: int,
    horizon: int = 3,
    base_seed: int = 515151,
    workers: int = 1,
):
    """Sup-over-iterations gap between data-driven and state-evolution runs.

    Returns per-n per-seed gaps (paired by replicate index) so callers
    can count how often the larger size wins.
    """
    gaps = {}
    for n in n_list:
        profile = constant_profile(n, n)
        schedule = _tanh_schedule(n, horizon)
        z0 = np.ones(n)
        se = se_symmetric(profile, schedule, z0, horizon)

        def one(seed, profile=profile, schedule=schedule, z0=z0, se=se):
            matrix = sample_symmetric(profile, seed)
            per_t = amp_mod.compare_onsager_modes(
                matrix, schedule, z0, horizon, se
            )["data_vs_se"]
            return float(per_t.max())

        gaps[n] = np.asarray(run_replicates(one, seeds, base_seed, workers=workers))
    return gaps


def entrywise_experiment(
    profile,
    schedule,
    z0,
    horizon: int,
    replicates: int,
    coordinates,
    base_seed: int = 404,
    psis=(PsiSpec("square"),),
    alpha: float = 0.01,
    workers: int = 1,
):
    """Entrywise Gaussianity check: KS per coordinate plus psi z-scores."""
    se = se_symmetric(profile, schedule, z0, horizon)

    def one(seed):
        matrix = sample_symmetric(profile, seed)
        traj = amp_mod.run_symmetric(
            matrix, schedule, z0, horizon, amp_mod.StateEvolution(), se=se
        )
        return traj.iterates[-1][list(coordinates)]

    finals = np.asarray(run_replicates(one, replicates, base_seed, workers=workers))
    sigmas = np.sqrt(se.variances(horizon))
    ks_rows = []
    for j, k in enumerate(coordinates):
        passed, dist, thr = normality_check(
            finals[:, j], float(sigmas[k]), alpha=alpha, n_tests=len(coordinates)
        )
        ks_rows.append(
            {"k": k, "passed": passed, "distance": dist, "threshold": thr}
        )
    psi_rows = []
    for psi in psis:
        theory = psi.theory(se, horizon)
        for j, k in enumerate(coordinates):
            vals = psi.apply_final(finals[:, j], truth=z0[k])
            stats = summarize(vals, float(theory[k]), label=f"{psi.name}[k={k}]")
            psi_rows.append({"k": k, "psi": psi.name, "stats": stats})
    return {"ks": ks_rows, "psi": psi_rows, "se": se}


def averaged_experiment(
    profile,
    schedule,
    z0,
    horizon: int,
    seeds: int,
    base_seed: int = 606,
    psis=(PsiSpec("square"), PsiSpec("huber", 1.0)),
    workers: int = 1,
):
    """Coordinate-averaged statistics over independent seeds."""
    se = se_symmetric(profile, schedule, z0, horizon)

    def one(seed):
        matrix = sample_symmetric(profile, seed)
        traj = amp_mod.run_symmetric(
            matrix, schedule, z0, horizon, amp_mod.StateEvolution(), se=se
        )
        return traj

    trajectories = run_replicates(one, seeds, base_seed, workers=workers)
    return {
        psi.name: averaged_compare(trajectories, se, psi) for psi in psis
    }, se


# ---------------------------------------------------------------------------
# Ridge experiments
# ---------------------------------------------------------------------------

def figure1_problem(
    m: int = 100,
    n: int = 200,
    profile_seed: int = 7,
    xi_seed: int = 11,
    lam: float = 1.0,
):
    """The fixed heteroscedastic ridge instance used by the simulations."""
    profile = iid_abs_gaussian_profile(
        m, n, mean=1.0, sd=1.0, seed=profile_seed, kind=ProfileKind.RECTANGULAR
    )
    rng = np.random.Generator(np.random.Philox(key=np.uint64(xi_seed)))
    xi = rng.standard_normal(m)
    mu0 = np.ones(n)
    return ridge_mod.RidgeProblem(profile=profile, lam=lam, mu0=mu0, xi=xi)


def _figure1_replicate(seed, profile, mu0, xi, lambdas, design):
    matrix = sample_rectangular_entries(profile, seed, distribution=design)
    a = matrix.values
    y = a @ mu0 + xi
    eigvals, eigvecs = np.linalg.eigh(a.T @ a)
    aty = a.T @ y
    rotated = eigvecs.T @ aty
    out = np.empty((len(lambdas), 2))
    for i, lam in enumerate(lambdas):
        mu_hat = eigvecs @ (rotated / (eigvals + lam))
        out[i, 0] = float(np.mean((mu_hat - mu0) ** 2))
        out[i, 1] = float(mu_hat[0])
    return out


def figure1_experiment(
    lambdas,
    replicates: int = 5000,
    m: int = 100,
    n: int = 200,
    profile_seed: int = 7,
    xi_seed: int = 11,
    base_seed: int = 909,
    design: str = "gaussian",
    workers: int = 1,
):
    """Empirical vs theoretical ridge statistics on the fixed instance.

    One design draw per replicate serves every regularization level (the
    normal-equation eigendecomposition is shared).  Returns per-lambda
    rows holding the averaged squared error, the first-coordinate mean
    and variance, and their theory values with Monte Carlo standard
    errors (chi-square based for the variance).
    """
    base_problem = figure1_problem(m, n, profile_seed, xi_seed)
    profile, mu0, xi = base_problem.profile, base_problem.mu0, base_problem.xi
    fn = partial(
        _figure1_replicate,
        profile=profile,
        mu0=mu0,
        xi=xi,
        lambdas=list(lambdas),
        design=design,
    )
    raw = np.asarray(run_replicates(fn, replicates, base_seed, workers=workers))
    rows = []
    for i, lam in enumerate(lambdas):
        problem = ridge_mod.RidgeProblem(profile=profile, lam=lam, mu0=mu0, xi=xi)
        fp = ridge_mod.solve_fixed_point(problem)
        theory_l2 = ridge_mod.theory_l2_error(fp, mu0)
        theory_mean, theory_var = ridge_mod.seq_moments(fp, mu0, j=0)
        l2_vals = raw[:, i, 0]
        mu1_vals = raw[:, i, 1]
        var_emp = float(mu1_vals.var(ddof=1))
        rows.append(
            {
                "lambda": lam,
                "l2": summarize(l2_vals, theory_l2, label="l2"),
                "mu1_mean": summarize(mu1_vals, theory_mean, label="mu1_mean"),
                "mu1_var": SummaryStats(
                    mean=var_emp,
                    stderr=var_emp * math.sqrt(2.0 / (replicates - 1)),
                    count=replicates,
                    theory=theory_var,
                    label="mu1_var",
                ),
                "fixed_point": fp,
            }
        )
    return rows


def ridge_amp_convergence(problem, horizon: int = 60, matrix_seed: int = 5150):
    """Distance of the recursion iterates to the closed-form estimator.

    Returns the per-iteration normalized errors and the slope of their
    logarithm over the final stretch (geometric convergence shows up as a
    negative, eventually constant slope).
    """
    fp = ridge_mod.solve_fixed_point(problem)
    matrix = sample_rectangular_entries(problem.profile, matrix_seed)
    y = matrix.values @ problem.mu0 + problem.xi
    mu_hat = ridge_mod.ridge_closed_form(matrix.values, y, problem.lam)
    run = ridge_mod.amp_ridge_run(problem, fp, matrix, horizon)
    n = problem.shape[1]
    errors = np.linalg.norm(run.mu - mu_hat[None, :], axis=1) / math.sqrt(n)
    positive = errors > 0
    tail = slice(max(1, horizon // 2), horizon + 1)
    tail_idx = np.arange(horizon + 1)[tail]
    tail_err = errors[tail]
    keep = tail_err > 0
    if keep.sum() >= 2:
        slope = float(np.polyfit(tail_idx[keep], np.log(tail_err[keep]), 1)[0])
    else:
        slope = -np.inf
    return {"errors": errors, "final_error": float(errors[-1]), "log_slope": slope, "fixed_point": fp}
