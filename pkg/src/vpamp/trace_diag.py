"""Matrix recursions whose normalized traces concentrate near zero.

With D^(s) = diag(F'_s(z^(s))) and B_s = diag(b_s) built from a realized
run, the forward recursion is

    M_{-1} = 0,  M_0 = D^(t),  M_s = (M_{s-1} A - M_{s-2} B_{t-s+1}) D^(t-s)

and the reversed companion is

    N_{-1} = 0,  N_0 = I,  N_u = A D^(t-s+u) N_{u-1} - B_{t-s+u} D^(t-s+u-1) N_{u-2}.

The statistical diagnostic checks that n^{-1} tr(diag(d0) M_s^(t)),
averaged over seeds, decays roughly like n^{-1/2} for d0 either the
all-ones vector or any squared profile row.  Matrices are materialized
densely; the diagnostic is meant for n up to a couple of thousands, and
single-seed traces are noisy by design (only the seed mean is small).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amp import AmpTrajectory, OnsagerMode, StateEvolution, run_symmetric
from .ensembles import SampledMatrix, VarianceProfile, sample_symmetric
from .nonlinearity import NonlinearitySchedule
from .state_evolution import se_symmetric


class TraceDiagError(ValueError):
    pass


def _derivative_diagonals(schedule, trajectory, t):
    if trajectory.horizon < t:
        raise TraceDiagError(f"trajectory horizon {trajectory.horizon} below {t}")
    return [schedule.deriv(s, trajectory.iterate(s)) for s in range(t + 1)]


def _correction_rows(trajectory, max_index):
    if max_index >= 1 and trajectory.onsager.shape[0] < max_index + 1:
        raise TraceDiagError(
            "trajectory does not carry correction vectors up to iteration "
            f"{max_index}; run it for at least {max_index + 1} steps"
        )
    return trajectory.onsager


def m_recursion(
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    trajectory: AmpTrajectory,
    t: int,
) -> list[np.ndarray]:
    """The sequence M_0^(t) .. M_t^(t) for the given realized run."""
    a = matrix.values
    derivs = _derivative_diagonals(schedule, trajectory, t)
    corrections = _correction_rows(trajectory, t - 1)
    out = [np.diag(derivs[t])]
    prev2 = None
    for s in range(1, t + 1):
        term = out[s - 1] @ a
        if prev2 is not None:
            term = term - prev2 * corrections[t - s + 1][None, :]
        m_s = term * derivs[t - s][None, :]
        prev2 = out[s - 1]
        out.append(m_s)
    return out


def n_recursion(
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    trajectory: AmpTrajectory,
    t: int,
    s: int,
) -> list[np.ndarray]:
    """The reversed sequence N_0^(s) .. N_s^(s) at outer horizon t."""
    if not 1 <= s <= t:
        raise TraceDiagError(f"inner index s={s} must lie in [1, {t}]")
    a = matrix.values
    derivs = _derivative_diagonals(schedule, trajectory, t)
    corrections = _correction_rows(trajectory, t if s >= 2 else 0)
    n_dim = a.shape[0]
    out = [np.eye(n_dim)]
    prev2 = None
    for u in range(1, s + 1):
        term = a @ (derivs[t - s + u][:, None] * out[u - 1])
        if prev2 is not None:
            term = term - corrections[t - s + u][:, None] * (
                derivs[t - s + u - 1][:, None] * prev2
            )
        prev2 = out[u - 1]
        out.append(term)
    return out


@dataclass(frozen=True)
class TraceDiagnosticReport:
    """Seed statistics of the normalized weighted traces.

    rows: list of dicts with keys (n, s, d0, mean_abs_trace, stderr,
    seeds); `slope` is fit on log(per-n statistic) vs log(n) where the
    per-n statistic is the worst (s, d0) combination, mirroring the
    max-over-choices form of the bound being probed.
    """

    rows: list
    per_n_statistic: dict
    slope: float
    slope_halfwidth: float


def weighted_traces(matrix, schedule, trajectory, t, profile: VarianceProfile):
    """n^{-1} tr(diag(d0) M_s^(t)) for s in [1, t] and both d0 choices.

    The ones choice gives a scalar per s; the squared-rows choice gives
    the full per-row vector n^{-1} <V^2_k, diag(M_s)> so that callers can
    average over seeds before locating the worst row.
    """
    n = matrix.values.shape[0]
    ms = m_recursion(matrix, schedule, trajectory, t)
    out = {}
    v2 = profile.squared
    for s in range(1, t + 1):
        diag = np.diagonal(ms[s])
        out[(s, "ones")] = float(diag.sum() / n)
        out[(s, "v2_rows")] = v2 @ diag / n
    return out


def trace_decay_test(
    profile_for_n,
    schedule_for_n,
    z0_for_n,
    t: int,
    n_list: list[int],
    seeds: int,
    base_seed: int = 0,
    onsager: OnsagerMode | None = None,
) -> TraceDiagnosticReport:
    """Estimate the decay, in n, of the seed-mean weighted traces.

    The three `*_for_n` arguments are callables n -> object so the test
    can scale the problem.  Warns (via the returned rows) rather than
    refuses when t exceeds log(n)/4, matching the regime of validity.
    """
    from .montecarlo import rate_slope

    if len(n_list) < 2:
        raise TraceDiagError("need at least two sizes to fit a slope")
    if seeds < 2:
        raise TraceDiagError("need at least two seeds for a standard error")
    rows = []
    per_n_statistic = {}
    for n in n_list:
        profile = profile_for_n(n)
        schedule = schedule_for_n(n)
        z0 = z0_for_n(n)
        mode = onsager
        se = None
        if mode is None:
            mode = StateEvolution()
        if isinstance(mode, StateEvolution):
            se = se_symmetric(profile, schedule, z0, t + 1)
        samples = {}
        for r in range(seeds):
            matrix = sample_symmetric(profile, base_seed ^ r)
            trajectory = run_symmetric(matrix, schedule, z0, t + 1, onsager=mode, se=se)
            for key, value in weighted_traces(
                matrix, schedule, trajectory, t, profile
            ).items():
                samples.setdefault(key, []).append(value)
        worst = 0.0
        for (s, d0), values in sorted(samples.items()):
            stacked = np.asarray(values)
            means = stacked.mean(axis=0)
            if np.ndim(means) == 0:
                mean, column = float(means), stacked
            else:
                # worst squared-profile row, located after seed averaging
                pick = int(np.argmax(np.abs(means)))
                mean, column = float(means[pick]), stacked[:, pick]
            stderr = float(np.std(column, ddof=1) / np.sqrt(seeds))
            rows.append(
                {
                    "n": n,
                    "s": s,
                    "d0": d0,
                    "mean_trace": mean,
                    "mean_abs_trace": abs(mean),
                    "stderr": stderr,
                    "seeds": seeds,
                    "t_exceeds_log_n": bool(t > np.log(n) / 4),
                }
            )
            worst = max(worst, abs(mean))
        per_n_statistic[n] = worst
    slope, halfwidth = rate_slope(
        [per_n_statistic[n] for n in n_list], n_list
    )
    return TraceDiagnosticReport(
        rows=rows,
        per_n_statistic=per_n_statistic,
        slope=slope,
        slope_halfwidth=halfwidth,
    )
