"""Message-passing iterations: symmetric, asymmetric, leave-out variants.

The symmetric iteration is

    z^(t+1) = A F_t(z^(t)) - b_t o F_{t-1}(z^(t-1)),    z^(-1) = 0, F_{-1} = 0,

with the memory-correction vector b_t supplied in one of four modes:
data-driven (profile-weighted empirical derivative averages), the
deterministic vectors from the Gaussian state-evolution law, caller
supplied, or a Monte Carlo approximation of the conditional-expectation
oracle averaged over fresh matrix draws.

Leave-out runs replay the identical recursion against a masked matrix
while reusing the reference run's correction vectors verbatim; the module
also provides the representation-error functional that measures how well
coordinate k of the full run is reproduced by an inner product of row k
with the k-left-out iterate, and a batched all-k evaluation of it that
shares one matrix product across the n leave-one-out recursions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import (
    MaskMode,
    MatrixScale,
    ProfileKind,
    SampledMatrix,
    VarianceProfile,
    mask_leave_out,
    sample_rectangular,
    sample_symmetric,
)
from .nonlinearity import CoordinateBlocks, NonlinearitySchedule, Zero
from .state_evolution import (
    SePath,
    se_onsager,
    se_onsager_asymmetric,
)

# Large odd multipliers partition the 64-bit seed space between derived
# streams (replicate matrices for the oracle estimate, etc.) so that
# distinct strata never collide for the seed counts used in practice.
_ORACLE_STREAM_STRIDE = 0x9E3779B97F4A7C15


class AmpError(ValueError):
    pass


class OnsagerMode:
    """Base marker for correction-vector policies."""

    label = "base"


@dataclass(frozen=True)
class DataDriven(OnsagerMode):
    """b_t computed from the realized iterate's derivatives."""

    label = "data_driven"


@dataclass(frozen=True)
class StateEvolution(OnsagerMode):
    """Deterministic b_t from the state-evolution Gaussian law."""

    label = "state_evolution"


@dataclass(frozen=True)
class Supplied(OnsagerMode):
    """Caller-provided correction vectors, indexed by iteration t.

    Symmetric runs read `vectors[t]`; asymmetric runs read the row-side
    correction from `vectors[t]` and the column-side one from
    `vectors_g[t]` (both starting at t = 1, earlier slots ignored).
    """

    vectors: tuple = ()
    vectors_g: tuple | None = None
    label = "supplied"

    @classmethod
    def from_list(cls, vectors, vectors_g=None) -> "Supplied":
        return cls(
            tuple(np.asarray(v, dtype=float) for v in vectors),
            None
            if vectors_g is None
            else tuple(np.asarray(v, dtype=float) for v in vectors_g),
        )


@dataclass(frozen=True)
class MonteCarloOracle(OnsagerMode):
    """Approximates the conditional-expectation correction by averaging
    derivative profiles over `replicates` fresh matrix draws that share
    the initialization.  Clearly an approximation; the state-evolution
    mode is the default for theory comparisons."""

    replicates: int = 200
    seed: int = 0
    label = "mc_oracle"


@dataclass(frozen=True)
class AmpTrajectory:
    """Symmetric iterate history z^(0..T) plus the corrections applied.

    `onsager[t]` is the vector used when forming z^(t+1); the t = 0 entry
    is identically zero by the F_{-1} = 0 convention.
    """

    iterates: np.ndarray          # (T+1, n)
    onsager: np.ndarray           # (T, n)
    mode: str
    seed: int | None = None

    @property
    def horizon(self) -> int:
        return self.iterates.shape[0] - 1

    def iterate(self, t: int) -> np.ndarray:
        return self.iterates[t]


@dataclass(frozen=True)
class AsymmetricAmpTrajectory:
    """Row/column iterate histories u^(0..T), v^(0..T).

    u^(0) is the dummy initialization (all zeros unless supplied);
    `onsager_f[t]` enters u^(t+1) and `onsager_g[t]` enters v^(t), with
    the never-used slots kept as zeros.
    """

    u_iterates: np.ndarray        # (T+1, m)
    v_iterates: np.ndarray        # (T+1, n)
    onsager_f: np.ndarray         # (T, m)
    onsager_g: np.ndarray         # (T+1, n); slot 0 unused
    mode: str
    seed: int | None = None

    @property
    def horizon(self) -> int:
        return self.v_iterates.shape[0] - 1


def _require_symmetric(matrix: SampledMatrix):
    if matrix.scale is not MatrixScale.SYMMETRIC_ONE_OVER_N:
        raise AmpError("a symmetric sampled matrix is required")


def _sym_onsager_vectors(matrix, schedule, z0, horizon, mode, se):
    """Precompute b_t for modes that do not depend on the realized run."""
    n = len(z0)
    if isinstance(mode, Supplied):
        vectors = [np.zeros(n)]
        for t in range(1, horizon):
            if t >= len(mode.vectors):
                raise AmpError(f"supplied corrections missing iteration {t}")
            vec = np.asarray(mode.vectors[t], dtype=float)
            if vec.shape != (n,):
                raise AmpError(f"supplied correction {t} has shape {vec.shape}")
            vectors.append(vec)
        return vectors
    if isinstance(mode, StateEvolution):
        if se is None:
            raise AmpError("state-evolution mode requires a state-evolution path")
        if se.horizon < horizon - 1:
            raise AmpError(
                f"state-evolution path horizon {se.horizon} does not cover T={horizon}"
            )
        return [np.zeros(n)] + [se_onsager(se, schedule, t) for t in range(1, horizon)]
    return None


def run_symmetric(
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    z0: np.ndarray,
    horizon: int,
    onsager: OnsagerMode = DataDriven(),
    se: SePath | None = None,
) -> AmpTrajectory:
    """Run the symmetric iteration for `horizon` steps from z0."""
    _require_symmetric(matrix)
    values = matrix.values
    z0 = np.asarray(z0, dtype=float)
    n = values.shape[0]
    if z0.shape != (n,):
        raise AmpError(f"initialization shape {z0.shape} does not match matrix size {n}")
    if schedule.horizon < horizon - 1:
        raise AmpError("schedule horizon does not cover the requested run")

    v2 = matrix.profile.squared
    precomputed = _sym_onsager_vectors(matrix, schedule, z0, horizon, onsager, se)
    if isinstance(onsager, MonteCarloOracle):
        return _run_symmetric_mc_oracle(matrix, schedule, z0, horizon, onsager)

    iterates = np.empty((horizon + 1, n))
    corrections = np.zeros((max(horizon, 1), n))
    iterates[0] = z0
    for t in range(horizon):
        ft = schedule.eval(t, iterates[t])
        if t == 0:
            iterates[1] = values @ ft
            continue
        if precomputed is not None:
            b_t = precomputed[t]
        else:
            b_t = v2 @ schedule.deriv(t, iterates[t]) / n
        corrections[t] = b_t
        iterates[t + 1] = values @ ft - b_t * schedule.eval(t - 1, iterates[t - 1])
    return AmpTrajectory(
        iterates=iterates,
        onsager=corrections[:horizon],
        mode=onsager.label,
        seed=matrix.seed,
    )


def _run_symmetric_mc_oracle(matrix, schedule, z0, horizon, mode):
    """Oracle-approximation mode: estimate E[F'_t(z^(t)) | z^(0)] over fresh draws.

    All replicate recursions and the main one share the estimated
    correction vectors, which is exactly the structure of the oracle
    iteration they approximate.  Replicate matrices are regenerated from
    their seeds each step to keep memory at O(replicates * n).
    """
    values = matrix.values
    n = values.shape[0]
    v2 = matrix.profile.squared
    r_count = mode.replicates
    seeds = [
        (mode.seed + (r + 1) * _ORACLE_STREAM_STRIDE) & (2**64 - 1)
        for r in range(r_count)
    ]

    iterates = np.empty((horizon + 1, n))
    corrections = np.zeros((max(horizon, 1), n))
    iterates[0] = z0
    rep_prev = None
    rep_cur = np.tile(z0, (r_count, 1))
    for t in range(horizon):
        ft = schedule.eval(t, iterates[t])
        if t == 0:
            b_t = None
        else:
            mean_deriv = schedule.deriv(t, rep_cur).mean(axis=0)
            b_t = v2 @ mean_deriv / n
            corrections[t] = b_t
        # advance main trajectory
        if t == 0:
            iterates[1] = values @ ft
        else:
            iterates[t + 1] = values @ ft - b_t * schedule.eval(t - 1, iterates[t - 1])
        # advance replicate ensemble with the same corrections
        if t < horizon - 1:
            rep_ft = schedule.eval(t, rep_cur)
            rep_next = np.empty_like(rep_cur)
            for r, seed_r in enumerate(seeds):
                a_r = sample_symmetric(matrix.profile, seed_r).values
                rep_next[r] = a_r @ rep_ft[r]
            if t > 0:
                rep_next -= b_t[None, :] * schedule.eval(t - 1, rep_prev)
            rep_prev, rep_cur = rep_cur, rep_next
    return AmpTrajectory(
        iterates=iterates,
        onsager=corrections[:horizon],
        mode=mode.label,
        seed=matrix.seed,
    )


def run_asymmetric(
    matrix: SampledMatrix,
    f_schedule: NonlinearitySchedule,
    g_schedule: NonlinearitySchedule,
    v0: np.ndarray,
    horizon: int,
    onsager: OnsagerMode = DataDriven(),
    se: SePath | None = None,
    u0: np.ndarray | None = None,
) -> AsymmetricAmpTrajectory:
    """Run the rectangular iteration; corrections use 1/m normalization.

    The row-side family at t = 0 is the zero map by convention, so the
    first row update is u^(1) = A F_0(v^(0)) exactly.
    """
    if matrix.scale is not MatrixScale.RECTANGULAR_ONE_OVER_M:
        raise AmpError("a rectangular sampled matrix is required")
    values = matrix.values
    m, n = values.shape
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (n,):
        raise AmpError(f"initialization shape {v0.shape} does not match columns {n}")
    u0 = np.zeros(m) if u0 is None else np.asarray(u0, dtype=float)
    v2 = matrix.profile.squared

    supplied_f = supplied_g = None
    if isinstance(onsager, Supplied):
        if onsager.vectors_g is None:
            raise AmpError("asymmetric supplied mode needs both vector families")
        supplied_f = [np.asarray(v, dtype=float) for v in onsager.vectors]
        supplied_g = [np.asarray(v, dtype=float) for v in onsager.vectors_g]
        if len(supplied_f) < horizon or len(supplied_g) < horizon + 1:
            raise AmpError("supplied corrections do not cover the requested run")
    if isinstance(onsager, StateEvolution):
        if se is None:
            raise AmpError("state-evolution mode requires a state-evolution path")
        if se.horizon < horizon:
            raise AmpError("state-evolution path does not cover the requested run")
        se_pairs = {
            t: se_onsager_asymmetric(se, f_schedule, g_schedule, t)
            for t in range(1, horizon + 1)
        }
    if isinstance(onsager, MonteCarloOracle):
        raise AmpError(
            "the Monte Carlo oracle mode is provided for the symmetric iteration; "
            "run it through the symmetric embedding instead"
        )

    u_iters = np.zeros((horizon + 1, m))
    v_iters = np.zeros((horizon + 1, n))
    b_f = np.zeros((max(horizon, 1), m))
    b_g = np.zeros((horizon + 1, n))
    u_iters[0] = u0
    v_iters[0] = v0
    for t in range(horizon):
        ft = f_schedule.eval(t, v_iters[t])
        if t == 0:
            u_iters[1] = values @ ft
        else:
            if supplied_f is not None:
                bf_t = supplied_f[t]
            elif isinstance(onsager, StateEvolution):
                bf_t = se_pairs[t][0]
            else:
                bf_t = v2 @ f_schedule.deriv(t, v_iters[t]) / m
            b_f[t] = bf_t
            u_iters[t + 1] = values @ ft - bf_t * g_schedule.eval(t, u_iters[t])
        gt1 = g_schedule.eval(t + 1, u_iters[t + 1])
        if supplied_g is not None:
            bg_t1 = supplied_g[t + 1]
        elif isinstance(onsager, StateEvolution):
            bg_t1 = se_pairs[t + 1][1]
        else:
            bg_t1 = v2.T @ g_schedule.deriv(t + 1, u_iters[t + 1]) / m
        b_g[t + 1] = bg_t1
        v_iters[t + 1] = values.T @ gt1 - bg_t1 * ft
    return AsymmetricAmpTrajectory(
        u_iterates=u_iters,
        v_iterates=v_iters,
        onsager_f=b_f[:horizon],
        onsager_g=b_g,
        mode=onsager.label,
        seed=matrix.seed,
    )


# ---------------------------------------------------------------------------
# Asymmetric-to-symmetric embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetricEmbedding:
    """Size-(m+n) symmetric problem equivalent to a rectangular one.

    The block profile carries the (phi^{-1} + 1)^{1/2} scaling that makes
    the symmetric 1/(m+n) sampling variance match the rectangular 1/m
    one, so a rectangular draw placed into the off-diagonal blocks is a
    valid draw of the embedded symmetric ensemble.  Odd iterates carry
    the row side, even iterates the column side.
    """

    profile: VarianceProfile
    schedule: NonlinearitySchedule
    z0: np.ndarray
    m: int
    n: int

    def embed_matrix(self, matrix: SampledMatrix) -> SampledMatrix:
        if matrix.shape != (self.m, self.n):
            raise AmpError(f"matrix shape {matrix.shape} does not match embedding")
        a = matrix.values
        top = np.hstack([np.zeros((self.m, self.m)), a])
        bottom = np.hstack([a.T, np.zeros((self.n, self.n))])
        return SampledMatrix(
            np.vstack([top, bottom]),
            MatrixScale.SYMMETRIC_ONE_OVER_N,
            matrix.seed,
            self.profile,
        )

    def project(self, trajectory: AmpTrajectory, horizon: int):
        """Extract (u^(1..T), v^(0..T)) from an embedded symmetric run."""
        if trajectory.horizon < 2 * horizon:
            raise AmpError("embedded run too short for the requested horizon")
        u = np.zeros((horizon + 1, self.m))
        v = np.zeros((horizon + 1, self.n))
        v[0] = trajectory.iterates[0][self.m :]
        for t in range(1, horizon + 1):
            u[t] = trajectory.iterates[2 * t - 1][: self.m]
            v[t] = trajectory.iterates[2 * t][self.m :]
        return u, v

    def project_onsager(self, trajectory: AmpTrajectory, horizon: int):
        """(b^F_t, b^G_t) read off the embedded run's correction vectors."""
        b_f = np.zeros((horizon, self.m))
        b_g = np.zeros((horizon + 1, self.n))
        for t in range(1, horizon):
            b_f[t] = trajectory.onsager[2 * t][: self.m]
        for t in range(1, horizon + 1):
            b_g[t] = trajectory.onsager[2 * t - 1][self.m :]
        return b_f, b_g


def asym_to_sym_embed(
    profile: VarianceProfile,
    f_schedule: NonlinearitySchedule,
    g_schedule: NonlinearitySchedule,
    v0: np.ndarray,
    horizon: int,
) -> SymmetricEmbedding:
    """Build the block-symmetric problem whose run replays the rectangular one."""
    if profile.kind is not ProfileKind.RECTANGULAR:
        raise AmpError("the embedding starts from a rectangular profile")
    m, n = profile.shape
    phi = m / n
    scaling = math.sqrt(1.0 / phi + 1.0)
    entries = np.zeros((m + n, m + n))
    entries[:m, m:] = scaling * profile.entries
    entries[m:, :m] = scaling * profile.entries.T
    bar_profile = VarianceProfile(
        entries,
        ProfileKind.SYMMETRIC,
        bound=max(2.0, float(entries.max())),
    )
    zero = Zero()
    per_t = {}
    for s in range(2 * horizon):
        if s % 2 == 0:
            fam = CoordinateBlocks(
                blocks=((0, m, zero), (m, m + n, f_schedule.family_at(s // 2)))
            )
        else:
            fam = CoordinateBlocks(
                blocks=((0, m, g_schedule.family_at((s + 1) // 2)), (m, m + n, zero))
            )
        per_t[s] = fam
    schedule = NonlinearitySchedule(2 * horizon, m + n, default=zero, per_t=per_t)
    z0 = np.concatenate([np.zeros(m), np.asarray(v0, dtype=float)])
    return SymmetricEmbedding(bar_profile, schedule, z0, m, n)


# ---------------------------------------------------------------------------
# Leave-out runs and the representation error
# ---------------------------------------------------------------------------

def run_leave_out(
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    z0: np.ndarray,
    horizon: int,
    leave_out: set[int] | list[int],
    reference: AmpTrajectory,
    mode: MaskMode = MaskMode.ROW_AND_COLUMN,
) -> AmpTrajectory:
    """Replay the recursion with rows/columns in `leave_out` zeroed.

    The correction vectors are taken from `reference` verbatim; the
    construction requires the same vectors as the full run, so the API
    does not let callers substitute their own.
    """
    leave_out = sorted(set(int(k) for k in leave_out))
    if not leave_out:
        raise AmpError("leave-out index set must be nonempty")
    if reference.horizon < horizon:
        raise AmpError("reference run does not cover the requested horizon")
    masked = mask_leave_out(matrix, leave_out, mode)
    supplied = Supplied(tuple(reference.onsager))
    out = run_symmetric(masked, schedule, z0, horizon, onsager=supplied)
    return AmpTrajectory(
        iterates=out.iterates,
        onsager=out.onsager,
        mode=f"leave_out[{','.join(map(str, leave_out))}]",
        seed=matrix.seed,
    )


def loo_representation_error(
    full: AmpTrajectory,
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    leave_out_trajectories: dict[int, AmpTrajectory],
    t: int,
) -> tuple[np.ndarray, float]:
    """|z^(t+1)_k - <A_k, F_t(z^(t)_{[-k]})>| for each provided k.

    Trajectories must share the seed and corrections of `full`; the
    returned pair is (per-k error vector, max over k).
    """
    if t + 1 > full.horizon:
        raise AmpError(f"full trajectory does not contain iterate {t + 1}")
    ks = sorted(leave_out_trajectories)
    errors = np.empty(len(ks))
    for j, k in enumerate(ks):
        loo = leave_out_trajectories[k]
        if loo.seed != full.seed:
            raise AmpError("leave-out trajectory seed differs from the full run")
        if loo.horizon < t:
            raise AmpError(f"leave-out trajectory for k={k} does not reach iterate {t}")
        if t >= 1 and not np.array_equal(loo.onsager[1 : t + 1], full.onsager[1 : t + 1]):
            raise AmpError("leave-out trajectory used different correction vectors")
        inner = matrix.values[k] @ schedule.eval(t, loo.iterate(t))
        errors[j] = abs(full.iterate(t + 1)[k] - inner)
    return errors, float(errors.max())


def leave_one_out_error_profile(
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    z0: np.ndarray,
    horizon: int,
    onsager: OnsagerMode = DataDriven(),
    se: SePath | None = None,
) -> np.ndarray:
    """Representation errors for every k at once; shape (horizon, n).

    Row t holds |z^(t+1)_k - <A_k, F_t(z^(t)_{[-k]})>| over k.  All n
    leave-one-out recursions are advanced together: row k of the batch
    state holds the k-left-out iterate, and one matrix product per
    iteration serves every k.  Row t = 0 is exactly zero.
    """
    full = run_symmetric(matrix, schedule, z0, horizon, onsager=onsager, se=se)
    values = matrix.values
    n = values.shape[0]
    errors = np.empty((horizon, n))

    batch_prev = None
    batch_cur = np.tile(z0, (n, 1))
    for t in range(horizon):
        w = schedule.eval(t, batch_cur)                  # w[k] = F_t(z_{[-k]}^(t))
        inner = np.einsum("kl,kl->k", values, w)         # <A_k, F_t(z_{[-k]}^(t))>
        errors[t] = np.abs(full.iterates[t + 1] - inner)
        if t == horizon - 1:
            break
        propagated = w @ values                          # row k: (A w_k) minus row-k terms
        propagated -= w.diagonal()[:, None] * values
        np.fill_diagonal(propagated, 0.0)
        if t == 0:
            batch_prev, batch_cur = batch_cur, propagated
        else:
            b_t = full.onsager[t]
            nxt = propagated - b_t[None, :] * schedule.eval(t - 1, batch_prev)
            batch_prev, batch_cur = batch_cur, nxt
    return errors


def compare_onsager_modes(
    matrix: SampledMatrix,
    schedule: NonlinearitySchedule,
    z0: np.ndarray,
    horizon: int,
    se: SePath,
    include_mc_oracle: bool = False,
    mc_replicates: int = 200,
    mc_seed: int = 0,
) -> dict[str, np.ndarray]:
    """Per-iteration sup-norm gaps between correction policies.

    Returns {"data_vs_se": gaps, ...} where gaps[t] = max_k of the
    absolute difference of iterate t; index 0 and 1 are zero since the
    first correction enters at t = 1.
    """
    runs = {
        "data_driven": run_symmetric(matrix, schedule, z0, horizon, DataDriven()),
        "state_evolution": run_symmetric(
            matrix, schedule, z0, horizon, StateEvolution(), se=se
        ),
    }
    if include_mc_oracle:
        runs["mc_oracle"] = run_symmetric(
            matrix,
            schedule,
            z0,
            horizon,
            MonteCarloOracle(replicates=mc_replicates, seed=mc_seed),
        )
    pairs = {"data_vs_se": ("data_driven", "state_evolution")}
    if include_mc_oracle:
        pairs["data_vs_oracle"] = ("data_driven", "mc_oracle")
        pairs["se_vs_oracle"] = ("state_evolution", "mc_oracle")
    gaps = {}
    for name, (first, second) in pairs.items():
        diff = np.abs(runs[first].iterates - runs[second].iterates)
        gaps[name] = diff.max(axis=1)
    return gaps
