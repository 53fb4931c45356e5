"""High-dimensional state evolution for the message-passing iterations.

For a symmetric profile the iterates' per-coordinate Gaussian law is
described by one (T+1) x (T+1) covariance block per coordinate,

    cov(Z^(s1+1)_k, Z^(s2+1)_k)
        = n^{-1} sum_l V_{kl}^2 E[ F_{s1,l}(Z^(s1)_l) F_{s2,l}(Z^(s2)_l) ],

with Z^(0) identically the (deterministic) initialization, so slot 0 of
each block is zero and expectations against iteration 0 collapse to plain
evaluations.  The asymmetric variant alternates two families of blocks
with 1/m normalization and leaves the cross-sequence correlation
unspecified.

All expectations are evaluated with probabilists' Gauss-Hermite
quadrature; bivariate integrals go through a clamped Cholesky change of
variables that degrades gracefully to rank-1 quadrature along the
principal axis when the 2x2 covariance is (near-)singular, which happens
routinely as iterates converge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensembles import ProfileKind, VarianceProfile
from .nonlinearity import NonlinearityFamily, NonlinearitySchedule

_PSD_TOL = 1e-10
_DEGENERATE_DET_FRACTION = 1e-12


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes/weights normalized for N(0,1) expectations.

    `nodes` and `weights` satisfy sum_i w_i f(x_i) ~ E f(N(0,1)); the
    weights sum to one and the rule integrates polynomials up to degree
    2*order - 1 exactly.
    """

    order: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def gauss_hermite(cls, order: int = 61) -> "QuadratureRule":
        physicists_nodes, physicists_weights = np.polynomial.hermite.hermgauss(order)
        nodes = np.sqrt(2.0) * physicists_nodes
        weights = physicists_weights / np.sqrt(np.pi)
        return cls(order=order, nodes=nodes, weights=weights)

    def expect_1d(self, func, variance, mean=0.0) -> np.ndarray:
        """E[func(N(mean, variance))], vectorized over trailing coordinates.

        `variance` and `mean` may be arrays of shape (n,); `func` must act
        componentwise on arrays whose last axis is the coordinate axis.
        """
        variance = np.clip(np.asarray(variance, dtype=float), 0.0, None)
        sd = np.sqrt(variance)
        points = mean + sd * self.nodes.reshape((-1,) + (1,) * np.ndim(sd))
        values = func(points)
        return np.tensordot(self.weights, values, axes=(0, 0))


# Order 61 keeps order-doubling drift below 1e-9 for the bounded analytic
# nonlinearities shipped here (order 41 falls just short for tanh).
DEFAULT_RULE = QuadratureRule.gauss_hermite(61)


def _chol_factors(c11, c12, c22):
    """Clamped 2x2 Cholesky factors, vectorized.

    Returns (l11, l21, l22) with X = l11*x1, Y = l21*x1 + l22*x2 for
    independent standard normals (x1, x2).  Near-singular or rank-one
    covariances clamp l22 at zero, collapsing to quadrature along the
    principal axis; a zero first variance routes all mass to x2.
    """
    c11 = np.clip(np.asarray(c11, dtype=float), 0.0, None)
    c22 = np.clip(np.asarray(c22, dtype=float), 0.0, None)
    c12 = np.asarray(c12, dtype=float)
    l11 = np.sqrt(c11)
    safe = l11 > 0
    l21 = np.where(safe, c12 / np.where(safe, l11, 1.0), 0.0)
    l22 = np.sqrt(np.clip(c22 - l21 * l21, 0.0, None))
    return l11, l21, l22


def gaussian_expectation_2d(
    f,
    g,
    cov: np.ndarray,
    rule: QuadratureRule = DEFAULT_RULE,
) -> float:
    """E[f(X) g(Y)] for centered (X, Y) with the given 2x2 covariance.

    Degenerate covariances (zero, or determinant below 1e-12 * trace^2)
    are handled by the rank-1 / point-mass collapse of the clamped
    Cholesky factorization.  A covariance that fails positive
    semidefiniteness beyond tolerance raises QuadratureError.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise QuadratureError(f"expected a 2x2 covariance, got shape {cov.shape}")
    c11, c12, c22 = cov[0, 0], 0.5 * (cov[0, 1] + cov[1, 0]), cov[1, 1]
    trace = c11 + c22
    det = c11 * c22 - c12 * c12
    tol = _PSD_TOL * max(1.0, trace)
    if c11 < -tol or c22 < -tol or det < -max(_PSD_TOL, _DEGENERATE_DET_FRACTION * trace**2):
        raise QuadratureError(f"covariance not PSD within tolerance: {cov}")
    l11, l21, l22 = _chol_factors(c11, c12, c22)
    x = rule.nodes
    w = rule.weights
    f_vals = f(l11 * x)
    g_vals = g(l21 * x[:, None] + l22 * x[None, :])
    return float(np.einsum("i,j,i,ij->", w, w, f_vals, g_vals))


def _pair_expectation(
    fam_a: NonlinearityFamily,
    fam_b: NonlinearityFamily,
    caa: np.ndarray,
    cab: np.ndarray,
    cbb: np.ndarray,
    rule: QuadratureRule,
) -> np.ndarray:
    """E[fam_a(X_l) fam_b(Y_l)] per coordinate l, (X_l, Y_l) centered Gaussian.

    caa, cab, cbb are (n,) arrays of per-coordinate covariance entries.
    Families are applied with the coordinate axis last, so per-coordinate
    (block) families see their own coordinates.
    """
    l11, l21, l22 = _chol_factors(caa, cab, cbb)
    x = rule.nodes
    w = rule.weights
    a_vals = fam_a.eval(l11[None, :] * x[:, None])            # (q, n)
    b_vals = fam_b.eval(
        l21[None, None, :] * x[:, None, None] + l22[None, None, :] * x[None, :, None]
    )                                                          # (q, q, n)
    inner = np.tensordot(w, b_vals, axes=(0, 1))               # (q, n)
    return np.einsum("i,in,in->n", w, a_vals, inner)


@dataclass(frozen=True)
class SePath:
    """Per-coordinate covariance blocks of the Gaussian iterate sequence.

    `cov` has shape (n, T+1, T+1); slot 0 holds the deterministic
    initialization (zero rows/columns), slots 1..T the random iterates.
    For the asymmetric kind, `cov` describes the column-side sequence and
    `cov_u` the row-side one; their cross-correlation is intentionally
    not represented.
    """

    kind: ProfileKind
    horizon: int
    profile: VarianceProfile
    init: np.ndarray
    cov: np.ndarray
    cov_u: np.ndarray | None = None
    clip_magnitude: float = 0.0

    def __post_init__(self):
        for name in ("init", "cov", "cov_u"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def variances(self, t: int, side: str = "v") -> np.ndarray:
        """Per-coordinate variances of iterate t (t=0 returns zeros)."""
        cov = self._side(side)
        if not 0 <= t <= self.horizon:
            raise ValueError(f"iterate {t} outside horizon {self.horizon}")
        return cov[:, t, t]

    def block(self, coordinate: int, side: str = "v") -> np.ndarray:
        return self._side(side)[coordinate]

    def _side(self, side: str) -> np.ndarray:
        if side == "v":
            return self.cov
        if side == "u":
            if self.cov_u is None:
                raise ValueError("this path has no row-side sequence")
            return self.cov_u
        raise ValueError(f"unknown side {side!r}")


def _symmetrize_and_clip(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Project each block to the PSD cone, returning the largest clip."""
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    eigvals, eigvecs = np.linalg.eigh(cov)
    clip = float(max(0.0, -eigvals.min()))
    eigvals = np.clip(eigvals, 0.0, None)
    rebuilt = np.einsum("kij,kj,klj->kil", eigvecs, eigvals, eigvecs)
    return rebuilt, clip


def se_symmetric(
    profile: VarianceProfile,
    schedule: NonlinearitySchedule,
    z0: np.ndarray,
    horizon: int,
    rule: QuadratureRule = DEFAULT_RULE,
) -> SePath:
    """Covariance recursion for the symmetric iteration, horizon T iterates."""
    if profile.kind is not ProfileKind.SYMMETRIC:
        raise ValueError("se_symmetric requires a symmetric profile")
    z0 = np.asarray(z0, dtype=float)
    n = profile.shape[0]
    if z0.shape != (n,):
        raise ValueError(f"initialization has shape {z0.shape}, expected ({n},)")
    v2 = profile.squared
    cov = np.zeros((n, horizon + 1, horizon + 1))
    f0 = schedule.eval(0, z0)
    for t in range(horizon):
        for s in range(t + 1):
            if t == 0 and s == 0:
                pair = f0 * f0
            elif s == 0:
                fam_t = schedule.family_at(t)
                pair = f0 * rule.expect_1d(fam_t.eval, cov[:, t, t])
            else:
                pair = _pair_expectation(
                    schedule.family_at(t),
                    schedule.family_at(s),
                    cov[:, t, t],
                    cov[:, t, s],
                    cov[:, s, s],
                    rule,
                )
            value = v2 @ pair / n
            cov[:, t + 1, s + 1] = value
            cov[:, s + 1, t + 1] = value
    cov, clip = _symmetrize_and_clip(cov)
    return SePath(
        kind=ProfileKind.SYMMETRIC,
        horizon=horizon,
        profile=profile,
        init=z0,
        cov=cov,
        clip_magnitude=clip,
    )


def se_asymmetric(
    profile: VarianceProfile,
    f_schedule: NonlinearitySchedule,
    g_schedule: NonlinearitySchedule,
    v0: np.ndarray,
    horizon: int,
    rule: QuadratureRule = DEFAULT_RULE,
) -> SePath:
    """Alternating covariance recursions for the rectangular iteration.

    Row-side blocks use the column-side law one half-step behind and vice
    versa; both use the 1/m normalization.  Cross-sequence correlations
    are not populated.
    """
    if profile.kind is not ProfileKind.RECTANGULAR:
        raise ValueError("se_asymmetric requires a rectangular profile")
    v0 = np.asarray(v0, dtype=float)
    m, n = profile.shape
    if v0.shape != (n,):
        raise ValueError(f"initialization has shape {v0.shape}, expected ({n},)")
    v2 = profile.squared
    cov_u = np.zeros((m, horizon + 1, horizon + 1))
    cov_v = np.zeros((n, horizon + 1, horizon + 1))
    f0 = f_schedule.eval(0, v0)
    for t in range(horizon):
        for s in range(t + 1):
            if t == 0 and s == 0:
                pair = f0 * f0
            elif s == 0:
                fam_t = f_schedule.family_at(t)
                pair = f0 * rule.expect_1d(fam_t.eval, cov_v[:, t, t])
            else:
                pair = _pair_expectation(
                    f_schedule.family_at(t),
                    f_schedule.family_at(s),
                    cov_v[:, t, t],
                    cov_v[:, t, s],
                    cov_v[:, s, s],
                    rule,
                )
            value = v2 @ pair / m
            cov_u[:, t + 1, s + 1] = value
            cov_u[:, s + 1, t + 1] = value
        for s in range(t + 1):
            pair = _pair_expectation(
                g_schedule.family_at(t + 1),
                g_schedule.family_at(s + 1),
                cov_u[:, t + 1, t + 1],
                cov_u[:, t + 1, s + 1],
                cov_u[:, s + 1, s + 1],
                rule,
            )
            value = v2.T @ pair / m
            cov_v[:, t + 1, s + 1] = value
            cov_v[:, s + 1, t + 1] = value
    cov_u, clip_u = _symmetrize_and_clip(cov_u)
    cov_v, clip_v = _symmetrize_and_clip(cov_v)
    return SePath(
        kind=ProfileKind.RECTANGULAR,
        horizon=horizon,
        profile=profile,
        init=v0,
        cov=cov_v,
        cov_u=cov_u,
        clip_magnitude=max(clip_u, clip_v),
    )


def sigma_star(se: SePath, horizon: int) -> float:
    """1 wedge the smallest per-coordinate standard deviation up to `horizon`."""
    if not 1 <= horizon <= se.horizon:
        raise ValueError(f"horizon {horizon} outside path horizon {se.horizon}")
    smallest = np.inf
    sides = ("v",) if se.cov_u is None else ("v", "u")
    for side in sides:
        for s in range(1, horizon + 1):
            smallest = min(smallest, float(se.variances(s, side=side).min()))
    return min(1.0, float(np.sqrt(max(smallest, 0.0))))


def sample_se_sequence(
    se: SePath, coordinate: int, count: int, seed: int, side: str = "v"
) -> np.ndarray:
    """`count` i.i.d. draws of (Z^(1), ..., Z^(T)) at one coordinate.

    Uses an eigenvalue square root with clipping at zero, so degenerate
    blocks yield exactly degenerate draws.
    """
    block = se.block(coordinate, side=side)[1:, 1:]
    eigvals, eigvecs = np.linalg.eigh(0.5 * (block + block.T))
    root = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    normals = rng.standard_normal(size=(count, block.shape[0]))
    return normals @ root.T


def se_onsager(
    se: SePath,
    schedule: NonlinearitySchedule,
    t: int,
    rule: QuadratureRule = DEFAULT_RULE,
) -> np.ndarray:
    """Correction vector from the Gaussian law: n^{-1} V^2 E[F'_t(Z^(t))].

    At t = 0 the law is the point mass at the initialization, so the
    expectation is a plain evaluation.  Only defined for symmetric paths.
    """
    if se.kind is not ProfileKind.SYMMETRIC:
        raise ValueError("se_onsager expects a symmetric path")
    fam = schedule.family_at(t)
    if t == 0:
        expected = fam.deriv(se.init)
    else:
        expected = rule.expect_1d(fam.deriv, se.variances(t))
    n = se.profile.shape[0]
    return se.profile.squared @ expected / n


def se_onsager_asymmetric(
    se: SePath,
    f_schedule: NonlinearitySchedule,
    g_schedule: NonlinearitySchedule,
    t: int,
    rule: QuadratureRule = DEFAULT_RULE,
) -> tuple[np.ndarray, np.ndarray]:
    """(row-side, column-side) correction vectors at iteration t >= 1."""
    if se.kind is not ProfileKind.RECTANGULAR:
        raise ValueError("se_onsager_asymmetric expects a rectangular path")
    if t < 1:
        raise ValueError("asymmetric corrections start at t = 1")
    m, _ = se.profile.shape
    v2 = se.profile.squared
    f_expected = rule.expect_1d(f_schedule.family_at(t).deriv, se.variances(t, side="v"))
    g_expected = rule.expect_1d(g_schedule.family_at(t).deriv, se.variances(t, side="u"))
    return v2 @ f_expected / m, v2.T @ g_expected / m
