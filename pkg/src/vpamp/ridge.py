"""Ridge regression under a variance profile: fixed points and estimators.

The population description of the ridge estimator is carried by a pair
(gamma*, b*) in R^n_{>=0} x [0,1)^m solving the coupled system

    gamma^2 = D_tau^2 Vm^T D_{1-b}^2 (xi^2 + Vm D^2_{lam*tau/(1+lam*tau)} mu0^2)
              + D_tau^2 Vm^T D_{1-b}^2 Vm D_{1+lam*tau}^{-2} gamma^2,
    b/(1-b) = Vm (tau/(1 + lam*tau)),            tau = (Vm^T (1-b))^{-1},

with Vm = V*V/m the entrywise variance matrix of the design.  Both
halves are solved by plain Picard iteration:

* the b-half through the substitution u = (1-b)/lam, whose update map
      Phi(u) = 1 / (lam + Vm (1 + Vm^T u)^{-1})
  is a strict contraction for the ratio-squared divergence
  d(x,y) = |x-y|^2/(xy) (the quadratic-vector-equation structure);
* the gamma-half through zeta = gamma^2/tau, whose affine update map Psi
  contracts in sup norm with factor max_k b_k < 1.

No damping is applied by default since the plain iterations provably
contract; a relaxation knob is exposed for ill-scaled user profiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ensembles import ProfileKind, SampledMatrix, VarianceProfile


class RidgeError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


@dataclass(frozen=True)
class RidgeProblem:
    """Design profile, regularization, signal and fixed noise vector."""

    profile: VarianceProfile
    lam: float
    mu0: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        if self.profile.kind is not ProfileKind.RECTANGULAR:
            raise RidgeError("ridge problems use a rectangular profile")
        if not self.lam > 0:
            raise RidgeError("regularization must be positive")
        m, n = self.profile.shape
        mu0 = np.asarray(self.mu0, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        if mu0.shape != (n,) or xi.shape != (m,):
            raise RidgeError("signal/noise shapes do not match the profile")
        entries = self.profile.entries
        if not (np.linalg.norm(entries, axis=1) > 0).all():
            raise RidgeError("every profile row must have positive norm")
        if not (np.linalg.norm(entries, axis=0) > 0).all():
            raise RidgeError("every profile column must have positive norm")
        for name, arr in (("mu0", mu0), ("xi", xi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.profile.shape

    @property
    def vm(self) -> np.ndarray:
        """Entrywise variance matrix V*V/m of the design."""
        m, _ = self.profile.shape
        return self.profile.squared / m


@dataclass(frozen=True)
class RidgeFixedPoint:
    """Solved pair with derived quantities and solver metadata."""

    lam: float
    b: np.ndarray          # (m,), entries in [0, 1)
    tau: np.ndarray        # (n,), positive
    gamma: np.ndarray      # (n,), nonnegative
    zeta: np.ndarray       # (n,), gamma^2 / tau
    iterations_b: int
    iterations_gamma: int
    residual_b: float
    residual_gamma: float


def dR_metric(x, y) -> float:
    """|x - y|^2 / (x y), maximized over coordinates for vector input."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise RidgeError("the ratio-squared divergence needs positive inputs")
    return float(np.max((x - y) ** 2 / (x * y)))


def phi_map(u: np.ndarray, problem: RidgeProblem) -> np.ndarray:
    """One update of the quadratic-vector-equation map for u = (1-b)/lam."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise RidgeError(
            "phi_map needs strictly positive input; use a small positive "
            "floor such as 1e-12 instead of zero"
        )
    vm = problem.vm
    return 1.0 / (problem.lam + vm @ (1.0 / (1.0 + vm.T @ u)))


def solve_b(
    problem: RidgeProblem,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    certify_tol: float = 1e-9,
    damping: float = 0.0,
):
    """Picard iteration for b*, started inside the admissible box.

    The start point is the image of the all-ones direction,
    u0 = 1/(lam + row sums of Vm), so every iterate stays strictly
    positive.  Convergence is declared on the successive-iterate sup
    norm, then certified against the defining equation of b.
    Returns (b, tau, info dict).
    """
    vm = problem.vm
    lam = problem.lam
    u = 1.0 / (lam + vm @ np.ones(problem.shape[1]))
    gaps = []
    for iteration in range(1, max_iter + 1):
        u_next = phi_map(u, problem)
        if damping > 0:
            u_next = (1.0 - damping) * u_next + damping * u
        gap = float(np.max(np.abs(u_next - u)))
        gaps.append(gap)
        u = u_next
        if gap <= tol:
            break
    else:
        raise ConvergenceError(
            f"b iteration did not reach {tol} in {max_iter} steps", gaps[-1]
        )
    b = 1.0 - lam * u
    b = np.clip(b, 0.0, None)
    tau = 1.0 / (vm.T @ (1.0 - b))
    lhs = b / (1.0 - b)
    rhs = vm @ (tau / (1.0 + lam * tau))
    residual = float(np.max(np.abs(lhs - rhs)))
    if residual > certify_tol:
        raise ConvergenceError(
            f"b equation residual {residual:.3e} above {certify_tol}", residual
        )
    info = {"iterations": iteration, "residual": residual, "gaps": gaps}
    return b, tau, info


def psi_map(
    zeta: np.ndarray, b: np.ndarray, tau: np.ndarray, problem: RidgeProblem
) -> np.ndarray:
    """One update of the zeta = gamma^2/tau half of the system."""
    vm = problem.vm
    lam = problem.lam
    one_minus_b_sq = (1.0 - b) ** 2
    source = tau**2 * (
        vm.T @ (one_minus_b_sq * (problem.xi**2 + vm @ ((lam * tau / (1.0 + lam * tau)) ** 2 * problem.mu0**2)))
    )
    linear = tau * (vm.T @ (one_minus_b_sq * (vm @ (tau / (1.0 + lam * tau) ** 2 * zeta))))
    return source / tau + linear


def solve_gamma(
    problem: RidgeProblem,
    b: np.ndarray,
    tau: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    certify_tol: float = 1e-9,
):
    """Picard iteration for gamma* given the solved (b*, tau*).

    Starts from zero (which the update map keeps admissible) and contracts
    in sup norm with factor max_k b_k.  Returns (gamma, zeta, info dict)
    and certifies the original gamma equation.
    """
    zeta = np.zeros(problem.shape[1])
    gaps = []
    for iteration in range(1, max_iter + 1):
        zeta_next = psi_map(zeta, b, tau, problem)
        gap = float(np.max(np.abs(zeta_next - zeta)))
        gaps.append(gap)
        zeta = zeta_next
        if gap <= tol:
            break
    else:
        raise ConvergenceError(
            f"gamma iteration did not reach {tol} in {max_iter} steps", gaps[-1]
        )
    zeta = np.clip(zeta, 0.0, None)
    gamma_sq = tau * zeta
    vm = problem.vm
    lam = problem.lam
    one_minus_b_sq = (1.0 - b) ** 2
    rhs = tau**2 * (
        vm.T
        @ (
            one_minus_b_sq
            * (
                problem.xi**2
                + vm @ ((lam * tau / (1.0 + lam * tau)) ** 2 * problem.mu0**2)
                + vm @ (gamma_sq / (1.0 + lam * tau) ** 2)
            )
        )
    )
    residual = float(np.max(np.abs(gamma_sq - rhs)))
    if residual > certify_tol:
        raise ConvergenceError(
            f"gamma equation residual {residual:.3e} above {certify_tol}", residual
        )
    info = {"iterations": iteration, "residual": residual, "gaps": gaps}
    return np.sqrt(gamma_sq), zeta, info


def solve_fixed_point(
    problem: RidgeProblem, tol: float = 1e-10, max_iter: int = 10_000
) -> RidgeFixedPoint:
    """Solve both halves of the system and package the result."""
    b, tau, info_b = solve_b(problem, tol=tol, max_iter=max_iter)
    gamma, zeta, info_g = solve_gamma(problem, b, tau, tol=tol, max_iter=max_iter)
    return RidgeFixedPoint(
        lam=problem.lam,
        b=b,
        tau=tau,
        gamma=gamma,
        zeta=zeta,
        iterations_b=info_b["iterations"],
        iterations_gamma=info_g["iterations"],
        residual_b=info_b["residual"],
        residual_gamma=info_g["residual"],
    )


def ridge_closed_form(a: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Solve the normal equations (A^T A + lam I) mu = A^T y directly."""
    if not lam > 0:
        raise RidgeError("regularization must be positive")
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    n = a.shape[1]
    gram = a.T @ a + lam * np.eye(n)
    return scipy.linalg.solve(gram, a.T @ y, assume_a="pos")


@dataclass(frozen=True)
class RidgeAmpRun:
    """Iterates of the fixed-point-driven ridge recursion.

    `theta` and `r` are the raw iterates; `mu` and `residual` are their
    rescaled versions on the original coordinates.
    """

    theta: np.ndarray      # (T+1, n)
    r: np.ndarray          # (T+1, m)
    mu: np.ndarray         # (T+1, n)
    residual: np.ndarray   # (T+1, m)


def amp_ridge_run(
    problem: RidgeProblem,
    fixed_point: RidgeFixedPoint,
    matrix: SampledMatrix | np.ndarray,
    horizon: int,
) -> RidgeAmpRun:
    """Run the rescaled recursion whose stationary point is the estimator.

    The design is rescaled as D_{1-b}^{1/2} A D_tau^{1/2}; the theta
    update is the proximal map of the separable quadratic penalty, an
    affine shrinkage by 1/(1 + lam*tau).
    """
    a = matrix.values if isinstance(matrix, SampledMatrix) else np.asarray(matrix)
    m, n = problem.shape
    if a.shape != (m, n):
        raise RidgeError(f"design shape {a.shape} does not match problem {problem.shape}")
    b, tau, lam = fixed_point.b, fixed_point.tau, problem.lam
    sqrt_1mb = np.sqrt(1.0 - b)
    sqrt_tau = np.sqrt(tau)
    a_b = sqrt_1mb[:, None] * a * sqrt_tau[None, :]
    xi_b = sqrt_1mb * problem.xi
    theta0 = problem.mu0 / sqrt_tau

    theta = np.empty((horizon + 1, n))
    r = np.empty((horizon + 1, m))
    theta[0] = theta0
    r[0] = 0.0
    shrink = 1.0 / (1.0 + lam * tau)
    for t in range(horizon):
        r[t + 1] = a_b @ (theta0 - theta[t]) + xi_b + b * r[t]
        theta[t + 1] = shrink * (theta[t] + a_b.T @ r[t + 1])
    mu = theta * sqrt_tau[None, :]
    residual = r * sqrt_1mb[None, :]
    return RidgeAmpRun(theta=theta, r=r, mu=mu, residual=residual)


def seq_moments(fixed_point: RidgeFixedPoint, mu0: np.ndarray, j: int | None = None):
    """Mean and variance of the equivalent sequence-model estimator.

    Per coordinate: mean mu0_j/(1 + lam*tau_j), variance
    (gamma_j/(1 + lam*tau_j))^2.  With j=None both arrays are returned.
    """
    mu0 = np.asarray(mu0, dtype=float)
    denom = 1.0 + fixed_point.lam * fixed_point.tau
    mean = mu0 / denom
    var = (fixed_point.gamma / denom) ** 2
    if j is None:
        return mean, var
    return float(mean[j]), float(var[j])


def residual_moments(fixed_point: RidgeFixedPoint, problem: RidgeProblem):
    """Mean and variance vectors of the population residual.

    The residual is a heteroscedastic Gaussian shifted by (1-b)*xi, with
    variance row i given by
    (1-b_i)^2 sum_l Vm_il tau_l (1+lam*tau_l)^{-2} (lam^2 tau_l mu0_l^2 + gamma_l^2/tau_l).
    """
    b, tau, gamma, lam = (
        fixed_point.b,
        fixed_point.tau,
        fixed_point.gamma,
        fixed_point.lam,
    )
    vm = problem.vm
    mean = (1.0 - b) * problem.xi
    payload = tau / (1.0 + lam * tau) ** 2 * (lam**2 * tau * problem.mu0**2 + gamma**2 / tau)
    var = (1.0 - b) ** 2 * (vm @ payload)
    return mean, var


def theory_l2_error(fixed_point: RidgeFixedPoint, mu0: np.ndarray) -> float:
    """Predicted n^{-1} ||estimate - mu0||^2 from the sequence model."""
    mu0 = np.asarray(mu0, dtype=float)
    lam, tau, gamma = fixed_point.lam, fixed_point.tau, fixed_point.gamma
    denom = 1.0 + lam * tau
    bias_sq = (lam * tau * mu0 / denom) ** 2
    noise = (gamma / denom) ** 2
    return float(np.mean(bias_sq + noise))


# ---------------------------------------------------------------------------
# Contraction certificates
# ---------------------------------------------------------------------------

def phi_contraction_ratios(
    problem: RidgeProblem, pairs: int = 100, seed: int = 0
) -> np.ndarray:
    """d(Phi(u), Phi(w)) / d(u, w) over random admissible pairs.

    Pairs are drawn log-uniformly inside the invariant box
    [1/(lam + max row sum of Vm), 1/lam]; every ratio is below one.
    """
    vm = problem.vm
    lam = problem.lam
    lo = 1.0 / (lam + float((vm @ np.ones(problem.shape[1])).max()))
    hi = 1.0 / lam
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    m = problem.shape[0]
    ratios = np.empty(pairs)
    for i in range(pairs):
        u = np.exp(rng.uniform(np.log(lo), np.log(hi), size=m))
        w = np.exp(rng.uniform(np.log(lo), np.log(hi), size=m))
        ratios[i] = dR_metric(phi_map(u, problem), phi_map(w, problem)) / dR_metric(u, w)
    return ratios


def psi_contraction_ratios(
    problem: RidgeProblem,
    fixed_point: RidgeFixedPoint,
    pairs: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """Sup-norm ratios of the zeta update over random nonnegative pairs.

    The update is affine, so the ratio is bounded by the sup-norm of the
    linear part, which equals max_k b_k.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    n = problem.shape[1]
    scale = float(np.max(fixed_point.zeta)) + 1.0
    ratios = np.empty(pairs)
    for i in range(pairs):
        z1 = rng.uniform(0.0, scale, size=n)
        z2 = rng.uniform(0.0, scale, size=n)
        num = np.max(
            np.abs(
                psi_map(z1, fixed_point.b, fixed_point.tau, problem)
                - psi_map(z2, fixed_point.b, fixed_point.tau, problem)
            )
        )
        den = np.max(np.abs(z1 - z2))
        ratios[i] = num / den
    return ratios


def scalar_fixed_point_oracle(lam: float, phi: float):
    """Closed-form (b0, tau0) for the constant-profile case.

    With aspect ratio phi = m/n the substitution u = (1-b)/lam satisfies
    lam*u^2 + (lam + 1/phi - 1)*u - 1 = 0, whose positive root gives
    b0 = 1 - lam*u and tau0 = 1/(lam*u).  Used as an independent check of
    the vector solver.
    """
    coeff = lam + 1.0 / phi - 1.0
    u = (-coeff + np.sqrt(coeff**2 + 4.0 * lam)) / (2.0 * lam)
    return 1.0 - lam * u, 1.0 / (lam * u)


def scalar_gamma_oracle(lam: float, phi: float, mu0_sq_mean: float, xi_sq_mean: float):
    """Closed-form gamma0^2 for the constant-profile case.

    Solves the two-unknown scalar system specialized to the quadratic
    penalty: gamma^2 = sigma_xi^2 + phi^{-1} E(shrinkage error)^2, which
    is linear in gamma^2 once (b0, tau0) are known.
    """
    _, tau0 = scalar_fixed_point_oracle(lam, phi)
    shrink = lam * tau0 / (1.0 + lam * tau0)
    numer = xi_sq_mean + (1.0 / phi) * shrink**2 * mu0_sq_mean
    denom = 1.0 - (1.0 / phi) / (1.0 + lam * tau0) ** 2
    return numer / denom
