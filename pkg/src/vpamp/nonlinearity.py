"""Separable per-iteration nonlinearities with analytic first derivatives.

Only named parametric families are provided so that every experiment is
fully describable in a config file.  Each family evaluates componentwise
on arrays; parameters may be scalars or per-coordinate arrays.  Library
users needing a custom family can subclass :class:`NonlinearityFamily`
and register it in :data:`FAMILY_REGISTRY`.

Conventions baked into :class:`NonlinearitySchedule`: querying iteration
-1 returns the zero function, matching the initialization convention of
the iterations that consume these schedules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class NonlinearityFamily:
    """Base class: a componentwise map with derivative and Lipschitz bound."""

    name = "base"

    def eval(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def lipschitz_bound(self) -> float:
        """Analytic upper bound on sup |deriv|."""
        raise NotImplementedError

    def offset_bound(self) -> float:
        """Upper bound on |f(0)| (enters the smoothness-condition constant)."""
        return float(np.max(np.abs(self.eval(np.zeros(1)))))


@dataclass(frozen=True)
class Zero(NonlinearityFamily):
    name = "zero"

    def eval(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def deriv(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def lipschitz_bound(self):
        return 0.0


@dataclass(frozen=True)
class Identity(NonlinearityFamily):
    name = "identity"

    def eval(self, z):
        return np.asarray(z, dtype=float)

    def deriv(self, z):
        return np.ones_like(np.asarray(z, dtype=float))

    def lipschitz_bound(self):
        return 1.0


@dataclass(frozen=True)
class Affine(NonlinearityFamily):
    """f(z) = a*z + b with scalar or per-coordinate a, b."""

    a: float | np.ndarray = 1.0
    b: float | np.ndarray = 0.0
    name = "affine"

    def eval(self, z):
        return self.a * np.asarray(z, dtype=float) + self.b

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.a, dtype=float), z.shape).copy()

    def lipschitz_bound(self):
        return float(np.max(np.abs(self.a)))


@dataclass(frozen=True)
class ScaledTanh(NonlinearityFamily):
    """f(z) = alpha * tanh(beta * z)."""

    alpha: float = 1.0
    beta: float = 1.0
    name = "scaled_tanh"

    def eval(self, z):
        return self.alpha * np.tanh(self.beta * np.asarray(z, dtype=float))

    def deriv(self, z):
        t = np.tanh(self.beta * np.asarray(z, dtype=float))
        return self.alpha * self.beta * (1.0 - t * t)

    def lipschitz_bound(self):
        return float(np.max(np.abs(self.alpha * self.beta)))


@dataclass(frozen=True)
class SmoothSoftThreshold(NonlinearityFamily):
    """C-infinity mollification of soft thresholding at level theta.

    f(z) = s(z - theta) - s(-z - theta) with the softplus hinge
    s(u) = delta * log(1 + exp(u / delta)).  f is odd, f(0) = 0, and
    |f'| < 1 everywhere; delta controls how sharply the hinge turns.
    """

    theta: float = 1.0
    delta: float = 0.05
    name = "smooth_soft_threshold"

    def _hinge(self, u):
        # log1p(exp(.)) with the standard overflow-safe split.
        u = np.asarray(u, dtype=float) / self.delta
        out = np.where(u > 0, u + np.log1p(np.exp(-np.abs(u))), np.log1p(np.exp(-np.abs(u))))
        return self.delta * out

    def _sigmoid(self, u):
        u = np.asarray(u, dtype=float) / self.delta
        return 0.5 * (1.0 + np.tanh(0.5 * u))

    def eval(self, z):
        z = np.asarray(z, dtype=float)
        return self._hinge(z - self.theta) - self._hinge(-z - self.theta)

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        return self._sigmoid(z - self.theta) + self._sigmoid(-z - self.theta)

    def lipschitz_bound(self):
        return 1.0


@dataclass(frozen=True)
class RidgeProxAffine(NonlinearityFamily):
    """Shifted proximal map of the separable quadratic penalty.

    With penalty weight tau (per coordinate) and regularization lam, the
    prox of mu -> (lam/2) * sum tau_l mu_l^2 is x -> x / (1 + lam*tau).
    This family evaluates f(v) = prox(center - v) - center, the recentred
    form used when ridge regression is driven as a message-passing
    iteration.
    """

    lam: float = 1.0
    tau: float | np.ndarray = 1.0
    center: float | np.ndarray = 0.0
    name = "ridge_prox_affine"

    def _slope(self):
        return 1.0 / (1.0 + self.lam * np.asarray(self.tau, dtype=float))

    def eval(self, z):
        z = np.asarray(z, dtype=float)
        return (self.center - z) * self._slope() - self.center

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(-self._slope(), z.shape).copy()

    def lipschitz_bound(self):
        return float(np.max(np.abs(self._slope())))


@dataclass(frozen=True)
class CoordinateBlocks(NonlinearityFamily):
    """Composite applying a different family to each contiguous index block.

    `blocks` is a sequence of (start, stop, family) covering [0, n).
    """

    blocks: tuple
    name = "coordinate_blocks"

    def _apply(self, z, method):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        for start, stop, family in self.blocks:
            out[..., start:stop] = getattr(family, method)(z[..., start:stop])
        return out

    def eval(self, z):
        return self._apply(z, "eval")

    def deriv(self, z):
        return self._apply(z, "deriv")

    def lipschitz_bound(self):
        return max(f.lipschitz_bound() for _, _, f in self.blocks)

    def offset_bound(self):
        return max(f.offset_bound() for _, _, f in self.blocks)


FAMILY_REGISTRY = {
    "zero": Zero,
    "identity": Identity,
    "affine": Affine,
    "scaled_tanh": ScaledTanh,
    "smooth_soft_threshold": SmoothSoftThreshold,
    "ridge_prox_affine": RidgeProxAffine,
}

_ZERO = Zero()


def family_from_config(spec: dict) -> NonlinearityFamily:
    """Build a family from {"family": name, "params": {...}}."""
    name = spec["family"]
    if name not in FAMILY_REGISTRY:
        raise KeyError(f"unknown nonlinearity family {name!r}")
    params = {
        key: (np.asarray(val, dtype=float) if isinstance(val, list) else val)
        for key, val in spec.get("params", {}).items()
    }
    return FAMILY_REGISTRY[name](**params)


class ScheduleError(ValueError):
    pass


class NonlinearitySchedule:
    """Map (iteration t, coordinate) -> nonlinearity, with broadcasting.

    The common cases are one family for every (t, coordinate) or a small
    per-iteration table; per-coordinate structure is expressed through
    families with array parameters or :class:`CoordinateBlocks`.
    """

    def __init__(
        self,
        horizon: int,
        n_coords: int,
        default: NonlinearityFamily | None = None,
        per_t: dict[int, NonlinearityFamily] | None = None,
    ):
        if horizon < 0:
            raise ScheduleError("horizon must be nonnegative")
        self.horizon = int(horizon)
        self.n_coords = int(n_coords)
        self._default = default
        self._per_t = dict(per_t or {})
        for t in range(self.horizon + 1):
            if t not in self._per_t and default is None:
                raise ScheduleError(f"no family defined for iteration {t}")

    @classmethod
    def constant(cls, family: NonlinearityFamily, horizon: int, n_coords: int):
        return cls(horizon, n_coords, default=family)

    def family_at(self, t: int) -> NonlinearityFamily:
        if t == -1:
            return _ZERO
        if not 0 <= t <= self.horizon:
            raise ScheduleError(f"iteration {t} outside schedule horizon {self.horizon}")
        return self._per_t.get(t, self._default)

    def _check_len(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.n_coords:
            raise ScheduleError(
                f"input has {z.shape[-1]} coordinates, schedule expects {self.n_coords}"
            )
        return z

    def eval(self, t: int, z: np.ndarray) -> np.ndarray:
        return self.family_at(t).eval(self._check_len(z))

    def deriv(self, t: int, z: np.ndarray) -> np.ndarray:
        return self.family_at(t).deriv(self._check_len(z))

    def lipschitz_bound(self) -> float:
        families = [self.family_at(t) for t in range(self.horizon + 1)]
        return max(f.lipschitz_bound() for f in families)

    def smoothness_constant(self) -> float:
        """max_t (|f(0)| + sup|f'|): the constant entering the theory bounds."""
        families = [self.family_at(t) for t in range(self.horizon + 1)]
        return max(f.offset_bound() + f.lipschitz_bound() for f in families)


def check_lipschitz(
    family: NonlinearityFamily, bound_claim: float, grid: np.ndarray
) -> bool:
    """True iff max |deriv| over the finite grid is at most the claim."""
    grid = np.asarray(grid, dtype=float)
    return bool(np.max(np.abs(family.deriv(grid))) <= bound_claim)


def default_check_grid(half_width: float = 20.0, points: int = 40001) -> np.ndarray:
    return np.linspace(-half_width, half_width, points)
