"""Variance-profile Gaussian random matrix ensembles.

A profile is a nonnegative matrix V of entrywise standard-deviation
multipliers.  Symmetric sampling draws i.i.d. N(0, 1/n) variables on the
upper triangle (diagonal included, no GOE doubling) and mirrors them;
rectangular sampling draws i.i.d. N(0, 1/m) entries.  The sampled matrix
is V * G entrywise.

Sampling uses the counter-based Philox generator keyed by the seed, so a
draw is a pure function of (profile, seed) regardless of thread schedule.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ProfileKind(enum.Enum):
    SYMMETRIC = "symmetric"
    RECTANGULAR = "rectangular"


class MatrixScale(enum.Enum):
    SYMMETRIC_ONE_OVER_N = "symmetric_1_over_n"
    RECTANGULAR_ONE_OVER_M = "rectangular_1_over_m"


class MaskMode(enum.Enum):
    ROW_AND_COLUMN = "row_and_column"
    ROW_ONLY = "row_only"
    COLUMN_ONLY = "column_only"


class ProfileShapeError(ValueError):
    """Raised when a profile's shape or symmetry does not match its kind."""


@dataclass(frozen=True)
class VarianceProfile:
    """Nonnegative entrywise standard-deviation matrix with a sup-norm bound.

    Parameters
    ----------
    entries : ndarray
        Nonnegative (m, n) matrix.  Symmetric kind requires m == n and
        exact symmetry.
    kind : ProfileKind
    bound : float, optional
        Sup-norm bound K >= 2 on the entries (hypothesis bookkeeping; the
        entries are validated against it).  Defaults to the smallest
        admissible value max(2, max entry).
    """

    entries: np.ndarray
    kind: ProfileKind
    bound: float | None = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 2:
            raise ProfileShapeError(f"profile must be 2-D, got shape {entries.shape}")
        if np.any(entries < 0):
            raise ValueError("profile entries must be nonnegative")
        if self.bound is None:
            object.__setattr__(
                self, "bound", max(2.0, float(entries.max(initial=0.0)))
            )
        if self.bound < 2:
            raise ValueError(f"profile bound must be >= 2, got {self.bound}")
        if np.any(entries > self.bound):
            raise ValueError(
                f"profile entries exceed the declared bound {self.bound}"
            )
        if self.kind is ProfileKind.SYMMETRIC:
            m, n = entries.shape
            if m != n or not np.array_equal(entries, entries.T):
                raise ProfileShapeError("symmetric profile must be square and V == V.T")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def squared(self) -> np.ndarray:
        """Entrywise V**2, the variance multipliers."""
        return self.entries**2

    def permuted(self, perm: np.ndarray) -> "VarianceProfile":
        """Profile with rows and columns reindexed by `perm` (symmetric only)."""
        if self.kind is not ProfileKind.SYMMETRIC:
            raise ProfileShapeError("permuted() is defined for symmetric profiles")
        return VarianceProfile(self.entries[np.ix_(perm, perm)], self.kind, self.bound)


@dataclass(frozen=True)
class SampledMatrix:
    """A realized draw A = V * G together with its provenance."""

    values: np.ndarray
    scale: MatrixScale
    seed: int
    profile: VarianceProfile

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _generator(seed: int) -> np.random.Generator:
    # Philox is counter-based and splittable; identical seeds give identical
    # streams independent of how many draws other threads have made.
    return np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))


def sample_symmetric(profile: VarianceProfile, seed: int) -> SampledMatrix:
    """Draw A = V * G with i.i.d. N(0, 1/n) upper triangle, mirrored.

    The diagonal has variance 1/n like the off-diagonal (no doubling).
    Mirroring copies the upper triangle; it does not re-sample.
    """
    if profile.kind is not ProfileKind.SYMMETRIC:
        raise ProfileShapeError("sample_symmetric requires a symmetric profile")
    n = profile.shape[0]
    rng = _generator(seed)
    draw = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, n))
    upper = np.triu(draw)
    g = upper + np.triu(draw, k=1).T
    values = profile.entries * g
    return SampledMatrix(values, MatrixScale.SYMMETRIC_ONE_OVER_N, seed, profile)


def sample_rectangular(profile: VarianceProfile, seed: int) -> SampledMatrix:
    """Draw A = V * G with independent N(0, 1/m) entries, m the row count."""
    if profile.kind is not ProfileKind.RECTANGULAR:
        raise ProfileShapeError("sample_rectangular requires a rectangular profile")
    m, n = profile.shape
    rng = _generator(seed)
    g = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
    values = profile.entries * g
    return SampledMatrix(values, MatrixScale.RECTANGULAR_ONE_OVER_M, seed, profile)


def sample_rectangular_entries(
    profile: VarianceProfile, seed: int, distribution: str = "gaussian"
) -> SampledMatrix:
    """Rectangular draw with a configurable standardized entry distribution.

    `distribution` is one of {"gaussian", "bernoulli", "t10"}; non-Gaussian
    entries are standardized to variance one before the V / sqrt(m) scaling.
    Exposed for the ridge design-universality experiment only.
    """
    if profile.kind is not ProfileKind.RECTANGULAR:
        raise ProfileShapeError("sample_rectangular_entries requires a rectangular profile")
    if distribution == "gaussian":
        return sample_rectangular(profile, seed)
    m, n = profile.shape
    rng = _generator(seed)
    if distribution == "bernoulli":
        g = rng.integers(0, 2, size=(m, n)) * 2.0 - 1.0
    elif distribution == "t10":
        g = rng.standard_t(df=10, size=(m, n)) / np.sqrt(10.0 / 8.0)
    else:
        raise ValueError(f"unknown entry distribution {distribution!r}")
    values = profile.entries * g / np.sqrt(m)
    return SampledMatrix(values, MatrixScale.RECTANGULAR_ONE_OVER_M, seed, profile)


def mask_leave_out(
    matrix: SampledMatrix,
    indices: Iterable[int],
    mode: MaskMode = MaskMode.ROW_AND_COLUMN,
) -> SampledMatrix:
    """Copy of `matrix` with the given rows/columns set to zero.

    RowAndColumn is only meaningful for symmetric matrices.  The input is
    never modified; an empty index set returns an identical copy.
    """
    idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=int)
    m, n = matrix.shape
    values = np.array(matrix.values)
    if mode is MaskMode.ROW_AND_COLUMN:
        if matrix.scale is not MatrixScale.SYMMETRIC_ONE_OVER_N:
            raise ProfileShapeError("row-and-column masking requires a symmetric matrix")
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError("leave-out index out of range")
        values[idx, :] = 0.0
        values[:, idx] = 0.0
    elif mode is MaskMode.ROW_ONLY:
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise IndexError("leave-out row index out of range")
        values[idx, :] = 0.0
    else:
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError("leave-out column index out of range")
        values[:, idx] = 0.0
    return SampledMatrix(values, matrix.scale, matrix.seed, matrix.profile)


# ---------------------------------------------------------------------------
# Profile construction helpers (CSV + named generators used by config files)
# ---------------------------------------------------------------------------

def profile_from_csv(path, kind: ProfileKind, bound: float | None = None) -> VarianceProfile:
    """Load a dense, header-free, row-major CSV as a profile."""
    entries = np.loadtxt(path, delimiter=",", ndmin=2)
    if bound is None:
        bound = max(2.0, float(entries.max(initial=0.0)))
    return VarianceProfile(entries, kind, bound)


def constant_profile(
    rows: int, cols: int, value: float = 1.0, kind: ProfileKind | None = None
) -> VarianceProfile:
    if kind is None:
        kind = ProfileKind.SYMMETRIC if rows == cols else ProfileKind.RECTANGULAR
    entries = np.full((rows, cols), float(value))
    return VarianceProfile(entries, kind, bound=max(2.0, value))


def iid_abs_gaussian_profile(
    rows: int,
    cols: int,
    mean: float = 1.0,
    sd: float = 1.0,
    seed: int = 0,
    kind: ProfileKind | None = None,
) -> VarianceProfile:
    """Entries |N(mean, sd^2)|; symmetric kind mirrors the upper triangle."""
    if kind is None:
        kind = ProfileKind.SYMMETRIC if rows == cols else ProfileKind.RECTANGULAR
    rng = _generator(seed)
    entries = np.abs(rng.normal(mean, sd, size=(rows, cols)))
    if kind is ProfileKind.SYMMETRIC:
        entries = np.triu(entries) + np.triu(entries, k=1).T
    bound = max(2.0, float(entries.max()))
    return VarianceProfile(entries, kind, bound)


def block_profile(
    row_sizes: Sequence[int],
    col_sizes: Sequence[int],
    values,
    kind: ProfileKind | None = None,
) -> VarianceProfile:
    """Piecewise-constant profile with the given block sizes and block values."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(row_sizes), len(col_sizes)):
        raise ProfileShapeError(
            f"block values shape {values.shape} does not match block counts "
            f"({len(row_sizes)}, {len(col_sizes)})"
        )
    entries = np.block(
        [
            [np.full((r, c), values[i, j]) for j, c in enumerate(col_sizes)]
            for i, r in enumerate(row_sizes)
        ]
    )
    if kind is None:
        kind = (
            ProfileKind.SYMMETRIC
            if entries.shape[0] == entries.shape[1] and np.array_equal(entries, entries.T)
            else ProfileKind.RECTANGULAR
        )
    return VarianceProfile(entries, kind, bound=max(2.0, float(entries.max())))
