"""POD bases, energy-based rank selection and quadratic-manifold decoding.

Snapshots are stored column-wise: a matrix ``(N, m)`` holds ``m`` fields of
length ``N``. Bases are immutable once fitted.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateSpectrumError",
    "IngestionError",
    "InvalidRankError",
    "PodBasis",
    "QuadraticManifold",
    "decode_linear",
    "decode_quadratic",
    "encode",
    "fit_pod",
    "fit_quadratic_manifold",
    "restrict_rows",
    "select_rank_by_energy",
    "sym_kron",
    "sym_kron_matrix",
]

logger = logging.getLogger(__name__)

LSTSQ_RCOND = 1e-10


class InvalidRankError(ValueError):
    """Requested rank is not attainable from the snapshot matrix."""


class IngestionError(ValueError):
    """Snapshot data is malformed (non-finite entries, wrong shape)."""


class DegenerateSpectrumError(ValueError):
    """All singular values vanish."""


@dataclass(frozen=True)
class PodBasis:
    """Mean field, orthonormal modes ``(N, r)`` and the full singular spectrum."""

    mean: np.ndarray
    modes: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.modes.shape[1]

    @property
    def size(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class QuadraticManifold:
    """A POD basis plus the quadratic correction operator ``(N, r(r+1)/2)``."""

    basis: PodBasis
    quad_operator: np.ndarray


def select_rank_by_energy(singular_values, eps: float) -> int:
    """Smallest ``r`` whose leading ``r`` squared singular values hold at least ``eps`` of the total.

    Examples
    --------
    >>> select_rank_by_energy([2.0, 1.0, 0.1], 0.8)
    2
    """
    s = np.asarray(singular_values, dtype=float)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"energy fraction must lie in (0, 1], got {eps}")
    energy = s**2
    total = energy.sum()
    if s.size == 0 or total <= 0.0:
        raise DegenerateSpectrumError("spectrum has no positive singular value")
    ratio = np.cumsum(energy) / total
    # guard against round-off leaving the last ratio a hair below 1
    ratio[-1] = 1.0
    return int(np.searchsorted(ratio, eps, side="left") + 1)


def _as_snapshots(snapshots) -> np.ndarray:
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2:
        raise IngestionError(f"snapshots must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise IngestionError("snapshots contain non-finite entries")
    return X


def fit_pod(snapshots, rank: int | None = None, energy: float | None = None) -> PodBasis:
    """Fit a POD basis from column snapshots.

    Exactly one of ``rank`` (fixed truncation) or ``energy`` (retained energy
    fraction) selects the number of modes.

    Parameters
    ----------
    snapshots : array_like, shape (N, m)
    rank : int, optional
    energy : float, optional
    """
    if (rank is None) == (energy is None):
        raise ValueError("give exactly one of rank or energy")
    X = _as_snapshots(snapshots)
    n, m = X.shape
    if m < 2 or n < 1:
        raise IngestionError(f"need at least 2 snapshots of length >= 1, got {X.shape}")
    mean = X.mean(axis=1)
    U, s, _ = np.linalg.svd(X - mean[:, None], full_matrices=False)
    if rank is None:
        rank = select_rank_by_energy(s, energy)
    if not 1 <= rank <= min(n, m):
        raise InvalidRankError(f"rank {rank} outside [1, {min(n, m)}]")
    modes = np.ascontiguousarray(U[:, :rank])
    return PodBasis(mean=mean, modes=modes, singular_values=s)


def _check_len(vec, n, what):
    vec = np.asarray(vec, dtype=float)
    if vec.shape[-1] != n:
        raise ValueError(f"{what} has length {vec.shape[-1]}, expected {n}")
    return vec


def encode(basis: PodBasis, field) -> np.ndarray:
    """Reduced coordinates ``modes.T @ (field - mean)``; accepts ``(N,)`` or ``(N, k)``."""
    field = np.asarray(field, dtype=float)
    if field.shape[0] != basis.size:
        raise ValueError(f"field has length {field.shape[0]}, expected {basis.size}")
    if field.ndim == 1:
        return basis.modes.T @ (field - basis.mean)
    return basis.modes.T @ (field - basis.mean[:, None])


def decode_linear(basis: PodBasis, coords) -> np.ndarray:
    """``mean + modes @ coords``; accepts ``(r,)`` or ``(r, k)``."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[0] != basis.rank:
        raise ValueError(f"coords have length {coords.shape[0]}, expected {basis.rank}")
    if coords.ndim == 1:
        return basis.mean + basis.modes @ coords
    return basis.mean[:, None] + basis.modes @ coords


def sym_kron(coords) -> np.ndarray:
    """Unique products ``c_i c_j`` for ``i <= j``, lexicographic in ``(i, j)``.

    Examples
    --------
    >>> sym_kron([2.0, 3.0])
    array([4., 6., 9.])
    """
    c = np.asarray(coords, dtype=float)
    i, j = np.triu_indices(c.shape[0])
    return c[i] * c[j]


def sym_kron_matrix(coords) -> np.ndarray:
    """Column-wise :func:`sym_kron` of an ``(r, k)`` coordinate matrix."""
    C = np.asarray(coords, dtype=float)
    i, j = np.triu_indices(C.shape[0])
    return C[i] * C[j]


def fit_quadratic_manifold(snapshots, basis: PodBasis) -> QuadraticManifold:
    """Least-squares quadratic correction of a POD basis.

    Solves ``min ||(I - Phi Phi^T)(X - mean) - Q K||_F`` for ``Q`` where ``K``
    holds the symmetric Kronecker features of the reduced coordinates. The
    minimum-norm solution is returned when ``K`` is rank deficient.
    """
    X = _as_snapshots(snapshots)
    if X.shape[0] != basis.size:
        raise IngestionError(f"snapshot length {X.shape[0]} does not match basis {basis.size}")
    r = basis.rank
    n_feat = r * (r + 1) // 2
    if X.shape[1] < n_feat:
        warnings.warn(f"{X.shape[1]} snapshots for {n_feat} quadratic features; "
                      "using the minimum-norm solution", RuntimeWarning, stacklevel=2)
    centered = X - basis.mean[:, None]
    coords = basis.modes.T @ centered
    target = centered - basis.modes @ coords
    K = sym_kron_matrix(coords)
    sol, *_ = np.linalg.lstsq(K.T, target.T, rcond=LSTSQ_RCOND)
    return QuadraticManifold(basis=basis, quad_operator=np.ascontiguousarray(sol.T))


def decode_quadratic(manifold: QuadraticManifold, coords) -> np.ndarray:
    """``mean + modes @ c + quad_operator @ sym_kron(c)``."""
    coords = np.asarray(coords, dtype=float)
    lin = decode_linear(manifold.basis, coords)
    if coords.ndim == 1:
        return lin + manifold.quad_operator @ sym_kron(coords)
    return lin + manifold.quad_operator @ sym_kron_matrix(coords)


def restrict_rows(basis: PodBasis, rows) -> PodBasis:
    """Row-selected basis used to decode only a subset of degrees of freedom.

    The result keeps ``modes[rows]`` as is; it is no longer orthonormal and
    is meant for decoding only.
    """
    rows = np.asarray(rows, dtype=int)
    if rows.ndim != 1 or rows.size == 0:
        raise ValueError("rows must be a non-empty 1-D index list")
    if rows.min() < 0 or rows.max() >= basis.size:
        raise IndexError(f"row indices must lie in [0, {basis.size})")
    return PodBasis(mean=basis.mean[rows].copy(), modes=np.ascontiguousarray(basis.modes[rows]),
                    singular_values=basis.singular_values)
