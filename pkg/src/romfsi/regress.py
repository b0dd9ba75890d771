"""Latent-space regressors: RBF interpolation, sparse quadratic polynomial, ridge.

Every regressor centers and scales its inputs (per dimension, or per block
of dimensions, see :class:`Scaler`) and is immutable after fitting. Use
:func:`fit_regressor` / :func:`predict` for kind-agnostic code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist

__all__ = [
    "FitError",
    "RbfModel",
    "RidgeModel",
    "Scaler",
    "SparsePoly2Model",
    "eval_poly2",
    "eval_rbf",
    "eval_ridge",
    "fit_poly2_lasso",
    "fit_rbf",
    "fit_regressor",
    "fit_ridge",
    "lasso_cd",
    "poly2_features",
    "predict",
]

KERNELS = ("thin_plate", "cubic")


class FitError(RuntimeError):
    """The regression problem could not be solved."""


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, groups=None) -> "Scaler":
        """Center and scale the columns of ``X``.

        Without ``groups`` every column gets unit variance. ``groups`` lists
        consecutive block widths; each block is divided by the largest column
        standard deviation inside it, which keeps the relative scale of the
        coordinates within a block (e.g. POD coordinates of one field).
        """
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        if groups is None:
            scale = std
        else:
            if sum(groups) != X.shape[1] or min(groups) < 1:
                raise ValueError(f"groups {groups} do not partition {X.shape[1]} columns")
            bounds = np.cumsum([0, *groups])
            scale = np.concatenate([np.full(b - a, std[a:b].max()) for a, b in zip(bounds[:-1], bounds[1:])])
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mean=X.mean(axis=0), scale=scale)

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


def _as_xy(X, Y):
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")
    return X, Y


def _atleast_2d_rows(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x, x.ndim == 1


# ---------------------------------------------------------------- RBF


def _kernel(r, kind):
    if kind == "thin_plate":
        out = np.zeros_like(r)
        pos = r > 0.0
        out[pos] = r[pos] ** 2 * np.log(r[pos])
        return out
    if kind == "cubic":
        return r**3
    raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")


@dataclass(frozen=True)
class RbfModel:
    """RBF interpolant with a linear polynomial tail in standardized inputs."""

    centers: np.ndarray
    weights: np.ndarray
    poly_coeffs: np.ndarray
    kernel: str
    scaler: Scaler

    kind = "rbf"


def fit_rbf(X, Y, kernel: str = "thin_plate", smoothing: float = 0.0, groups=None) -> RbfModel:
    """Solve the augmented interpolation system.

    ``[[K + s I, P], [P^T, 0]] [w; c] = [Y; 0]`` with ``P = [1, x]``. The
    default ``smoothing = 0`` interpolates the training data exactly.
    ``groups`` selects block-wise input scaling (see :meth:`Scaler.fit`).
    """
    X, Y = _as_xy(X, Y)
    m, d = X.shape
    if m < d + 2:
        raise FitError(f"need at least {d + 2} centers for {d}-D inputs, got {m}")
    scaler = Scaler.fit(X, groups)
    Z = scaler(X)
    if not smoothing:
        # round-off hides the exact singularity, so look for repeated centers directly
        _, idx, counts = np.unique(Z, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            raise FitError(f"singular RBF system: duplicate centers at rows {idx[counts > 1].tolist()[:5]}")
    K = _kernel(cdist(Z, Z), kernel)
    if smoothing:
        K[np.diag_indices(m)] += smoothing
    P = np.hstack([np.ones((m, 1)), Z])
    A = np.zeros((m + d + 1, m + d + 1))
    A[:m, :m] = K
    A[:m, m:] = P
    A[m:, :m] = P.T
    rhs = np.vstack([Y, np.zeros((d + 1, Y.shape[1]))])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu = la.lu_factor(A, check_finite=False)
        sol = la.lu_solve(lu, rhs, check_finite=False)
    except (la.LinAlgError, ValueError) as exc:
        raise FitError(f"RBF system could not be factorized: {exc}") from exc
    if not np.all(np.isfinite(sol)) or np.any(np.diag(lu[0]) == 0.0):
        raise FitError("singular RBF system: polynomial tail is rank deficient "
                       "(centers on a hyperplane)")
    # contiguous copies keep evaluation bit-identical after a save/load round trip
    c = np.ascontiguousarray
    return RbfModel(centers=c(Z), weights=c(sol[:m]), poly_coeffs=c(sol[m:]), kernel=kernel, scaler=scaler)


def eval_rbf(model: RbfModel, x) -> np.ndarray:
    """Evaluate at one input ``(d,)`` or a batch ``(k, d)``."""
    x, single = _atleast_2d_rows(x)
    z = model.scaler(x)
    K = _kernel(cdist(z, model.centers), model.kernel)
    out = K @ model.weights + model.poly_coeffs[0] + z @ model.poly_coeffs[1:]
    return out[0] if single else out


# ---------------------------------------------------------------- Lasso


def poly2_features(Z) -> np.ndarray:
    """``[1, z_1..z_d, z_i z_j (i <= j)]`` per row."""
    Z = np.asarray(Z, dtype=float)
    i, j = np.triu_indices(Z.shape[1])
    return np.hstack([np.ones((Z.shape[0], 1)), Z, Z[:, i] * Z[:, j]])


def lasso_cd(X, y, lam: float, tol: float = 1e-8, max_sweeps: int = 100_000):
    """Lasso with an unpenalized intercept by cyclic coordinate descent.

    Minimizes ``(1/2m)||y - b - X w||^2 + lam ||w||_1``. Stops once the
    duality gap, relative to ``(1/2m)||y - mean(y)||^2``, is below ``tol``.

    Returns ``(b, w, gap)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    col_sq = (Xc**2).sum(axis=0)
    w = np.zeros(n)
    res = yc.copy()
    scale = max(0.5 * (yc @ yc) / m, np.finfo(float).tiny)
    gap = np.inf
    for sweep in range(max_sweeps):
        for j in range(n):
            if col_sq[j] == 0.0:
                continue
            wj = w[j]
            rho = Xc[:, j] @ res + col_sq[j] * wj
            new = np.sign(rho) * max(abs(rho) - m * lam, 0.0) / col_sq[j]
            if new != wj:
                res -= Xc[:, j] * (new - wj)
                w[j] = new
        if sweep % 10 == 0 or sweep == max_sweeps - 1:
            grad = Xc.T @ res
            gmax = np.max(np.abs(grad)) / m if n else 0.0
            s = min(1.0, lam / gmax) if gmax > 0 else 1.0
            primal = 0.5 * (res @ res) / m + lam * np.abs(w).sum()
            dual = 0.5 * (yc @ yc) / m - 0.5 * ((yc - s * res) @ (yc - s * res)) / m
            gap = primal - dual
            if gap <= tol * scale:
                break
    return float(y_mean - x_mean @ w), w, float(gap)


@dataclass(frozen=True)
class SparsePoly2Model:
    """Quadratic polynomial with L1-sparsified weights ``(d_out, (d+1)(d+2)/2)``."""

    weights: np.ndarray
    lam: float
    scaler: Scaler
    n_zero: int

    kind = "poly2"


def fit_poly2_lasso(X, Y, lam: float, groups=None) -> SparsePoly2Model:
    """Per-output Lasso over standardized quadratic features."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X, Y = _as_xy(X, Y)
    if X.shape[0] < 2:
        raise FitError("need at least 2 samples")
    scaler = Scaler.fit(X, groups)
    F = poly2_features(scaler(X))
    W = np.zeros((Y.shape[1], F.shape[1]))
    for k in range(Y.shape[1]):
        if lam == 0.0:
            W[k], *_ = np.linalg.lstsq(F, Y[:, k], rcond=None)
        else:
            b, w, _ = lasso_cd(F[:, 1:], Y[:, k], lam)
            W[k, 0] = b
            W[k, 1:] = w
    return SparsePoly2Model(weights=W, lam=float(lam), scaler=scaler,
                            n_zero=int(np.count_nonzero(W[:, 1:] == 0.0)))


def eval_poly2(model: SparsePoly2Model, x) -> np.ndarray:
    x, single = _atleast_2d_rows(x)
    out = poly2_features(model.scaler(x)) @ model.weights.T
    return out[0] if single else out


# ---------------------------------------------------------------- ridge


@dataclass(frozen=True)
class RidgeModel:
    """Affine map ``(d_out, d_in + 1)``; column 0 is the unpenalized intercept."""

    weights: np.ndarray
    lam: float
    scaler: Scaler

    kind = "ridge"


def fit_ridge(X, Y, lam: float = 1e-5, groups=None) -> RidgeModel:
    """Closed-form ridge regression on standardized inputs."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X, Y = _as_xy(X, Y)
    scaler = Scaler.fit(X, groups)
    Z = scaler(X)
    zm = Z.mean(axis=0)
    ym = Y.mean(axis=0)
    Zc = Z - zm
    G = Zc.T @ Zc + lam * np.eye(Z.shape[1])
    B, *_ = np.linalg.lstsq(G, Zc.T @ (Y - ym), rcond=None)
    b0 = ym - zm @ B
    return RidgeModel(weights=np.hstack([b0[:, None], B.T]), lam=float(lam), scaler=scaler)


def eval_ridge(model: RidgeModel, x) -> np.ndarray:
    x, single = _atleast_2d_rows(x)
    out = model.weights[:, 0] + model.scaler(x) @ model.weights[:, 1:].T
    return out[0] if single else out


# ---------------------------------------------------------------- dispatch


def fit_regressor(kind: str, X, Y, **params):
    """Fit by name: ``"rbf"`` (``kernel``, ``smoothing``), ``"poly2"`` (``lam``) or ``"ridge"`` (``lam``).

    Every kind also accepts ``groups`` for block-wise input scaling.
    """
    groups = params.get("groups")
    if kind == "rbf":
        return fit_rbf(X, Y, params.get("kernel", "thin_plate"), params.get("smoothing", 0.0), groups)
    if kind == "poly2":
        return fit_poly2_lasso(X, Y, params.get("lam", 1e-3), groups)
    if kind == "ridge":
        return fit_ridge(X, Y, params.get("lam", 1e-5), groups)
    raise ValueError(f"unknown regressor {kind!r}")


def predict(model, x) -> np.ndarray:
    if isinstance(model, RbfModel):
        return eval_rbf(model, x)
    if isinstance(model, SparsePoly2Model):
        return eval_poly2(model, x)
    if isinstance(model, RidgeModel):
        return eval_ridge(model, x)
    raise TypeError(f"not a regressor: {type(model).__name__}")
