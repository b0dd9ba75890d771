"""Gauss-Seidel fixed-point coupling of a solid and a fluid operator.

One time step solves ``fluid(solid(f)) = f`` for the interface force ``f``.
Each iteration evaluates ``u = solid(f)``, ``f~ = fluid(u)`` and the residual
``r = f~ - f``; unless converged, an accelerator proposes the next ``f``.

Accelerators
------------
``constant``
    Fixed under-relaxation ``f <- f + w0 * r`` (``w0 = 1`` is plain Picard).
``aitken``
    Dynamic scalar relaxation from consecutive residuals.
``iqn-ils``
    Interface quasi-Newton with an inverse least-squares Jacobian built from
    residual/output differences, optionally reused over past time steps.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la

__all__ = [
    "Accelerator",
    "AcceleratorBreakdown",
    "AitkenAccelerator",
    "ConstantRelaxation",
    "DegenerateResidualError",
    "IQNILSAccelerator",
    "StagnationError",
    "StepReport",
    "aitken_factor",
    "make_accelerator",
    "qr_filter",
    "relative_residual",
    "run_time_step",
]

logger = logging.getLogger(__name__)

SolverOperator = Callable[[np.ndarray], np.ndarray]


class DegenerateResidualError(ValueError):
    """The fluid output has zero norm, so the relative residual is undefined."""


class StagnationError(ZeroDivisionError):
    """Consecutive residuals are identical; the Aitken factor is undefined."""


class AcceleratorBreakdown(RuntimeError):
    """The quasi-Newton least-squares solve produced non-finite values."""


def relative_residual(f_tilde, f_prev):
    """Return ``(r, e)`` with ``r = f_tilde - f_prev`` and ``e = |r| / |f_tilde|``."""
    f_tilde = np.asarray(f_tilde, dtype=float)
    f_prev = np.asarray(f_prev, dtype=float)
    if f_tilde.shape != f_prev.shape:
        raise ValueError(f"shape mismatch: {f_tilde.shape} vs {f_prev.shape}")
    norm = np.linalg.norm(f_tilde)
    if norm == 0.0:
        raise DegenerateResidualError("fluid output has zero norm")
    r = f_tilde - f_prev
    return r, float(np.linalg.norm(r) / norm)


def aitken_factor(w_prev: float, r_prev, r_cur, w_max: float = 2.0) -> float:
    """Aitken relaxation factor, clamped to ``|w| <= w_max``."""
    r_prev = np.asarray(r_prev, dtype=float)
    dr = np.asarray(r_cur, dtype=float) - r_prev
    denom = float(dr @ dr)
    if denom == 0.0:
        raise StagnationError("identical consecutive residuals")
    w = -w_prev * float(r_prev @ dr) / denom
    if not np.isfinite(w):
        raise StagnationError("non-finite Aitken factor")
    return float(np.clip(w, -w_max, w_max))


def qr_filter(V, W, eps: float = 1e-2):
    """Economy QR of ``V`` after dropping near-dependent columns.

    Columns are inserted newest first by modified Gram-Schmidt (applied
    twice); a column whose orthogonal remainder, i.e. its diagonal entry of
    ``R``, is below ``eps`` times its own norm is dropped from ``V`` and
    ``W``. Older columns are therefore the ones sacrificed.

    Returns ``(Q, R, V, W, dropped)``.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    n, m = V.shape
    Q = np.zeros((n, m))
    R = np.zeros((m, m))
    keep = []
    for j in range(m):
        v = V[:, j].copy()
        norm_v = np.linalg.norm(v)
        if norm_v == 0.0:
            continue
        k = len(keep)
        coef = np.zeros(k)
        for _ in range(2):
            for i in range(k):
                c = Q[:, i] @ v
                v -= c * Q[:, i]
                coef[i] += c
        rho = np.linalg.norm(v)
        if rho < eps * norm_v:
            continue
        Q[:, k] = v / rho
        R[:k, k] = coef
        R[k, k] = rho
        keep.append(j)
    k = len(keep)
    return Q[:, :k], R[:k, :k], V[:, keep], W[:, keep], m - k


class Accelerator:
    """Base interface: ``start_step`` once per time step, ``update`` per iteration."""

    name = "base"

    def start_step(self) -> None:
        pass

    def update(self, f_prev, f_tilde, r) -> np.ndarray:
        """Return the increment ``df`` so that the next iterate is ``f_prev + df``."""
        raise NotImplementedError

    def end_step(self, converged: bool) -> None:
        pass


class ConstantRelaxation(Accelerator):
    name = "constant"

    def __init__(self, w0: float = 1.0):
        self.w0 = w0

    def update(self, f_prev, f_tilde, r):
        return self.w0 * np.asarray(r, dtype=float)


class AitkenAccelerator(Accelerator):
    """Aitken dynamic relaxation.

    The first update of every time step reuses the last factor of the previous
    step (clamped to ``w_max``); the very first update uses ``w0``.
    """

    name = "aitken"

    def __init__(self, w0: float = 0.1, w_max: float = 2.0):
        self.w0 = w0
        self.w_max = w_max
        self.w = w0
        self._r_prev = None

    def start_step(self):
        self._r_prev = None
        self.w = float(np.clip(self.w, -self.w_max, self.w_max))

    def update(self, f_prev, f_tilde, r):
        r = np.asarray(r, dtype=float)
        if self._r_prev is not None:
            try:
                self.w = aitken_factor(self.w, self._r_prev, r, self.w_max)
            except StagnationError:
                logger.debug("Aitken stagnation, keeping w=%g", self.w)
        self._r_prev = r.copy()
        return self.w * r


@dataclass
class AcceleratorState:
    """IQN-ILS archives.

    ``V``/``W`` hold the current step's difference columns (newest first);
    ``past`` holds the column blocks of completed time steps, newest first.
    """

    q: int = 0
    w0: float = 0.1
    V: list = field(default_factory=list)
    W: list = field(default_factory=list)
    past: deque = field(default_factory=deque)
    r_prev: np.ndarray | None = None
    f_tilde_prev: np.ndarray | None = None
    first_ever: bool = True
    step_index: int = 0


class IQNILSAccelerator(Accelerator):
    """Interface quasi-Newton inverse least-squares with time-step reuse.

    Parameters
    ----------
    q : int
        Number of previous time steps whose difference columns are reused.
    w0 : float
        Relaxation for the very first iteration, or when no columns exist.
    eps_filter : float
        Relative threshold of the QR filter.
    max_columns : int, optional
        Cap on the total column count; defaults to the interface size.
    """

    name = "iqn-ils"

    def __init__(self, q: int = 0, w0: float = 0.1, eps_filter: float = 0.1,
                 max_columns: int | None = None):
        if q < 0:
            raise ValueError("reuse q must be non-negative")
        self.state = AcceleratorState(q=q, w0=w0)
        self.eps_filter = eps_filter
        self.max_columns = max_columns
        self.last_dropped = 0

    def start_step(self):
        st = self.state
        st.V, st.W = [], []
        st.r_prev = None
        st.f_tilde_prev = None
        while len(st.past) > st.q:
            st.past.pop()

    def end_step(self, converged: bool):
        st = self.state
        if converged and st.q > 0 and st.V:
            st.past.appendleft((list(st.V), list(st.W)))
        while len(st.past) > st.q:
            st.past.pop()
        st.step_index += 1

    def columns(self):
        """Stacked ``(V, W)`` matrices, newest column first."""
        st = self.state
        vs = list(st.V)
        ws = list(st.W)
        for pv, pw in st.past:
            vs.extend(pv)
            ws.extend(pw)
        if not vs:
            return None, None
        V = np.column_stack(vs)
        W = np.column_stack(ws)
        cap = self.max_columns if self.max_columns is not None else V.shape[0]
        return V[:, :cap], W[:, :cap]

    def update(self, f_prev, f_tilde, r):
        st = self.state
        r = np.asarray(r, dtype=float)
        f_tilde = np.asarray(f_tilde, dtype=float)
        if st.r_prev is not None:
            st.V.insert(0, r - st.r_prev)
            st.W.insert(0, f_tilde - st.f_tilde_prev)
        st.r_prev = r.copy()
        st.f_tilde_prev = f_tilde.copy()

        V, W = self.columns()
        if V is None:
            st.first_ever = False
            return st.w0 * r
        Q, R, V, W, self.last_dropped = qr_filter(V, W, self.eps_filter)
        if V.shape[1] == 0:
            return st.w0 * r
        b = -Q.T @ r
        c = la.solve_triangular(R, b, check_finite=False)
        df = W @ c + r
        if not np.all(np.isfinite(df)):
            raise AcceleratorBreakdown("non-finite quasi-Newton update")
        st.first_ever = False
        return df


def make_accelerator(name: str, *, q: int = 0, w0: float = 0.1, w_max: float = 2.0,
                     eps_filter: float = 0.1) -> Accelerator:
    key = name.lower().replace("_", "-")
    if key in ("iqn-ils", "iqnils"):
        return IQNILSAccelerator(q=q, w0=w0, eps_filter=eps_filter)
    if key == "aitken":
        return AitkenAccelerator(w0=w0, w_max=w_max)
    if key in ("constant", "relaxation", "none", "gauss-seidel"):
        return ConstantRelaxation(w0 if key in ("constant", "relaxation") else 1.0)
    if key in ("block", "block-qn"):
        raise NotImplementedError("block quasi-Newton formulation is not supported")
    raise ValueError(f"unknown accelerator {name!r}")


@dataclass
class StepReport:
    iterations: int = 0
    converged: bool = False
    residual: float = float("inf")
    trace: list = field(default_factory=list)
    error: str | None = None


def run_time_step(solid: SolverOperator, fluid: SolverOperator, f_init, accel: Accelerator,
                  delta: float = 1e-4, max_iters: int = 100, on_iteration=None):
    """Iterate one time step to convergence.

    Parameters
    ----------
    solid, fluid : callable
        Interface operators ``f -> u`` and ``u -> f``.
    f_init : ndarray
        Predicted force starting the iterations.
    accel : Accelerator
        Convergence accelerator; ``start_step``/``end_step`` are called here.
    on_iteration : callable, optional
        ``on_iteration(k, f_in, u, f_tilde)`` after every fluid evaluation.

    Returns
    -------
    f, u, report
        Converged (or last) fluid output, the displacement that produced it,
        and the step report. Exhausting ``max_iters`` is reported, not raised.
    """
    if delta <= 0:
        raise ValueError("tolerance must be positive")
    f = np.array(f_init, dtype=float)
    report = StepReport()
    accel.start_step()
    u = None
    f_tilde = f
    for k in range(1, max_iters + 1):
        u = np.asarray(solid(f), dtype=float)
        f_tilde = np.asarray(fluid(u), dtype=float)
        if on_iteration is not None:
            on_iteration(k, f, u, f_tilde)
        r, e = relative_residual(f_tilde, f)
        report.iterations = k
        report.residual = e
        report.trace.append(e)
        if e <= delta:
            report.converged = True
            break
        try:
            df = accel.update(f, f_tilde, r)
        except AcceleratorBreakdown as exc:
            report.error = str(exc)
            break
        f = f + df
        if not np.all(np.isfinite(f)):
            report.error = "non-finite iterate"
            break
    accel.end_step(report.converged)
    return f_tilde, u, report
