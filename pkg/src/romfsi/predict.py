"""Initial-guess predictors for the coupled time step.

Classical predictors extrapolate the last converged forces. The data-driven
predictor runs cheap Aitken-relaxed ROM-ROM iterations seeded by an
extrapolation, and falls back to the previous converged force when they do
not converge.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import coupling
from .rom import FluidRom, SolidRom, fluid_rom_predict, solid_rom_predict_interface

__all__ = [
    "ForceHistory",
    "LocalReport",
    "PredictorConfig",
    "extrapolate",
    "predict_data_driven",
]

logger = logging.getLogger(__name__)

ORDERS = {"constant": 0, "linear": 1, "quadratic": 2}


class ForceHistory:
    """The last three converged forces, newest first."""

    def __init__(self, forces=()):
        self._d = deque(maxlen=3)
        for f in forces:
            self.push(f)

    def push(self, f) -> None:
        self._d.appendleft(np.array(f, dtype=float))

    def __len__(self):
        return len(self._d)

    def __getitem__(self, i) -> np.ndarray:
        return self._d[i]

    @property
    def last(self) -> np.ndarray:
        return self._d[0]


def extrapolate(history: ForceHistory, order: int, size: int | None = None) -> np.ndarray:
    """Polynomial extrapolation of order 0, 1 or 2 from the converged history.

    Degrades to the highest order the history supports; an empty history
    yields zeros of length ``size``.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    if len(history) == 0:
        if size is None:
            raise ValueError("empty history and no size given")
        logger.warning("empty force history, predicting zeros")
        return np.zeros(size)
    order = min(order, len(history) - 1)
    h = history
    if order == 0:
        return h[0].copy()
    if order == 1:
        return 2.0 * h[0] - h[1]
    return 3.0 * h[0] - 3.0 * h[1] + h[2]


@dataclass
class PredictorConfig:
    delta_r: float = 0.02
    M: int = 20
    w0_local: float = 0.1
    w_max: float = 2.0
    seed_mode: str = "linear"

    def __post_init__(self):
        if self.delta_r <= 0:
            raise ValueError("local tolerance must be positive")
        if self.M < 1:
            raise ValueError("need at least one local iteration")
        if self.seed_mode not in ("linear", "quadratic"):
            raise ValueError(f"seed_mode must be linear or quadratic, got {self.seed_mode!r}")


@dataclass
class LocalReport:
    iterations: int = 0
    converged: bool = False
    fallback: bool = False
    residual: float = float("inf")
    trace: list = field(default_factory=list)
    error: str | None = None


def predict_data_driven(solid_rom: SolidRom, fluid_rom: FluidRom, history: ForceHistory,
                        cfg: PredictorConfig | None = None):
    """Initial guess from local ROM-ROM iterations.

    Returns ``(f_guess, report)``. Never raises for numerical trouble: any
    failure returns the last converged force with ``report.fallback`` set.
    """
    cfg = cfg or PredictorConfig()
    report = LocalReport()
    f_prev = history.last
    try:
        f = extrapolate(history, 1 if cfg.seed_mode == "linear" else 2)
        w = cfg.w0_local
        r_old = None
        with np.errstate(all="raise"):
            for j in range(1, cfg.M + 1):
                u = solid_rom_predict_interface(solid_rom, f)
                f_tilde = fluid_rom_predict(fluid_rom, u, f_prev)
                r, e = coupling.relative_residual(f_tilde, f)
                report.iterations = j
                report.residual = e
                report.trace.append(e)
                if e <= cfg.delta_r:
                    report.converged = True
                    return f_tilde, report
                if r_old is not None:
                    try:
                        w = coupling.aitken_factor(w, r_old, r, cfg.w_max)
                    except coupling.StagnationError:
                        pass
                r_old = r
                f = f + w * r
    except (ArithmeticError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    report.fallback = True
    return f_prev.copy(), report
