"""Solid and fluid reduced-order models and their offline training.

The solid ROM maps an interface force to a displacement through
``decode(I_S(encode_f(f)))``. The fluid ROM maps the pair
``(u, f_prev)`` to a force through ``decode_f(I_F([encode_u(u), encode_f(f_prev)]))``
and can be refitted online from ring buffers of recent global iterations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import reduction as red
from . import regress

__all__ = [
    "FluidRom",
    "RomConfig",
    "SolidRom",
    "TrainingError",
    "fluid_rom_predict",
    "maybe_refit",
    "offline_train",
    "record_iteration",
    "solid_rom_predict_full",
    "solid_rom_predict_interface",
]

logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    """Training data or metadata are unusable."""


@dataclass
class RomConfig:
    """Offline/online ROM settings.

    ``solid_regressor`` and ``fluid_regressor`` are regressor kinds accepted
    by :func:`romfsi.regress.fit_regressor`; their keyword parameters go in
    ``solid_params`` / ``fluid_params``.
    """

    r_f: int = 10
    r_u: int = 4
    solid_regressor: str = "rbf"
    fluid_regressor: str = "rbf"
    solid_params: dict = field(default_factory=lambda: {"kernel": "thin_plate"})
    fluid_params: dict = field(default_factory=lambda: {"kernel": "thin_plate"})
    p: int = 1640
    Z: int | None = 200
    full_force_set: bool = True
    interface_rows: list | None = None
    scaling: str = "block"

    def __post_init__(self):
        if self.scaling not in ("block", "standard"):
            raise ValueError(f"scaling must be 'block' or 'standard', got {self.scaling!r}")


def _pinv(modes):
    return np.linalg.pinv(modes, rcond=1e-12)


@dataclass
class SolidRom:
    """Force encoder, displacement quadratic manifold and the regressor ``I_S``."""

    force_basis: red.PodBasis
    disp_manifold: red.QuadraticManifold
    interface_rows: np.ndarray
    regressor: object
    converged_coords: list = field(default_factory=list)

    def __post_init__(self):
        self.interface_rows = np.asarray(self.interface_rows, dtype=int)
        self.interface_basis = red.restrict_rows(self.disp_manifold.basis, self.interface_rows)
        self.calls = 0

    def reduced(self, f) -> np.ndarray:
        """``u_r = I_S(encode_f(f))``."""
        return regress.predict(self.regressor, red.encode(self.force_basis, f))

    def store_converged(self, u_r) -> None:
        self.converged_coords.append(np.array(u_r, dtype=float))

    def reconstruct_history(self) -> np.ndarray:
        """Full quadratic decode of every stored converged coordinate, ``(N_S, n_t)``."""
        if not self.converged_coords:
            return np.zeros((self.disp_manifold.basis.size, 0))
        return red.decode_quadratic(self.disp_manifold, np.column_stack(self.converged_coords))


def solid_rom_predict_interface(rom: SolidRom, f) -> np.ndarray:
    """Interface displacement with linear row-selected decoding."""
    f = np.asarray(f, dtype=float)
    if f.shape != (rom.force_basis.size,):
        raise ValueError(f"force has shape {f.shape}, expected ({rom.force_basis.size},)")
    rom.calls += 1
    return red.decode_linear(rom.interface_basis, rom.reduced(f))


def solid_rom_predict_full(rom: SolidRom, f) -> np.ndarray:
    """Full displacement field with the quadratic-manifold decoder."""
    f = np.asarray(f, dtype=float)
    if f.shape != (rom.force_basis.size,):
        raise ValueError(f"force has shape {f.shape}, expected ({rom.force_basis.size},)")
    return red.decode_quadratic(rom.disp_manifold, rom.reduced(f))


@dataclass
class FluidRom:
    """Fluid surrogate with ring buffers for online refitting.

    The buffers hold, per global iteration, the reduced displacement ``u_r``,
    the reduced fluid output ``f~_r`` and the reduced converged force of the
    previous time step ``f_prev_r`` (the regressor input that pairs with them).
    """

    disp_basis: red.PodBasis
    force_basis: red.PodBasis
    regressor: object
    kind: str = "rbf"
    params: dict = field(default_factory=dict)
    p: int = 1640
    Z: int | None = 200

    def __post_init__(self):
        self._disp_pinv = _pinv(self.disp_basis.modes)
        self.buf_u = np.zeros((self.disp_basis.rank, 0))
        self.buf_f = np.zeros((self.force_basis.rank, 0))
        self.buf_prev = np.zeros((self.force_basis.rank, 0))
        self.counter = 0
        self.refits = 0
        self.failed_refits = 0
        self.calls = 0

    def encode_disp(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.disp_basis.size,):
            raise ValueError(f"displacement has shape {u.shape}, expected ({self.disp_basis.size},)")
        return self._disp_pinv @ (u - self.disp_basis.mean)

    def encode_force(self, f) -> np.ndarray:
        return red.encode(self.force_basis, f)

    def seed_buffers(self, U_r, F_r, Fprev_r) -> None:
        """Replace the buffers with the last ``p`` given columns."""
        U_r, F_r, Fprev_r = (np.asarray(a, dtype=float) for a in (U_r, F_r, Fprev_r))
        if not U_r.shape[1] == F_r.shape[1] == Fprev_r.shape[1]:
            raise ValueError("buffer seeds must have equal column counts")
        self.buf_u = U_r[:, -self.p:].copy()
        self.buf_f = F_r[:, -self.p:].copy()
        self.buf_prev = Fprev_r[:, -self.p:].copy()


def fluid_rom_predict(rom: FluidRom, u, f_prev) -> np.ndarray:
    """``decode_f(I_F([encode_u(u), encode_f(f_prev)]))``."""
    rom.calls += 1
    x = np.concatenate([rom.encode_disp(u), rom.encode_force(f_prev)])
    return red.decode_linear(rom.force_basis, regress.predict(rom.regressor, x))


def record_iteration(rom: FluidRom, u_r, f_tilde_r, f_prev_r) -> None:
    """Append one global iteration to the buffers, evicting the oldest beyond ``p``."""
    cols = [np.asarray(v, dtype=float)[:, None] for v in (u_r, f_tilde_r, f_prev_r)]
    rom.buf_u = np.hstack([rom.buf_u, cols[0]])[:, -rom.p:]
    rom.buf_f = np.hstack([rom.buf_f, cols[1]])[:, -rom.p:]
    rom.buf_prev = np.hstack([rom.buf_prev, cols[2]])[:, -rom.p:]


def maybe_refit(rom: FluidRom, counter: int | None = None) -> bool:
    """Count one global iteration and refit ``I_F`` every ``Z`` of them.

    ``counter`` overrides the internal count (it is taken as the count after
    this iteration). A failed refit keeps the previous regressor.
    """
    rom.counter = rom.counter + 1 if counter is None else counter
    if rom.Z is None or rom.counter % rom.Z != 0:
        return False
    rom.counter = 0
    X = np.vstack([rom.buf_u, rom.buf_prev]).T
    try:
        rom.regressor = regress.fit_regressor(rom.kind, X, rom.buf_f.T, **rom.params)
    except (regress.FitError, ValueError, np.linalg.LinAlgError) as exc:
        rom.failed_refits += 1
        logger.warning("fluid ROM refit failed, keeping previous model: %s", exc)
        return True
    rom.refits += 1
    return True


def _previous_converged(meta):
    """Map each column to the column holding the converged iterate of the previous step."""
    t = np.asarray(meta["time_index"], dtype=int)
    conv = np.asarray(meta["converged"], dtype=bool)
    last_conv = {}
    for j in np.flatnonzero(conv):
        last_conv[t[j]] = j
    return np.array([last_conv.get(tj - 1, -1) for tj in t])


def offline_train(F, F_tilde, U, meta, config: RomConfig | None = None,
                  initial_force=None) -> tuple[SolidRom, FluidRom]:
    """Train both ROMs from column-aligned FOM-FOM snapshots.

    Parameters
    ----------
    F, F_tilde, U : array_like, shape (N, m)
        Solid input forces, fluid output forces and solid displacements,
        one column per global iteration.
    meta : mapping
        Arrays ``time_index``, ``iteration_index`` and ``converged`` of length ``m``.
    initial_force : array_like, optional
        Force of the initial condition, standing in as the converged
        predecessor of the first recorded time step.
    """
    cfg = config or RomConfig()
    F, F_tilde, U = (red._as_snapshots(a) for a in (F, F_tilde, U))
    m = F.shape[1]
    if not F_tilde.shape == F.shape or U.shape[1] != m:
        raise TrainingError(f"misaligned snapshots: F {F.shape}, F~ {F_tilde.shape}, U {U.shape}")
    for key in ("time_index", "iteration_index", "converged"):
        if key not in meta or len(meta[key]) != m:
            raise TrainingError(f"metadata column {key!r} missing or of wrong length")

    F_hat = np.hstack([F, F_tilde]) if cfg.full_force_set else F
    force_basis = red.fit_pod(F_hat, rank=cfg.r_f)
    disp_basis = red.fit_pod(U, rank=cfg.r_u)
    manifold = red.fit_quadratic_manifold(U, disp_basis)
    rows = np.arange(U.shape[0]) if cfg.interface_rows is None else np.asarray(cfg.interface_rows)

    F_r = red.encode(force_basis, F)
    Ft_r = red.encode(force_basis, F_tilde)
    U_r = red.encode(disp_basis, U)
    block = cfg.scaling == "block"
    solid_params = dict(cfg.solid_params, groups=[cfg.r_f] if block else None)
    fluid_params = dict(cfg.fluid_params, groups=[cfg.r_u, cfg.r_f] if block else None)
    try:
        I_S = regress.fit_regressor(cfg.solid_regressor, F_r.T, U_r.T, **solid_params)
    except regress.FitError as exc:
        raise TrainingError(f"solid regressor: {exc}") from exc
    solid = SolidRom(force_basis=force_basis, disp_manifold=manifold, interface_rows=rows,
                     regressor=I_S)

    prev = _previous_converged(meta)
    Fprev_r = np.zeros_like(Ft_r)
    ok = prev >= 0
    Fprev_r[:, ok] = Ft_r[:, prev[ok]]
    if initial_force is not None:
        t = np.asarray(meta["time_index"], dtype=int)
        first = (~ok) & (t == t.min())
        Fprev_r[:, first] = red.encode(force_basis, initial_force)[:, None]
        ok |= first
    n_skip = int((~ok).sum())
    if n_skip:
        logger.info("skipping %d columns without a converged predecessor", n_skip)
    iface = red.restrict_rows(disp_basis, rows)
    Ui_r = _pinv(iface.modes) @ (U[rows] - iface.mean[:, None])
    X = np.vstack([Ui_r[:, ok], Fprev_r[:, ok]])
    try:
        I_F = regress.fit_regressor(cfg.fluid_regressor, X.T, Ft_r[:, ok].T, **fluid_params)
    except regress.FitError as exc:
        raise TrainingError(f"fluid regressor: {exc}") from exc
    fluid = FluidRom(disp_basis=iface, force_basis=force_basis, regressor=I_F,
                     kind=cfg.fluid_regressor, params=fluid_params, p=cfg.p, Z=cfg.Z)
    fluid.seed_buffers(Ui_r[:, ok], Ft_r[:, ok], Fprev_r[:, ok])
    logger.info("offline training: m=%d, r_f=%d, r_u=%d, fluid pairs=%d",
                m, cfg.r_f, cfg.r_u, int(ok.sum()))
    return solid, fluid
