"""Full-order solvers for the 1D flexible-tube benchmark.

The fluid is inviscid and incompressible, discretised with a conservative
finite-volume scheme (central fluxes, pressure-stabilised mass flux, implicit
Euler in time). The wall is a per-cell quasi-static hoop-stress balance with a
piecewise-linear stress-strain law. The inlet velocity follows a forced
Duffing oscillator.

Pressures are gauge pressures in Pa. The interface "force" exchanged with the
coupling driver is the cell pressure vector, the interface "displacement" is
the cell cross-section vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

__all__ = [
    "DuffingParams",
    "FluidSolverError",
    "TubeConfig",
    "TubeFluid",
    "TubeSolid",
    "TubeState",
    "WallLawError",
    "duffing_inlet",
    "inlet_ramp",
    "mass_balance",
    "nondimensional_setup",
    "solid_solve",
    "stress_strain",
    "stress_strain_slope",
]

logger = logging.getLogger(__name__)


class WallLawError(RuntimeError):
    """No admissible cross-section satisfies the wall equilibrium."""


class FluidSolverError(RuntimeError):
    """Newton iterations of the tube flow solver did not converge."""


class InletIntegrationError(RuntimeError):
    """The Duffing inlet signal blew up during integration."""


@dataclass(frozen=True)
class TubeConfig:
    """Dimensional description of the tube problem.

    ``v_ref`` is the reference inlet velocity ``v0(0)`` entering both
    nondimensional groups; it stays fixed when the inlet signal changes.
    """

    L: float
    r0: float
    h_s: float
    rho: float = 1000.0
    E: float = 12500.0
    eps0: float = 2e-3
    n_cells: int = 100
    dt: float = 0.1
    T: float = 120.0
    v_ref: float = 6.0 + 10.0 / 60.0

    @property
    def a0(self) -> float:
        return math.pi * self.r0**2

    @property
    def dx(self) -> float:
        return self.L / self.n_cells

    @property
    def kappa(self) -> float:
        return math.sqrt(self.E * self.h_s / (2.0 * self.rho * self.r0 * self.v_ref**2))

    @property
    def tau(self) -> float:
        return self.v_ref * self.dt / self.L

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


def nondimensional_setup(
    tau: float = 0.05,
    kappa: float = 21.0,
    *,
    v_ref: float = 6.0 + 10.0 / 60.0,
    rho: float = 1000.0,
    r0: float = 0.005,
    dt: float = 0.1,
    E: float = 12500.0,
    eps0: float = 2e-3,
    n_cells: int = 100,
    T: float = 120.0,
) -> TubeConfig:
    """Back-solve tube length and wall thickness from ``tau`` and ``kappa``.

    ``rho``, ``r0``, ``dt`` and ``v_ref`` are held fixed; ``L = v_ref*dt/tau``
    and ``h_s = 2*rho*r0*(kappa*v_ref)**2 / E``.
    """
    for name, value in (("tau", tau), ("kappa", kappa), ("v_ref", v_ref), ("rho", rho),
                        ("r0", r0), ("dt", dt), ("E", E), ("T", T)):
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"{name} must be positive and finite, got {value!r}")
    if n_cells < 3:
        raise ValueError("need at least 3 cells")
    L = v_ref * dt / tau
    h_s = 2.0 * rho * r0 * (kappa * v_ref) ** 2 / E
    cfg = TubeConfig(L=L, r0=r0, h_s=h_s, rho=rho, E=E, eps0=eps0,
                     n_cells=n_cells, dt=dt, T=T, v_ref=v_ref)
    logger.info(
        "tube setup: tau=%g kappa=%g -> L=%.6g m, h_s=%.6g m (rho=%g, r0=%g, dt=%g, v_ref=%.6g)",
        tau, kappa, L, h_s, rho, r0, dt, v_ref,
    )
    return cfg


# --- wall law ---------------------------------------------------------------

def stress_strain(eps, E: float = 12500.0, eps0: float = 2e-3):
    """Piecewise-linear hoop stress (Pa) for hoop strain ``eps``."""
    eps = np.asarray(eps, dtype=float)
    sigma = np.where(
        eps >= eps0,
        E / 5.0 * eps + 20.0,
        np.where(eps <= -eps0, E / 5.0 * eps - 20.0, E * eps),
    )
    return sigma if sigma.ndim else float(sigma)


def stress_strain_slope(eps, E: float = 12500.0, eps0: float = 2e-3):
    eps = np.asarray(eps, dtype=float)
    slope = np.where(np.abs(eps) < eps0, E, E / 5.0)
    return slope if slope.ndim else float(slope)


def _branch_radius(p, h, r0, slope, offset):
    # p*r = (slope*(r - r0)/r0 + offset)*h is linear in r
    denom = slope * h / r0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        r = h * (slope - offset) / denom
    return r, denom


def solid_solve(p, cfg: TubeConfig) -> np.ndarray:
    """Cross-sections in equilibrium with the cell pressures ``p``.

    Solves ``p*sqrt(a/pi) = sigma((sqrt(a/pi) - r0)/r0) * h_s`` per cell. The
    law is linear on each branch, so each branch has a closed-form root; the
    unique self-consistent branch is kept.
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise WallLawError("non-finite pressure passed to the wall law")
    E, eps0, h, r0 = cfg.E, cfg.eps0, cfg.h_s, cfg.r0

    r_lin, d_lin = _branch_radius(p, h, r0, E, 0.0)
    r_hi, d_hi = _branch_radius(p, h, r0, E / 5.0, 20.0)
    r_lo, d_lo = _branch_radius(p, h, r0, E / 5.0, -20.0)

    def strain(r):
        return (r - r0) / r0

    ok_lin = (d_lin > 0) & (np.abs(strain(r_lin)) < eps0)
    ok_hi = (d_hi > 0) & (strain(r_hi) >= eps0)
    ok_lo = (d_lo > 0) & (strain(r_lo) <= -eps0)
    r = np.where(ok_lin, r_lin, np.where(ok_hi, r_hi, r_lo))
    valid = ok_lin | ok_hi | ok_lo
    a = math.pi * r**2
    a0 = cfg.a0
    bad = ~valid | ~(r > 0) | (a < 1e-4 * a0) | (a > 1e4 * a0)
    if np.any(bad):
        idx = np.flatnonzero(np.atleast_1d(bad))
        raise WallLawError(
            f"no admissible cross-section for {idx.size} cell(s), first at index "
            f"{idx[0]} with p={np.atleast_1d(p)[idx[0]]:.6g} Pa"
        )
    return a


def wall_compliance(a, cfg: TubeConfig):
    """``da/dp`` of the wall law at cross-section ``a``."""
    r = np.sqrt(np.asarray(a, dtype=float) / math.pi)
    eps = (r - cfg.r0) / cfg.r0
    sigma = stress_strain(eps, cfg.E, cfg.eps0)
    slope = stress_strain_slope(eps, cfg.E, cfg.eps0)
    dp_dr = slope * cfg.h_s / (cfg.r0 * r) - sigma * cfg.h_s / r**2
    return 2.0 * math.pi * r / dp_dr


class TubeSolid:
    """Solid operator: pressures -> cross-sections."""

    def __init__(self, cfg: TubeConfig):
        self.cfg = cfg
        self.calls = 0

    def __call__(self, p: np.ndarray) -> np.ndarray:
        self.calls += 1
        return solid_solve(p, self.cfg)


# --- inlet signal ---------------------------------------------------------------

@dataclass(frozen=True)
class DuffingParams:
    f: float
    h: float
    a: float = -1.0
    b: float = 0.0
    c: float = -0.002
    d: float = -1.0
    e: float = -0.02
    g: float = 1.0 / 60.0
    p: float = 360.0
    u0: float = 10.0
    du0: float = 0.0

    @classmethod
    def from_mu(cls, mu) -> "DuffingParams":
        f, h = (float(x) for x in mu)
        return cls(f=f, h=h)


def inlet_ramp(t):
    t = np.asarray(t, dtype=float)
    r = np.where(t <= 20.0, 1.0, np.where(t < 60.0, 0.9 + 0.1 * np.sin(t * np.pi / 40.0), 0.8))
    return r if r.ndim else float(r)


def duffing_inlet(params: DuffingParams, times, substep: float | None = None) -> np.ndarray:
    """Inlet velocity ``(g*u(t) + h)*r(t)`` sampled at ``times``.

    The oscillator is integrated with RK4 at a step no larger than 1e-3 of the
    forcing period; samples between grid points use cubic Hermite
    interpolation with the exact derivative from the ODE state.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.empty(0)
    if np.any(times < 0) or np.any(times > 120.0 + 1e-9):
        raise ValueError("inlet signal is defined on [0, 120]")
    period = 2.0 * math.pi / abs(params.f) if params.f else 1.0
    h = substep if substep is not None else min(1e-3 * period, 1e-3)
    t_end = max(float(times.max()), h)
    # integrate u and du jointly for Hermite interpolation
    n = int(math.ceil(t_end / h - 1e-9))
    h = t_end / n
    sol_t, sol_u, sol_du = _rk4_with_rate(params, t_end, n)
    idx = np.clip(np.searchsorted(sol_t, times, side="right") - 1, 0, n - 1)
    s = (times - sol_t[idx]) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    u = h00 * sol_u[idx] + h10 * h * sol_du[idx] + h01 * sol_u[idx + 1] + h11 * h * sol_du[idx + 1]
    return (params.g * u + params.h) * inlet_ramp(times)


def _rk4_with_rate(prm: DuffingParams, t_end: float, n: int):
    h = t_end / n
    ts = np.linspace(0.0, t_end, n + 1)
    u = np.empty(n + 1)
    du = np.empty(n + 1)
    u[0], du[0] = prm.u0, prm.du0
    a, b, c, d, e, p, f = prm.a, prm.b, prm.c, prm.d, prm.e, prm.p, prm.f
    cos = math.cos

    def acc(t, x, v):
        return a * x + b * x * x + c * x * x * x + d + p * cos(f * t) + e * v

    x, v = prm.u0, prm.du0
    for i in range(n):
        t = ts[i]
        k1x, k1v = v, acc(t, x, v)
        k2x, k2v = v + 0.5 * h * k1v, acc(t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v)
        k3x, k3v = v + 0.5 * h * k2v, acc(t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v)
        k4x, k4v = v + h * k3v, acc(t + h, x + h * k3x, v + h * k3v)
        x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (abs(x) < 1e6 and abs(v) < 1e6):
            raise InletIntegrationError(f"Duffing state blew up at t={ts[i + 1]:.4g}")
        u[i + 1], du[i + 1] = x, v
    return ts, u, du


# --- fluid ----------------------------------------------------------------------

@dataclass
class TubeState:
    """Converged flow state at one time level (cell values, no ghosts)."""

    a: np.ndarray
    v: np.ndarray
    p: np.ndarray
    t: float = 0.0
    # ghost-cell values at the outlet, carried for the non-reflecting condition
    v_out: float = 0.0
    p_out: float = 0.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if not np.all(self.a > 0):
            raise ValueError("cross-sections must be positive")

    @classmethod
    def uniform(cls, cfg: TubeConfig, v: float, t: float = 0.0) -> "TubeState":
        n = cfg.n_cells
        return cls(a=np.full(n, cfg.a0), v=np.full(n, float(v)), p=np.zeros(n),
                   t=t, v_out=float(v), p_out=0.0)

    def copy(self) -> "TubeState":
        return TubeState(self.a.copy(), self.v.copy(), self.p.copy(), self.t, self.v_out, self.p_out)


_KL = _KU = 4          # band half-widths of the interleaved (v, p) Jacobian
_N_COLORS = _KL + _KU + 1


class TubeFluid:
    """Fluid operator: cross-sections -> pressures at the current time level.

    The object owns the previous converged state. ``__call__`` solves the flow
    for imposed sections without changing that state; ``commit`` promotes the
    last solution to the new converged state once the coupling step is done.
    """

    def __init__(self, cfg: TubeConfig, inlet, state: TubeState | None = None,
                 tol: float = 1e-10, max_newton: int = 200, outlet_speed: str = "reference"):
        self.cfg = cfg
        # inlet: callable t -> velocity
        self.inlet = inlet
        self.state = state if state is not None else TubeState.uniform(cfg, inlet(0.0))
        self.tol = tol
        self.max_newton = max_newton
        if outlet_speed not in ("reference", "local"):
            raise ValueError("outlet_speed must be 'reference' or 'local'")
        # "reference" evaluates the outlet wave speed at a0; "local" at the
        # current outlet section, where the wall-law kink makes it jump
        self.outlet_speed = outlet_speed
        self.calls = 0
        self.newton_iterations = 0
        self.alpha = cfg.a0 / (cfg.rho * (cfg.v_ref + cfg.dx / cfg.dt))
        self._last = None
        self._guess = None

    @property
    def t_next(self) -> float:
        return self.state.t + self.cfg.dt

    def _outlet_wave_speed(self) -> float:
        a = self.cfg.a0 if self.outlet_speed == "reference" else self.state.a[-1]
        return math.sqrt(a / (self.cfg.rho * float(wall_compliance(a, self.cfg))))

    def residual(self, x, a, v_in, c_out):
        """Scaled residual of the discrete system; complex-step safe."""
        cfg, st = self.cfg, self.state
        n = cfg.n_cells
        v = x[0::2]
        p = x[1::2]
        ae = np.concatenate(([a[0]], a, [a[-1]]))
        an = np.concatenate(([st.a[0]], st.a, [st.a[-1]]))
        vn = np.concatenate(([0.0], st.v, [st.v_out]))
        s_mass = cfg.a0 * cfg.v_ref
        s_mom = cfg.a0 * cfg.v_ref**2
        s_p = cfg.rho * cfg.v_ref**2
        r = np.empty(2 * (n + 2), dtype=x.dtype)

        vf = 0.5 * (v[:-1] + v[1:])
        af = 0.5 * (ae[:-1] + ae[1:])
        q = af * vf - self.alpha * (p[1:] - p[:-1])
        k = cfg.dx / cfg.dt
        ai = ae[1:-1]
        mass = (ai - an[1:-1]) * k + q[1:] - q[:-1]
        mom = (ai * v[1:-1] - an[1:-1] * vn[1:-1]) * k + q[1:] * vf[1:] - q[:-1] * vf[:-1] \
            + ai / cfg.rho * 0.5 * (p[2:] - p[:-2])
        r[2:-2:2] = mass / s_mass
        r[3:-2:2] = mom / s_mom
        r[0] = (v[0] - v_in) / cfg.v_ref
        r[1] = (p[0] - 2.0 * p[1] + p[2]) / s_p
        r[-2] = (v[-1] - 2.0 * v[-2] + v[-3]) / cfg.v_ref
        r[-1] = ((p[-1] - st.p_out) - cfg.rho * c_out * (v[-1] - st.v_out)) / s_p
        return r

    def _band_pattern(self, m):
        if getattr(self, "_pattern", None) is None or self._pattern[0] != m:
            per_color = []
            for color in range(_N_COLORS):
                cols = np.arange(color, m, _N_COLORS)
                offs = np.arange(-_KU, _KL + 1)
                rows = (cols[:, None] + offs[None, :]).ravel()
                cc = np.repeat(cols, offs.size)
                ok = (rows >= 0) & (rows < m)
                per_color.append((cols, rows[ok], cc[ok]))
            self._pattern = (m, per_color)
        return self._pattern[1]

    def _jacobian_banded(self, x, a, v_in, c_out):
        m = x.size
        ab = np.zeros((_KL + _KU + 1, m))
        h = 1e-30
        xc = x.astype(complex)
        for cols, rows, cc in self._band_pattern(m):
            xc.imag[:] = 0.0
            xc.imag[cols] = h
            d = self.residual(xc, a, v_in, c_out).imag / h
            ab[_KU + rows - cc, cc] = d[rows]
        return ab

    def solve(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        cfg, st = self.cfg, self.state
        if a.shape != (cfg.n_cells,):
            raise ValueError(f"expected {cfg.n_cells} cross-sections, got shape {a.shape}")
        if not np.all(a > 0):
            raise FluidSolverError("non-positive cross-section imposed on the fluid")
        v_in = float(self.inlet(self.t_next))
        c_out = self._outlet_wave_speed()
        if self._guess is not None:
            x = self._guess.copy()
        else:
            x = np.empty(2 * (cfg.n_cells + 2))
            x[0::2] = np.concatenate(([v_in], st.v, [st.v_out]))
            x[1::2] = np.concatenate(([st.p[0]], st.p, [st.p_out]))
        for it in range(1, self.max_newton + 1):
            r = self.residual(x, a, v_in, c_out)
            ab = self._jacobian_banded(x, a, v_in, c_out)
            dx = solve_banded((_KL, _KU), ab, -r)
            x += dx
            self.newton_iterations += 1
            if not np.all(np.isfinite(x)):
                break
            if np.max(np.abs(dx[0::2])) <= self.tol * cfg.v_ref and \
                    np.max(np.abs(dx[1::2])) <= self.tol * cfg.rho * cfg.v_ref**2:
                self._last = (a.copy(), x.copy(), v_in)
                self._guess = x.copy()
                return x[3:-2:2].copy()
        raise FluidSolverError(
            f"tube flow Newton solver did not converge in {self.max_newton} iterations at t={self.t_next:.6g}"
        )

    def __call__(self, a) -> np.ndarray:
        self.calls += 1
        return self.solve(a)

    def commit(self) -> TubeState:
        """Accept the last solve as the converged state of the new time level."""
        if self._last is None:
            raise RuntimeError("no fluid solution to commit")
        a, x, _ = self._last
        v, p = x[0::2], x[1::2]
        self.state = TubeState(a=a, v=v[1:-1].copy(), p=p[1:-1].copy(), t=self.t_next,
                               v_out=float(v[-1]), p_out=float(p[-1]))
        self._last = None
        self._guess = None
        return self.state

    def last_solution(self):
        """(a, v_ghosted, p_ghosted, v_in) of the most recent solve."""
        if self._last is None:
            return None
        a, x, v_in = self._last
        return a, x[0::2].copy(), x[1::2].copy(), v_in


def mass_balance(fluid: TubeFluid, a_new, x) -> np.ndarray:
    """Per-cell discrete mass residual (m^3/s) for a solved state ``x``.

    Summing it telescopes interior face fluxes, leaving storage plus the
    inlet/outlet boundary fluxes.
    """
    cfg = fluid.cfg
    return fluid.residual(np.asarray(x, dtype=float), np.asarray(a_new, float),
                          float(fluid.inlet(fluid.t_next)), fluid._outlet_wave_speed())[2:-2:2] \
        * cfg.a0 * cfg.v_ref
