"""Offline training and online runs of the flexible-tube benchmark."""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import coupling, predict, regress, rom, tube1d
from ..reduction import IngestionError, decode_linear, encode
from . import io
from .config import ExperimentConfig

__all__ = [
    "AlignmentError",
    "ErrorReport",
    "RunLedger",
    "build_tube",
    "compare_runs",
    "generate_training_data",
    "load_run_outputs",
    "rom_config",
    "run_offline",
    "run_online",
    "section_error",
    "simulate",
    "stress_strain_points",
    "write_run_outputs",
]

logger = logging.getLogger(__name__)


class AlignmentError(ValueError):
    """Two runs do not share a time grid."""


@dataclass
class RunLedger:
    """Per-step record of one online run (measured phase only).

    ``forces`` and ``sections`` hold the converged interface pressure and
    cross-section of every measured step, one row per step.
    """

    times: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    first_residuals: list = field(default_factory=list)
    local_iterations: list = field(default_factory=list)
    local_fallback: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    sections: list = field(default_factory=list)
    warmup_iterations: int = 0
    refits: int = 0
    wall_clock: float = 0.0
    error: str | None = None
    failed_step: int | None = None
    reduced_coords: np.ndarray | None = None
    full_displacement: np.ndarray | None = None

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.iterations, dtype=int))

    @property
    def all_converged(self) -> bool:
        return self.error is None and all(self.converged)

    @property
    def outlet_section(self) -> np.ndarray:
        return np.array([s[-1] for s in self.sections])


def build_tube(cfg: ExperimentConfig):
    """Return ``(tube_config, inlet)`` where ``inlet`` maps time to velocity."""
    v_ref = float(_inlet_samples(tuple(cfg.mu_ref), cfg.dt, 0)[0])
    tcfg = tube1d.nondimensional_setup(cfg.tau, cfg.kappa, v_ref=v_ref, rho=cfg.rho, r0=cfg.r0,
                                       dt=cfg.dt, E=cfg.E, eps0=cfg.eps0, n_cells=cfg.n_cells,
                                       T=max(cfg.t_end, cfg.dt))
    n = cfg.n_steps
    samples = _inlet_samples(tuple(cfg.mu), cfg.dt, n)
    times = np.arange(n + 1) * cfg.dt

    def inlet(t):
        return float(np.interp(t, times, samples))

    return tcfg, inlet


@lru_cache(maxsize=16)
def _inlet_samples(mu: tuple, dt: float, n: int) -> np.ndarray:
    prm = tube1d.DuffingParams.from_mu(mu)
    return tube1d.duffing_inlet(prm, np.arange(n + 1) * dt)


def _accelerator(cfg: ExperimentConfig):
    return coupling.make_accelerator(cfg.accelerator, q=cfg.q, w0=cfg.w0, w_max=cfg.w_max,
                                     eps_filter=cfg.eps_filter)


def rom_config(cfg: ExperimentConfig) -> rom.RomConfig:
    def params(kind):
        if kind == "rbf":
            return {"kernel": cfg.kernel, "smoothing": cfg.smoothing}
        return {"lam": cfg.lam}

    return rom.RomConfig(r_f=cfg.r_f, r_u=cfg.r_u, solid_regressor=cfg.solid_regressor,
                         fluid_regressor=cfg.fluid_regressor,
                         solid_params=params(cfg.solid_regressor),
                         fluid_params=params(cfg.fluid_regressor), p=cfg.p, Z=cfg.Z)


class _Snapshots:
    def __init__(self):
        self.F, self.Ft, self.U = [], [], []
        self.meta = {k: [] for k in io.META_FIELDS}

    def add(self, n, k, f, u, ft, mu):
        self.F.append(f.copy())
        self.U.append(u.copy())
        self.Ft.append(ft.copy())
        for key, val in zip(io.META_FIELDS, (n, k, False, mu[0], mu[1])):
            self.meta[key].append(val)

    def mark_converged(self):
        self.meta["converged"][-1] = True

    def arrays(self):
        return (np.column_stack(self.F), np.column_stack(self.Ft), np.column_stack(self.U),
                {k: np.array(v) for k, v in self.meta.items()})


def simulate(cfg: ExperimentConfig, roms=None, record_snapshots: bool = False):
    """Run the time loop described by ``cfg``.

    Parameters
    ----------
    roms : tuple(SolidRom, FluidRom), optional
        Needed for rom-fom mode or the data-driven predictor. The fluid ROM
        is deep-copied, so online refits never leak between runs.

    Returns
    -------
    ledger : RunLedger
    snapshots : tuple or None
        ``(F, F_tilde, U, meta, initial_force)`` over every step when
        ``record_snapshots`` is set.
    """
    tcfg, inlet = build_tube(cfg)
    fluid = tube1d.TubeFluid(tcfg, inlet)
    solid_fom = tube1d.TubeSolid(tcfg)
    accel = _accelerator(cfg)
    history = predict.ForceHistory([fluid.state.p])
    f_initial = fluid.state.p.copy()
    srom = from_ = None
    if roms is not None:
        srom, from_ = roms[0], copy.deepcopy(roms[1])
        from_.Z = cfg.Z
        from_.p = cfg.p
        from_.seed_buffers(from_.buf_u, from_.buf_f, from_.buf_prev)
        srom.converged_coords = []
    if cfg.needs_bundle and srom is None:
        raise ValueError("this configuration needs trained ROMs")
    pcfg = predict.PredictorConfig(delta_r=cfg.delta_r, M=cfg.M, w0_local=cfg.w0_local,
                                   w_max=cfg.w_max, seed_mode=cfg.seed_mode)
    ledger = RunLedger()
    snaps = _Snapshots() if record_snapshots else None
    last_ur = {}

    def rom_solid(f):
        u_r = srom.reduced(f)
        last_ur["u_r"] = u_r
        srom.calls += 1
        return decode_linear(srom.interface_basis, u_r)

    t0 = time.perf_counter()
    for n in range(cfg.n_steps):
        measured = n >= cfg.n_warmup
        kind = cfg.predictor if measured else cfg.warmup_predictor
        solid_op = rom_solid if (measured and cfg.mode == "rom-fom") else solid_fom
        online = measured and kind == "data-driven"
        local = None
        if online:
            f0, local = predict.predict_data_driven(srom, from_, history, pcfg)
        else:
            f0 = predict.extrapolate(history, predict.ORDERS[kind])
        f_prev = history.last

        def on_iteration(k, f_in, u, f_tilde, n=n):
            if snaps is not None:
                snaps.add(n, k, f_in, u, f_tilde, cfg.mu)
            if online:
                rom.record_iteration(from_, from_.encode_disp(u), from_.encode_force(f_tilde),
                                     from_.encode_force(f_prev))
                rom.maybe_refit(from_)

        try:
            f, u, rep = coupling.run_time_step(solid_op, fluid, f0, accel, cfg.delta,
                                               cfg.max_iters, on_iteration)
        except (tube1d.WallLawError, tube1d.FluidSolverError, coupling.DegenerateResidualError,
                FloatingPointError, ValueError) as exc:
            ledger.error = f"step {n} (t={fluid.t_next:.4g}): {type(exc).__name__}: {exc}"
            ledger.failed_step = n
            logger.warning("run aborted: %s", ledger.error)
            break
        if snaps is not None and rep.converged:
            snaps.mark_converged()
        fluid.commit()
        history.push(f)
        if not measured:
            ledger.warmup_iterations += rep.iterations
            continue
        ledger.times.append(fluid.state.t)
        ledger.iterations.append(rep.iterations)
        ledger.converged.append(rep.converged)
        ledger.residuals.append(rep.residual)
        ledger.first_residuals.append(rep.trace[0])
        ledger.local_iterations.append(local.iterations if local else 0)
        ledger.local_fallback.append(bool(local.fallback) if local else False)
        ledger.forces.append(f.copy())
        ledger.sections.append(np.array(u, dtype=float))
        if cfg.mode == "rom-fom" and "u_r" in last_ur:
            srom.store_converged(last_ur["u_r"])
        if not rep.converged:
            logger.info("step %d did not converge (e=%.3g)", n, rep.residual)
            if cfg.fail_fast:
                ledger.error = f"step {n} did not converge"
                ledger.failed_step = n
                break
    ledger.wall_clock = time.perf_counter() - t0
    if from_ is not None:
        ledger.refits = from_.refits
    if cfg.mode == "rom-fom" and srom is not None and srom.converged_coords:
        ledger.reduced_coords = np.column_stack(srom.converged_coords)
        ledger.full_displacement = srom.reconstruct_history()
    snapshots = None
    if snaps is not None and snaps.F:
        snapshots = (*snaps.arrays(), f_initial)
    return ledger, snapshots


def generate_training_data(cfg: ExperimentConfig):
    """FOM-FOM run over ``[0, t_end]`` with the classical ``warmup_predictor``, recording every iteration."""
    gen = cfg.replace(mode="fom-fom", predictor=cfg.warmup_predictor, t_start=0.0,
                      model_bundle=None)
    ledger, snaps = simulate(gen, record_snapshots=True)
    if ledger.error is not None:
        raise RuntimeError(f"training run failed: {ledger.error}")
    return snaps


def run_offline(cfg: ExperimentConfig, bundle_dir=None):
    """Train both ROMs and write a model bundle.

    Snapshots come from ``cfg.training_data`` when set, otherwise from a
    fresh FOM-FOM run (saved next to the bundle).
    """
    out = Path(bundle_dir) if bundle_dir is not None else cfg.resolved_output_dir() / "bundle"
    if cfg.training_data is not None:
        F, Ft, U, meta, f0 = io.load_snapshots(cfg.training_data)
    else:
        F, Ft, U, meta, f0 = generate_training_data(cfg)
        io.save_snapshots(out.parent / "snapshots", F, Ft, U, meta, f0)
    if F.shape[1] == 0:
        raise IngestionError("no snapshot columns")
    srom, from_ = rom.offline_train(F, Ft, U, meta, rom_config(cfg), initial_force=f0)
    U_r = encode(srom.disp_manifold.basis, U)
    fit_res = regress.predict(srom.regressor, encode(srom.force_basis, F).T) - U_r.T
    report = {
        "m": int(F.shape[1]),
        "r_f": cfg.r_f,
        "r_u": cfg.r_u,
        "force_energy": float(_energy(srom.force_basis, cfg.r_f)),
        "disp_energy": float(_energy(srom.disp_manifold.basis, cfg.r_u)),
        "force_spectrum": [float(x) for x in srom.force_basis.singular_values[:50]],
        "disp_spectrum": [float(x) for x in srom.disp_manifold.basis.singular_values[:50]],
        "solid_regression_max_residual": float(np.abs(fit_res).max()),
        "mu": [float(x) for x in cfg.mu],
        "t_end": cfg.t_end,
    }
    io.save_bundle(out, srom, from_, extra=report)
    return out, srom, from_, report


def _energy(basis, r):
    s2 = basis.singular_values**2
    return s2[:r].sum() / s2.sum()


def run_online(cfg: ExperimentConfig, roms=None, directory=None):
    """Load the bundle if needed and run the time loop.

    When ``directory`` is given, the run outputs are written there (see
    :func:`write_run_outputs`).
    """
    if roms is None and cfg.needs_bundle:
        cfg.validate()
        srom, from_, _ = io.load_bundle(cfg.model_bundle)
        roms = (srom, from_)
    ledger, _ = simulate(cfg, roms)
    if directory is not None:
        write_run_outputs(ledger, cfg, directory)
    return ledger


RUN_FIELDS = ("step", "time", "iterations", "cumulative", "converged", "residual",
              "first_residual", "local_iterations", "local_fallback")


def write_run_outputs(ledger: RunLedger, cfg: ExperimentConfig, directory) -> Path:
    """Write the config, per-step iteration CSV and interface time series of a run.

    Files: ``config.json``, ``iterations.csv``, ``summary.json``,
    ``forces.fsimat`` and ``sections.fsimat`` (one column per step), plus
    ``reduced_coords.fsimat`` and ``full_displacement.fsimat`` for rom-fom runs.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg.save(d / "config.json")
    cum = ledger.cumulative
    with open(d / "iterations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_FIELDS)
        for i, t in enumerate(ledger.times):
            w.writerow([i, repr(float(t)), ledger.iterations[i], int(cum[i]), int(ledger.converged[i]),
                        repr(float(ledger.residuals[i])), repr(float(ledger.first_residuals[i])),
                        ledger.local_iterations[i], int(ledger.local_fallback[i])])
    n = cfg.n_cells
    io.write_matrix(d / "forces.fsimat", np.array(ledger.forces).T if ledger.forces else np.zeros((n, 0)))
    io.write_matrix(d / "sections.fsimat", np.array(ledger.sections).T if ledger.sections else np.zeros((n, 0)))
    if ledger.reduced_coords is not None:
        io.write_matrix(d / "reduced_coords.fsimat", ledger.reduced_coords)
        io.write_matrix(d / "full_displacement.fsimat", ledger.full_displacement)
    tcfg, _ = build_tube(cfg)
    summary = {
        "total_iterations": ledger.total_iterations,
        "steps": len(ledger.times),
        "unconverged_steps": int(ledger.converged.count(False)),
        "warmup_iterations": ledger.warmup_iterations,
        "local_fallbacks": int(sum(ledger.local_fallback)),
        "refits": ledger.refits,
        "wall_clock": ledger.wall_clock,
        "error": ledger.error,
        "failed_step": ledger.failed_step,
        "a0": tcfg.a0,
        "r0": tcfg.r0,
        "h_s": tcfg.h_s,
        "E": tcfg.E,
        "eps0": tcfg.eps0,
    }
    (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return d


def load_run_outputs(directory) -> tuple[RunLedger, dict]:
    """Rebuild a :class:`RunLedger` (without local traces) and the summary from a run directory."""
    d = Path(directory)
    try:
        summary = json.loads((d / "summary.json").read_text())
        with open(d / "iterations.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise io.FormatError(f"{d} is not a run directory: {exc}") from exc
    led = RunLedger()
    for row in rows:
        led.times.append(float(row["time"]))
        led.iterations.append(int(row["iterations"]))
        led.converged.append(row["converged"] == "1")
        led.residuals.append(float(row["residual"]))
        led.first_residuals.append(float(row["first_residual"]))
        led.local_iterations.append(int(row["local_iterations"]))
        led.local_fallback.append(row["local_fallback"] == "1")
    led.forces = list(io.read_matrix(d / "forces.fsimat").T)
    led.sections = list(io.read_matrix(d / "sections.fsimat").T)
    led.warmup_iterations = summary.get("warmup_iterations", 0)
    led.refits = summary.get("refits", 0)
    led.wall_clock = summary.get("wall_clock", 0.0)
    led.error = summary.get("error")
    led.failed_step = summary.get("failed_step")
    if (d / "reduced_coords.fsimat").exists():
        led.reduced_coords = io.read_matrix(d / "reduced_coords.fsimat")
        led.full_displacement = io.read_matrix(d / "full_displacement.fsimat")
    return led, summary


@dataclass
class ErrorReport:
    times: np.ndarray
    errors: np.ndarray
    iteration_delta: np.ndarray

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors)) if self.errors.size else 0.0

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else 0.0


def section_error(reference, candidate, baseline=0.0) -> np.ndarray:
    """``|d(t) - d_ref(t)| / mean_t |d_ref(t)|`` for rows of fields (or scalars).

    ``baseline`` is subtracted from both series first, so fields can be
    compared as deviations from a rest state.
    """
    ref = np.atleast_2d(np.asarray(reference, dtype=float).T).T - baseline
    cand = np.atleast_2d(np.asarray(candidate, dtype=float).T).T - baseline
    if ref.shape != cand.shape:
        raise AlignmentError(f"series shapes differ: {ref.shape} vs {cand.shape}")
    if ref.ndim == 1:
        ref, cand = ref[:, None], cand[:, None]
    scale = np.mean(np.linalg.norm(ref, axis=1))
    if scale == 0.0:
        return np.zeros(ref.shape[0]) if np.array_equal(ref, cand) else np.full(ref.shape[0], np.inf)
    return np.linalg.norm(cand - ref, axis=1) / scale


def compare_runs(reference: RunLedger, candidate: RunLedger, baseline=0.0,
                 field_name: str = "outlet") -> ErrorReport:
    """Relative error of the candidate against the reference on a shared time grid."""
    t_ref, t_cand = np.asarray(reference.times), np.asarray(candidate.times)
    if t_ref.shape != t_cand.shape or not np.allclose(t_ref, t_cand, rtol=0, atol=1e-9):
        raise AlignmentError("runs do not share a time grid")
    if field_name == "outlet":
        ref, cand = reference.outlet_section, candidate.outlet_section
    elif field_name == "sections":
        ref, cand = np.array(reference.sections), np.array(candidate.sections)
    elif field_name == "forces":
        ref, cand = np.array(reference.forces), np.array(candidate.forces)
    else:
        raise ValueError(f"unknown field {field_name!r}")
    errs = section_error(ref, cand, baseline) if len(t_ref) else np.zeros(0)
    delta = np.asarray(candidate.iterations) - np.asarray(reference.iterations)
    return ErrorReport(times=t_ref, errors=errs, iteration_delta=delta)


def stress_strain_points(sections, forces, r0: float, h_s: float, E: float, eps0: float):
    """Hoop strain and stress recovered from converged sections and pressures.

    ``eps = (sqrt(a/pi) - r0)/r0`` and ``sigma = p r / h_s`` (thin-wall
    equilibrium). Returns ``(eps, sigma, residual)`` where ``residual`` is the
    distance to the constitutive law in units of ``E * eps0``.
    """
    a = np.asarray(sections, dtype=float)
    p = np.asarray(forces, dtype=float)
    r = np.sqrt(a / np.pi)
    eps = (r - r0) / r0
    sigma = p * r / h_s
    resid = np.abs(sigma - tube1d.stress_strain(eps, E, eps0)) / (E * eps0)
    return eps, sigma, resid
