"""CSV series and matplotlib figures from saved runs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .. import tube1d  # noqa: E402
from .experiment import load_run_outputs, stress_strain_points  # noqa: E402

__all__ = ["export_plots"]


def _write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def export_plots(run_dirs, out_dir, labels=None) -> list[Path]:
    """Write comparison CSVs and PNG figures for one or more run directories.

    Produces ``cumulative_iterations.{csv,png}``, ``outlet_section.{csv,png}``
    and, per run, ``stress_strain_<label>.{csv,png}``. Returns the written paths.
    """
    run_dirs = [Path(d) for d in run_dirs]
    labels = list(labels) if labels else [d.name for d in run_dirs]
    if len(labels) != len(run_dirs):
        raise ValueError("need one label per run directory")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = [load_run_outputs(d) for d in run_dirs]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for (led, _), lab in zip(runs, labels):
        ax.plot(led.times, led.cumulative, label=f"{lab} ({led.total_iterations})")
        _write_csv(out / f"cumulative_iterations_{lab}.csv", ["time", "iterations", "cumulative"],
                   [led.times, led.iterations, led.cumulative])
        written.append(out / f"cumulative_iterations_{lab}.csv")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("cumulative coupling iterations")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "cumulative_iterations.png", dpi=120)
    plt.close(fig)
    written.append(out / "cumulative_iterations.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    for (led, summ), lab in zip(runs, labels):
        dev = (led.outlet_section - summ["a0"]) / summ["a0"] if led.sections else np.zeros(0)
        ax.plot(led.times, dev, label=lab)
        _write_csv(out / f"outlet_section_{lab}.csv", ["time", "section", "relative_deviation"],
                   [led.times, led.outlet_section, dev])
        written.append(out / f"outlet_section_{lab}.csv")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("outlet (a - a0)/a0")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "outlet_section.png", dpi=120)
    plt.close(fig)
    written.append(out / "outlet_section.png")

    for (led, summ), lab in zip(runs, labels):
        if not led.sections:
            continue
        eps, sig, res = stress_strain_points(led.sections, led.forces, summ["r0"], summ["h_s"],
                                             summ["E"], summ["eps0"])
        eps, sig, res = eps.ravel(), sig.ravel(), res.ravel()
        _write_csv(out / f"stress_strain_{lab}.csv", ["strain", "stress", "residual"], [eps, sig, res])
        grid = np.linspace(eps.min(), eps.max(), 400)
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(eps, sig, ".", ms=1, alpha=0.3, label="recovered")
        ax.plot(grid, tube1d.stress_strain(grid, summ["E"], summ["eps0"]), "k-", lw=1, label="law")
        ax.set_xlabel("hoop strain")
        ax.set_ylabel("hoop stress [Pa]")
        ax.set_title(f"{lab}: max residual {res.max():.2%} of E eps0")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"stress_strain_{lab}.png", dpi=120)
        plt.close(fig)
        written += [out / f"stress_strain_{lab}.csv", out / f"stress_strain_{lab}.png"]
    return written
