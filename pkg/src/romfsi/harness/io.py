"""Matrix files, snapshot metadata sidecars and model bundles.

Matrix file layout (little-endian): the 8-byte magic ``FSIMAT01``, ``u32``
rows, ``u32`` cols, then ``rows * cols`` IEEE doubles in column-major order.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .. import reduction as red
from .. import regress
from ..rom import FluidRom, SolidRom

__all__ = [
    "FormatError",
    "load_bundle",
    "load_snapshots",
    "read_matrix",
    "read_metadata",
    "save_bundle",
    "save_snapshots",
    "write_matrix",
    "write_metadata",
]

MAGIC = b"FSIMAT01"
_HEADER = struct.Struct("<8sII")
META_FIELDS = ("time_index", "iteration_index", "converged", "mu_0", "mu_1")
BUNDLE_VERSION = 1


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def write_matrix(path, A) -> None:
    A = np.asarray(A, dtype="<f8")
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("only 1-D or 2-D arrays can be stored")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
        fh.write(np.asfortranarray(A).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    # C order, so products with loaded arrays round exactly like in-memory ones
    return np.ascontiguousarray(flat.reshape((rows, cols), order="F"), dtype=float)


def write_metadata(path, meta: dict) -> None:
    n = len(meta["time_index"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(META_FIELDS)
        for j in range(n):
            w.writerow([int(meta["time_index"][j]), int(meta["iteration_index"][j]),
                        int(bool(meta["converged"][j])), repr(float(meta["mu_0"][j])),
                        repr(float(meta["mu_1"][j]))])


def read_metadata(path) -> dict:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read metadata {path}: {exc}") from exc
    if rows and set(META_FIELDS) - set(rows[0]):
        raise FormatError(f"{path}: missing columns {sorted(set(META_FIELDS) - set(rows[0]))}")
    out = {k: [] for k in META_FIELDS}
    for i, row in enumerate(rows, start=2):
        try:
            out["time_index"].append(int(row["time_index"]))
            out["iteration_index"].append(int(row["iteration_index"]))
            out["converged"].append(row["converged"].strip() == "1")
            out["mu_0"].append(float(row["mu_0"]))
            out["mu_1"].append(float(row["mu_1"]))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{i}: {exc}") from exc
    return {k: np.array(v) for k, v in out.items()}


def save_snapshots(directory, F, F_tilde, U, meta, initial_force=None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(d / "F.fsimat", F)
    write_matrix(d / "F_tilde.fsimat", F_tilde)
    write_matrix(d / "U.fsimat", U)
    if initial_force is not None:
        write_matrix(d / "f_initial.fsimat", initial_force)
    write_metadata(d / "metadata.csv", meta)


def load_snapshots(directory):
    """Return ``(F, F_tilde, U, meta, initial_force)`` from a snapshot directory."""
    d = Path(directory)
    files = ["F.fsimat", "F_tilde.fsimat", "U.fsimat", "metadata.csv"]
    missing = [f for f in files if not (d / f).exists()]
    if missing:
        raise FormatError(f"{d}: missing snapshot files {missing}")
    F, Ft, U = (read_matrix(d / f) for f in files[:3])
    meta = read_metadata(d / "metadata.csv")
    if not F.shape == Ft.shape or U.shape[1] != F.shape[1] or len(meta["time_index"]) != F.shape[1]:
        raise FormatError(f"{d}: snapshot files disagree on column count")
    f0 = read_matrix(d / "f_initial.fsimat")[:, 0] if (d / "f_initial.fsimat").exists() else None
    return F, Ft, U, meta, f0


# ---------------------------------------------------------------- bundles


def _regressor_parts(model) -> tuple[dict, dict]:
    arrays = {"scaler_mean": model.scaler.mean, "scaler_scale": model.scaler.scale}
    if isinstance(model, regress.RbfModel):
        arrays.update(centers=model.centers, weights=model.weights, poly_coeffs=model.poly_coeffs)
        return arrays, {"kind": "rbf", "kernel": model.kernel}
    if isinstance(model, regress.SparsePoly2Model):
        arrays.update(weights=model.weights)
        return arrays, {"kind": "poly2", "lam": model.lam, "n_zero": model.n_zero}
    if isinstance(model, regress.RidgeModel):
        arrays.update(weights=model.weights)
        return arrays, {"kind": "ridge", "lam": model.lam}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _regressor_from_parts(arrays: dict, info: dict):
    scaler = regress.Scaler(mean=arrays["scaler_mean"], scale=arrays["scaler_scale"])
    kind = info["kind"]
    if kind == "rbf":
        return regress.RbfModel(centers=arrays["centers"], weights=arrays["weights"],
                                poly_coeffs=arrays["poly_coeffs"], kernel=info["kernel"], scaler=scaler)
    if kind == "poly2":
        return regress.SparsePoly2Model(weights=arrays["weights"], lam=info["lam"], scaler=scaler,
                                        n_zero=info["n_zero"])
    if kind == "ridge":
        return regress.RidgeModel(weights=arrays["weights"], lam=info["lam"], scaler=scaler)
    raise FormatError(f"unknown regressor kind {kind!r}")


def save_bundle(directory, solid: SolidRom, fluid: FluidRom, extra: dict | None = None) -> Path:
    """Write both ROMs as matrix files plus a deterministic ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = {
        "force_mean": solid.force_basis.mean,
        "force_modes": solid.force_basis.modes,
        "force_sigma": solid.force_basis.singular_values,
        "disp_mean": solid.disp_manifold.basis.mean,
        "disp_modes": solid.disp_manifold.basis.modes,
        "disp_sigma": solid.disp_manifold.basis.singular_values,
        "disp_quad": solid.disp_manifold.quad_operator,
        "interface_rows": solid.interface_rows.astype(float),
        "buf_u": fluid.buf_u,
        "buf_f": fluid.buf_f,
        "buf_prev": fluid.buf_prev,
    }
    s_arr, s_info = _regressor_parts(solid.regressor)
    f_arr, f_info = _regressor_parts(fluid.regressor)
    arrays.update({f"solid_reg_{k}": v for k, v in s_arr.items()})
    arrays.update({f"fluid_reg_{k}": v for k, v in f_arr.items()})
    shapes = {}
    for name, A in sorted(arrays.items()):
        A = np.asarray(A, dtype=float)
        shapes[name] = list(A.shape)
        write_matrix(d / f"{name}.fsimat", A)
    manifest = {
        "bundle_version": BUNDLE_VERSION,
        "arrays": shapes,
        "solid_regressor": s_info,
        "fluid_regressor": f_info,
        "fluid": {"kind": fluid.kind, "params": fluid.params, "p": fluid.p, "Z": fluid.Z},
        "extra": extra or {},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_bundle(directory) -> tuple[SolidRom, FluidRom, dict]:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read bundle manifest in {d}: {exc}") from exc
    if manifest.get("bundle_version") != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {manifest.get('bundle_version')}")
    arr = {}
    for name, shape in manifest["arrays"].items():
        arr[name] = read_matrix(d / f"{name}.fsimat").reshape(shape, order="F") \
            if len(shape) == 1 else read_matrix(d / f"{name}.fsimat")
    force = red.PodBasis(arr["force_mean"], arr["force_modes"], arr["force_sigma"])
    disp = red.PodBasis(arr["disp_mean"], arr["disp_modes"], arr["disp_sigma"])
    manifold = red.QuadraticManifold(disp, arr["disp_quad"])
    rows = arr["interface_rows"].astype(int)

    def reg(prefix, info):
        parts = {k[len(prefix):]: v for k, v in arr.items() if k.startswith(prefix)}
        return _regressor_from_parts(parts, info)

    solid = SolidRom(force_basis=force, disp_manifold=manifold, interface_rows=rows,
                     regressor=reg("solid_reg_", manifest["solid_regressor"]))
    fl = manifest["fluid"]
    fluid = FluidRom(disp_basis=red.restrict_rows(disp, rows), force_basis=force,
                     regressor=reg("fluid_reg_", manifest["fluid_regressor"]),
                     kind=fl["kind"], params=fl["params"], p=fl["p"], Z=fl["Z"])
    fluid.seed_buffers(arr["buf_u"], arr["buf_f"], arr["buf_prev"])
    return solid, fluid, manifest.get("extra", {})
