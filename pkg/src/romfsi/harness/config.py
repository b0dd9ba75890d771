"""Experiment configuration stored as versioned JSON."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA_VERSION", "OUTPUT_ENV", "MU1", "MU2"]

SCHEMA_VERSION = 1
OUTPUT_ENV = "ROMFSI_OUTPUT_DIR"

MU1 = (2.0, 6.0)
MU2 = (0.9, 4.0)

MODES = ("fom-fom", "rom-fom")
PREDICTORS = ("constant", "linear", "quadratic", "data-driven")
ACCELERATORS = ("iqn-ils", "aitken", "constant", "gauss-seidel")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    """Every knob of a training or online run.

    Times are in seconds. ``t_start`` splits an online run into a warm-up
    phase (run FOM-FOM with ``warmup_predictor``, not counted) and the
    measured phase that uses ``mode`` and ``predictor``. ``Z = None`` disables
    online refitting of the fluid ROM.
    """

    mode: str = "fom-fom"
    predictor: str = "quadratic"
    accelerator: str = "iqn-ils"
    q: int = 2
    w0: float = 0.1
    w_max: float = 2.0
    eps_filter: float = 0.1
    delta: float = 1e-4
    max_iters: int = 100

    delta_r: float = 0.02
    M: int = 20
    w0_local: float = 0.1
    seed_mode: str = "linear"
    Z: int | None = 200
    p: int = 1640

    r_f: int = 10
    r_u: int = 4
    solid_regressor: str = "rbf"
    fluid_regressor: str = "rbf"
    kernel: str = "thin_plate"
    smoothing: float = 0.0
    lam: float = 1e-5

    tau: float = 0.05
    kappa: float = 21.0
    n_cells: int = 100
    dt: float = 0.1
    rho: float = 1000.0
    r0: float = 0.005
    E: float = 12500.0
    eps0: float = 2e-3
    mu_ref: list = field(default_factory=lambda: list(MU1))

    mu: list = field(default_factory=lambda: list(MU1))
    t_start: float = 0.0
    t_end: float = 120.0
    warmup_predictor: str = "linear"

    model_bundle: str | None = None
    training_data: str | None = None
    output_dir: str = "out"
    seed: int = 0
    fail_fast: bool = False
    record_snapshots: bool = False
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema_version}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name, allowed in (("predictor", PREDICTORS), ("warmup_predictor", PREDICTORS[:3])):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.accelerator not in ACCELERATORS:
            raise ConfigError(f"accelerator must be one of {ACCELERATORS}")
        if not (self.delta > 0 and self.delta_r > 0):
            raise ConfigError("tolerances delta and delta_r must be positive")
        if self.max_iters < 1 or self.M < 1 or self.q < 0 or self.p < 1:
            raise ConfigError("max_iters, M, p must be positive and q non-negative")
        if self.Z is not None and self.Z < 1:
            raise ConfigError("Z must be a positive integer or null")
        if len(self.mu) != 2 or len(self.mu_ref) != 2:
            raise ConfigError("mu and mu_ref must have two entries (f, h)")
        if not 0.0 <= self.t_start <= self.t_end:
            raise ConfigError("need 0 <= t_start <= t_end")
        if self.needs_bundle and self.model_bundle is None:
            raise ConfigError("rom-fom mode and the data-driven predictor need model_bundle")
        if self.model_bundle is not None and self.needs_bundle and not Path(self.model_bundle).exists():
            raise ConfigError(f"model bundle {self.model_bundle} does not exist")
        if self.training_data is not None and not Path(self.training_data).exists():
            raise ConfigError(f"training data {self.training_data} does not exist")
        return self

    @property
    def needs_bundle(self) -> bool:
        return self.mode == "rom-fom" or self.predictor == "data-driven"

    @property
    def n_warmup(self) -> int:
        return int(round(self.t_start / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)
