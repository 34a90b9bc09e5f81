"""Run configuration: YAML file plus ``--set key.path=value`` overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .hamiltonian import PhysicalConstants
from .kernels import KernelSpec
from .layout import DEFAULT_CONTRAST, DEFAULT_R_NN


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class ConstantsConfig:
    c6: float = 865723.0
    omega_rad_per_us: float = 2 * np.pi
    delta0_rad_per_us: float = np.pi
    r_nn_um: float = DEFAULT_R_NN
    m_carbon_u: float = 12.011

    def physical(self) -> PhysicalConstants:
        return PhysicalConstants(self.c6, self.omega_rad_per_us, self.delta0_rad_per_us, self.m_carbon_u)


@dataclass
class RegisterConfig:
    source: str = "embed"  # embed | file
    path: str | None = None
    seed: int = 0
    max_attempts: int = 20
    contrast_threshold: float = DEFAULT_CONTRAST


@dataclass
class TimeGrid:
    t_max_us: float = 1.0
    n_steps: int = 20

    def times(self) -> np.ndarray:
        # t = 0 is excluded: the first sample sits at t_max / n_steps.
        return np.round(self.t_max_us * np.arange(1, self.n_steps + 1) / self.n_steps, 12)


@dataclass
class EstimatorConfig:
    kind: str = "exact"  # exact | shots
    n_shots: int = 1000
    seed: int = 0

    def as_dict(self) -> dict:
        if self.kind == "exact":
            return {"kind": "exact"}
        return {"kind": "shots", "n_shots": self.n_shots, "seed": self.seed}


@dataclass
class KernelConfig:
    kind: str = "qek"
    mu0: float = 2.0
    n_bins_c: int = 10

    def spec(self) -> KernelSpec:
        return KernelSpec(self.kind, mu0=self.mu0, n_bins_c=self.n_bins_c)


@dataclass
class PoolingConfig:
    rules: list = field(default_factory=list)  # subset of {sum, product}
    tuple_sizes: list = field(default_factory=lambda: [2, 3])
    n_samples: int = 1000
    seed: int = 0


@dataclass
class CvConfig:
    folds: int = 5
    reps: int = 10
    c_min: float = 1e-3
    c_max: float = 100.0
    c_points: int = 100
    seed: int = 0

    def c_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.c_min), np.log10(self.c_max), self.c_points)


@dataclass
class RankConfig:
    bin_grid: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000])
    with_f1: bool = True


@dataclass
class RunConfig:
    dataset: str = ""
    mass_table: str | None = None
    output: str = "runs/default"
    registers: RegisterConfig = field(default_factory=RegisterConfig)
    constants: ConstantsConfig = field(default_factory=ConstantsConfig)
    modes: list = field(default_factory=lambda: ["global", "local"])
    time_grid: TimeGrid = field(default_factory=TimeGrid)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    kernels: list = field(default_factory=lambda: [KernelConfig("qek"), KernelConfig("gdqc")])
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    rank: RankConfig = field(default_factory=RankConfig)
    qubit_cap: int = 20
    tolerance: float = 1e-9

    def validate(self) -> "RunConfig":
        if not self.dataset:
            raise ConfigError("dataset path is required")
        if self.registers.source not in ("embed", "file"):
            raise ConfigError(f"registers.source must be embed or file, got {self.registers.source!r}")
        if self.registers.source == "file" and not self.registers.path:
            raise ConfigError("registers.path is required when registers.source is 'file'")
        for name, value in dataclasses.asdict(self.constants).items():
            if not value > 0:
                raise ConfigError(f"constants.{name} must be positive")
        if not self.modes or any(m not in ("global", "local") for m in self.modes):
            raise ConfigError(f"modes must be a non-empty subset of [global, local], got {self.modes}")
        if self.time_grid.n_steps < 1 or not self.time_grid.t_max_us > 0:
            raise ConfigError("time grid needs n_steps >= 1 and t_max_us > 0")
        if self.estimator.kind not in ("exact", "shots"):
            raise ConfigError(f"unknown estimator {self.estimator.kind!r}")
        if self.estimator.kind == "shots" and self.estimator.n_shots < 1:
            raise ConfigError("estimator.n_shots must be positive")
        for k in self.kernels:
            if k.kind not in ("qek", "gdqc"):
                raise ConfigError(f"unknown kernel {k.kind!r}")
            if not k.mu0 > 0 or k.n_bins_c < 1:
                raise ConfigError("kernel mu0 and n_bins_c must be positive")
        if any(r not in ("sum", "product") for r in self.pooling.rules):
            raise ConfigError(f"pooling rules must be sum/product, got {self.pooling.rules}")
        cv = self.cv
        if cv.folds < 2 or cv.reps < 1 or cv.c_points < 1 or not 0 < cv.c_min <= cv.c_max:
            raise ConfigError("invalid cv settings")
        if self.qubit_cap < 1 or not self.tolerance > 0:
            raise ConfigError("qubit_cap and tolerance must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def evolution_digest(self) -> str:
        """Hash of the settings that determine evolution records (checkpoint key)."""
        d = self.to_dict()
        keep = ("dataset", "mass_table", "registers", "constants", "time_grid", "estimator", "qubit_cap", "tolerance")
        return hashlib.sha256(json.dumps({k: d[k] for k in keep}, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.output)


_NESTED = {
    "registers": RegisterConfig,
    "constants": ConstantsConfig,
    "time_grid": TimeGrid,
    "estimator": EstimatorConfig,
    "pooling": PoolingConfig,
    "cv": CvConfig,
    "rank": RankConfig,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value or {}, key)
        elif key == "kernels":
            kwargs[key] = [_build(KernelConfig, k, "kernels") for k in value]
        else:
            kwargs[key] = value
    try:
        cfg = _build(RunConfig, kwargs, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` assignments; values are parsed as YAML scalars/lists."""
    data = json.loads(json.dumps(data or {}))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p} does not contain a mapping")
    data = apply_overrides(data, overrides or [])
    return config_from_dict(data).validate()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
