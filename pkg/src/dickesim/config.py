"""Run configuration: YAML schema, validation and unit conversion.

On disk, frequencies (g, delta, omega, sigma_B, sigma_delta) are in Hz,
meaning the value divided by 2 pi, and times are in ms. Rates
(gamma_tot, gamma_B) are in 1/s. Conversion to rad/s and seconds happens only
in the ``to_*`` helpers below.
"""
from __future__ import annotations

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError, DomainError
from .model import TWO_PI, InitialCondition, ModelParams, NoiseParams, SpinAxis

_STRICT = ConfigDict(extra="forbid", validate_assignment=True)


class Mode(str, Enum):
    MF = "mf"
    TWA = "twa"
    TWA_CLASSICAL = "twa_classical"
    EXACT = "exact"
    LYAPUNOV = "lyapunov"
    PHASE_DIAGRAM = "phase_diagram"
    CUT = "cut"
    COMPARE = "compare"


def _nonneg(name: str, v: float) -> float:
    if v < 0:
        raise ValueError(f"{name} must be ≥ 0")
    return v


class ModelConfig(BaseModel):
    model_config = _STRICT
    n_spins: int = Field(gt=0)
    g: float = Field(description="coupling g / 2pi, Hz")
    delta: float = Field(description="detuning delta / 2pi, Hz")
    omega: float = Field(description="drive Omega / 2pi, Hz")

    @field_validator("g", "delta", "omega")
    @classmethod
    def _check(cls, v, info):
        return _nonneg(info.field_name, v)


class NoiseConfig(BaseModel):
    """Noise parameters; ``preset`` selects the defaults for omitted fields."""

    model_config = _STRICT
    preset: Literal["calibrated", "ideal"] = "calibrated"
    gamma_tot: float = 120.0
    branch_raman_down: float = 0.12
    branch_raman_up: float = 0.08
    branch_rayleigh: float = 0.80
    gamma_B: float = 150.0
    sigma_B: float = 45.0
    sigma_delta: float = 40.0
    nbar: float = 0.5

    @model_validator(mode="before")
    @classmethod
    def _preset_defaults(cls, data):
        if isinstance(data, dict) and data.get("preset") == "ideal":
            base = {"gamma_tot": 0.0, "gamma_B": 0.0, "sigma_B": 0.0, "sigma_delta": 0.0,
                    "nbar": 0.0}
            data = {**base, **data}
        return data

    @field_validator("gamma_tot", "branch_raman_down", "branch_raman_up", "branch_rayleigh",
                     "gamma_B", "sigma_B", "sigma_delta", "nbar")
    @classmethod
    def _check(cls, v, info):
        return _nonneg(info.field_name, v)

    @model_validator(mode="after")
    def _branches(self):
        total = self.branch_raman_down + self.branch_raman_up + self.branch_rayleigh
        if abs(total - 1.0) > 1e-12:
            raise ValueError(
                f"branch fractions (raman_down + raman_up + rayleigh) must sum to 1, got {total:g}")
        if self.branch_raman_down < self.branch_raman_up:
            raise ValueError("branch_raman_down must be ≥ branch_raman_up")
        return self


class InitConfig(BaseModel):
    model_config = _STRICT
    spin_axis: SpinAxis = SpinAxis.MINUS_Z


class SimConfig(BaseModel):
    model_config = _STRICT
    dt: float = Field(0.002, gt=0, description="SDE step, ms")
    t_final: float = Field(3.0, gt=0, description="ms")
    dt_out: float = Field(0.02, gt=0, description="ms")
    n_traj: int = Field(1000, ge=1)
    n_disorder: int = Field(1000, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    n_max: int = Field(30, ge=1)
    n_iter: int = Field(4, ge=1)
    t_horizon: float = Field(50.0, gt=0, description="Lyapunov horizon, ms")
    exact_method: Literal["auto", "rk4", "split", "eig"] = "auto"

    @model_validator(mode="after")
    def _grid(self):
        if self.dt_out < self.dt:
            raise ValueError("dt_out must be ≥ dt")
        return self


class AxisConfig(BaseModel):
    model_config = _STRICT
    start: float = Field(gt=0)
    stop: float = Field(gt=0)
    n_points: int = Field(ge=1)
    spacing: Literal["linear", "log"] = "linear"


class SweepConfig(BaseModel):
    """Cut (``preset`` plus optional overrides) or phase-diagram axes."""

    model_config = _STRICT
    preset: Optional[Literal["lmg", "chaotic", "resonant"]] = None
    n_points: Optional[int] = Field(None, ge=1)
    start: Optional[float] = Field(None, gt=0)
    stop: Optional[float] = Field(None, gt=0)
    g: Optional[float] = Field(None, gt=0, description="override preset g / 2pi, Hz")
    solver: Literal["mf", "twa"] = "twa"
    window: Optional[tuple[float, float]] = Field(None, description="time-average window, ms")
    omega_over_delta: Optional[AxisConfig] = None
    omega_over_chi: Optional[AxisConfig] = None
    observable: Literal["time_avg_sz", "time_avg_sx", "lyapunov"] = "time_avg_sz"


class OutputConfig(BaseModel):
    model_config = _STRICT
    path: str = "out"
    stem: str = "result"
    format: Literal["csv", "json"] = "csv"
    raw_dump: bool = False


class RunConfig(BaseModel):
    model_config = _STRICT
    mode: Mode
    model: Optional[ModelConfig] = None
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    sweep: Optional[SweepConfig] = None
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _mode_requirements(self):
        if self.mode in (Mode.MF, Mode.TWA, Mode.TWA_CLASSICAL, Mode.EXACT, Mode.LYAPUNOV,
                         Mode.COMPARE, Mode.PHASE_DIAGRAM) and self.model is None:
            raise ValueError(f"mode {self.mode.value} requires a 'model' section")
        if self.mode is Mode.CUT and (self.sweep is None or self.sweep.preset is None):
            raise ValueError("mode cut requires sweep.preset (lmg, chaotic or resonant)")
        if self.mode is Mode.PHASE_DIAGRAM and (
                self.sweep is None or self.sweep.omega_over_delta is None
                or self.sweep.omega_over_chi is None):
            raise ValueError("mode phase_diagram requires sweep.omega_over_delta and "
                             "sweep.omega_over_chi axes")
        return self

    # ------------------------------------------------------------------ conversion

    def to_model_params(self) -> ModelParams:
        m = self.model
        try:
            return ModelParams(m.n_spins, TWO_PI * m.g, TWO_PI * m.delta, TWO_PI * m.omega)
        except DomainError as exc:
            raise ConfigurationError(f"model: {exc}") from exc

    def to_noise_params(self) -> NoiseParams:
        n = self.noise
        return NoiseParams(gamma_tot=n.gamma_tot, branch_raman_down=n.branch_raman_down,
                           branch_raman_up=n.branch_raman_up, branch_rayleigh=n.branch_rayleigh,
                           gamma_B=n.gamma_B, sigma_B=TWO_PI * n.sigma_B,
                           sigma_delta=TWO_PI * n.sigma_delta, nbar=n.nbar)

    def to_initial_condition(self) -> InitialCondition:
        return InitialCondition(self.init.spin_axis)

    # ------------------------------------------------------------------ identity

    def resolved(self) -> dict:
        """Plain-data form with every default filled in."""
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        if e["type"] == "extra_forbidden":
            msg = "unknown key (not allowed in strict mode)"
        lines.append(f"{loc}: {msg}")
    return "; ".join(lines)


def parse_config(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a mapping at top level")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigurationError(f"invalid configuration: {_format_validation(err)}") from err


def load_config(path) -> RunConfig:
    """Read and validate a YAML run configuration.

    Parse errors carry line and column; validation errors name the field and
    the violated constraint. Raises ConfigurationError for both, and OSError
    if the file cannot be read.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigurationError(f"{path}: parse error at {where}: {err.problem}") from err
    except yaml.YAMLError as err:
        raise ConfigurationError(f"{path}: parse error: {err}") from err
    return parse_config(data)


def dump_config(config: RunConfig) -> str:
    """YAML text that loads back to an identical resolved configuration."""
    return yaml.safe_dump(config.resolved(), sort_keys=True)


def write_config(config: RunConfig, path) -> None:
    Path(path).write_text(dump_config(config))
