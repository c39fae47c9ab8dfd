"""Model parameters, noise calibration and closed-form helpers.

All frequencies are stored as angular frequencies (rad/s) and all times in
seconds. Conversion from the Hz / ms values used in config files happens
only through :func:`hz` and :func:`ms`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .errors import DomainError

TWO_PI = 2.0 * math.pi

#: Default calibrated total scattering rate (1/s); reported range is 100-140.
DEFAULT_GAMMA_TOT = 120.0


def hz(f: float) -> float:
    """Ordinary frequency in Hz -> angular frequency in rad/s."""
    return TWO_PI * f


def ms(t: float) -> float:
    """Milliseconds -> seconds."""
    return 1e-3 * t


class SpinAxis(str, enum.Enum):
    """Polarisation axis of the initial collective spin state."""

    MINUS_Z = "minus_z"
    MINUS_X = "minus_x"

    @property
    def index(self) -> int:
        # component index into (x, y, z)
        return 2 if self is SpinAxis.MINUS_Z else 0


@dataclass(frozen=True)
class ModelParams:
    """Dicke Hamiltonian parameters.

    Args:
        n_spins: number of spins N.
        g: spin-phonon coupling (rad/s).
        delta: drive-mode detuning (rad/s).
        omega: transverse Rabi rate (rad/s).
    """

    n_spins: int
    g: float
    delta: float
    omega: float

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise DomainError(f"n_spins must be a positive integer, got {self.n_spins!r}")
        for name in ("g", "delta", "omega"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            if value < 0:
                raise DomainError(f"{name} must be >= 0, got {value!r}")

    @classmethod
    def _signed(cls, n_spins: int, g: float, delta: float, omega: float) -> "ModelParams":
        """Build parameters with arbitrary signs.

        Test hook for the sign-symmetry checks; bypasses the positivity guard.
        """
        obj = object.__new__(cls)
        object.__setattr__(obj, "n_spins", int(n_spins))
        object.__setattr__(obj, "g", float(g))
        object.__setattr__(obj, "delta", float(delta))
        object.__setattr__(obj, "omega", float(omega))
        return obj

    @classmethod
    def from_ratios(cls, n_spins: int, g: float, omega_over_delta: float,
                    omega_over_chi: float) -> "ModelParams":
        """Parameters at fixed g from the two phase-diagram ratios."""
        if omega_over_delta <= 0 or omega_over_chi <= 0:
            raise DomainError("ratios must be positive")
        delta = 2.0 * g * math.sqrt(omega_over_chi / omega_over_delta)
        return cls(n_spins, g, delta, omega_over_delta * delta)

    @classmethod
    def from_ratios_fixed_omega(cls, n_spins: int, omega: float, omega_over_delta: float,
                                omega_over_chi: float) -> "ModelParams":
        """Parameters at fixed Omega: delta = Omega/r1, g = sqrt(Omega*delta/(4*r2))."""
        if omega_over_delta <= 0 or omega_over_chi <= 0:
            raise DomainError("ratios must be positive")
        delta = omega / omega_over_delta
        g = math.sqrt(omega * delta / (4.0 * omega_over_chi))
        return cls(n_spins, g, delta, omega)

    @property
    def chi(self) -> float:
        return chi(self)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class NoiseParams:
    """Decoherence, disorder and thermal parameters.

    The three scattering rates are given as a total rate and branch fractions.
    The defaults are the calibrated values; use :meth:`ideal` for a noiseless
    model.
    """

    gamma_tot: float = DEFAULT_GAMMA_TOT
    branch_raman_down: float = 0.12
    branch_raman_up: float = 0.08
    branch_rayleigh: float = 0.80
    gamma_B: float = 150.0
    sigma_B: float = TWO_PI * 45.0
    sigma_delta: float = TWO_PI * 40.0
    nbar: float = 0.5

    def __post_init__(self):
        for name in ("gamma_tot", "branch_raman_down", "branch_raman_up", "branch_rayleigh",
                     "gamma_B", "sigma_B", "sigma_delta", "nbar"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            if value < 0:
                raise DomainError(f"{name} must be >= 0, got {value!r}")
        total = self.branch_raman_down + self.branch_raman_up + self.branch_rayleigh
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"branch fractions must sum to 1, got {total!r}")
        if self.branch_raman_down < self.branch_raman_up:
            raise DomainError("branch_raman_down must be >= branch_raman_up")

    @classmethod
    def ideal(cls, nbar: float = 0.0) -> "NoiseParams":
        """No scattering, no field noise, no disorder."""
        return cls(gamma_tot=0.0, gamma_B=0.0, sigma_B=0.0, sigma_delta=0.0, nbar=nbar)

    @property
    def gamma_z(self) -> float:
        """Rayleigh (elastic dephasing) rate."""
        return self.branch_rayleigh * self.gamma_tot

    @property
    def gamma_ud(self) -> float:
        """Raman decay rate, up -> down."""
        return self.branch_raman_down * self.gamma_tot

    @property
    def gamma_du(self) -> float:
        """Raman absorption rate, down -> up."""
        return self.branch_raman_up * self.gamma_tot

    @property
    def has_individual_channels(self) -> bool:
        return self.gamma_tot > 0

    @property
    def is_ideal(self) -> bool:
        return (self.gamma_tot == 0 and self.gamma_B == 0 and self.sigma_B == 0
                and self.sigma_delta == 0)

    def with_(self, **changes) -> "NoiseParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class InitialCondition:
    """Initial product state: thermal phonons times a polarised spin state."""

    spin_axis: SpinAxis = SpinAxis.MINUS_Z

    def __post_init__(self):
        object.__setattr__(self, "spin_axis", SpinAxis(self.spin_axis))


@dataclass(frozen=True)
class DisorderDraw:
    """Quasi-static shot-to-shot field B and detuning shift (rad/s)."""

    b_field: float = 0.0
    delta_shift: float = 0.0


def chi(params: ModelParams) -> float:
    """Effective spin-spin interaction 4 g^2 / delta of the LMG limit."""
    if params.delta == 0:
        raise DomainError("LMG limit undefined at resonance (delta = 0)")
    return 4.0 * params.g ** 2 / params.delta


def critical_drive_dpt(params: ModelParams) -> float:
    """Dynamical transition drive chi / 2."""
    return chi(params) / 2.0


def critical_drive_qpt(params: ModelParams) -> float:
    """Equilibrium transition drive 4 g^2 / |delta|."""
    if params.delta == 0:
        raise DomainError("LMG limit undefined at resonance (delta = 0)")
    return 4.0 * params.g ** 2 / abs(params.delta)


def thermal_log_ratio(nbar: float) -> float:
    """beta * hbar * omega_Z = ln(1 + 1/nbar); ``inf`` for the vacuum."""
    if nbar < 0 or math.isnan(nbar):
        raise DomainError(f"nbar must be >= 0, got {nbar!r}")
    if nbar == 0:
        return math.inf
    if math.isinf(nbar):
        return 0.0
    return math.log1p(1.0 / nbar)


def renyi_entropy(sx_mean: float, n_spins: int) -> float:
    """Single-spin second-order Renyi entropy (bits) from the mean x-magnetisation."""
    half = n_spins / 2.0
    if abs(sx_mean) > half * (1 + 1e-12):
        raise DomainError(f"unphysical magnetization: |{sx_mean}| > N/2 = {half}")
    purity = 0.5 + 2.0 * sx_mean ** 2 / n_spins ** 2
    return max(0.0, min(1.0, -math.log2(min(purity, 1.0))))


def disorder_draw(noise: NoiseParams, seed: int, index: int) -> DisorderDraw:
    """Quasi-static draw for ensemble member ``index``, fixed by ``(seed, index)``."""
    from .rng import mode_disorder_normals, split_seed

    k0, k1 = split_seed(seed)
    _, _, zb, zd = mode_disorder_normals(index, k0, k1)
    return DisorderDraw(b_field=noise.sigma_B * zb, delta_shift=noise.sigma_delta * zd)
