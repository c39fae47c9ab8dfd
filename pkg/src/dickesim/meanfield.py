"""Mean-field dynamics, disorder averaging and classical chaos diagnostics.

Mean-field variables are the normalised collective spin ``s = <S>/N`` and
``alpha = <a>/sqrt(N)``. With ``G = 4 g Re(alpha) + B`` the equations are::

    ds_x/dt  = -G s_y - gamma_perp s_x
    ds_y/dt  = -Omega s_z + G s_x - gamma_perp s_y
    ds_z/dt  =  Omega s_y - (G_ud + G_du) s_z - (G_ud - G_du)/2
    dalpha/dt = i (delta + delta_shift) alpha - 2 i g s_z

where ``gamma_perp = (G_z + G_ud + G_du + G_B)/2``. Integration is
fixed-step classical RK4.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError, NumericalError
from .model import (DisorderDraw, InitialCondition, ModelParams, NoiseParams, SpinAxis,
                    disorder_draw)
from .parallel import map_blocks, map_items
from .series import EnsembleSeries, reduce_blocks

DEFAULT_DT = 1e-6
# largest rotation angle per RK4 substep; keeps the spin length and energy
# drift well below 1e-8 over tens of milliseconds
MAX_PHASE_STEP = 0.02

DICKE, LMG = 0, 1


@dataclass(frozen=True)
class MfState:
    """Normalised spin vector ``s`` (length 1/2 for pure states) and mode amplitude."""

    s: tuple
    alpha: complex

    def as_array(self) -> np.ndarray:
        return np.array([self.s[0], self.s[1], self.s[2], self.alpha.real, self.alpha.imag])

    @classmethod
    def from_array(cls, y) -> "MfState":
        return cls((float(y[0]), float(y[1]), float(y[2])), complex(y[3], y[4]))

    @classmethod
    def initial(cls, init: InitialCondition) -> "MfState":
        s = [0.0, 0.0, 0.0]
        s[init.spin_axis.index] = -0.5
        return cls(tuple(s), 0j)


@dataclass(frozen=True)
class MfRunSpec:
    params: ModelParams
    noise: NoiseParams = field(default_factory=NoiseParams)
    init: InitialCondition = field(default_factory=InitialCondition)
    t_final: float = 3e-3
    dt_out: float = 1e-5
    n_disorder: int = 1000
    seed: int = 0
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.t_final > 0:
            raise DomainError("t_final must be > 0")
        if not self.dt_out > 0 or not self.dt > 0:
            raise DomainError("dt and dt_out must be > 0")
        if self.n_disorder < 1:
            raise DomainError("n_disorder must be >= 1")


@nb.njit(cache=True, nogil=True)
def _rhs(y, out, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp):
    sx, sy, sz, ar, ai = y[0], y[1], y[2], y[3], y[4]
    if model == 0:
        G = 4.0 * g * ar + b
        out[3] = -d_tot * ai
        out[4] = d_tot * ar - 2.0 * g * sz
    else:
        G = 2.0 * chi * sz + b
        out[3] = 0.0
        out[4] = 0.0
    out[0] = -G * sy - g_perp * sx
    out[1] = -omega * sz + G * sx - g_perp * sy
    out[2] = omega * sy - (g_ud + g_du) * sz - 0.5 * (g_ud - g_du)


@nb.njit(cache=True, nogil=True)
def _rk4_step(y, h, k1, k2, k3, k4, tmp, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp):
    _rhs(y, k1, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp)
    for i in range(5):
        tmp[i] = y[i] + 0.5 * h * k1[i]
    _rhs(tmp, k2, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp)
    for i in range(5):
        tmp[i] = y[i] + 0.5 * h * k2[i]
    _rhs(tmp, k3, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp)
    for i in range(5):
        tmp[i] = y[i] + h * k3[i]
    _rhs(tmp, k4, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp)
    for i in range(5):
        y[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


@nb.njit(cache=True, nogil=True)
def _integrate(y0, n_out, steps_per_out, h, model, g, d_tot, omega, b, chi, g_ud, g_du, g_perp):
    """Returns (trace, index of first non-finite output or -1)."""
    out = np.empty((n_out, 5))
    y = y0.copy()
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    out[0] = y
    for k in range(1, n_out):
        for _ in range(steps_per_out):
            _rk4_step(y, h, k1, k2, k3, k4, tmp, model, g, d_tot, omega, b, chi, g_ud, g_du,
                      g_perp)
        out[k] = y
        for i in range(5):
            if not np.isfinite(y[i]):
                return out, k
    return out, -1


def _grid(t_final: float, dt_out: float, dt: float):
    n_out = int(round(t_final / dt_out)) + 1
    per_out = dt_out / dt
    n_per = int(round(per_out))
    if n_per < 1 or abs(per_out - n_per) > 1e-9 * per_out:
        raise DomainError("dt_out must be an integer multiple of dt")
    return n_out, n_per


def _substeps(params: ModelParams, draw: DisorderDraw, dt: float) -> int:
    w = (abs(params.omega) + abs(params.delta + draw.delta_shift) + abs(draw.b_field)
         + 4.0 * abs(params.g))
    return max(1, math.ceil(w * dt / MAX_PHASE_STEP))


def mf_derivatives(state: MfState, params: ModelParams, noise: NoiseParams,
                   draw: DisorderDraw = DisorderDraw()) -> MfState:
    """Time derivative of the mean-field state (same container type)."""
    y = state.as_array()
    out = np.empty(5)
    _rhs(y, out, DICKE, params.g, params.delta + draw.delta_shift, params.omega, draw.b_field,
         0.0, noise.gamma_ud, noise.gamma_du, _gamma_perp(noise))
    return MfState.from_array(out)


def _gamma_perp(noise: NoiseParams) -> float:
    return 0.5 * (noise.gamma_z + noise.gamma_ud + noise.gamma_du + noise.gamma_B)


def integrate_mf(y0, params: ModelParams, noise: NoiseParams, draw: DisorderDraw,
                 t_final: float, dt_out: float, dt: float = DEFAULT_DT,
                 model: int = DICKE) -> tuple[np.ndarray, np.ndarray]:
    """Single deterministic trajectory; returns (t, y[n_out, 5]).

    ``model=LMG`` integrates the adiabatically eliminated spin-only flow with
    ``G = 2 chi s_z``; the mode columns are then zero.
    """
    n_out, n_per = _grid(t_final, dt_out, dt)
    m = _substeps(params, draw, dt)
    chi_val = 4.0 * params.g ** 2 / params.delta if model == LMG else 0.0
    y, bad = _integrate(np.asarray(y0, dtype=float), n_out, n_per * m, dt / m, model, params.g,
                        params.delta + draw.delta_shift, params.omega, draw.b_field, chi_val,
                        noise.gamma_ud, noise.gamma_du, _gamma_perp(noise))
    t = np.arange(n_out) * dt_out
    if bad >= 0:
        raise NumericalError(f"mean-field integration became non-finite at t={t[bad]:.6g} s",
                             time=t[bad], state=y[bad - 1])
    return t, y


def _to_raw(y: np.ndarray, n: int) -> np.ndarray:
    raw = np.empty_like(y)
    raw[:, :3] = n * y[:, :3]
    raw[:, 3:] = math.sqrt(n) * y[:, 3:]
    return raw


def evolve_mf(spec: MfRunSpec, workers: int | None = None) -> EnsembleSeries:
    """Disorder-averaged mean-field time series.

    Outputs ``N E[s]`` for the spins, ``sqrt(2N) E[Re/Im alpha]`` for the
    quadratures and ``N E[|alpha|^2]`` for the phonon number. Member ``i``
    uses the quasi-static draw fixed by ``(seed, i)``.
    """
    p, noise = spec.params, spec.noise
    y0 = MfState.initial(spec.init).as_array()
    collapsed = noise.sigma_B == 0 and noise.sigma_delta == 0
    n_members = 1 if collapsed else spec.n_disorder

    def block(a, b):
        raws = []
        for i in range(a, b):
            draw = DisorderDraw() if collapsed else disorder_draw(noise, spec.seed, i)
            t, y = integrate_mf(y0, p, noise, draw, spec.t_final, spec.dt_out, spec.dt)
            raws.append(_to_raw(y, p.n_spins))
        return np.stack(raws)

    blocks = map_blocks(block, n_members, 64, workers)
    t = np.arange(blocks[0].shape[1]) * spec.dt_out
    series = reduce_blocks(t, blocks, p.n_spins, weyl_offset=0.0)
    series.flags["solver"] = "meanfield"
    series.flags["disorder_collapsed"] = collapsed
    return series


def time_average(t, values, t_start: float | None = None, t_end: float | None = None) -> float:
    """Trapezoidal time average of ``values`` over [t_start, t_end].

    Window edges that fall between samples are linearly interpolated.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size == 0:
        raise DomainError("empty series")
    t_start = t[0] if t_start is None else t_start
    t_end = t[-1] if t_end is None else t_end
    eps = 1e-12 * max(1.0, abs(t[-1]))
    if not t_start < t_end or t_start < t[0] - eps or t_end > t[-1] + eps:
        raise DomainError(f"window [{t_start}, {t_end}] empty or outside series support")
    inner = (t > t_start) & (t < t_end)
    tw = np.concatenate([[t_start], t[inner], [t_end]])
    vw = np.concatenate([[np.interp(t_start, t, v)], v[inner], [np.interp(t_end, t, v)]])
    return float(trapezoid(vw, tw) / (t_end - t_start))


# --------------------------------------------------------------------------- chaos


@dataclass
class LyapunovResult:
    """Maximal Lyapunov exponent estimate (1/s) with its convergence record.

    ``exponent`` is the least-squares slope of the accumulated log-stretch over
    the second half of the horizon, which discards the alignment transient.
    ``running`` is the classical running average ``sum(log stretch)/t``.
    """

    exponent: float
    times: np.ndarray
    log_stretch: np.ndarray
    running: np.ndarray
    renorm_interval: float
    perturbation: float

    @property
    def classic(self) -> float:
        return float(self.running[-1])

    @property
    def floor(self) -> float:
        """Smallest resolvable rate, 2 / horizon."""
        return 2.0 / self.times[-1]


@nb.njit(cache=True, nogil=True)
def _benettin(y0, d0, n_renorm, steps_per, h, g, d_tot, omega, b, chi):
    y = y0.copy()
    z = y0 + d0
    norm0 = 0.0
    for i in range(5):
        norm0 += d0[i] * d0[i]
    norm0 = math.sqrt(norm0)
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    logs = np.empty(n_renorm)
    for k in range(n_renorm):
        for _ in range(steps_per):
            _rk4_step(y, h, k1, k2, k3, k4, tmp, 0, g, d_tot, omega, b, chi, 0.0, 0.0, 0.0)
            _rk4_step(z, h, k1, k2, k3, k4, tmp, 0, g, d_tot, omega, b, chi, 0.0, 0.0, 0.0)
        dist = 0.0
        for i in range(5):
            dist += (z[i] - y[i]) ** 2
        dist = math.sqrt(dist)
        if not np.isfinite(dist) or dist == 0.0:
            logs[k] = np.nan
            return logs
        logs[k] = math.log(dist / norm0)
        for i in range(5):
            z[i] = y[i] + (z[i] - y[i]) * (norm0 / dist)
    return logs


def lyapunov_exponent(params: ModelParams, init: InitialCondition = InitialCondition(),
                      t_horizon: float = 0.05, perturbation: float = 1e-8, seed: int = 0,
                      renorm_interval: float = 50e-6, dt: float = DEFAULT_DT,
                      direction: str = "sy") -> LyapunovResult:
    """Benettin two-trajectory estimate of the maximal Lyapunov exponent.

    The shadow trajectory starts ``perturbation`` away along ``s_y``
    (``direction="random"`` draws a unit direction from ``seed`` instead)
    and is pulled back to that distance every ``renorm_interval``.
    Only the noiseless flow is considered.
    """
    if t_horizon <= 0 or perturbation <= 0 or renorm_interval <= 0:
        raise DomainError("t_horizon, perturbation and renorm_interval must be > 0")
    y0 = MfState.initial(init).as_array()
    if direction == "sy":
        d0 = np.array([0.0, perturbation, 0.0, 0.0, 0.0])
    elif direction == "random":
        from .rng import TAG_LYAPUNOV, normals
        v = np.concatenate([normals(seed, 0, 0, 0, TAG_LYAPUNOV), normals(seed, 1, 0, 0, TAG_LYAPUNOV)])[:5]
        d0 = perturbation * v / np.linalg.norm(v)
    else:
        raise DomainError(f"unknown perturbation direction {direction!r}")
    n_renorm, per = _grid(t_horizon, renorm_interval, dt)
    n_renorm -= 1
    m = _substeps(params, DisorderDraw(), dt)
    logs = _benettin(y0, d0, n_renorm, per * m, dt / m, params.g, params.delta, params.omega,
                     0.0, 0.0)
    if not np.all(np.isfinite(logs)):
        raise NumericalError("non-finite trajectory in Lyapunov estimate")
    times = renorm_interval * np.arange(1, n_renorm + 1)
    cum = np.cumsum(logs)
    half = times >= times[-1] / 2
    slope = np.polyfit(times[half], cum[half], 1)[0]
    return LyapunovResult(exponent=float(slope), times=times, log_stretch=cum,
                          running=cum / times, renorm_interval=renorm_interval,
                          perturbation=perturbation)


# --------------------------------------------------------------------------- phase diagrams

OBSERVABLES = ("time_avg_sz", "time_avg_sx", "lyapunov")


@dataclass
class PhaseDiagram:
    """Diagnostic on a (Omega/chi, Omega/delta) grid.

    ``values[i, j]`` belongs to ``omega_over_chi[i]`` (rows) and
    ``omega_over_delta[j]`` (columns). Invalid cells hold NaN and are flagged
    in ``valid``.
    """

    omega_over_delta: np.ndarray
    omega_over_chi: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    observable: str


def phase_diagram(omega_over_delta, omega_over_chi, template: ModelParams, observable: str,
                  init: InitialCondition = InitialCondition(), t_final: float = 20e-3,
                  dt_out: float = 1e-5, noise: NoiseParams | None = None,
                  t_horizon: float = 0.05, workers: int | None = None) -> PhaseDiagram:
    """Time-averaged magnetisation or Lyapunov exponent on a ratio grid.

    At each point Omega is held at ``template.omega``; delta and g are solved
    from the two ratios (delta = Omega/r1, g = sqrt(Omega delta / (4 r2))).
    Time averages are absolute (units of spin, so -N/2 means fully polarised).
    """
    if observable not in OBSERVABLES:
        raise DomainError(f"observable must be one of {OBSERVABLES}")
    r1 = np.asarray(omega_over_delta, dtype=float)
    r2 = np.asarray(omega_over_chi, dtype=float)
    for axis in (r1, r2):
        if axis.ndim != 1 or axis.size == 0 or np.any(np.diff(axis) <= 0):
            raise DomainError("grid axes must be non-empty and strictly increasing")
    noise = NoiseParams.ideal() if noise is None else noise

    def cell(k):
        i, j = divmod(k, r1.size)
        omega = template.omega
        if not (np.isfinite(r1[j]) and np.isfinite(r2[i])) or r1[j] <= 0 or r2[i] <= 0:
            return np.nan
        delta = omega / r1[j]
        if delta == 0 or not np.isfinite(delta):
            return np.nan
        p = ModelParams(template.n_spins, math.sqrt(omega * delta / (4.0 * r2[i])), delta, omega)
        if observable == "lyapunov":
            return lyapunov_exponent(p, init, t_horizon=t_horizon).exponent
        spec = MfRunSpec(p, noise, init, t_final=t_final, dt_out=dt_out, n_disorder=1)
        s = evolve_mf(spec, workers=1)
        key = "sz" if observable == "time_avg_sz" else "sx"
        return time_average(s.t, s[key])

    vals = np.array(map_items(cell, r1.size * r2.size, workers), dtype=float).reshape(r2.size, r1.size)
    return PhaseDiagram(r1, r2, vals, np.isfinite(vals), observable)
