"""Discrete, dissipative truncated-Wigner trajectories.

Each trajectory carries N classical spin vectors (components +-1/2 at t=0)
and one complex mode amplitude, and is advanced with Stratonovich SDEs by a
semi-implicit midpoint rule (fixed number of fixed-point sweeps). Noise
channels per spin j, with ``kd = G_ud - G_du``::

    dS_z = [Omega S_y - 3/2 kd (S_z + 1/2)] dt + sqrt(2 G_du)(S_y dW_x - S_x dW_y)
           + sqrt(kd) (S_z + 1/2) dW_d
    dS_y = [-Omega S_z + G_j S_x] dt - sqrt(2 G_du) S_z dW_x + sqrt(G_z) S_x dW_z
           + sqrt(G_B) S_x dW_B + sqrt(kd) S_x dW_d
    dS_x = -G_j S_y dt + sqrt(2 G_du) S_z dW_y - sqrt(G_z) S_y dW_z
           - sqrt(G_B) S_y dW_B - sqrt(kd) S_y dW_d
    dalpha = i [(delta + delta_shift) alpha - (2g/sqrt(N)) sum_j S_z,j] dt

with ``G_j = (2g/sqrt(N)) 2 Re(alpha) + B``. ``dW_B`` is shared by all spins.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .errors import DomainError, NumericalError
from .model import DisorderDraw, InitialCondition, ModelParams, NoiseParams
from .parallel import map_blocks
from .rng import (LANE_GLOBAL, TAG_COLLECTIVE_NOISE, TAG_SPIN_INIT, TAG_SPIN_NOISE,
                  mode_disorder_normals, normal4, philox4x32, split_seed)
from .series import RAW_COLUMNS, EnsembleSeries, reduce_blocks

DEFAULT_DT = 2e-6
DEFAULT_ITERATIONS = 4
BLOCK_SIZE = 256


@dataclass(frozen=True)
class TwaRunSpec:
    """Ensemble run description.

    ``record`` may contain ``"samples"`` to keep the raw per-trajectory
    records (collective spin totals and alpha at every output time).
    ``noise_refinement`` builds each Wiener increment from that many finer
    increments, so a run with ``dt`` and refinement 2 shares its Brownian
    paths with a run at ``dt/2``.
    """

    params: ModelParams
    noise: NoiseParams = field(default_factory=NoiseParams)
    init: InitialCondition = field(default_factory=InitialCondition)
    n_traj: int = 1000
    dt: float = DEFAULT_DT
    t_final: float = 3e-3
    dt_out: float = 2e-5
    seed: int = 0
    record: frozenset = frozenset()
    n_iter: int = DEFAULT_ITERATIONS
    noise_refinement: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be > 0")
        if not self.dt_out >= self.dt * (1 - 1e-12):
            raise DomainError("dt_out must be >= dt")
        if not self.t_final > 0:
            raise DomainError("t_final must be > 0")
        if self.n_traj < 1:
            raise DomainError("n_traj must be >= 1")
        if self.n_iter < 1 or self.noise_refinement < 1:
            raise DomainError("n_iter and noise_refinement must be >= 1")
        object.__setattr__(self, "record", frozenset(self.record))

    def grid(self) -> tuple[int, int]:
        """(number of output times, SDE steps per output)."""
        per = self.dt_out / self.dt
        n_per = int(round(per))
        if abs(per - n_per) > 1e-9 * per:
            raise DomainError("dt_out must be an integer multiple of dt")
        return int(round(self.t_final / self.dt_out)) + 1, n_per


@dataclass(frozen=True)
class TrajectoryState:
    """One semiclassical realisation.

    ``index``/``seed``/``step`` address the counter-based noise stream, so
    :func:`step_sde` is a pure function of the state.
    """

    spins: np.ndarray
    alpha: complex
    draw: DisorderDraw
    index: int = 0
    seed: int = 0
    step: int = 0

    @property
    def totals(self) -> np.ndarray:
        return self.spins.sum(axis=0)


# ----------------------------------------------------------------------------- kernels


@nb.njit(cache=True, nogil=True)
def _init_traj(idx, k0, k1, spins, axis, classical, mode_sd, sig_b, sig_d):
    n = spins.shape[0]
    a = 1  # y is transverse for both initial axes
    b = 0 if axis == 2 else 2  # second transverse component: x for z-init, z for x-init
    for j in range(n):
        spins[j, 0] = 0.0
        spins[j, 1] = 0.0
        spins[j, 2] = 0.0
        spins[j, axis] = -0.5
        if not classical:
            r0, r1, _, _ = philox4x32(idx, 0, j, TAG_SPIN_INIT, k0, k1)
            spins[j, a] = 0.5 if (r0 >> np.uint64(31)) else -0.5
            spins[j, b] = 0.5 if (r1 >> np.uint64(31)) else -0.5
    z0, z1, z2, z3 = mode_disorder_normals(idx, k0, k1)
    return mode_sd * z0, mode_sd * z1, sig_b * z2, sig_d * z3


@nb.njit(cache=True, nogil=True)
def _draw_increments(idx, step, k0, k1, n, dt, refine, individual, collective, dw):
    """Fill dw[j, 0:4] = (dWx, dWy, dWz, dWd); return dW_B."""
    sub = math.sqrt(dt / refine)
    if individual:
        for j in range(n):
            dw[j, 0] = 0.0
            dw[j, 1] = 0.0
            dw[j, 2] = 0.0
            dw[j, 3] = 0.0
            for r in range(refine):
                z0, z1, z2, z3 = normal4(idx, step * refine + r, j, TAG_SPIN_NOISE, k0, k1)
                dw[j, 0] += sub * z0
                dw[j, 1] += sub * z1
                dw[j, 2] += sub * z2
                dw[j, 3] += sub * z3
    dwb = 0.0
    if collective:
        for r in range(refine):
            z0, _, _, _ = normal4(idx, step * refine + r, LANE_GLOBAL, TAG_COLLECTIVE_NOISE, k0, k1)
            dwb += sub * z0
    return dwb


@nb.njit(cache=True, nogil=True)
def _midpoint_step(s0, s1, a0r, a0i, dw, dwb, n_iter, c, b, d_tot, omega, sq2du, kd, sqkd,
                   sqz, sqb, dt):
    """Semi-implicit midpoint step; writes spins into s1, returns new alpha."""
    n = s0.shape[0]
    for j in range(n):
        s1[j, 0] = s0[j, 0]
        s1[j, 1] = s0[j, 1]
        s1[j, 2] = s0[j, 2]
    a1r = a0r
    a1i = a0i
    for _ in range(n_iter):
        amr = 0.5 * (a0r + a1r)
        ami = 0.5 * (a0i + a1i)
        G = 2.0 * c * amr + b
        sumz = 0.0
        for j in range(n):
            mx = 0.5 * (s0[j, 0] + s1[j, 0])
            my = 0.5 * (s0[j, 1] + s1[j, 1])
            mz = 0.5 * (s0[j, 2] + s1[j, 2])
            sumz += mz
            wx = dw[j, 0]
            wy = dw[j, 1]
            wz = dw[j, 2]
            wd = dw[j, 3]
            zp = mz + 0.5
            dz = ((omega * my - 1.5 * kd * zp) * dt + sq2du * (my * wx - mx * wy)
                  + sqkd * zp * wd)
            dy = ((-omega * mz + G * mx) * dt - sq2du * mz * wx + sqz * mx * wz
                  + sqb * mx * dwb + sqkd * mx * wd)
            dx = (-G * my * dt + sq2du * mz * wy - sqz * my * wz - sqb * my * dwb
                  - sqkd * my * wd)
            s1[j, 0] = s0[j, 0] + dx
            s1[j, 1] = s0[j, 1] + dy
            s1[j, 2] = s0[j, 2] + dz
        a1r = a0r - d_tot * ami * dt
        a1i = a0i + (d_tot * amr - c * sumz) * dt
    return a1r, a1i


@nb.njit(cache=True, nogil=True)
def _run_block(k0, k1, traj0, n_block, n, axis, classical, mode_sd, sig_b, sig_d, g, delta,
               omega, gz, gud, gdu, gb, dt, n_out, steps_per_out, refine, n_iter, out):
    """Simulate trajectories traj0..traj0+n_block-1 into out[b, k, :5].

    Returns (-1, -1) on success or (trajectory, step) of the first non-finite state.
    """
    c = 2.0 * g / math.sqrt(n)
    kd = gud - gdu
    sq2du = math.sqrt(2.0 * gdu)
    sqkd = math.sqrt(kd) if kd > 0 else 0.0
    sqz = math.sqrt(gz)
    sqb = math.sqrt(gb)
    individual = gdu > 0 or kd > 0 or gz > 0
    collective = gb > 0
    s0 = np.empty((n, 3))
    s1 = np.empty((n, 3))
    dw = np.zeros((n, 4))
    for bi in range(n_block):
        idx = traj0 + bi
        ar, ai, bf, ds = _init_traj(idx, k0, k1, s0, axis, classical, mode_sd, sig_b, sig_d)
        d_tot = delta + ds
        step = 0
        for k in range(n_out):
            if k > 0:
                for _ in range(steps_per_out):
                    dwb = _draw_increments(idx, step, k0, k1, n, dt, refine, individual,
                                           collective, dw)
                    ar, ai = _midpoint_step(s0, s1, ar, ai, dw, dwb, n_iter, c, bf, d_tot,
                                            omega, sq2du, kd, sqkd, sqz, sqb, dt)
                    s0, s1 = s1, s0
                    step += 1
            tx = 0.0
            ty = 0.0
            tz = 0.0
            for j in range(n):
                tx += s0[j, 0]
                ty += s0[j, 1]
                tz += s0[j, 2]
            out[bi, k, 0] = tx
            out[bi, k, 1] = ty
            out[bi, k, 2] = tz
            out[bi, k, 3] = ar
            out[bi, k, 4] = ai
            if not (np.isfinite(tx) and np.isfinite(ty) and np.isfinite(tz)
                    and np.isfinite(ar) and np.isfinite(ai)):
                return idx, step
    return -1, -1


# ----------------------------------------------------------------------------- public API


def _mode_sd(noise: NoiseParams, classical: bool, nbar_scale: float = 1.0) -> float:
    if classical:
        return math.sqrt(nbar_scale * noise.nbar / 2.0)
    return math.sqrt(noise.nbar / 2.0 + 0.25)


def sample_initial(spec: TwaRunSpec, trajectory_index: int, classical: bool = False,
                   nbar_scale: float = 1.0) -> TrajectoryState:
    """Wigner sample of the initial state for one trajectory.

    The initial-axis component of every spin is -1/2 and the two transverse
    components are independent fair +-1/2. Re and Im of alpha are normal with
    variance nbar/2 + 1/4. Everything is fixed by ``(seed, trajectory_index)``.
    """
    k0, k1 = split_seed(spec.seed)
    spins = np.empty((spec.params.n_spins, 3))
    ar, ai, bf, ds = _init_traj(trajectory_index, k0, k1, spins, spec.init.spin_axis.index,
                                classical, _mode_sd(spec.noise, classical, nbar_scale),
                                spec.noise.sigma_B, spec.noise.sigma_delta)
    return TrajectoryState(spins, complex(ar, ai), DisorderDraw(bf, ds), trajectory_index,
                           spec.seed, 0)


def step_sde(state: TrajectoryState, params: ModelParams, noise: NoiseParams, dt: float,
             increments: tuple | None = None, n_iter: int = DEFAULT_ITERATIONS) -> TrajectoryState:
    """Advance one trajectory by one SDE step.

    ``increments`` may supply ``(dW[N, 4], dW_B)`` explicitly, columns
    (x, y, z, d); otherwise they are drawn from the state's noise stream.
    """
    if not dt > 0:
        raise DomainError("dt must be > 0")
    n = params.n_spins
    gz, gud, gdu, gb = noise.gamma_z, noise.gamma_ud, noise.gamma_du, noise.gamma_B
    kd = gud - gdu
    if increments is None:
        k0, k1 = split_seed(state.seed)
        dw = np.zeros((n, 4))
        dwb = _draw_increments(state.index, state.step, k0, k1, n, dt, 1,
                               gdu > 0 or kd > 0 or gz > 0, gb > 0, dw)
    else:
        dw = np.asarray(increments[0], dtype=float).reshape(n, 4)
        dwb = float(increments[1])
    s1 = np.empty_like(state.spins)
    ar, ai = _midpoint_step(np.ascontiguousarray(state.spins, dtype=float), s1,
                            state.alpha.real, state.alpha.imag, dw, dwb, n_iter,
                            2.0 * params.g / math.sqrt(n), state.draw.b_field,
                            params.delta + state.draw.delta_shift, params.omega,
                            math.sqrt(2.0 * gdu), kd, math.sqrt(max(kd, 0.0)), math.sqrt(gz),
                            math.sqrt(gb), dt)
    if not (np.all(np.isfinite(s1)) and math.isfinite(ar) and math.isfinite(ai)):
        raise NumericalError(
            f"non-finite state in trajectory {state.index} at t={(state.step + 1) * dt:.6g} s",
            time=(state.step + 1) * dt, trajectory=state.index)
    return replace(state, spins=s1, alpha=complex(ar, ai), step=state.step + 1)


def _run(spec: TwaRunSpec, classical: bool, nbar_scale: float, workers) -> EnsembleSeries:
    p, noise = spec.params, spec.noise
    n_out, per = spec.grid()
    k0, k1 = split_seed(spec.seed)
    mode_sd = _mode_sd(noise, classical, nbar_scale)

    def block(a, b):
        out = np.empty((b - a, n_out, 5))
        bad_traj, bad_step = _run_block(
            k0, k1, a, b - a, p.n_spins, spec.init.spin_axis.index, classical, mode_sd,
            noise.sigma_B, noise.sigma_delta, p.g, p.delta, p.omega, noise.gamma_z,
            noise.gamma_ud, noise.gamma_du, noise.gamma_B, spec.dt, n_out, per,
            spec.noise_refinement, spec.n_iter, out)
        if bad_traj >= 0:
            raise NumericalError(
                f"non-finite state in trajectory {bad_traj} at t={bad_step * spec.dt:.6g} s",
                time=bad_step * spec.dt, trajectory=int(bad_traj))
        return out

    blocks = map_blocks(block, spec.n_traj, BLOCK_SIZE, workers)
    t = np.arange(n_out) * spec.dt_out
    series = reduce_blocks(t, blocks, p.n_spins, weyl_offset=0.0 if classical else 0.5,
                           keep_samples="samples" in spec.record)
    series.flags["solver"] = "twa_classical" if classical else "twa"
    series.flags["raw_columns"] = RAW_COLUMNS
    return series


def run_ensemble(spec: TwaRunSpec, workers: int | None = None) -> EnsembleSeries:
    """Truncated-Wigner ensemble averages on the output grid.

    Spin means are collective totals; ``x``/``p`` are sqrt(2) Re/Im alpha;
    ``n`` is the Weyl-corrected phonon number E|alpha|^2 - 1/2. Results are
    bit-identical for a fixed seed regardless of ``workers``.
    """
    return _run(spec, False, 1.0, workers)


def classical_thermal_run(spec: TwaRunSpec, nbar_scale: float = 1.0,
                          workers: int | None = None) -> EnsembleSeries:
    """Same engine without quantum noise in the initial state.

    Spins start at their mean-field values and the mode is sampled with
    variance ``nbar_scale * nbar / 2`` per quadrature (no vacuum term); the
    reported ``n`` is E|alpha|^2 without Weyl correction.
    """
    if nbar_scale < 0:
        raise DomainError("nbar_scale must be >= 0")
    return _run(spec, True, nbar_scale, workers)
