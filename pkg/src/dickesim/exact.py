"""Exact evolution on the symmetric spin manifold times a truncated Fock space.

Basis states are |S = N/2, m> (x) |n> with flat index ``k * (n_max + 1) + n``,
``k = m + N/2``. Only collective channels are supported: the unitary part,
collective dephasing ``Gamma_B D[S_z]``, quasi-static ``B`` and ``delta``
shifts, and a thermal initial mode. Individual-spin jumps break permutation
symmetry and are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError
from .model import (DisorderDraw, InitialCondition, ModelParams, NoiseParams, SpinAxis,
                    disorder_draw)
from .parallel import map_items
from .series import FEATURES, EnsembleSeries

DEFAULT_DIM_CAP = 4096
DEFAULT_DT = 1e-7
DEFAULT_SPLIT_DT = 1e-6
TRUNCATION_THRESHOLD = 1e-8
# largest |H| h allowed per RK4 step before the step is subdivided
MAX_RK4_PHASE = 0.1
# min-eigenvalue diagnostics are skipped above this dimension
EIG_DIAG_DIM = 1024


@dataclass(frozen=True)
class HilbertSpec:
    n_spins: int
    n_max: int
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        if self.n_spins < 1:
            raise ConfigurationError("n_spins must be >= 1")
        if self.n_max < 1:
            raise ConfigurationError("n_max must be >= 1")
        if self.dim > self.dim_cap:
            raise ConfigurationError(
                f"Hilbert dimension {self.dim} exceeds cap {self.dim_cap}")

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return (self.n_spins + 1) * (self.n_max + 1)


@dataclass
class QuantumState:
    """Density matrix on a :class:`HilbertSpec` basis."""

    rho: np.ndarray
    spec: HilbertSpec

    def trace_error(self) -> float:
        return abs(np.trace(self.rho) - 1.0)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))[0])

    def purity(self) -> float:
        return float(np.real(np.vdot(self.rho, self.rho)))

    def spin_reduced(self) -> np.ndarray:
        """Collective-spin density matrix (phonons traced out)."""
        d, f = self.spec.n_spins + 1, self.spec.n_fock
        return np.einsum("anbn->ab", self.rho.reshape(d, f, d, f))

    def fock_populations(self) -> np.ndarray:
        d, f = self.spec.n_spins + 1, self.spec.n_fock
        return np.real(np.einsum("knkn->n", self.rho.reshape(d, f, d, f)))


# ----------------------------------------------------------------------------- operators


def spin_matrices(n_spins: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense (Sx, Sy, Sz) for spin S = N/2, basis ordered by m = -S..S."""
    s = n_spins / 2.0
    m = np.arange(n_spins + 1) - s
    up = np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))
    sp_ = np.diag(up, -1).astype(complex)  # S+ |m> -> |m+1>
    sx = 0.5 * (sp_ + sp_.conj().T)
    sy = -0.5j * (sp_ - sp_.conj().T)
    return sx, sy, np.diag(m).astype(complex)


def annihilation(n_max: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), 1).astype(complex)


@dataclass(frozen=True)
class _Operators:
    sx: sp.csr_matrix
    sy: sp.csr_matrix
    sz: sp.csr_matrix
    a: sp.csr_matrix
    num: sp.csr_matrix
    sz_diag: np.ndarray


def _operators(spec: HilbertSpec) -> _Operators:
    sx, sy, sz = spin_matrices(spec.n_spins)
    a = annihilation(spec.n_max)
    i_s = sp.identity(spec.n_spins + 1, format="csr")
    i_f = sp.identity(spec.n_fock, format="csr")

    def spin(op):
        return sp.kron(sp.csr_matrix(op), i_f, format="csr")

    num = sp.kron(i_s, sp.csr_matrix(a.conj().T @ a), format="csr")
    return _Operators(spin(sx), spin(sy), spin(sz), sp.kron(i_s, sp.csr_matrix(a), format="csr"),
                      num, np.repeat(np.real(np.diag(sz)), spec.n_fock))


def build_hamiltonian(spec: HilbertSpec, params: ModelParams,
                      draw: DisorderDraw = DisorderDraw()) -> sp.csr_matrix:
    """Sparse H/hbar = -(delta + dd) a^dag a + Omega Sx + (2g/sqrt N)(a + a^dag) Sz + B Sz."""
    ops = _operators(spec)
    return _hamiltonian(ops, spec, params, draw)


def _hamiltonian(ops: _Operators, spec, params, draw) -> sp.csr_matrix:
    q = ops.a + ops.a.conj().T
    h = (-(params.delta + draw.delta_shift) * ops.num + params.omega * ops.sx
         + (2.0 * params.g / math.sqrt(spec.n_spins)) * (ops.sz @ q) + draw.b_field * ops.sz)
    return sp.csr_matrix(h)


# ----------------------------------------------------------------------------- states


def thermal_populations(nbar: float, n_max: int) -> np.ndarray:
    """Truncated, renormalised thermal distribution; refuses nbar > n_max / 10."""
    if nbar < 0:
        raise DomainError("nbar must be >= 0")
    if nbar > n_max / 10.0:
        raise ConfigurationError(
            f"nbar = {nbar} too large for n_max = {n_max} (needs nbar <= n_max/10)")
    p = np.zeros(n_max + 1)
    if nbar == 0:
        p[0] = 1.0
        return p
    q = nbar / (nbar + 1.0)
    p = q ** np.arange(n_max + 1)
    return p / p.sum()


def spin_coherent(n_spins: int, axis: SpinAxis) -> np.ndarray:
    """Fully polarised state along -z or -x."""
    if axis is SpinAxis.MINUS_Z:
        v = np.zeros(n_spins + 1, dtype=complex)
        v[0] = 1.0
        return v
    sx = spin_matrices(n_spins)[0]
    _, vecs = np.linalg.eigh(sx)
    return vecs[:, 0].astype(complex)


def initial_state(spec: HilbertSpec, init: InitialCondition, nbar: float) -> QuantumState:
    psi = spin_coherent(spec.n_spins, init.spin_axis)
    rho_s = np.outer(psi, psi.conj())
    rho_f = np.diag(thermal_populations(nbar, spec.n_max)).astype(complex)
    return QuantumState(np.kron(rho_s, rho_f), spec)


# ----------------------------------------------------------------------------- evolution


def _lindblad_rk4(h: sp.csr_matrix, sz_diag: np.ndarray, gamma_b: float, interval: float,
                  dt: float):
    norm = float(abs(h).sum(axis=1).max())  # induced inf-norm bounds the spectral radius
    n_sub = max(1, int(math.ceil(interval / dt - 1e-9)))
    while norm * interval / n_sub > MAX_RK4_PHASE:
        n_sub *= 2
    hstep = interval / n_sub
    damp = -0.5 * gamma_b * (sz_diag[:, None] - sz_diag[None, :]) ** 2

    def lind(rho):
        hr = h @ rho
        out = -1j * (hr - hr.conj().T)
        if gamma_b:
            out += damp * rho
        return out

    def advance(rho):
        for _ in range(n_sub):
            k1 = lind(rho)
            k2 = lind(rho + 0.5 * hstep * k1)
            k3 = lind(rho + 0.5 * hstep * k2)
            k4 = lind(rho + hstep * k3)
            rho = rho + (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return rho

    return advance


def _strang_split(h: sp.csr_matrix, sz_diag: np.ndarray, gamma_b: float, interval: float,
                  dt: float):
    # Exact unitary step sandwiched between exact half-steps of the S_z dephasing
    # channel. Only Omega S_x fails to commute with S_z, so the splitting error
    # per step is O(gamma_b (Omega N dt)^2 dt).
    n_sub = max(1, int(math.ceil(interval / dt - 1e-9)))
    hstep = interval / n_sub
    e, v = sla.eigh(h.toarray())
    u = (v * np.exp(-1j * e * hstep)) @ v.conj().T
    ud = u.conj().T
    half = np.exp(-0.25 * gamma_b * hstep * (sz_diag[:, None] - sz_diag[None, :]) ** 2)

    def advance(rho):
        for _ in range(n_sub):
            rho = u @ (half * rho) @ ud
            rho = half * rho
        return rho

    return advance


def _unitary_eig(h: sp.csr_matrix, interval: float):
    e, v = sla.eigh(h.toarray())
    u = (v * np.exp(-1j * e * interval)) @ v.conj().T

    def advance(rho):
        return u @ rho @ u.conj().T

    return advance


def _moment_matrix(ops: _Operators, n_spins: int) -> sp.csr_matrix:
    """Sparse map vec(rho) -> (first moments, second moments) in FEATURES order.

    Row r holds vec(A^T) so that row @ vec(rho) = Tr(A rho).
    """
    r2 = math.sqrt(2.0)
    x_op = (ops.a + ops.a.conj().T) / r2
    p_op = -1j * (ops.a - ops.a.conj().T) / r2
    scale = 1.0 / math.sqrt(n_spins / 2.0)
    lin = {
        "sx": ops.sx, "sy": ops.sy, "sz": ops.sz, "x": x_op, "p": p_op, "n": ops.num,
        "v_plus": p_op + scale * ops.sz, "v_minus": p_op - scale * ops.sz,
        "w_plus": x_op + scale * ops.sy, "w_minus": x_op - scale * ops.sy,
    }
    mats = [lin[k] for k in FEATURES] + [lin[k] @ lin[k] for k in FEATURES]
    return sp.vstack([sp.csr_matrix(m.T).reshape(1, -1) for m in mats], format="csr")


@dataclass
class ExactDiagnostics:
    trace_error: float = 0.0
    hermiticity_error: float = 0.0
    min_eigenvalue: float = 0.0
    purity_error: float = float("nan")
    valid: bool = True
    invalid_time: float | None = None

    def merge(self, other: "ExactDiagnostics") -> None:
        self.trace_error = max(self.trace_error, other.trace_error)
        self.hermiticity_error = max(self.hermiticity_error, other.hermiticity_error)
        self.min_eigenvalue = min(self.min_eigenvalue, other.min_eigenvalue)
        if not math.isnan(other.purity_error):
            self.purity_error = (other.purity_error if math.isnan(self.purity_error)
                                 else max(self.purity_error, other.purity_error))
        if not other.valid:
            self.valid = False
            if self.invalid_time is None or (other.invalid_time is not None
                                             and other.invalid_time < self.invalid_time):
                self.invalid_time = other.invalid_time

    @property
    def cptp_ok(self) -> bool:
        return (self.trace_error <= 1e-8 and self.hermiticity_error <= 1e-8
                and self.min_eigenvalue >= -1e-8)


def _check_noise(noise: NoiseParams) -> None:
    if noise.has_individual_channels:
        raise ConfigurationError(
            "exact oracle supports collective channels only; set gamma_tot = 0 "
            "(individual spin jumps break permutation symmetry)")


def _single_draw(spec: HilbertSpec, ops: _Operators, params: ModelParams, noise: NoiseParams,
                 init: InitialCondition, draw: DisorderDraw, n_out: int, dt_out: float,
                 dt: float, method: str, keep_states: bool):
    h = _hamiltonian(ops, spec, params, draw)
    moments_of = _moment_matrix(ops, spec.n_spins)
    if method == "eig":
        prop = _unitary_eig(h, dt_out)
    elif method == "split":
        prop = _strang_split(h, ops.sz_diag, noise.gamma_B, dt_out, dt)
    else:
        prop = _lindblad_rk4(h, ops.sz_diag, noise.gamma_B, dt_out, dt)
    state = initial_state(spec, init, noise.nbar)
    rho = state.rho
    pure = noise.nbar == 0 and noise.gamma_B == 0
    diag = ExactDiagnostics(min_eigenvalue=0.0)
    first = np.empty((n_out, len(FEATURES)))
    second = np.empty((n_out, len(FEATURES)))
    extra = np.empty((n_out, 2))  # purity, top-two Fock population
    states = []
    check_eigs = spec.dim <= EIG_DIAG_DIM
    for k in range(n_out):
        if k > 0:
            rho = prop(rho)
        qs = QuantumState(rho, spec)
        moments = np.real(moments_of @ rho.ravel())
        first[k] = moments[:len(FEATURES)]
        second[k] = moments[len(FEATURES):]
        pops = qs.fock_populations()
        top = float(pops[-2:].sum())
        purity = qs.purity()
        extra[k] = purity, top
        diag.trace_error = max(diag.trace_error, qs.trace_error())
        diag.hermiticity_error = max(diag.hermiticity_error, qs.hermiticity_error())
        if check_eigs:
            diag.min_eigenvalue = min(diag.min_eigenvalue, qs.min_eigenvalue())
        if pure:
            err = abs(purity - 1.0)
            diag.purity_error = err if math.isnan(diag.purity_error) else max(diag.purity_error, err)
        if top > TRUNCATION_THRESHOLD and diag.valid:
            diag.valid = False
            diag.invalid_time = k * dt_out
        if keep_states:
            states.append(rho.copy())
    if not check_eigs:
        diag.min_eigenvalue = float("nan")
    return first, second, extra, diag, states


def evolve_exact(spec: HilbertSpec, params: ModelParams, noise: NoiseParams = NoiseParams.ideal(),
                 init: InitialCondition = InitialCondition(), t_final: float = 1e-3,
                 dt_out: float = 1e-5, n_disorder: int = 1, seed: int = 0,
                 dt: float | None = None, method: str = "auto", keep_states: bool = False,
                 workers: int | None = None) -> EnsembleSeries:
    """Disorder-averaged exact time series.

    ``method`` is one of

    * ``"rk4"``: master equation by RK4, step ``dt`` (default 0.1 us),
      subdivided further if the Hamiltonian norm demands it;
    * ``"split"``: Strang splitting of the exact unitary and the exact
      dephasing channel, step ``dt`` (default 1 us); CPTP by construction;
    * ``"eig"``: exact propagator from a dense eigendecomposition, unitary only;
    * ``"auto"``: ``eig`` when Gamma_B = 0, otherwise ``split``.
 Quasi-static draws reuse the ensemble-member streams of the
    trajectory solvers, so draw ``i`` matches TWA trajectory ``i``'s field.
    When both widths vanish a single draw is used.

    ``var`` holds the total variance (quantum plus disorder), ``stderr`` the
    standard error of the mean over draws. Diagnostics sit in
    ``series.flags["diagnostics"]``; ``mean["purity"]`` and
    ``mean["top_fock"]`` track Tr(rho^2) and the top-two Fock population.
    """
    _check_noise(noise)
    if method not in ("auto", "rk4", "split", "eig"):
        raise ConfigurationError(f"unknown method {method!r}; use auto, rk4, split or eig")
    if method == "auto":
        method = "eig" if noise.gamma_B == 0 else "split"
    if dt is None:
        dt = DEFAULT_DT if method == "rk4" else DEFAULT_SPLIT_DT
    if not (t_final > 0 and dt_out > 0 and dt > 0):
        raise DomainError("t_final, dt_out and dt must be > 0")
    if method == "eig" and noise.gamma_B != 0:
        raise ConfigurationError("eig method requires gamma_B = 0")
    n_out = int(round(t_final / dt_out)) + 1
    if noise.sigma_B == 0 and noise.sigma_delta == 0:
        n_disorder = 1
    if n_disorder < 1:
        raise DomainError("n_disorder must be >= 1")
    ops = _operators(spec)

    def one(i):
        draw = disorder_draw(noise, seed, i)
        return _single_draw(spec, ops, params, noise, init, draw, n_out, dt_out, dt, method,
                            keep_states)

    results = map_items(one, n_disorder, workers)
    firsts = np.stack([r[0] for r in results])
    seconds = np.stack([r[1] for r in results])
    extras = np.stack([r[2] for r in results])
    diag = ExactDiagnostics(min_eigenvalue=0.0)
    for r in results:
        diag.merge(r[3])
    mean = firsts.mean(axis=0)
    var = seconds.mean(axis=0) - mean ** 2
    if n_disorder > 1:
        se = firsts.std(axis=0, ddof=1) / math.sqrt(n_disorder)
    else:
        se = np.full_like(mean, np.nan)
    t = np.arange(n_out) * dt_out
    series = EnsembleSeries(
        t=t,
        mean={k: mean[:, i] for i, k in enumerate(FEATURES)},
        stderr={k: se[:, i] for i, k in enumerate(FEATURES)},
        var={k: var[:, i] for i, k in enumerate(FEATURES)},
        n_samples=n_disorder,
        n_spins=spec.n_spins,
        flags={"solver": "exact", "method": method, "diagnostics": diag,
               "valid": diag.valid, "invalid_time": diag.invalid_time},
    )
    series.mean["purity"] = extras[:, :, 0].mean(axis=0)
    series.mean["top_fock"] = extras[:, :, 1].max(axis=0)
    if keep_states:
        series.flags["states"] = [r[4] for r in results]
    return series


# ----------------------------------------------------------------------------- single-spin purity


def symmetric_embedding(n_spins: int) -> np.ndarray:
    """Isometry from Dicke states |N/2, m> into the 2^N product basis.

    Column k is the normalised uniform superposition of bit strings with k
    up-spins (bit value 1 = up), i.e. m = k - N/2.
    """
    dim = 2 ** n_spins
    ups = np.array([bin(i).count("1") for i in range(dim)])
    emb = np.zeros((dim, n_spins + 1), dtype=complex)
    for k in range(n_spins + 1):
        mask = ups == k
        emb[mask, k] = 1.0 / math.sqrt(mask.sum())
    return emb


def single_spin_reduced(rho_spin: np.ndarray, n_spins: int) -> np.ndarray:
    """2x2 density matrix of one spin, by explicit partial trace over the rest."""
    if n_spins > 12:
        raise ConfigurationError("partial trace via product embedding limited to N <= 12")
    emb = symmetric_embedding(n_spins)
    full = emb @ rho_spin @ emb.conj().T
    rest = 2 ** (n_spins - 1)
    return np.einsum("aibi->ab", full.reshape(2, rest, 2, rest))


def single_spin_purity(rho_spin: np.ndarray, n_spins: int) -> float:
    r = single_spin_reduced(rho_spin, n_spins)
    return float(np.real(np.trace(r @ r)))


# ----------------------------------------------------------------------------- oracle comparison


@dataclass
class OracleReport:
    """Deviation of TWA estimates from the exact oracle."""

    t: np.ndarray
    observables: tuple
    max_dev: dict
    rms_dev: dict
    twa_stderr: dict
    tolerance: dict
    passed: dict
    divergence_time: dict
    exact: EnsembleSeries = field(repr=False)
    twa: EnsembleSeries = field(repr=False)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def rows(self) -> list[dict]:
        return [{"observable": k, "max_dev": self.max_dev[k], "rms_dev": self.rms_dev[k],
                 "max_twa_stderr": float(np.nanmax(self.twa_stderr[k])),
                 "abs_floor": self.tolerance[k],
                 "divergence_time_ms": (float("nan") if self.divergence_time[k] is None
                                        else self.divergence_time[k] * 1e3),
                 "passed": self.passed[k]} for k in self.observables]


def oracle_vs_twa(spec: HilbertSpec, params: ModelParams, noise: NoiseParams = NoiseParams.ideal(),
                  init: InitialCondition = InitialCondition(), t_final: float = 1e-3,
                  dt_out: float = 2e-5, n_traj: int = 10_000, seed: int = 0,
                  observables=("sx", "sy", "sz", "n"), rel_floor: float = 0.05,
                  n_sigma: float = 3.0, n_disorder: int = 100, twa_dt: float = 2e-6,
                  workers: int | None = None) -> OracleReport:
    """Run both solvers on the oracle-supported subset and compare.

    A point passes when |TWA - exact| <= max(n_sigma * stderr, rel_floor * N).
    The divergence time is the first output time violating that bound.
    """
    from .twa import TwaRunSpec, run_ensemble

    _check_noise(noise)
    if params.n_spins != spec.n_spins:
        raise ConfigurationError("HilbertSpec and ModelParams disagree on N")
    if n_traj < 1:
        raise ConfigurationError("n_traj must be >= 1")
    exact = evolve_exact(spec, params, noise, init, t_final, dt_out, n_disorder, seed,
                         workers=workers)
    twa = run_ensemble(TwaRunSpec(params, noise, init, n_traj=n_traj, dt=twa_dt,
                                  t_final=t_final, dt_out=dt_out, seed=seed), workers)
    floor = rel_floor * spec.n_spins
    max_dev, rms_dev, se_d, tol, passed, div = {}, {}, {}, {}, {}, {}
    for k in observables:
        dev = np.abs(twa.mean[k] - exact.mean[k])
        se = twa.stderr[k]
        bound = np.maximum(n_sigma * np.nan_to_num(se, nan=0.0), floor)
        bad = np.nonzero(dev > bound)[0]
        max_dev[k] = float(dev.max())
        rms_dev[k] = float(np.sqrt(np.mean(dev ** 2)))
        se_d[k] = se
        tol[k] = floor
        passed[k] = bad.size == 0
        div[k] = None if bad.size == 0 else float(exact.t[bad[0]])
    return OracleReport(exact.t, tuple(observables), max_dev, rms_dev, se_d, tol, passed, div,
                        exact, twa)
