"""Derived quantities: hybrid quadratures, squeezing, histograms, Renyi proxy,
order-parameter tables, Holstein-Primakoff baselines and phase-space
reconstruction from a smoothed magnetisation trace."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import make_smoothing_spline

from .errors import ConfigurationError, DomainError
from .meanfield import time_average
from .model import renyi_entropy
from .series import EnsembleSeries

#: composite quadrature labels and their EnsembleSeries keys
QUADRATURES = {"V+": "v_plus", "V-": "v_minus", "W+": "w_plus", "W-": "w_minus"}


def _key(which: str) -> str:
    if which in QUADRATURES:
        return QUADRATURES[which]
    if which in QUADRATURES.values():
        return which
    raise ConfigurationError(f"unknown quadrature {which!r}; use one of {sorted(QUADRATURES)}")


@dataclass(frozen=True)
class QuadratureSample:
    """Per-trajectory phonon and scaled spin quadratures, shape (n_traj, n_t)."""

    x: np.ndarray
    p: np.ndarray
    sy_scaled: np.ndarray
    sz_scaled: np.ndarray

    @classmethod
    def from_series(cls, series: EnsembleSeries) -> "QuadratureSample":
        if series.samples is None:
            raise ConfigurationError(
                "per-trajectory samples were not recorded; rerun with record={'samples'}")
        raw = series.samples
        scale = 1.0 / math.sqrt(series.n_spins / 2.0)
        return cls(math.sqrt(2.0) * raw[..., 3], math.sqrt(2.0) * raw[..., 4],
                   raw[..., 1] * scale, raw[..., 2] * scale)

    def composite(self, which: str) -> np.ndarray:
        key = _key(which)
        return {"v_plus": self.p + self.sz_scaled, "v_minus": self.p - self.sz_scaled,
                "w_plus": self.x + self.sy_scaled, "w_minus": self.x - self.sy_scaled}[key]


@dataclass(frozen=True)
class QuadratureSeries:
    t: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    stderr: np.ndarray
    var_stderr: np.ndarray


def composite_quadrature_series(series: EnsembleSeries, which: str) -> QuadratureSeries:
    """Mean and plain sample variance of V+-, W+- over the ensemble.

    The variance is SQL-normalised (vacuum plus coherent spin gives 1) and is
    the symmetric-ordered quantum variance for TWA input.
    """
    key = _key(which)
    if key not in series.var:
        raise ConfigurationError(f"estimator {which} not recorded in this series")
    return QuadratureSeries(series.t, series.mean[key], series.var[key], series.stderr[key],
                            series.var_stderr(key))


def squeezing_db(var_now, reference=1.0):
    """10 log10(reference / var); positive means reduced noise."""
    v = np.asarray(var_now, dtype=float)
    r = np.asarray(reference, dtype=float)
    if np.any(~(v > 0)) or np.any(~(r > 0)):
        raise DomainError("variances must be > 0 for a dB ratio")
    out = 10.0 * np.log10(r / v)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SqueezingSummary:
    which: str
    t_min: float
    var_min: float
    var_initial: float
    db_sql: float
    db_thermal: float

    @property
    def ratio(self) -> float:
        return self.var_min / self.var_initial


def squeezing_summary(series: EnsembleSeries, which: str = "V+",
                      t_max: float | None = None) -> SqueezingSummary:
    """Deepest squeezing of a composite quadrature, against both references.

    ``db_sql`` is relative to the vacuum value 1, ``db_thermal`` to the
    variance at t = 0.
    """
    q = composite_quadrature_series(series, which)
    mask = np.ones_like(q.t, dtype=bool) if t_max is None else q.t <= t_max
    k = int(np.argmin(np.where(mask, q.var, np.inf)))
    v0, vmin = float(q.var[0]), float(q.var[k])
    return SqueezingSummary(which, float(q.t[k]), vmin, v0, squeezing_db(vmin, 1.0),
                            squeezing_db(vmin, v0))


@dataclass(frozen=True)
class Histogram2D:
    counts: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray
    axes: tuple
    t: float
    correlation: float


HIST_BINS = 61
HIST_SPAN = 5.0
HIST_SAMPLES = 5000


def joint_histogram(series: EnsembleSeries, t: float, axes=("V+", "V-"), bins: int = HIST_BINS,
                    n_samples: int = HIST_SAMPLES) -> Histogram2D:
    """2-D histogram of two composite quadratures at time ``t``.

    The grid spans +-5 sample standard deviations of each axis at t = 0,
    centred on zero, so frames at different times share bins. The first
    ``n_samples`` trajectories are used.
    """
    qs = QuadratureSample.from_series(series)
    avail = qs.x.shape[0]
    if n_samples > avail:
        raise ConfigurationError(
            f"{n_samples} samples requested but only {avail} trajectories recorded; "
            "rerun with n_traj >= n_samples")
    k = series.at(t)
    a = qs.composite(axes[0])[:n_samples]
    b = qs.composite(axes[1])[:n_samples]
    edges = []
    for c in (a, b):
        sd0 = float(np.std(c[:, 0]))
        half = HIST_SPAN * sd0 if sd0 > 0 else 1.0
        edges.append(np.linspace(-half, half, bins + 1))
    counts, xe, ye = np.histogram2d(a[:, k], b[:, k], bins=edges)
    sa, sb = np.std(a[:, k]), np.std(b[:, k])
    corr = float(np.mean((a[:, k] - a[:, k].mean()) * (b[:, k] - b[:, k].mean())) / (sa * sb)) \
        if sa > 0 and sb > 0 else float("nan")
    return Histogram2D(counts, xe, ye, tuple(axes), float(series.t[k]), corr)


# ----------------------------------------------------------------------------- HP baselines


@dataclass(frozen=True)
class HpBaseline:
    """Two-mode-squeezing prediction valid for Omega = delta >> g from vacuum."""

    g: float
    t: float | np.ndarray
    validity: str = "Omega = delta >> g, vacuum initial state, N large"


def _gt(b: HpBaseline):
    t = np.asarray(b.t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    return b.g * t


def hp_occupation(baseline: HpBaseline):
    """<n>(t) = sinh^2(g t)."""
    out = np.sinh(_gt(baseline)) ** 2
    return float(out) if out.ndim == 0 else out


def hp_squeezed_variance(baseline: HpBaseline):
    """SQL-normalised variance of the squeezed hybrid quadratures, e^{-2gt}."""
    out = np.exp(-2.0 * _gt(baseline))
    return float(out) if out.ndim == 0 else out


def hp_antisqueezed_variance(baseline: HpBaseline):
    out = np.exp(2.0 * _gt(baseline))
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------------------- Renyi proxy


def renyi_series(sx_series, n_spins: int) -> np.ndarray:
    """Second-order Renyi entropy of one spin (bits) from <Sx>(t)."""
    return np.array([renyi_entropy(float(v), n_spins) for v in np.asarray(sx_series)])


# ----------------------------------------------------------------------------- phase space


@dataclass(frozen=True)
class PhaseSpaceCurve:
    t: np.ndarray
    sz: np.ndarray
    sy: np.ndarray


def reconstruct_phase_space(t, sz, variance, omega: float, spline_p: float = 0.98,
                            truncate: float = 1e-4) -> PhaseSpaceCurve:
    """<Sy>(t) from a noisy <Sz>(t) trace using d<Sz>/dt = Omega <Sy>.

    The trace is mirrored about t = 0 (which forces a turning point there),
    fitted with the cubic smoothing spline minimising
    ``p sum w_i (y_i - f(t_i))^2 + (1 - p) int f''^2`` with time in ms and
    ``w_i = 1 / variance_i``, and differentiated analytically. The final
    ``truncate`` seconds, where the spline lacks support, are dropped.
    """
    if omega == 0 or not math.isfinite(omega):
        raise DomainError("omega must be finite and nonzero")
    if not 0 < spline_p <= 1:
        raise DomainError("spline_p must lie in (0, 1]")
    t = np.asarray(t, dtype=float)
    sz = np.asarray(sz, dtype=float)
    var = np.asarray(variance, dtype=float).copy()
    if t.ndim != 1 or t.size < 3 or t[0] != 0:
        raise DomainError("need a 1-D time grid starting at t = 0 with >= 3 points")
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise DomainError("variances must be finite and >= 0")
    if np.any(var == 0):
        pos = var[var > 0]
        fill = float(np.median(pos)) if pos.size else 1.0
        warnings.warn("zero variance in spline weights; substituting the series median",
                      RuntimeWarning, stacklevel=2)
        var[var == 0] = fill
    t_ms = t * 1e3
    tt = np.concatenate([-t_ms[:0:-1], t_ms])
    yy = np.concatenate([sz[:0:-1], sz])
    ww = np.concatenate([1.0 / var[:0:-1], 1.0 / var])
    if spline_p == 1:
        from scipy.interpolate import make_interp_spline
        spl = make_interp_spline(tt, yy, k=3)
    else:
        spl = make_smoothing_spline(tt, yy, w=ww, lam=(1.0 - spline_p) / spline_p)
    keep = t <= t[-1] - truncate + 1e-12
    deriv = spl.derivative()(t_ms[keep]) * 1e3  # per ms -> per s
    return PhaseSpaceCurve(t[keep], spl(t_ms[keep]), deriv / omega)


# ----------------------------------------------------------------------------- order parameters


@dataclass(frozen=True)
class OrderParameterTable:
    control: np.ndarray
    observable: str
    value_avg: np.ndarray
    value_avg_per_n: np.ndarray
    n_avg: np.ndarray
    window: tuple

    def rows(self) -> list[dict]:
        return [{"control": float(c), f"{self.observable}_timeavg": float(v),
                 f"{self.observable}_timeavg_per_n": float(vn), "n_timeavg": float(na)}
                for c, v, vn, na in zip(self.control, self.value_avg, self.value_avg_per_n,
                                        self.n_avg)]


def order_parameter_sweep(runs: Sequence[tuple[float, EnsembleSeries]],
                          window: tuple = (None, None), observable: str = "sz"
                          ) -> OrderParameterTable:
    """Time-averaged magnetisation and phonon number per cut point."""
    if observable not in ("sz", "sx"):
        raise DomainError("observable must be 'sz' or 'sx'")
    ctrl, vals, per_n, nav = [], [], [], []
    for c, s in runs:
        if observable not in s.mean or "n" not in s.mean:
            raise ConfigurationError("series lacks the requested observables")
        v = time_average(s.t, s.mean[observable], *window)
        ctrl.append(c)
        vals.append(v)
        per_n.append(v / s.n_spins)
        nav.append(time_average(s.t, s.mean["n"], *window))
    return OrderParameterTable(np.array(ctrl), observable, np.array(vals), np.array(per_n),
                               np.array(nav), tuple(window))


def knee_location(control, values) -> float:
    """Control value at the largest |second difference| of ``values``."""
    c = np.asarray(control, dtype=float)
    v = np.asarray(values, dtype=float)
    if c.size < 3:
        raise DomainError("need at least 3 points")
    d2 = np.abs(v[2:] - 2.0 * v[1:-1] + v[:-2])
    return float(c[1 + int(np.argmax(d2))])


def knee_width(control, values, upper: float = 0.75, lower: float = 0.25) -> float:
    """Control span over which |values| falls from ``upper`` to ``lower`` of its
    first (ordered-phase) value, with linear interpolation between points."""
    c = np.asarray(control, dtype=float)
    m = np.abs(np.asarray(values, dtype=float))
    ref = m[0]
    if not ref > 0:
        raise DomainError("first value must be nonzero")

    def crossing(level):
        target = level * ref
        below = np.nonzero(m <= target)[0]
        if below.size == 0 or below[0] == 0:
            raise DomainError(f"values never fall below {level} of the reference")
        i = below[0]
        return c[i - 1] + (m[i - 1] - target) / (m[i - 1] - m[i]) * (c[i] - c[i - 1])

    return float(crossing(lower) - crossing(upper))


__all__ = [
    "QUADRATURES", "QuadratureSample", "QuadratureSeries", "composite_quadrature_series",
    "squeezing_db", "SqueezingSummary", "squeezing_summary", "Histogram2D", "joint_histogram",
    "HpBaseline", "hp_occupation", "hp_squeezed_variance", "hp_antisqueezed_variance",
    "renyi_series", "PhaseSpaceCurve", "reconstruct_phase_space", "OrderParameterTable",
    "order_parameter_sweep", "knee_location", "knee_width",
]
