"""Experiment orchestration and result files.

Results tables are CSV (or JSON with the same columns). Every table starts
with a ``# config_hash: <sha256>`` comment line; column names are stable:

* time series (mf, twa, twa_classical, exact): ``t_ms``, then
  ``<obs>_mean`` for obs in sx, sy, sz, x, p, n, then ``<q>_var`` for the
  composite quadratures v_plus, v_minus, w_plus, w_minus, then the matching
  ``*_stderr`` columns in the same order (exact runs append ``purity`` and
  ``top_fock``);
* cut: ``omega_over_chi``, ``omega_over_delta``, ``g_hz``, ``delta_hz``,
  ``omega_hz``, ``<obs>_timeavg``, ``<obs>_timeavg_per_n``, ``n_timeavg``;
* phase diagram: ``omega_over_delta``, ``omega_over_chi``, ``value``, ``valid``;
* lyapunov: ``t_ms``, ``log_stretch``, ``running_exponent``; the fitted
  exponent goes to the sidecar;
* compare: one row per observable with ``max_dev``, ``rms_dev``,
  ``max_twa_stderr``, ``abs_floor``, ``divergence_time_ms``, ``passed``.

A JSON sidecar ``<stem>.meta.json`` holds the resolved configuration, its
hash, the seed, the code version, wall-clock time and validity flags. An
optional raw dump ``<stem>.raw.npy`` stores TWA per-trajectory records as a
float64 array of shape (n_traj, n_times, 5) with columns
(sx, sy, sz, re_alpha, im_alpha): collective spin totals and the
unnormalised mode amplitude.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import Mode, RunConfig
from .errors import ConfigurationError, DomainError
from .meanfield import MfRunSpec, evolve_mf, lyapunov_exponent, phase_diagram, time_average
from .model import TWO_PI, InitialCondition, ModelParams, SpinAxis
from .rng import derive_seed, fresh_seed
from .series import EnsembleSeries

SERIES_OBSERVABLES = ("sx", "sy", "sz", "x", "p", "n")
SERIES_VARIANCES = ("v_plus", "v_minus", "w_plus", "w_minus")


# ----------------------------------------------------------------------------- cut presets


@dataclass(frozen=True)
class CutSpec:
    """A one-parameter locus through the (Omega/delta, Omega/chi) plane."""

    name: str
    axis: str  # "omega_over_chi" or "omega_over_delta"
    fixed: float  # value of the other ratio
    start: float
    stop: float
    n_points: int
    spacing: str
    g: float  # rad/s
    spin_axis: SpinAxis
    observable: str

    def values(self) -> np.ndarray:
        if self.n_points == 1:
            return np.array([self.start])
        if self.spacing == "log":
            return np.geomspace(self.start, self.stop, self.n_points)
        return np.linspace(self.start, self.stop, self.n_points)

    def ratios(self) -> list[tuple[float, float]]:
        """(Omega/delta, Omega/chi) per point."""
        if self.axis == "omega_over_chi":
            return [(self.fixed, float(v)) for v in self.values()]
        return [(float(v), self.fixed) for v in self.values()]

    def params(self, n_spins: int) -> list[ModelParams]:
        return [ModelParams.from_ratios(n_spins, self.g, r1, r2) for r1, r2 in self.ratios()]

    @property
    def midpoint(self) -> tuple[float, float]:
        v = math.sqrt(self.start * self.stop) if self.spacing == "log" \
            else 0.5 * (self.start + self.stop)
        return (self.fixed, v) if self.axis == "omega_over_chi" else (v, self.fixed)


PRESETS = {
    "lmg": CutSpec("lmg", "omega_over_chi", 0.125, 0.05, 1.3, 26, "linear", TWO_PI * 965.0,
                   SpinAxis.MINUS_Z, "sz"),
    "chaotic": CutSpec("chaotic", "omega_over_delta", 0.44, 0.05, 3.0, 25, "log",
                       TWO_PI * 1110.0, SpinAxis.MINUS_Z, "sz"),
    "resonant": CutSpec("resonant", "omega_over_chi", 1.0, 0.3, 12.0, 25, "log",
                        TWO_PI * 890.0, SpinAxis.MINUS_X, "sx"),
}


def preset_cut(name: str, **overrides) -> CutSpec:
    """Parameter locus of a named cut.

    ``lmg``: Omega/delta = 0.125, Omega/chi in [0.05, 1.3], g = 2pi 965 Hz.
    ``chaotic``: Omega/chi = 0.44, Omega/delta in [0.05, 3] (log), g = 2pi 1110 Hz.
    ``resonant``: Omega = delta, Omega/chi in [0.3, 12] (log), g = 2pi 890 Hz.
    ``overrides`` may replace n_points, start, stop, g, spacing.
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown cut preset {name!r}; valid presets: "
                                 + ", ".join(sorted(PRESETS)))
    spec = PRESETS[name]
    clean = {k: v for k, v in overrides.items() if v is not None}
    if clean:
        spec = replace(spec, **clean)
    return spec


# ----------------------------------------------------------------------------- tables


@dataclass
class Table:
    columns: list
    rows: list  # list of lists

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return "nan"
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return repr(f)


def table_to_csv(table: Table, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    f = float(v)
    return f if math.isfinite(f) else _fmt(f)


def table_to_json(table: Table, config_hash: str) -> str:
    data = {"config_hash": config_hash,
            "columns": {c: [_json_value(r[k]) for r in table.rows]
                        for k, c in enumerate(table.columns)}}
    return json.dumps(data, indent=1) + "\n"


def series_table(series: EnsembleSeries) -> Table:
    cols = ["t_ms"] + [f"{o}_mean" for o in SERIES_OBSERVABLES] \
        + [f"{q}_var" for q in SERIES_VARIANCES] \
        + [f"{o}_stderr" for o in SERIES_OBSERVABLES] \
        + [f"{q}_var_stderr" for q in SERIES_VARIANCES]
    data = [series.t_ms] + [series.mean[o] for o in SERIES_OBSERVABLES] \
        + [series.var[q] for q in SERIES_VARIANCES] \
        + [series.stderr[o] for o in SERIES_OBSERVABLES] \
        + [series.var_stderr(q) for q in SERIES_VARIANCES]
    for extra in ("purity", "top_fock"):
        if extra in series.mean:
            cols.append(extra)
            data.append(series.mean[extra])
    return Table(cols, [list(r) for r in zip(*data)])


# ----------------------------------------------------------------------------- reading


def read_table(path) -> tuple[str | None, Table]:
    """Read a results CSV written by this package: (config hash, table)."""
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    digest = None
    body = []
    for ln in lines:
        if ln.startswith("#"):
            if ln.startswith("# config_hash:"):
                digest = ln.split(":", 1)[1].strip()
            continue
        body.append(ln)
    rows = list(csv.reader(body))
    if not rows:
        raise ConfigurationError(f"{path}: empty table")
    header, data = rows[0], rows[1:]

    def conv(s):
        if s in ("true", "false"):
            return s == "true"
        try:
            return float(s)
        except ValueError:
            return s

    return digest, Table(header, [[conv(v) for v in r] for r in data])


def aggregate_tables(paths) -> Table:
    """Concatenate tables from runs of one configuration.

    Refuses (ConfigurationError) when the embedded config hashes differ or
    are missing, so tables from different configurations are never mixed.
    """
    tables = [read_table(p) for p in paths]
    if not tables:
        raise ConfigurationError("nothing to aggregate")
    hashes = {h for h, _ in tables}
    if None in hashes:
        raise ConfigurationError("a table carries no config hash; refusing to aggregate")
    if len(hashes) > 1:
        raise ConfigurationError(
            "config hash mismatch between tables; refusing to aggregate: "
            + ", ".join(sorted(hashes)))
    cols = tables[0][1].columns
    for _, t in tables:
        if t.columns != cols:
            raise ConfigurationError("column mismatch between tables")
    return Table(cols, [r for _, t in tables for r in t.rows])


@dataclass(frozen=True)
class Trace:
    t_ms: np.ndarray
    value: np.ndarray
    stderr: np.ndarray | None


def read_trace_csv(path) -> Trace:
    """Generic two- or three-column (t_ms, value[, stderr]) CSV, e.g. measured data.

    Lines starting with ``#`` are skipped; a non-numeric first row is treated
    as a header.
    """
    rows = []
    with open(path, newline="") as fh:
        for r in csv.reader(ln for ln in fh if not ln.lstrip().startswith("#")):
            if not r or all(not c.strip() for c in r):
                continue
            rows.append(r)
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    width = {len(r) for r in rows}
    if len(width) != 1 or width.pop() not in (2, 3):
        raise ConfigurationError(f"{path}: expected 2 or 3 columns (t_ms, value[, stderr])")
    try:
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric entry ({exc})") from exc
    return Trace(arr[:, 0], arr[:, 1], arr[:, 2] if arr.shape[1] == 3 else None)


# ----------------------------------------------------------------------------- orchestration


@dataclass
class RunResult:
    table: Table
    meta: dict
    raw: np.ndarray | None = None


def _seconds(ms: float) -> float:
    return ms * 1e-3


def _twa_spec(cfg: RunConfig, params: ModelParams, init: InitialCondition, seed: int,
              record=frozenset()):
    from .twa import TwaRunSpec
    s = cfg.sim
    return TwaRunSpec(params, cfg.to_noise_params(), init, n_traj=s.n_traj, dt=_seconds(s.dt),
                      t_final=_seconds(s.t_final), dt_out=_seconds(s.dt_out), seed=seed,
                      record=record, n_iter=s.n_iter)


def _mf_spec(cfg: RunConfig, params, init, seed):
    s = cfg.sim
    return MfRunSpec(params, cfg.to_noise_params(), init, t_final=_seconds(s.t_final),
                     dt_out=_seconds(s.dt_out), n_disorder=s.n_disorder, seed=seed)


def _series_flags(series: EnsembleSeries) -> dict:
    out = {}
    for k, v in series.flags.items():
        if k in ("states", "raw_columns"):
            continue
        if k == "diagnostics":
            out[k] = {f: (None if x is None else (bool(x) if isinstance(x, bool) else float(x)))
                      for f, x in vars(v).items()}
        elif isinstance(v, (bool, int, float, str)) or v is None:
            out[k] = v
    out["n_samples"] = series.n_samples
    return out


def _run_series(cfg: RunConfig, seed: int, workers) -> RunResult:
    params, init = cfg.to_model_params(), cfg.to_initial_condition()
    mode = cfg.mode
    raw = None
    if mode is Mode.MF:
        series = evolve_mf(_mf_spec(cfg, params, init, seed), workers)
    elif mode in (Mode.TWA, Mode.TWA_CLASSICAL):
        from .twa import classical_thermal_run, run_ensemble
        record = {"samples"} if cfg.output.raw_dump else set()
        spec = _twa_spec(cfg, params, init, seed, record)
        series = run_ensemble(spec, workers) if mode is Mode.TWA \
            else classical_thermal_run(spec, 1.0, workers)
        raw = series.samples
    else:
        from .exact import HilbertSpec, evolve_exact
        s = cfg.sim
        series = evolve_exact(HilbertSpec(params.n_spins, s.n_max), params,
                              cfg.to_noise_params(), init, _seconds(s.t_final),
                              _seconds(s.dt_out), s.n_disorder, seed, method=s.exact_method,
                              workers=workers)
    return RunResult(series_table(series), {"flags": _series_flags(series)}, raw)


def _run_cut(cfg: RunConfig, seed: int, workers) -> RunResult:
    sw = cfg.sweep
    cut = preset_cut(sw.preset, n_points=sw.n_points, start=sw.start, stop=sw.stop,
                     g=None if sw.g is None else TWO_PI * sw.g)
    n_spins = cfg.model.n_spins if cfg.model is not None else 100
    init = InitialCondition(cut.spin_axis)
    window = (None, None) if sw.window is None else (_seconds(sw.window[0]),
                                                     _seconds(sw.window[1]))
    obs = cut.observable
    rows = []
    for i, ((r1, r2), p) in enumerate(zip(cut.ratios(), cut.params(n_spins))):
        point_seed = derive_seed(seed, "cut", i)
        if sw.solver == "mf":
            series = evolve_mf(_mf_spec(cfg, p, init, point_seed), workers)
        else:
            from .twa import run_ensemble
            series = run_ensemble(_twa_spec(cfg, p, init, point_seed), workers)
        v = time_average(series.t, series.mean[obs], *window)
        n_avg = time_average(series.t, series.mean["n"], *window)
        rows.append([r2, r1, p.g / TWO_PI, p.delta / TWO_PI, p.omega / TWO_PI, v, v / n_spins,
                     n_avg])
    cols = ["omega_over_chi", "omega_over_delta", "g_hz", "delta_hz", "omega_hz",
            f"{obs}_timeavg", f"{obs}_timeavg_per_n", "n_timeavg"]
    return RunResult(Table(cols, rows), {"cut": {"preset": cut.name, "axis": cut.axis,
                                                 "solver": sw.solver}})


def _axis_values(a) -> np.ndarray:
    if a.n_points == 1:
        return np.array([a.start])
    if a.spacing == "log":
        return np.geomspace(a.start, a.stop, a.n_points)
    return np.linspace(a.start, a.stop, a.n_points)


def _run_phase_diagram(cfg: RunConfig, seed: int, workers) -> RunResult:
    sw = cfg.sweep
    r1 = _axis_values(sw.omega_over_delta)
    r2 = _axis_values(sw.omega_over_chi)
    pd = phase_diagram(r1, r2, cfg.to_model_params(), sw.observable,
                       cfg.to_initial_condition(), t_final=_seconds(cfg.sim.t_final),
                       dt_out=_seconds(cfg.sim.dt_out), t_horizon=_seconds(cfg.sim.t_horizon),
                       workers=workers)
    rows = [[pd.omega_over_delta[j], pd.omega_over_chi[i], pd.values[i, j], bool(pd.valid[i, j])]
            for i in range(r2.size) for j in range(r1.size)]
    return RunResult(Table(["omega_over_delta", "omega_over_chi", "value", "valid"], rows),
                     {"observable": sw.observable})


def _run_lyapunov(cfg: RunConfig, seed: int, workers) -> RunResult:
    res = lyapunov_exponent(cfg.to_model_params(), cfg.to_initial_condition(),
                            t_horizon=_seconds(cfg.sim.t_horizon), seed=seed)
    rows = [[t * 1e3, c, r] for t, c, r in zip(res.times, res.log_stretch, res.running)]
    return RunResult(Table(["t_ms", "log_stretch", "running_exponent"], rows),
                     {"lyapunov": {"exponent": res.exponent, "classic": res.classic,
                                   "floor": res.floor}})


def _run_compare(cfg: RunConfig, seed: int, workers) -> RunResult:
    from .exact import HilbertSpec, oracle_vs_twa
    s = cfg.sim
    params = cfg.to_model_params()
    rep = oracle_vs_twa(HilbertSpec(params.n_spins, s.n_max), params, cfg.to_noise_params(),
                        cfg.to_initial_condition(), _seconds(s.t_final), _seconds(s.dt_out),
                        s.n_traj, seed, n_disorder=s.n_disorder, twa_dt=_seconds(s.dt),
                        workers=workers)
    cols = ["observable", "max_dev", "rms_dev", "max_twa_stderr", "abs_floor",
            "divergence_time_ms", "passed"]
    rows = [[r[c] for c in cols] for r in rep.rows()]
    return RunResult(Table(cols, rows), {"all_passed": rep.all_passed,
                                         "flags": _series_flags(rep.exact)})


_DISPATCH = {
    Mode.MF: _run_series, Mode.TWA: _run_series, Mode.TWA_CLASSICAL: _run_series,
    Mode.EXACT: _run_series, Mode.CUT: _run_cut, Mode.PHASE_DIAGRAM: _run_phase_diagram,
    Mode.LYAPUNOV: _run_lyapunov, Mode.COMPARE: _run_compare,
}


def resolve_seed(cfg: RunConfig) -> RunConfig:
    """Fill a missing seed with fresh entropy so the sidecar records it."""
    if cfg.sim.seed is None:
        cfg = cfg.model_copy(deep=True)
        cfg.sim.seed = fresh_seed()
    return cfg


def execute(cfg: RunConfig, workers: int | None = None) -> RunResult:
    """Run a validated configuration in memory (no files written)."""
    cfg = resolve_seed(cfg)
    seed = derive_seed(cfg.sim.seed, cfg.mode.value)
    t0 = time.perf_counter()
    try:
        result = _DISPATCH[cfg.mode](cfg, seed, workers)
    except DomainError as exc:
        raise ConfigurationError(str(exc)) from exc
    result.meta.update({
        "config": cfg.resolved(), "config_hash": cfg.config_hash(), "seed": cfg.sim.seed,
        "stream_seed": seed, "version": __version__,
        "wall_clock_s": time.perf_counter() - t0, "workers": workers,
    })
    return result


def run(cfg: RunConfig, out_dir=None, fmt: str | None = None,
        workers: int | None = None) -> dict[str, Path]:
    """Execute and write the results table, sidecar and optional raw dump."""
    cfg = resolve_seed(cfg)
    result = execute(cfg, workers)
    out = Path(out_dir if out_dir is not None else cfg.output.path)
    fmt = fmt or cfg.output.format
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.output.stem
    digest = result.meta["config_hash"]
    paths = {}
    if fmt == "csv":
        paths["table"] = out / f"{stem}.csv"
        paths["table"].write_text(table_to_csv(result.table, digest))
    else:
        paths["table"] = out / f"{stem}.json"
        paths["table"].write_text(table_to_json(result.table, digest))
    if result.raw is not None:
        paths["raw"] = out / f"{stem}.raw.npy"
        np.save(paths["raw"], result.raw)
    paths["meta"] = out / f"{stem}.meta.json"
    paths["meta"].write_text(json.dumps(result.meta, indent=1, sort_keys=True, default=str) + "\n")
    return paths
