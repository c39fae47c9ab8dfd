"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (printed in the terminal summary)
before asserting, so the report is complete even when a criterion fails.
"""
import json
import math
import os
import time

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE_LINES
from dickesim import cli
from dickesim.exact import HilbertSpec, evolve_exact, oracle_vs_twa
from dickesim.harness import preset_cut
from dickesim.meanfield import MfRunSpec, evolve_mf, lyapunov_exponent, time_average
from dickesim.model import InitialCondition, ModelParams, NoiseParams, SpinAxis, hz
from dickesim.observables import (HpBaseline, hp_occupation, knee_location, knee_width,
                                  renyi_series, squeezing_summary)
from dickesim.twa import TwaRunSpec, classical_thermal_run, run_ensemble

IDEAL = NoiseParams.ideal()
CALIBRATED = NoiseParams()  # 120 / 150 / 2pi 45 / 2pi 40 / nbar 0.5
Z_INIT = InitialCondition(SpinAxis.MINUS_Z)
X_INIT = InitialCondition(SpinAxis.MINUS_X)
N = 100

# knee search window for the Dicke sweeps: Omega/chi >= 0.3 keeps delta >= 3g
# on the LMG cut, where adiabatic elimination (and hence the LMG kink) applies
KNEE_WINDOW = (0.3, 0.8)


def report(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def resonant(ratio, g=hz(890)):
    """Omega = delta at a given Omega/chi."""
    delta = 2 * g * math.sqrt(ratio)
    return ModelParams(N, g, delta, delta)


def mf_lmg_sweep(values, t_final):
    cut = preset_cut("lmg")
    out = []
    for r in values:
        p = ModelParams.from_ratios(N, cut.g, cut.fixed, r)
        s = evolve_mf(MfRunSpec(p, IDEAL, Z_INIT, t_final=t_final, dt_out=1e-5, n_disorder=1))
        out.append(time_average(s.t, s["sz"]) / N)
    return np.array(out)


@pytest.fixture(scope="module")
def criterion1():
    t0 = time.perf_counter()
    cut = preset_cut("lmg")
    grid = np.round(np.arange(cut.start, cut.stop + 1e-9, 0.01), 10)
    avg = mf_lmg_sweep(grid, 20e-3)
    return grid, avg, time.perf_counter() - t0


def test_c01_dpt_location(criterion1):
    grid, avg, elapsed = criterion1
    at = dict(zip(np.round(grid, 2), avg))
    win = (grid >= KNEE_WINDOW[0] - 1e-9) & (grid <= KNEE_WINDOW[1] + 1e-9)
    knee = knee_location(grid[win], avg[win])
    knee_full = knee_location(grid, avg)
    ok = (abs(at[0.4]) > 0.2 and abs(at[0.6]) < 0.05 and abs(knee - 0.5) <= 0.05
          and elapsed < 60)
    report(1, ok, f"|Sz_avg|/N(0.4)={abs(at[0.4]):.3f} (>0.2), |Sz_avg|/N(0.6)={abs(at[0.6]):.4f} "
           f"(<0.05), knee={knee:.2f} in {KNEE_WINDOW} (0.5+-0.05; full-range argmax "
           f"{knee_full:.2f}), {elapsed:.1f}s (<60s)")
    assert ok


@pytest.mark.slow
def test_c02_finite_window_smoothing(criterion1):
    grid1, avg1, _ = criterion1
    win = (grid1 >= KNEE_WINDOW[0] - 1e-9) & (grid1 <= KNEE_WINDOW[1] + 1e-9)
    ref_width = knee_width(grid1[win], avg1[win])
    t0 = time.perf_counter()
    cut = preset_cut("lmg")
    grid = np.round(np.arange(KNEE_WINDOW[0], KNEE_WINDOW[1] + 1e-9, 0.05), 10)
    twa = []
    for i, r in enumerate(grid):
        p = ModelParams.from_ratios(N, cut.g, cut.fixed, r)
        s = run_ensemble(TwaRunSpec(p, CALIBRATED, Z_INIT, n_traj=1000, t_final=3e-3,
                                    dt_out=2e-5, seed=100 + i))
        twa.append(time_average(s.t, s["sz"]) / N)
    elapsed = time.perf_counter() - t0
    width = knee_width(grid, twa)
    mf_same_grid = knee_width(grid, mf_lmg_sweep(grid, 20e-3))
    ratio = width / ref_width
    ok = ratio >= 2 and elapsed < 600
    report(2, ok, f"TWA knee width={width:.3f}, ideal-MF width={ref_width:.4f} -> x{ratio:.2f} "
           f"(>=2; same-grid MF width {mf_same_grid:.3f}, x{width / mf_same_grid:.2f}), "
           f"{elapsed:.0f}s (<600s)")
    assert ok


def test_c03_hp_growth():
    t0 = time.perf_counter()
    g = hz(890)
    p = ModelParams(N, g, 20 * g, 20 * g)
    t_final = math.ceil(1.5 / g / 1e-5) * 1e-5
    s = run_ensemble(TwaRunSpec(p, IDEAL, X_INIT, n_traj=20_000, t_final=t_final, dt_out=1e-5,
                                seed=3))
    elapsed = time.perf_counter() - t0
    gt = g * s.t
    sel = (gt >= 0.2) & (gt <= 1.5)
    ratio = s["n"][sel] / hp_occupation(HpBaseline(g, s.t[sel]))
    worst = float(np.max(np.abs(ratio - 1)))
    ok = worst <= 0.10 and elapsed < 60
    report(3, ok, f"<n>/sinh^2(gt) in [{ratio.min():.3f}, {ratio.max():.3f}] over gt in "
           f"[0.2, 1.5] (max dev {worst:.3f} <= 0.10), {elapsed:.1f}s (<60s)")
    assert ok


@pytest.fixture(scope="module")
def squeezing_point():
    return resonant(10.5)


def test_c04_ideal_squeezing(squeezing_point):
    s = run_ensemble(TwaRunSpec(squeezing_point, IDEAL, X_INIT, n_traj=1000, t_final=2e-3,
                                dt_out=1e-5, seed=4))
    sm = squeezing_summary(s, "V+")
    ok = 1 / 9 <= sm.ratio <= 1 / 5 and 7.2 <= sm.db_sql <= 9.5
    report(4, ok, f"min Var(V+)/Var(V+)(0)={sm.ratio:.3f} in [0.111, 0.200] at "
           f"t={sm.t_min * 1e3:.2f} ms, SQL depth={sm.db_sql:.2f} dB in [7.2, 9.5]")
    assert ok


def test_c05_noisy_squeezing(squeezing_point):
    t0 = time.perf_counter()
    s = run_ensemble(TwaRunSpec(squeezing_point, CALIBRATED, X_INIT, n_traj=1000, t_final=2e-3,
                                dt_out=1e-5, seed=4))
    elapsed = time.perf_counter() - t0
    sm = squeezing_summary(s, "V+")
    ok = abs(sm.db_sql - 2.6) <= 0.8 and abs(sm.db_thermal - 4.6) <= 0.8 and elapsed < 600
    report(5, ok, f"SQL depth={sm.db_sql:.2f} dB (2.6+-0.8), thermal depth={sm.db_thermal:.2f} dB "
           f"(4.6+-0.8), Var(V+)(0)={sm.var_initial:.3f}, {elapsed:.0f}s (<600s)")
    assert ok


def crossing_time(t, values, level):
    idx = np.nonzero(values >= level)[0]
    if idx.size == 0:
        return math.inf
    i = idx[0]
    if i == 0:
        return float(t[0])
    return float(t[i - 1] + (level - values[i - 1]) / (values[i] - values[i - 1]) * (t[i] - t[i - 1]))


def test_c06_escape_hierarchy():
    cut = preset_cut("resonant")
    _, r2 = cut.midpoint
    p = resonant(r2, cut.g)
    spec = TwaRunSpec(p, CALIBRATED, X_INIT, n_traj=1000, t_final=1.5e-3, dt_out=1e-5, seed=6)
    level = -0.25 * N
    s_twa = run_ensemble(spec)
    s_cl1 = classical_thermal_run(spec, nbar_scale=1.0)
    s_cl5 = classical_thermal_run(spec, nbar_scale=5.0)
    t_twa = crossing_time(s_twa.t, s_twa["sx"], level)
    t_cl1 = crossing_time(s_cl1.t, s_cl1["sx"], level)
    t_cl5 = crossing_time(s_cl5.t, s_cl5["sx"], level)
    rel = abs(t_cl5 / t_twa - 1)
    ok = t_cl1 > t_twa and rel <= 0.2
    report(6, ok, f"Omega/chi={r2:.3f}: t_TWA={t_twa * 1e3:.3f} ms, t_cl(nbar)={t_cl1 * 1e3:.3f} ms "
           f"(> t_TWA), t_cl(5nbar)={t_cl5 * 1e3:.3f} ms ({rel * 100:.1f}% from t_TWA, <=20%)")
    assert ok


def test_c07_renyi_saturation():
    runs = {}
    for r in (0.5, 10.5):
        s = run_ensemble(TwaRunSpec(resonant(r), IDEAL, X_INIT, n_traj=1000, t_final=3e-3,
                                    dt_out=2e-5, seed=7))
        runs[r] = renyi_series(s["sx"], N)
    chaotic = runs[0.5]
    third = chaotic[len(chaotic) * 2 // 3:]
    sat_ok = third.mean() > 0.9 and chaotic[-1] > 0.95 and third.max() > 0.95
    regular = runs[10.5]
    first = np.nonzero(regular > 0.9)[0]
    dip = float(regular[first[0]:].min()) if first.size else math.nan
    rev_ok = first.size > 0 and dip < 0.6
    ok = sat_ok and rev_ok
    report(7, ok, f"Omega/chi=0.5: final-third mean S2={third.mean():.3f} (>0.9), final "
           f"S2={chaotic[-1]:.3f} (>0.95); Omega/chi=10.5: dip to {dip:.3f} bits after first "
           f"exceeding 0.9 (<0.6)")
    assert ok


def test_c08_chaos_diagnostic():
    t0 = time.perf_counter()
    horizon = 0.05
    lmg = preset_cut("lmg")
    trapped = ModelParams.from_ratios(N, lmg.g, lmg.fixed, 0.3)
    ch = preset_cut("chaotic")
    r1, r2 = ch.midpoint
    center = ModelParams.from_ratios(N, ch.g, r1, r2)
    lam_t = lyapunov_exponent(trapped, Z_INIT, t_horizon=horizon).exponent
    lam_c = lyapunov_exponent(center, Z_INIT, t_horizon=horizon).exponent
    elapsed = time.perf_counter() - t0
    ok = lam_t <= 2 / horizon and lam_c >= 5 / horizon and elapsed < 60
    report(8, ok, f"lambda(LMG trapped, Omega/chi=0.3)={lam_t:.3g}/s (<= {2 / horizon:.0f}), "
           f"lambda(chaotic centre, Omega/delta={r1:.3f}, Omega/chi={r2})={lam_c:.4g}/s "
           f"(>= {5 / horizon:.0f}), {elapsed:.1f}s (<60s)")
    assert ok


def test_c09_oracle_equivalence():
    g = hz(965)
    delta = 10 * g
    p = ModelParams(4, g, delta, 0.45 * 4 * g * g / delta)
    spec = HilbertSpec(4, 30)
    rep = oracle_vs_twa(spec, p, IDEAL, Z_INIT, t_final=1e-3, dt_out=2e-5, n_traj=10_000,
                        seed=9, observables=("sz",))
    noisy = evolve_exact(spec, p, IDEAL.with_(gamma_B=150.0, sigma_B=hz(45), sigma_delta=hz(40),
                                              nbar=0.5),
                         Z_INIT, t_final=1e-3, dt_out=2e-5, n_disorder=5, seed=9)
    diags = [rep.exact.flags["diagnostics"], noisy.flags["diagnostics"]]
    cptp = all(d.cptp_ok for d in diags)
    pure = diags[0].purity_error < 1e-8
    tol = np.maximum(3 * rep.twa_stderr["sz"], 0.05 * 4)
    ok = rep.passed["sz"] and cptp and pure and rep.exact.flags["valid"]
    report(9, ok, f"max|TWA-exact| Sz={rep.max_dev['sz']:.4f} (bound >= {tol.min():.2f}), "
           f"CPTP: trace err {max(d.trace_error for d in diags):.1e}, herm err "
           f"{max(d.hermiticity_error for d in diags):.1e}, min eig "
           f"{min(d.min_eigenvalue for d in diags):.1e}, unitary purity err "
           f"{diags[0].purity_error:.1e}")
    assert ok


def test_c10_calibration():
    p = ModelParams(10, 0.0, hz(1000), 0.0)
    scat = NoiseParams(gamma_tot=120.0, gamma_B=0.0, sigma_B=0.0, sigma_delta=0.0, nbar=0.0)
    s = run_ensemble(TwaRunSpec(p, scat, X_INIT, n_traj=2000, t_final=10e-3, dt_out=1e-3,
                                seed=10))
    c = -2 * s["sx"] / 10
    se = 2 * s.stderr["sx"] / 10
    exact = np.exp(-120.0 * s.t / 2)
    z = np.abs(c[1:] - exact[1:]) / se[1:]
    ramsey_ok = bool(np.all(z <= 3))
    field = NoiseParams(gamma_tot=0.0, gamma_B=150.0, sigma_B=hz(45), sigma_delta=hz(40),
                        nbar=0.0)
    f = run_ensemble(TwaRunSpec(p, field, X_INIT, n_traj=4000, t_final=6e-3, dt_out=2e-4,
                                seed=11))
    cf = -2 * f["sx"] / 10
    use = (f.t > 0) & (cf > 0.05)
    y = -np.log(cf[use]) - 150.0 * f.t[use] / 2
    x = f.t[use] ** 2 / 2
    gamma = math.sqrt(float(np.dot(x, y) / np.dot(x, x)))
    rel = abs(gamma / hz(45) - 1)
    ok = ramsey_ok and rel <= 0.10
    report(10, ok, f"scattering-only contrast vs exp(-Gtot t/2): max |z|={z.max():.2f} (<=3); "
           f"fitted Gaussian rate {gamma / (2 * math.pi):.1f} Hz vs sigma_B 45 Hz "
           f"({rel * 100:.1f}%, <=10%)")
    assert ok


DETERMINISM_CASES = {
    "mf": {"mode": "mf", "sim": {"t_final": 1.0, "dt_out": 0.01, "n_disorder": 40}},
    "twa": {"mode": "twa", "sim": {"t_final": 0.2, "dt_out": 0.02, "n_traj": 600}},
    "twa_classical": {"mode": "twa_classical",
                      "sim": {"t_final": 0.2, "dt_out": 0.02, "n_traj": 300}},
    "exact": {"mode": "exact", "model": {"n_spins": 4},
              "noise": {"preset": "ideal", "gamma_B": 150.0, "sigma_B": 45.0, "nbar": 0.5},
              "sim": {"t_final": 0.2, "dt_out": 0.02, "n_disorder": 6, "n_max": 12}},
    "cut": {"mode": "cut", "sweep": {"preset": "lmg", "n_points": 3, "solver": "twa"},
            "sim": {"t_final": 0.1, "dt_out": 0.02, "n_traj": 300}},
    "phase_diagram": {"mode": "phase_diagram",
                      "sweep": {"omega_over_delta": {"start": 0.1, "stop": 1.0, "n_points": 2},
                                "omega_over_chi": {"start": 0.3, "stop": 1.0, "n_points": 2}},
                      "sim": {"t_final": 0.5, "dt_out": 0.01}},
    "lyapunov": {"mode": "lyapunov", "sim": {"t_horizon": 5.0}},
    "compare": {"mode": "compare", "model": {"n_spins": 4}, "noise": {"preset": "ideal"},
                "sim": {"t_final": 0.1, "dt_out": 0.02, "n_traj": 600, "n_max": 15}},
}


def _merge(a, b):
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


def test_c11_determinism(tmp_path, capsys):
    base = {"model": {"n_spins": 10, "g": 965.0, "delta": 7720.0, "omega": 500.0},
            "sim": {"seed": 2024}}
    counts = sorted({1, 4, os.cpu_count() or 1})
    bad = []
    for name, case in DETERMINISM_CASES.items():
        cfg = tmp_path / f"{name}.yaml"
        cfg.write_text(yaml.safe_dump(_merge(base, case)))
        blobs = []
        for w in counts:
            out = tmp_path / f"{name}_{w}"
            code = cli.main(["run", "--config", str(cfg), "--threads", str(w), "--out", str(out)])
            capsys.readouterr()
            assert code == 0, name
            blobs.append((out / "result.csv").read_bytes())
        if any(b != blobs[0] for b in blobs[1:]):
            bad.append(name)
    ok = not bad
    report(11, ok, f"byte-identical CSVs for workers {counts} across modes "
           f"{', '.join(DETERMINISM_CASES)}" + (f"; differing: {bad}" if bad else ""))
    assert ok
