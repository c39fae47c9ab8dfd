import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dickesim.errors import DomainError
from dickesim.meanfield import (DICKE, LMG, MfRunSpec, MfState, evolve_mf, integrate_mf,
                                lyapunov_exponent, mf_derivatives, phase_diagram, time_average)
from dickesim.model import (DisorderDraw, InitialCondition, ModelParams, NoiseParams, SpinAxis,
                            hz)

IDEAL = NoiseParams.ideal()
Z_INIT = InitialCondition(SpinAxis.MINUS_Z)
X_INIT = InitialCondition(SpinAxis.MINUS_X)
freq = st.floats(hz(10), hz(5000))


def energy(y, p):
    return -p.delta * (y[:, 3] ** 2 + y[:, 4] ** 2) + p.omega * y[:, 0] + 4 * p.g * y[:, 3] * y[:, 2]


@given(freq, freq, freq)
def test_x_polarised_state_is_fixed_point(g, delta, omega):
    d = mf_derivatives(MfState((-0.5, 0.0, 0.0), 0j), ModelParams(7, g, delta, omega), IDEAL)
    assert d.s == (0.0, 0.0, 0.0) and d.alpha == 0


def test_z_state_drives_mode():
    g = hz(800)
    d = mf_derivatives(MfState((0.0, 0.0, -0.5), 0j), ModelParams(7, g, hz(3000), hz(400)), IDEAL)
    assert d.alpha == pytest.approx(1j * g)
    # Omega S_y and the corrected -Omega S_z drive: dS_y/dt = +Omega/2 here
    assert d.s[0] == 0 and d.s[2] == 0


def test_derivatives_with_dissipation():
    noise = NoiseParams(gamma_B=0.0)
    s = (0.1, 0.2, -0.3)
    d = mf_derivatives(MfState(s, 0j), ModelParams(4, 0.0, hz(100), 0.0), noise)
    gp = 0.5 * (noise.gamma_z + noise.gamma_ud + noise.gamma_du)
    assert d.s[0] == pytest.approx(-gp * s[0])
    assert d.s[1] == pytest.approx(-gp * s[1])
    assert d.s[2] == pytest.approx(-(noise.gamma_ud + noise.gamma_du) * s[2]
                                   - 0.5 * (noise.gamma_ud - noise.gamma_du))


def test_rabi_flop_decoupled():
    omega = hz(2000)
    spec = MfRunSpec(ModelParams(10, 0.0, hz(5000), omega), IDEAL, Z_INIT, t_final=2e-3,
                     dt_out=1e-5, n_disorder=1)
    s = evolve_mf(spec)
    expected = -5.0 * np.cos(omega * s.t)
    assert np.max(np.abs(s["sz"] - expected)) < 1e-6 * 5.0
    assert np.isnan(s.stderr["sz"]).all()


def test_x_init_has_no_dynamics():
    p = ModelParams.from_ratios(100, hz(900), 1.0, 1.9)
    s = evolve_mf(MfRunSpec(p, IDEAL, X_INIT, t_final=3e-3, n_disorder=1))
    assert np.allclose(s["sx"], -50.0, atol=1e-12)
    assert np.allclose(s["n"], 0.0, atol=1e-20)


@settings(max_examples=10)
@given(st.floats(hz(300), hz(1500)), st.floats(0.05, 3.0), st.floats(0.05, 3.0),
       st.sampled_from([Z_INIT, X_INIT]))
def test_noiseless_conservation(g, r_delta, r_chi, init):
    p = ModelParams.from_ratios(10, g, r_delta, r_chi)
    t, y = integrate_mf(MfState.initial(init).as_array(), p, IDEAL, DisorderDraw(),
                        t_final=20e-3, dt_out=1e-4)
    norm = np.sqrt(np.sum(y[:, :3] ** 2, axis=1))
    assert np.max(np.abs(norm - 0.5)) < 1e-8
    e = energy(y, p)
    scale = max(abs(p.omega) * 0.5, p.delta * np.max(y[:, 3] ** 2 + y[:, 4] ** 2), 1e-30)
    assert np.max(np.abs(e - e[0])) < 1e-6 * scale


def test_delta_sign_symmetry():
    p = ModelParams(10, hz(900), hz(7200), hz(400))
    q = ModelParams._signed(10, p.g, -p.delta, p.omega)
    y0 = MfState.initial(Z_INIT).as_array()
    _, a = integrate_mf(y0, p, IDEAL, DisorderDraw(), 3e-3, 1e-5)
    _, b = integrate_mf(y0, q, IDEAL, DisorderDraw(), 3e-3, 1e-5)
    assert np.max(np.abs(a[:, 2] - b[:, 2])) < 1e-10


def test_adiabatic_elimination_matches_lmg():
    g = hz(1000)
    delta = 20 * g
    chi = 4 * g * g / delta
    for ratio in (0.3, 0.45, 0.8):
        p = ModelParams(50, g, delta, ratio * chi)
        y0 = MfState.initial(Z_INIT).as_array()
        _, dicke = integrate_mf(y0, p, IDEAL, DisorderDraw(), 3e-3, 1e-5, model=DICKE)
        _, lmg = integrate_mf(y0, p, IDEAL, DisorderDraw(), 3e-3, 1e-5, model=LMG)
        assert np.max(np.abs(dicke[:, 2] - lmg[:, 2])) < 0.02


def test_time_average():
    t = np.linspace(0, 1e-3, 1001)
    assert time_average(t, np.full_like(t, 3.5)) == pytest.approx(3.5)
    omega = 2 * np.pi * 5e3
    assert time_average(t, -0.5 * np.cos(omega * t)) == pytest.approx(0.0, abs=1e-6)
    # partial windows interpolate linearly
    assert time_average(t, t, 0.25e-3, 0.75e-3) == pytest.approx(0.5e-3)
    with pytest.raises(DomainError):
        time_average(t, t, 0.5e-3, 0.5e-3)
    with pytest.raises(DomainError):
        time_average(t, t, 0.0, 2e-3)


def test_untrapped_average_near_zero():
    p = ModelParams.from_ratios(100, hz(965), 0.125, 1.2)
    s = evolve_mf(MfRunSpec(p, IDEAL, Z_INIT, t_final=3e-3, n_disorder=1))
    assert abs(time_average(s.t, s["sz"])) / 100 < 0.05


def test_disorder_ensemble_deterministic():
    p = ModelParams.from_ratios(10, hz(965), 0.125, 0.4)
    spec = MfRunSpec(p, NoiseParams(), Z_INIT, t_final=1e-3, n_disorder=20, seed=5)
    a, b = evolve_mf(spec, workers=1), evolve_mf(spec, workers=3)
    for k in a.mean:
        assert np.array_equal(a.mean[k], b.mean[k])
        assert np.array_equal(a.stderr[k], b.stderr[k])
    assert a.n_samples == 20 and np.all(np.isfinite(a.stderr["sz"][1:]))


def test_lyapunov_integrable_and_trapped_below_floor():
    res = lyapunov_exponent(ModelParams(10, 0.0, hz(5000), hz(1000)), Z_INIT)
    assert res.exponent <= res.floor == pytest.approx(2 / 0.05)
    trapped = ModelParams.from_ratios(100, hz(965), 0.125, 0.3)
    assert lyapunov_exponent(trapped, Z_INIT).exponent <= 2 / 0.05


def test_lyapunov_chaotic_and_robust():
    p = ModelParams.from_ratios(100, hz(1110), 0.387, 0.44)
    base = lyapunov_exponent(p, Z_INIT)
    assert base.exponent * 0.05 > 20
    half = lyapunov_exponent(p, Z_INIT, renorm_interval=25e-6)
    small = lyapunov_exponent(p, Z_INIT, perturbation=1e-9)
    assert half.exponent == pytest.approx(base.exponent, rel=0.10)
    assert small.exponent == pytest.approx(base.exponent, rel=0.10)
    assert len(base.running) == len(base.times)


def test_phase_diagram_consistency_and_x_init():
    template = ModelParams(100, hz(1000), hz(8000), hz(1000))
    pd = phase_diagram([0.125], [0.4], template, "time_avg_sz", Z_INIT, t_final=3e-3)
    p = ModelParams.from_ratios_fixed_omega(100, template.omega, 0.125, 0.4)
    s = evolve_mf(MfRunSpec(p, IDEAL, Z_INIT, t_final=3e-3, dt_out=1e-5, n_disorder=1))
    assert pd.values[0, 0] == pytest.approx(time_average(s.t, s["sz"]), rel=1e-12)
    px = phase_diagram([0.2, 1.0], [0.3, 2.0], template, "time_avg_sx", X_INIT, t_final=1e-3)
    assert px.values.shape == (2, 2) and np.allclose(px.values, -50.0)
    with pytest.raises(DomainError):
        phase_diagram([0.2, 0.1], [0.3], template, "time_avg_sz")
    with pytest.raises(DomainError):
        phase_diagram([0.2], [0.3], template, "entropy")
