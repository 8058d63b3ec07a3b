from __future__ import annotations

import math

import numpy as np
import pytest

from sntorsion.loops import LoopModel, build_servo
from sntorsion.noise import NoisePSD
from sntorsion.params import PendulumParams, ServoSettings, SNModel
from sntorsion.sim import core, kernel
from sntorsion.sim.analysis import (
    fit_ringup,
    ringup_ensemble,
    ringup_model,
    steady_state_stats,
    time_to_detect,
    welch_psd,
)
from sntorsion.sim.colored import NoiseStream, fit_shaping_filter
from sntorsion.sim.core import SimConfig, SimulationError, simulate_ensemble, simulate_trajectory

PEND = PendulumParams(0.14, 2 * math.pi * 0.6, 50.0, 0.6, 1.0, 300.0)
SN = SNModel(4.48e-26, 1.04e-11, omega_sn=2 * math.pi * 0.25, sigma_theta=2e-9)
S0 = 1e-24


def _loop(servo=None, omega_sn=0.0, **chans):
    return LoopModel(PEND, servo, omega_sn, {k: NoisePSD.constant(k, v) for k, v in chans.items()})


def _run(loop, backend=None, **kw):
    base = dict(dt=1 / 64, duration=64.0, t_bw=4.0, seed=3)
    base.update(kw)
    return simulate_trajectory(PEND, None, SN, loop, None, SimConfig(**base), backend=backend)


# ----------------------------------------------------------------- Welch

def test_welch_white_level():
    rng = np.random.default_rng(0)
    dt, sigma = 0.01, 2.0
    psd = welch_psd(rng.normal(0, sigma, 2**18), dt, 10.24)
    assert np.mean(psd.psd[1:-1]) == pytest.approx(2 * dt * sigma**2, rel=0.02)
    assert psd.n_segments == 2**18 // 1024


def test_welch_parseval_for_a_sinusoid():
    dt = 1 / 128
    t = np.arange(2**16) * dt
    x = 3.0 * np.sin(2 * math.pi * 5.0 * t)
    psd = welch_psd(x, dt, 8.0)
    df = psd.freq[1] - psd.freq[0]
    assert np.sum(psd.psd) * df == pytest.approx(4.5, rel=1e-3)
    assert psd.freq[np.argmax(psd.psd)] == pytest.approx(5.0)


def test_welch_ar1_shape():
    rng = np.random.default_rng(1)
    a, dt, n = 0.9, 1.0, 2**19
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = 0.0
    for i in range(1, n):
        x[i] = a * x[i - 1] + e[i]
    psd = welch_psd(x, dt, 1024.0)
    f = psd.freq[4:-4]
    exact = 2 * dt / np.abs(1 - a * np.exp(-2j * math.pi * f * dt)) ** 2
    assert np.median(psd.psd[4:-4] / exact) == pytest.approx(1.0, rel=0.03)


def test_welch_rejects_short_series():
    with pytest.raises(ValueError):
        welch_psd(np.zeros(10), 1.0, 64.0)
    with pytest.raises(ValueError):
        welch_psd(np.zeros(100), 1.0, 64.0, overlap=1.0)


# ----------------------------------------------------------------- configuration

@pytest.mark.parametrize("kw", [
    dict(sn_mode="bogus"), dict(dt=0.0), dict(n_traj=0), dict(seed=-1), dict(seed=2**64),
    dict(init="hot"), dict(t_bw=3.0),
])
def test_sim_config_validation(kw):
    base = dict(dt=1 / 64, duration=64.0, t_bw=4.0)
    base.update(kw)
    with pytest.raises(ValueError):
        SimConfig(**base)


def test_resolution_guard_and_instability():
    with pytest.raises(ValueError, match="exceeds"):
        _run(_loop(), dt=1 / 16, t_bw=4.0)
    bad = build_servo(ServoSettings(kind="custom", num=(-10.0,), den=(1.0,)), PEND)
    with pytest.raises(SimulationError):
        _run(_loop(bad))


# ----------------------------------------------------------------- integrator

def _free_decay(t, theta0):
    g, w = PEND.gamma_m, PEND.omega_m
    wd = math.sqrt(w * w - g * g / 4)
    return theta0 * np.exp(-g * t / 2) * (np.cos(wd * t) + g / (2 * wd) * np.sin(wd * t))


def test_heun_is_second_order():
    errs = []
    for dt in (1 / 64, 1 / 128, 1 / 256):
        rec = _run(_loop(), dt=dt, duration=8.0, t_bw=1.0, theta0=1e-6)
        errs.append(abs(rec.theta[-1] - _free_decay(rec.time[-1], 1e-6)))
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.7 < coarse / fine < 4.3


def test_ringdown_envelope():
    rec = _run(_loop(), dt=1 / 256, duration=64.0, t_bw=1.0, theta0=1e-6)
    w = PEND.omega_m
    energy = 0.5 * (np.gradient(rec.theta, rec.time) ** 2 + w * w * rec.theta**2)
    t = rec.time[1000:-1000]
    ratio = energy[1000:-1000] / (0.5 * w * w * 1e-12 * np.exp(-PEND.gamma_m * t))
    # the ratio oscillates at 2 w with amplitude ~ gamma / w; average over full cycles
    period = int(round(math.pi / w / (1 / 256)))
    smooth = np.convolve(ratio, np.ones(period) / period, mode="valid")
    assert np.max(np.abs(smooth - 1)) < 0.01


def test_quadratic_mode_without_sn_equals_off():
    loop = _loop(thermal_cl=S0, sensor_cl=1e-20)
    off = _run(loop, sn_mode="off")
    q_sn = SNModel(SN.atomic_mass, SN.delta_x_int, omega_sn=0.0)
    quad = simulate_trajectory(PEND, None, q_sn, loop, None,
                               SimConfig(dt=1 / 64, duration=64.0, t_bw=4.0, seed=3, sn_mode="quadratic_preselection"))
    assert np.array_equal(off.theta, quad.theta)
    assert np.all(np.isnan(off.theta_mean)) and np.all(np.isfinite(quad.theta_mean))


@pytest.mark.skipif(kernel.BACKEND != "cython", reason="compiled kernel not built")
@pytest.mark.parametrize("mode", ["off", "quadratic_preselection", "nonquadratic"])
def test_backends_agree(mode):
    # gain scaled with the inertia; dt resolves the stiff servo crossover
    servo = build_servo(ServoSettings(kind="quadratic_upgrade", a0=0.375 * PEND.inertia_rz, time_scale=1000.0), PEND)
    loop = _loop(servo, SN.omega_sn, thermal_cl=S0, qrpn=S0, sensor_cl=1e-22)
    py = _run(loop, backend="python", dt=1 / 256, duration=16.0, sn_mode=mode)
    cy = _run(loop, backend="cython", dt=1 / 256, duration=16.0, sn_mode=mode)
    assert np.all(np.abs(cy.theta) < 1e-6)
    for name in ("theta", "readout", "control", "sn_torque"):
        assert np.allclose(getattr(py, name), getattr(cy, name), rtol=1e-12, atol=0)


def test_nonquadratic_torque_is_restoring():
    rec = _run(_loop(), sn_mode="nonquadratic", theta0=1e-9, duration=8.0)
    assert np.all(rec.sn_torque * rec.theta <= 0)
    assert np.any(rec.sn_torque != 0)


def test_ensemble_variance_matches_closed_form():
    loop = _loop(thermal_cl=S0)
    sim = SimConfig(dt=1 / 32, duration=1024.0, t_bw=8.0, n_traj=256, seed=11, init="thermal")
    recs = simulate_ensemble(PEND, None, SN, loop, None, sim)
    var = np.mean([np.mean(r.theta**2) for r in recs])
    exact = S0 / (4 * PEND.inertia_rz**2 * PEND.gamma_m * PEND.omega_m**2)
    assert var == pytest.approx(exact, rel=0.05)


def test_ensemble_is_deterministic_and_jobs_invariant():
    loop = _loop(thermal_cl=S0, sensor_cl=1e-20)
    sim = SimConfig(dt=1 / 64, duration=32.0, t_bw=4.0, n_traj=3, seed=5)
    a = simulate_ensemble(PEND, None, SN, loop, None, sim, jobs=1)
    b = simulate_ensemble(PEND, None, SN, loop, None, sim, jobs=2)
    c = simulate_ensemble(PEND, None, SN, loop, None, sim, indices=[2])
    for x, y in zip(a, b):
        assert np.array_equal(x.theta, y.theta) and np.array_equal(x.readout, y.readout)
    assert np.array_equal(a[2].theta, c[0].theta)
    assert not np.array_equal(a[0].theta, a[1].theta)


def test_chunking_does_not_change_the_trajectory(monkeypatch):
    psd = NoisePSD.tabulated("actuator_dac", [0.01, 10.0], [1e-20, 1e-24])
    loop = LoopModel(PEND, None, 0.0, {"thermal_cl": NoisePSD.constant("thermal_cl", S0), "actuator_dac": psd,
                                        "sensor_cl": NoisePSD.constant("sensor_cl", 1e-20)})
    whole = _run(loop, duration=32.0)
    monkeypatch.setattr(core, "_CHUNK", 300)
    pieces = _run(loop, duration=32.0)
    assert np.allclose(whole.theta, pieces.theta, rtol=1e-13, atol=1e-30)
    assert np.array_equal(whole.readout - whole.theta, pieces.readout - pieces.theta)


def test_noise_stream_chunk_independence():
    psd = NoisePSD.tabulated("sensor_cl", [0.01, 10.0], [1e-16, 1e-20])
    a = NoiseStream(psd, 1 / 64, 9, 0, 0.01)
    b = NoiseStream(psd, 1 / 64, 9, 0, 0.01)
    whole = a.take(1000)
    parts = np.concatenate([b.take(1), b.take(400), b.take(599)])
    assert np.allclose(whole, parts, rtol=1e-12, atol=0)


def test_colored_stream_reproduces_target_psd():
    psd = NoisePSD.tabulated("sensor_cl", [0.05, 1.0, 20.0], [1e-14, 1e-16, 1e-16])
    dt = 1 / 64
    filt = fit_shaping_filter(psd, 1 / dt, 0.05)
    assert filt.rms_log_residual < 0.05
    stream = NoiseStream(psd, dt, 4, 0, 0.05)
    est = welch_psd(stream.take(2**20), dt, 64.0)
    sel = (est.freq > 0.1) & (est.freq < 20)
    ratio = est.psd[sel] / psd(2 * math.pi * est.freq[sel])
    assert np.median(ratio) == pytest.approx(1.0, rel=0.05)


# ----------------------------------------------------------------- statistics

def test_time_to_detect_trivial_band():
    t_bw = 256.0
    f = np.arange(1, 101) / t_bw
    s = np.ones_like(f)
    det = time_to_detect(f, s, s, (f[9], f[9]))
    assert det.seconds == pytest.approx(t_bw)
    assert time_to_detect(f, 0 * s, s, (f[0], f[-1])).seconds == math.inf
    assert time_to_detect(f, 2 * s, s, (f[0], f[-1])).seconds == pytest.approx(t_bw / 400)
    with pytest.raises(ValueError):
        time_to_detect(f, s, s, (1e3, 2e3))
    with pytest.raises(ValueError):
        time_to_detect(f, s, 0 * s, (f[0], f[-1]))


def test_snr_scales_as_sqrt_q(reference_cfg):
    p = reference_cfg.pendulum
    hi = PendulumParams(p.inertia_rz, p.omega_m, 4 * p.q_factor, p.arm_length, p.mass, p.temperature)
    a = steady_state_stats(p, reference_cfg.optics, reference_cfg.sn)
    b = steady_state_stats(hi, reference_cfg.optics, reference_cfg.sn)
    assert b["snr"] / a["snr"] == pytest.approx(2.0, rel=1e-12)
    assert steady_state_stats(p, reference_cfg.optics, reference_cfg.sn, s_noise=0.0)["snr"] == math.inf


def test_ringup_model_and_fit():
    starts = np.arange(0, 400, 8.0)
    m = ringup_model(starts, 8.0, 50.0)
    assert np.all(np.diff(m) > 0) and m[-1] == pytest.approx(1.0, abs=1e-6)
    tau, amp = fit_ringup(starts, 3.0 * np.sqrt(m), 8.0, 20.0)
    assert tau == pytest.approx(50.0, rel=1e-6) and amp == pytest.approx(3.0, rel=1e-6)


def test_zero_noise_ringup_stays_zero():
    sim = SimConfig(dt=1 / 64, duration=64.0, t_bw=4.0, n_traj=2)
    res = ringup_ensemble(PEND, None, SN, _loop(), None, sim, 0.6, 0.5, observable="motion")
    assert np.all(res.mean_asd == 0) and res.tau_fit is None
    with pytest.raises(ValueError):
        ringup_ensemble(PEND, None, SN, _loop(), None, sim, 0.1, 0.5)


def test_time_scaling_law_for_free_decay():
    # rates scale by k, dt by 1/k: the sampled sequence is unchanged, so tau = 2Q/omega_m carries over
    k = 8.0
    fast = PendulumParams(PEND.inertia_rz, k * PEND.omega_m, PEND.q_factor, 0.6, 1.0, 300.0)
    slow = simulate_trajectory(PEND, None, SN, _loop(), None,
                               SimConfig(dt=1 / 64, duration=32.0, t_bw=4.0, theta0=1e-6))
    quick = simulate_trajectory(fast, None, SN, LoopModel(fast, None, 0.0, {}), None,
                                SimConfig(dt=1 / 512, duration=4.0, t_bw=0.5, theta0=1e-6))
    assert np.allclose(slow.theta, quick.theta, rtol=1e-9, atol=1e-20)


def test_pure_python_fallback_is_selectable():
    import os
    import subprocess
    import sys

    env = {**os.environ, "SNTORSION_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from sntorsion.sim import kernel; print(kernel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
