"""Named reproductions: each target rebuilds one reference number or curve from the
bundled configs and returns a summary plus the tables behind it.

The CLI writes these to disk (``sntorsion repro <name>``); the acceptance tests
call the same functions, so what is checked is exactly what is emitted.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import constants as const
from .loops import (
    LoopModel,
    build_servo,
    calibrate_gain,
    closed_loop_spectrum,
    residual_uncertainty,
    servo_template,
    ugf_for_gain,
)
from .noise import (
    NoisePSD,
    build_channels,
    combine_q,
    optical_spring_shift,
    q_factor,
    radiation_force,
    s_ff_quantum,
)
from .params import Config, ConfigError, FiberParams, NoiseSettings, builtin_config, load_config
from .snpotential import (
    QuadSettings,
    fit_gaussian_potential,
    mutual_gravity_curve,
    self_gravity_integral,
)
from .sim.analysis import ringup_ensemble, steady_state_stats, time_to_detect, welch_psd
from .sim.core import SimConfig, simulate_trajectory

__all__ = ["ReproResult", "TARGETS", "run_target", "load_named", "sn_torque_detection"]

TWO_PI = const.TWO_PI


@dataclass
class ReproResult:
    name: str
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> (header, rows)


def load_named(name: str, *extra) -> Config:
    """Bundled config ``name`` with optional override files layered on top."""
    return load_config(builtin_config(name), *extra)


def _cfg(cfg: Config | None, name: str) -> Config:
    return cfg if cfg is not None else load_named(name)


def _loop_from(cfg: Config, channels: dict[str, NoisePSD] | None = None, omega_sn: float | None = None) -> LoopModel:
    ch = channels if channels is not None else build_channels(cfg.pendulum, cfg.optics, cfg.run.noise)
    servo = build_servo(cfg.run.servo, cfg.pendulum)
    wsn = cfg.sn.omega_sn if omega_sn is None else omega_sn
    return LoopModel(cfg.pendulum, servo, wsn, dict(ch))


def _only(cfg: Config, **changes) -> dict[str, NoisePSD]:
    """Channels of ``cfg`` with every source switched off except those in ``changes``."""
    base = NoiseSettings(thermal="off", qrpn="off", backaction=cfg.run.noise.backaction)
    return build_channels(cfg.pendulum, cfg.optics, dataclasses.replace(base, **changes))


# ----------------------------------------------------------------- instant numbers

def s_ff(cfg: Config | None = None) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    return ReproResult("s-ff", {"s_ff_N2_per_Hz": s_ff_quantum(cfg.optics), "buildup": cfg.optics.buildup})


def force(cfg: Config | None = None) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    return ReproResult("radiation-force", {"p_cav_W": cfg.optics.p_cav, "force_N": radiation_force(cfg.optics.p_cav)})


def optical_spring(cfg: Config | None = None) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    rel, df = optical_spring_shift(cfg.optics, cfg.pendulum)
    return ReproResult("optical-spring", {"relative_omega2_shift": rel, "delta_f_hz": df,
                                          "detuning_rad": cfg.optics.detuning})


def q_budget(cfg: Config | None = None) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    run = cfg.run
    if run.gas is None or run.eddy is None or run.dac is None:
        raise ConfigError("the loss budget needs [gas], [eddy] and [dac] sections")
    fiber = run.fiber or FiberParams()
    rows, summary, losses = [], {}, []
    for mech, inputs in (("gas", run.gas), ("surface", fiber), ("thermoelastic", fiber),
                         ("eddy", run.eddy), ("dac_rms", run.dac)):
        q, diag = q_factor(mech, inputs, omega=cfg.pendulum.omega_m, pendulum=cfg.pendulum)
        rows.append((mech, q, diag.get("phi", 1.0 / q), diag.get("note", "")))
        summary[f"Q_{mech}"] = q
        if mech != "dac_rms":
            losses.append(q)
        if "phi" in diag:
            summary[f"phi_{mech}"] = diag["phi"]
    summary["Q_combined_losses"] = combine_q(losses)
    return ReproResult("appendixA-budget", summary,
                       {"q_budget": (["mechanism", "Q", "loss_angle", "note"], rows)})


def servo_gain(cfg: Config | None = None, f_ugf: float = 7e-3) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    tpl = servo_template("baseline")
    a0 = calibrate_gain(tpl, cfg.pendulum, TWO_PI * f_ugf)
    ugfs = ugf_for_gain(tpl, cfg.pendulum, a0)
    return ReproResult("servo-gain", {"a0": a0, "f_ugf_hz": f_ugf,
                                      "unity_gain_crossings_hz": " ".join(f"{w / TWO_PI:.6g}" for w in ugfs)})


def snr(cfg: Config | None = None, f_q: float = 2.581e-3) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    wq = TWO_PI * f_q
    wsn = math.sqrt(max(wq**2 - cfg.pendulum.omega_m**2, 0.0))
    sn = dataclasses.replace(cfg.sn, omega_sn=wsn)
    st = steady_state_stats(cfg.pendulum, cfg.optics, sn, cfg.run.t_bw, cfg.run.s_noise_asd**2)
    return ReproResult("snr", {**st, "t_bw_s": cfg.run.t_bw, "s_noise_asd": cfg.run.s_noise_asd})


# ----------------------------------------------------------------- uncertainty

UNCERTAINTY_TARGETS = {"open_loop_dtheta_rad": 1.37e-8, "closed_loop_dx_m": 1.21e-11}


def uncertainty(cfg: Config | None = None, f_sn_options=(2.51e-3, 2.93e-3), n_grid: int = 20001) -> ReproResult:
    """Open- and closed-loop spread driven by radiation pressure alone, for every
    combination of back-action normalisation, integration measure and omega_SN."""
    cfg = _cfg(cfg, "reference")
    p = cfg.pendulum
    om = np.geomspace(1e-7, 10.0, n_grid)
    servo = servo_template("baseline")
    servo = servo.scaled(calibrate_gain(servo, p, TWO_PI * 7e-3))
    rows = []
    options = [("formula", cfg.sn.omega_sn)] + [(f"{f * 1e3:g} mHz", TWO_PI * f) for f in f_sn_options]
    hit = []
    for ba in ("buildup", "coupling"):
        ch = _only(cfg, qrpn="on", backaction=ba)
        for label, wsn in options:
            for measure in ("per_hz", "per_rad"):
                open_loop = LoopModel(p, None, wsn, dict(ch))
                closed = LoopModel(p, servo, wsn, dict(ch))
                d_open, _ = residual_uncertainty(open_loop, om, "quantum", measure=measure)
                _, dx_closed = residual_uncertainty(closed, om, "quantum", measure=measure)
                r_open = d_open / UNCERTAINTY_TARGETS["open_loop_dtheta_rad"]
                r_closed = dx_closed / UNCERTAINTY_TARGETS["closed_loop_dx_m"]
                ok = 0.5 <= r_open <= 2.0 and 0.5 <= r_closed <= 2.0
                rows.append((ba, label, measure, d_open, dx_closed, r_open, r_closed, int(ok)))
                if ok:
                    hit.append(f"{ba}/{label}/{measure}")
    summary = {
        "conventions_within_factor_2": ";".join(hit) or "none",
        "n_conventions": len(rows),
        "a0": servo.num[-1],
    }
    return ReproResult("appendixE-uncertainty", summary, {
        "conventions": (["backaction", "omega_sn", "measure", "open_loop_dtheta_rad", "closed_loop_dx_m",
                         "ratio_open", "ratio_closed", "both_within_factor_2"], rows)})


# ----------------------------------------------------------------- potentials

def gaussian_fit(cfg: Config | None = None, nuisance: str = "marginalize", window: float = 5.0,
                 n_points: int = 201) -> ReproResult:
    cfg = _cfg(cfg, "reference")
    quad = QuadSettings(nuisance=nuisance)
    x = np.linspace(-window, window, n_points)
    vals = self_gravity_integral(x, cfg.sn.c1, cfg.sn.c2, quad)
    fit = fit_gaussian_potential(x, vals, window=window)
    model = fit.amplitude * np.exp(-x**2 / (2 * fit.b1))
    return ReproResult("gaussian-fit", {
        "c1": cfg.sn.c1, "c2": cfg.sn.c2, "nuisance": nuisance, "A": fit.amplitude, "b1": fit.b1,
        "max_rel_residual": fit.max_rel_residual, "window": window,
    }, {"integral": (["x_tilde", "integral", "gaussian_fit"], list(zip(x, vals, model)))})


def mutual_gravity(cfg: Config | None = None, ratios=(10.0, 1.0, 0.1), span: float = 30.0,
                   n_points: int = 121, extent: float = 3.0) -> ReproResult:
    """Force curves of a 1-D chain whose length covers +-``span`` sigma_x for each a/sigma_x."""
    cfg = _cfg(cfg, "reference")
    base = cfg.sn
    summary, rows = {}, []
    for r in ratios:
        sx = base.lattice_const / r
        model = dataclasses.replace(base, sigma_x=sx, sigma_y=sx / base.c1, sigma_z=sx / base.c2)
        nb = int(math.ceil(span * sx / base.lattice_const))
        x = np.linspace(-extent * sx, extent * sx, n_points)
        curve = mutual_gravity_curve(x, model, nb)
        self_only = mutual_gravity_curve(x, model, 0)
        summary[f"force_amplitude_a{r:g}"] = float(np.ptp(curve.force))
        summary[f"self_force_amplitude_a{r:g}"] = float(np.ptp(self_only.force))
        summary[f"neighbors_a{r:g}"] = nb
        rows.extend((r, xi / sx, e, f, e0, f0) for xi, e, f, e0, f0 in
                    zip(x, curve.potential, curve.force, self_only.potential, self_only.force))
    amps = [summary[f"force_amplitude_a{r:g}"] for r in ratios]
    summary["strictly_decreasing"] = int(all(a > b for a, b in zip(amps, amps[1:])))
    return ReproResult("mutual-gravity", summary, {
        "curves": (["a_over_sigma_x", "x_over_sigma_x", "energy_J", "force_N", "self_energy_J", "self_force_N"],
                   rows)})


# ----------------------------------------------------------------- spectra

def _local_maxima(s: np.ndarray) -> np.ndarray:
    return np.nonzero((s[1:-1] > s[:-2]) & (s[1:-1] > s[2:]))[0] + 1


def upgrade_spectrum(cfg: Config | None = None, f_lo: float = 1e-4, f_hi: float = 1e-2,
                    n_points: int = 20001) -> ReproResult:
    cfg = _cfg(cfg, "upgrade_quadratic")
    loop = _loop_from(cfg)
    f = np.geomspace(f_lo, f_hi, n_points)
    spec = closed_loop_spectrum(loop, TWO_PI * f)
    tot = spec.branches["total"]
    peaks = _local_maxima(tot)
    summary = {
        "n_local_maxima": len(peaks),
        "maxima_hz": " ".join(f"{f[i]:.6g}" for i in peaks),
        "classical_peak_hz": f[np.argmax(spec.branches["classical"])],
        "quantum_peak_hz": f[np.argmax(spec.branches["quantum"])],
        "stable": int(spec.meta["stable"]),
        "unity_gain_hz": " ".join(f"{w / TWO_PI:.6g}" for w in ugf_for_gain(loop.servo, cfg.pendulum, 1.0)),
    }
    cols = ["freq_hz", "quantum", "classical", "dg", "total",
            "quantum_torque", "classical_torque", "dg_torque", "total_torque"]
    rows = list(zip(f, *(spec.branches[c] for c in cols[1:])))
    return ReproResult("table1-spectrum", summary, {"spectrum": (cols, rows)})


# ----------------------------------------------------------------- simulations

def ringup(cfg: Config | None = None, band_center: float = 0.6, band_width: float = 1.0,
           n_traj: int | None = None, jobs: int = 1, seed: int | None = None,
           full: Config | None = None) -> ReproResult:
    """Desk-scale ring-up from rest under radiation pressure, and its time
    constant carried to the full-scale pendulum through tau = 2Q/omega_m."""
    cfg = _cfg(cfg, "desk")
    full = _cfg(full, "reference")
    p = cfg.pendulum
    ch = build_channels(p, cfg.optics, cfg.run.noise)
    loop = _loop_from(cfg, ch, omega_sn=0.0)
    over = {"seed": seed} if seed is not None else {}
    sim = SimConfig.from_config(cfg, sn_mode="off", **over)
    res = ringup_ensemble(p, cfg.optics, cfg.sn, loop, ch, sim, band_center, band_width,
                          n_traj=n_traj, observable="motion", jobs=jobs)
    tau_true = 2 * p.q_factor / p.omega_m
    pp = full.pendulum
    scale = (pp.q_factor / p.q_factor) * (p.omega_m / pp.omega_m)
    summary = {
        "tau_fit_s": res.tau_fit,
        "tau_expected_s": tau_true,
        "tau_ratio": res.tau_fit / tau_true,
        "amplitude_fit": res.amp_fit,
        "n_traj": res.meta["n_traj"],
        "fullscale_tau_expected_days": 2 * pp.q_factor / pp.omega_m / const.DAY,
        "fullscale_tau_extrapolated_days": res.tau_fit * scale / const.DAY,
    }
    rows = list(zip(res.t_days, res.mean_asd, res.p16, res.p84))
    return ReproResult("ringup", summary, {"ensemble": (["t_days", "mean_asd", "p16", "p84"], rows)})


def _bands(spec, sim_psd, n_seg):
    """Fraction of bins where |sim - analytic| <= 3 analytic / sqrt(K)."""
    tol = 3.0 * spec / math.sqrt(n_seg)
    return float(np.mean(np.abs(sim_psd - spec) <= tol))


EQUIVALENCE_CASES = {
    "thermal": dict(thermal="on"),
    "quantum": dict(qrpn="on"),
    "sensor": dict(sensor_asd=1e-9),
}


def sim_equivalence(cfg: Config | None = None, f_lo: float = 0.1, f_hi: float = 20.0,
                    cases=tuple(EQUIVALENCE_CASES), observable: str = "readout", seed: int | None = None) -> ReproResult:
    """Welch PSD of one simulated trajectory against the closed-loop analytic curve."""
    cfg = _cfg(cfg, "desk_quadratic")
    over = {"seed": seed} if seed is not None else {}
    sim = SimConfig.from_config(cfg, **over)
    summary, rows = {}, []
    for case in cases:
        ch = _only(cfg, **EQUIVALENCE_CASES[case])
        loop = _loop_from(cfg, ch)
        rec = simulate_trajectory(cfg.pendulum, cfg.optics, cfg.sn, loop, ch, sim)
        series = rec.readout if observable == "readout" else rec.theta
        w = welch_psd(series, sim.record_dt, sim.t_bw)
        sel = (w.freq >= f_lo) & (w.freq <= f_hi)
        f = w.freq[sel]
        an = closed_loop_spectrum(loop, TWO_PI * f, observable=observable).branches["total"]
        frac = _bands(an, w.psd[sel], w.n_segments)
        summary[f"fraction_within_3sigma_{case}"] = frac
        summary[f"n_segments_{case}"] = w.n_segments
        rows.extend((case, fi, si, ai) for fi, si, ai in zip(f, w.psd[sel], an))
    return ReproResult("sim-equivalence", summary,
                       {"comparison": (["case", "freq_hz", "simulated", "analytic"], rows)})


def sn_torque_detection(cfg: Config, band: tuple[float, float], seed: int | None = None) -> tuple:
    """Simulate the non-quadratic set-up once; signal is the PSD of the SN torque,
    noise the analytic closed-loop torque-referred total. Returns (result, freq, s, n, rec)."""
    ch = build_channels(cfg.pendulum, cfg.optics, cfg.run.noise)
    loop = _loop_from(cfg, ch, omega_sn=0.0)
    over = {"seed": seed} if seed is not None else {}
    sim = SimConfig.from_config(cfg, sn_mode="nonquadratic", **over)
    rec = simulate_trajectory(cfg.pendulum, cfg.optics, cfg.sn, loop, ch, sim)
    w = welch_psd(rec.sn_torque, sim.record_dt, sim.t_bw)
    sel = w.freq > 0
    f = w.freq[sel]
    s_sig = w.psd[sel]
    s_noise = closed_loop_spectrum(loop, TWO_PI * f).branches["total_torque"]
    return time_to_detect(f, s_sig, s_noise, band), f, s_sig, s_noise, rec


def detection(current: Config | None = None, upgrade: Config | None = None,
              band_current=(1e-4, 1e-2), band_upgrade=(1e-2, 10.0), seed: int | None = None) -> ReproResult:
    current = _cfg(current, "reference")
    upgrade = _cfg(upgrade, "upgrade_nonquadratic")
    summary, tables = {}, {}
    for label, cfg, band in (("current", current, band_current), ("upgrade", upgrade, band_upgrade)):
        det, f, ss, sn, rec = sn_torque_detection(cfg, band, seed)
        ratio = ss / sn
        i = int(np.argmax(ratio))
        summary[f"{label}_years"] = det.years
        summary[f"{label}_max_signal_to_noise_psd"] = float(ratio[i])
        summary[f"{label}_max_ratio_freq_hz"] = float(f[i])
        summary[f"{label}_theta_rms_rad"] = float(np.std(rec.theta))
        summary[f"{label}_sigma_theta_rad"] = cfg.sn.sigma_theta
        tables[f"{label}_spectra"] = (["freq_hz", "signal_psd", "noise_psd"], list(zip(f, ss, sn)))
    return ReproResult("time-to-detect", summary, tables)


TARGETS: dict[str, Callable[..., ReproResult]] = {
    "s-ff": s_ff,
    "radiation-force": force,
    "optical-spring": optical_spring,
    "appendixA-budget": q_budget,
    "servo-gain": servo_gain,
    "appendixE-uncertainty": uncertainty,
    "gaussian-fit": gaussian_fit,
    "table1-spectrum": upgrade_spectrum,
    "ringup": ringup,
    "snr": snr,
    "sim-equivalence": sim_equivalence,
    "mutual-gravity": mutual_gravity,
    "time-to-detect": detection,
}

_TAKES_SEED = {"ringup", "sim-equivalence", "time-to-detect"}


def run_target(name: str, *, seed: int | None = None, jobs: int = 1) -> ReproResult:
    try:
        fn = TARGETS[name]
    except KeyError:
        raise ValueError(f"unknown repro target {name!r}; choose from {', '.join(TARGETS)}") from None
    kw = {}
    if name in _TAKES_SEED:
        kw["seed"] = seed
    if name == "ringup":
        kw["jobs"] = jobs
    return fn(**kw)

