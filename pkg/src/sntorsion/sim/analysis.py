"""Spectral estimation, ring-up ensembles and detection statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .. import constants as const
from ..noise import s_ff_quantum
from ..params import OpticalParams, PendulumParams, SNModel
from ..spectrum import SpectrumResult
from .core import SimConfig, TrajectoryRecord, simulate_ensemble

__all__ = [
    "welch_psd",
    "segment_psd",
    "RingupResult",
    "ringup_ensemble",
    "ringup_model",
    "fit_ringup",
    "steady_state_stats",
    "time_to_detect",
    "DetectionResult",
]


def _nperseg(n: int, dt: float, t_bw: float) -> int:
    nper = int(round(t_bw / dt))
    if nper < 2:
        raise ValueError("t_bw must span at least two samples")
    if n < nper:
        raise ValueError(f"series has {n} samples, fewer than one segment ({nper})")
    return nper


def welch_psd(series, dt: float, t_bw: float, window: str = "hann", overlap: float = 0.0,
              branch: str = "series") -> SpectrumResult:
    """Segment-averaged one-sided PSD; each segment is mean-detrended and the
    window power is compensated (density scaling)."""
    x = np.asarray(series, dtype=float)
    nper = _nperseg(x.size, dt, t_bw)
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    nover = int(round(overlap * nper))
    f, p = signal.welch(x, fs=1.0 / dt, window=window, nperseg=nper, noverlap=nover,
                        detrend="constant", scaling="density", return_onesided=True)
    n_seg = 1 + (x.size - nper) // (nper - nover)
    return SpectrumResult(f, {branch: p}, branch, n_segments=n_seg, window=window,
                          meta={"t_bw": t_bw, "overlap": overlap, "dt": dt})


def segment_psd(series, dt: float, t_bw: float, window: str = "hann"):
    """Per-segment periodograms: (segment start times, freq, psd[segment, freq])."""
    x = np.asarray(series, dtype=float)
    nper = _nperseg(x.size, dt, t_bw)
    f, t, sxx = signal.spectrogram(x, fs=1.0 / dt, window=window, nperseg=nper, noverlap=0,
                                   detrend="constant", scaling="density", mode="psd")
    starts = t - 0.5 * nper * dt
    return starts, f, sxx.T


# ----------------------------------------------------------------- ring-up

def ringup_model(starts, t_bw: float, tau: float, window: str = "hann", n_sub: int = 256):
    """Window-weighted segment average of 1 - exp(-2 t / tau).

    For a fresh oscillator driven by stationary noise the band power grows like
    the variance, 1 - exp(-gamma t) with gamma = 2/tau (tau: amplitude time constant).
    """
    w = signal.get_window(window, n_sub) ** 2
    w /= w.sum()
    u = (np.arange(n_sub) + 0.5) / n_sub * t_bw
    t = np.asarray(starts, dtype=float)[:, None] + u[None, :]
    return (-np.expm1(-2.0 * t / tau)) @ w


def fit_ringup(starts, mean_asd, t_bw: float, tau0: float, window: str = "hann") -> tuple[float, float]:
    """Fit mean_asd = a sqrt(ringup_model(tau)); returns (tau, a)."""
    y = np.asarray(mean_asd, dtype=float)
    a0 = float(np.max(y))

    def res(p):
        return p[1] * np.sqrt(ringup_model(starts, t_bw, math.exp(p[0]), window)) / a0 - y / a0

    sol = optimize.least_squares(res, [math.log(tau0), a0], method="lm", xtol=1e-12, ftol=1e-12)
    return math.exp(sol.x[0]), float(sol.x[1])


@dataclass
class RingupResult:
    t_days: np.ndarray          # segment centres
    mean_asd: np.ndarray
    p16: np.ndarray
    p84: np.ndarray
    per_traj: np.ndarray        # (n_traj, n_segments)
    band: tuple[float, float]
    tau_fit: float | None = None
    amp_fit: float | None = None
    meta: dict = field(default_factory=dict)


def band_asd(rec_series, dt: float, t_bw: float, f_c: float, width: float):
    starts, f, sxx = segment_psd(rec_series, dt, t_bw)
    sel = (f >= f_c - width / 2) & (f <= f_c + width / 2)
    if not sel.any():
        sel = np.zeros_like(f, dtype=bool)
        sel[np.argmin(np.abs(f - f_c))] = True
    return starts, np.sqrt(sxx[:, sel].mean(axis=1))


def ringup_ensemble(pendulum: PendulumParams, optics: OpticalParams | None, sn: SNModel, loop,
                    channels, sim: SimConfig, band_center: float, band_width: float,
                    n_traj: int | None = None, *, observable: str = "readout", jobs: int = 1,
                    fit: bool = True) -> RingupResult:
    """Per-segment band ASD of every trajectory and their ensemble statistics."""
    if band_center < 1.0 / sim.t_bw:
        raise ValueError(f"band centre {band_center:g} Hz is below the resolution 1/t_bw = {1 / sim.t_bw:g} Hz")
    if sim.duration < 2 * sim.t_bw:
        raise ValueError("duration must cover several t_bw segments")
    if n_traj is not None:
        sim = SimConfig(**{**sim.__dict__, "n_traj": n_traj})
    recs = simulate_ensemble(pendulum, optics, sn, loop, channels, sim, jobs=jobs)
    curves = []
    starts = None
    for rec in recs:
        series = rec.readout if observable == "readout" else rec.theta
        starts, asd = band_asd(series, sim.record_dt, sim.t_bw, band_center, band_width)
        curves.append(asd)
    per = np.array(curves)
    mean = per.mean(axis=0)
    out = RingupResult(
        t_days=(starts + 0.5 * sim.t_bw) / const.DAY,
        mean_asd=mean,
        p16=np.percentile(per, 16, axis=0),
        p84=np.percentile(per, 84, axis=0),
        per_traj=per,
        band=(band_center - band_width / 2, band_center + band_width / 2),
        meta={"segment_starts_s": starts, "t_bw": sim.t_bw, "n_traj": len(recs), "observable": observable},
    )
    if fit and np.any(mean > 0):
        tau0 = 2 * pendulum.q_factor / pendulum.omega_m
        out.tau_fit, out.amp_fit = fit_ringup(starts, mean, sim.t_bw, tau0)
    return out


# ----------------------------------------------------------------- analytic chain

def steady_state_stats(pendulum: PendulumParams, optics: OpticalParams, sn: SNModel,
                       t_bw: float = 32768.0, s_noise: float = (3e-7) ** 2) -> dict:
    """Peak PSD at omega_q, the single-window measured PSD and its SNR.

    S_thth = Q^2 L^2 S_FF / (I^2 omega_q^4);  S_meas = omega_q T_bw S_thth / (2 pi Q);
    SNR = sqrt(S_meas / S_noise). The lever arm is the pendulum arm length L.
    """
    wq = math.hypot(pendulum.omega_m, sn.omega_sn)
    q, L, i = pendulum.q_factor, pendulum.arm_length, pendulum.inertia_rz
    s_ff = s_ff_quantum(optics)
    s_th = q * q * L * L * s_ff / (i * i * wq**4)
    s_meas = wq * t_bw * s_th / (2 * math.pi * q)
    snr = math.sqrt(s_meas / s_noise) if s_noise > 0 else math.inf
    return {"omega_q": wq, "s_ff": s_ff, "s_thetatheta": s_th, "s_meas": s_meas, "snr": snr}


@dataclass
class DetectionResult:
    seconds: float
    freq: np.ndarray
    per_bin: np.ndarray   # (S_s / S_n)^2 df of each bin
    band: tuple[float, float]

    @property
    def years(self) -> float:
        return self.seconds / const.YEAR


def time_to_detect(freq, s_signal, s_noise, band: tuple[float, float]) -> DetectionResult:
    """Integration time for unit SNR: 1/T = sum over the band of (S_s/S_n)^2 df."""
    f = np.asarray(freq, dtype=float)
    ss = np.asarray(s_signal, dtype=float)
    sn = np.asarray(s_noise, dtype=float)
    if not (f.shape == ss.shape == sn.shape):
        raise ValueError("signal and noise curves must share the frequency grid")
    sel = (f >= band[0]) & (f <= band[1])
    if not sel.any():
        raise ValueError("no frequency bins inside the band")
    if np.any(sn[sel] <= 0):
        raise ValueError("noise PSD must be > 0 on the band")
    df = np.gradient(f)[sel] if f.size > 1 else np.ones(1)
    contrib = (ss[sel] / sn[sel]) ** 2 * df
    rate = contrib.sum()
    return DetectionResult(math.inf if rate == 0 else 1.0 / rate, f[sel], contrib, band)


def record_psd(rec: TrajectoryRecord, sim: SimConfig, field_name: str = "readout", overlap: float = 0.0):
    return welch_psd(getattr(rec, field_name), sim.record_dt, sim.t_bw, overlap=overlap, branch=field_name)
