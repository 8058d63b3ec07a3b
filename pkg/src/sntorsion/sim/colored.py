"""Noise streams for the integrator.

White channels are scaled Gaussian draws. Any other channel is synthesised by
passing unit white noise through a shaping filter: a product of first-order
real pole/zero pairs whose magnitude is fitted to the channel ASD in log-log
space, mapped to discrete time with the bilinear transform and run as
second-order sections (at most 8). The filter state carries over between
chunks, so the stream does not depend on how it is chunked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from ..noise import CHANNELS, NoisePSD


@dataclass(frozen=True)
class ShapingFilter:
    sos: np.ndarray
    zeros_hz: np.ndarray
    poles_hz: np.ndarray
    gain: float
    rms_log_residual: float  # rms of ln(|H| / ASD) on the fit grid
    f_lo: float
    f_hi: float


def _log_model(params: np.ndarray, f: np.ndarray, n: int) -> np.ndarray:
    lg, lz, lp = params[0], params[1:1 + n], params[1 + n:]
    fz = f[:, None] / np.exp(lz)[None, :]
    fp = f[:, None] / np.exp(lp)[None, :]
    return lg + 0.5 * np.sum(np.log1p(fz**2), axis=1) - 0.5 * np.sum(np.log1p(fp**2), axis=1)


def fit_shaping_filter(psd: NoisePSD, fs: float, f_lo: float, n_pairs: int = 8,
                       n_points: int = 256) -> ShapingFilter:
    """Fit |H(f)| to sqrt(psd) on [f_lo, 0.45 fs] with ``n_pairs`` pole/zero pairs."""
    if not 1 <= n_pairs <= 16:
        raise ValueError("n_pairs must be between 1 and 16 (at most 8 biquads)")
    f_hi = 0.45 * fs
    if not 0 < f_lo < f_hi:
        raise ValueError("need 0 < f_lo < 0.45 fs")
    f = np.geomspace(f_lo, f_hi, n_points)
    target = 0.5 * np.log(np.maximum(psd(2 * math.pi * f), 1e-300))
    corners = np.log(np.geomspace(f_lo, f_hi, n_pairs + 2)[1:-1])
    x0 = np.concatenate([[target[0]], corners, corners])
    lo = np.concatenate([[-np.inf], np.full(2 * n_pairs, math.log(f_lo / 100))])
    hi = np.concatenate([[np.inf], np.full(2 * n_pairs, math.log(f_hi))])
    res = optimize.least_squares(
        lambda p: _log_model(p, f, n_pairs) - target, x0, bounds=(lo, hi), method="trf",
        x_scale="jac", max_nfev=4000,
    )
    g = math.exp(res.x[0])
    zh = np.exp(res.x[1:1 + n_pairs])
    ph = np.exp(res.x[1 + n_pairs:])
    wz, wp = 2 * math.pi * zh, 2 * math.pi * ph
    k = g * float(np.prod(wp / wz))
    zd, pd, kd = signal.bilinear_zpk(-wz, -wp, k, fs)
    sos = signal.zpk2sos(zd, pd, kd)
    _, h = signal.sosfreqz(sos, worN=f, fs=fs)
    resid = float(np.sqrt(np.mean((np.log(np.abs(h)) - target) ** 2)))
    return ShapingFilter(sos, zh, ph, g, resid, f_lo, f_hi)


def channel_rng(seed: int, traj: int, channel: str) -> np.random.Generator:
    """Independent PCG64 stream keyed by (seed, trajectory index, channel)."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(traj, CHANNELS.index(channel)))))


class NoiseStream:
    """Sequential samples of one channel at step dt (one-sided PSD -> var S/(2 dt))."""

    def __init__(self, psd: NoisePSD, dt: float, seed: int, traj: int, f_lo: float,
                 burn_in: int | None = None):
        self.psd = psd
        self.dt = dt
        self.kind = "zero" if psd.is_zero else ("white" if psd.white is not None else "colored")
        self.rng = channel_rng(seed, traj, psd.channel)
        self.filter: ShapingFilter | None = None
        if self.kind == "white":
            self.scale = math.sqrt(psd.white / (2.0 * dt))
        elif self.kind == "colored":
            fs = 1.0 / dt
            self.filter = fit_shaping_filter(psd, fs, f_lo)
            self.scale = math.sqrt(fs / 2.0)
            self.zi = np.zeros((self.filter.sos.shape[0], 2))
            n_burn = burn_in if burn_in is not None else int(min(20.0 / (f_lo * dt), 2**20))
            self.take(n_burn)

    def take(self, n: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(n)
        w = self.rng.standard_normal(n) * self.scale
        if self.kind == "white":
            return w
        out, self.zi = signal.sosfilt(self.filter.sos, w, zi=self.zi)
        return out
