"""Servo transfer functions, response functions and closed-loop noise spectra.

Sign and frequency conventions
------------------------------
``eval_tf`` evaluates a rational function at ``s = i*Omega``. ``mech_response``
returns ``1 / (I (w^2 - Omega^2 - i gamma Omega))``, i.e. the response written
with the opposite Fourier sign. Only magnitudes of the product C*chi appear in
the gain calibration, but the closed-loop denominators 1 + chi*C depend on its
phase. The loop product is therefore always formed with both factors taken
at the same Laplace point, ``C(i Omega) * conj(chi(Omega))``; that is the loop the
time-domain integrator realises.

Pre-selection split of the readout ``y = theta + n``::

    y = [chi_q (F_q) + n_zp] / (1 + chi_q C) + [chi_m (F_cl) + n_cl] / (1 + chi_m C) + dG <B>
    x = [chi_q F_q - C chi_q n_zp] / (1 + chi_q C) + [chi_m F_cl - C chi_m n_cl] / (1 + chi_m C) + dG <B>

with F_q the quantum torques (back-action, zero-point thermal part) and F_cl the
classical torques (thermal, actuator, classical radiation pressure).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize, signal

from .noise import NoisePSD, SENSOR_CHANNELS, TORQUE_CHANNELS
from .params import PendulumParams, ServoSettings
from .spectrum import SpectrumResult

__all__ = [
    "RationalTF",
    "LoopModel",
    "GridError",
    "eval_tf",
    "mech_response",
    "servo_template",
    "build_servo",
    "calibrate_gain",
    "ugf_for_gain",
    "stability_report",
    "closed_loop_spectrum",
    "residual_uncertainty",
]

_CLASSICAL_TORQUES = ("thermal_cl", "actuator_dac", "classical_radiation")
_QUANTUM_TORQUES = ("thermal_zp", "qrpn")


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class RationalTF:
    """num(s)/den(s), coefficients in ascending powers of s."""

    num: tuple[float, ...]
    den: tuple[float, ...]
    label: str = ""

    def __post_init__(self) -> None:
        num = tuple(float(c) for c in np.trim_zeros(np.asarray(self.num, dtype=float), "b")) or (0.0,)
        den = tuple(float(c) for c in np.trim_zeros(np.asarray(self.den, dtype=float), "b"))
        if not den:
            raise ValueError("denominator coefficients are all zero")
        if len(num) > len(den):
            raise ValueError("improper transfer function (numerator degree > denominator degree)")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return P.polyval(s, self.num) / P.polyval(s, self.den)

    @property
    def poles(self) -> np.ndarray:
        return P.polyroots(self.den) if len(self.den) > 1 else np.array([])

    @property
    def zeros(self) -> np.ndarray:
        return P.polyroots(self.num) if len(self.num) > 1 else np.array([])

    @property
    def is_zero(self) -> bool:
        return not any(self.num)

    def scaled(self, gain: float) -> "RationalTF":
        return RationalTF(tuple(gain * c for c in self.num), self.den, self.label)

    def time_scaled(self, k: float) -> "RationalTF":
        """k^2 C(s/k): the servo that keeps C*chi invariant when every rate of the
        plant is multiplied by k."""
        if k <= 0:
            raise ValueError("time-scale factor must be > 0")
        num = tuple(k * k * c / k**j for j, c in enumerate(self.num))
        den = tuple(c / k**j for j, c in enumerate(self.den))
        return RationalTF(num, den, self.label)

    def state_space(self):
        """(A, B, C, D) of a controllable realisation (scipy.signal.tf2ss)."""
        return signal.tf2ss(self.num[::-1], self.den[::-1])


def eval_tf(tf: RationalTF, omega):
    """tf(i*Omega) for Omega > 0."""
    om = np.asarray(omega, dtype=float)
    if np.any(om <= 0):
        raise ValueError("omega must be > 0 (a pole at the origin makes Omega = 0 singular)")
    out = tf(1j * om)
    return complex(out) if out.ndim == 0 else out


def mech_response(pendulum: PendulumParams, omega_eig: float, omega):
    """chi(Omega) = 1 / (I (w_eig^2 - Omega^2 - i gamma_m Omega)), rad per N m."""
    om = np.asarray(omega, dtype=float)
    out = 1.0 / (pendulum.inertia_rz * (omega_eig**2 - om**2 - 1j * pendulum.gamma_m * om))
    return complex(out) if out.ndim == 0 else out


def _chi_laplace(pendulum: PendulumParams, omega_eig: float, omega):
    # plant 1/(I (s^2 + gamma s + w^2)) at s = i Omega
    return np.conj(mech_response(pendulum, omega_eig, omega))


# ----------------------------------------------------------------- servo shapes

_TWO_PI = 2.0 * math.pi


def servo_template(kind: str, eps: float | None = None) -> RationalTF:
    """Servo shape with unit gain.

    baseline:           (s + 2pi 1e-3)^2 / (s (s + 2pi))
    quadratic_upgrade:    (eps s^2 + 4pi 1e-3 s + 4pi^2 1e-6) / (s (s + 2pi))
    nonquadratic_upgrade: (eps s^2 + 4pi 1e-2 s + 4pi^2 1e-4) / (s (s + 20pi))
    """
    if kind == "baseline":
        z = _TWO_PI * 1e-3
        return RationalTF((z * z, 2 * z, 1.0), (0.0, _TWO_PI, 1.0), kind)
    if kind == "quadratic_upgrade":
        e = 0.1 if eps is None else eps
        return RationalTF((4 * math.pi**2 * 1e-6, 4 * math.pi * 1e-3, e), (0.0, _TWO_PI, 1.0), kind)
    if kind == "nonquadratic_upgrade":
        e = 0.5 if eps is None else eps
        return RationalTF((4 * math.pi**2 * 1e-4, 4 * math.pi * 1e-2, e), (0.0, 20 * math.pi, 1.0), kind)
    raise ValueError(f"no built-in servo template {kind!r}")


def calibrate_gain(template: RationalTF, pendulum: PendulumParams, omega_ugf: float) -> float:
    """A0 with |A0 C(i w) chi_m(w)| = 1 at w = omega_ugf."""
    mag = abs(eval_tf(template, omega_ugf) * mech_response(pendulum, pendulum.omega_m, omega_ugf))
    if not mag > 0:
        raise ValueError("template response vanishes at the unity-gain frequency")
    return 1.0 / mag


def ugf_for_gain(template: RationalTF, pendulum: PendulumParams, a0: float,
                 lo: float | None = None, hi: float | None = None) -> list[float]:
    """All unity-gain crossings |a0 C chi_m| = 1 in [lo, hi] (rad/s)."""
    lo = lo or pendulum.omega_m * 1e-3
    hi = hi or pendulum.omega_m * 1e4
    grid = np.geomspace(lo, hi, 4000)

    def g(w):
        return np.log(abs(a0 * eval_tf(template, w) * mech_response(pendulum, pendulum.omega_m, w)))

    vals = g(grid)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        roots.append(optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-14 * grid[i]))
    return roots


def build_servo(settings: ServoSettings, pendulum: PendulumParams) -> RationalTF | None:
    """Servo from config. The built-in shapes are defined at full time scale and
    are mapped through ``time_scaled(time_scale)``; A0 is either given or
    calibrated at ``omega_ugf`` against the (already scaled) pendulum."""
    if settings.kind == "none":
        return None
    if settings.kind == "custom":
        tf = RationalTF(settings.num, settings.den, "custom")
    else:
        tf = servo_template(settings.kind, settings.eps)
    tf = tf.time_scaled(settings.time_scale) if settings.time_scale != 1.0 else tf
    if settings.a0 is not None:
        return tf.scaled(settings.a0)
    if settings.omega_ugf is not None:
        return tf.scaled(calibrate_gain(tf, pendulum, settings.omega_ugf))
    if settings.kind == "custom":
        return tf
    raise ValueError("servo needs a0 or omega_ugf")


# ----------------------------------------------------------------- loop model

@dataclass
class LoopModel:
    pendulum: PendulumParams
    servo: RationalTF | None
    omega_sn: float
    channels: dict[str, NoisePSD]
    prescription: str = "preselection"
    mean_forcing: NoisePSD | None = None
    acknowledge_unstable: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.prescription != "preselection":
            raise ValueError("only the pre-selection prescription is implemented")
        missing = [c for c in (*TORQUE_CHANNELS, *SENSOR_CHANNELS) if c not in self.channels]
        for c in missing:
            self.channels[c] = NoisePSD.constant(c, 0.0)

    @property
    def omega_q(self) -> float:
        return math.hypot(self.pendulum.omega_m, self.omega_sn)

    def chi_m(self, omega):
        return mech_response(self.pendulum, self.pendulum.omega_m, omega)

    def chi_q(self, omega):
        return mech_response(self.pendulum, self.omega_q, omega)

    def servo_at(self, omega):
        if self.servo is None:
            return np.zeros(np.shape(omega), dtype=complex)
        return eval_tf(self.servo, omega)

    def loop_gain(self, omega, omega_eig: float):
        """C * chi at a common Laplace point."""
        return self.servo_at(omega) * _chi_laplace(self.pendulum, omega_eig, omega)


def stability_report(loop: LoopModel) -> dict:
    """Closed-loop poles of both branches from 1 + chi C = 0.

    The characteristic polynomial I (s^2 + gamma s + w^2) den(s) + num(s) is
    factored exactly; a branch is stable when every root has Re < 0.
    """
    out = {}
    p = loop.pendulum
    num = loop.servo.num if loop.servo is not None else (0.0,)
    den = loop.servo.den if loop.servo is not None else (1.0,)
    for name, w in (("classical", p.omega_m), ("quantum", loop.omega_q)):
        mech = np.array([w * w, p.gamma_m, 1.0]) * p.inertia_rz
        char = P.polyadd(P.polymul(mech, den), num)
        roots = P.polyroots(char)
        out[name] = {"roots": roots, "stable": bool(np.all(roots.real < 0))}
    out["stable"] = all(v["stable"] for v in out.values() if isinstance(v, dict))
    return out


def _psd(loop: LoopModel, name: str, omega, channels) -> np.ndarray:
    if channels is not None and name not in channels:
        return np.zeros(np.shape(omega))
    return loop.channels[name](omega)


def closed_loop_spectrum(loop: LoopModel, omega, include_dg: bool = False, *,
                         observable: str = "readout", channels=None) -> SpectrumResult:
    """Pre-selection closed-loop PSD on the angular-frequency grid ``omega``.

    Branches (rad^2/Hz): ``quantum``, ``classical``, ``dg`` and ``total``.
    Torque-referred companions (N^2 m^2/Hz) ``*_torque`` divide each branch by its
    open-loop response, which removes the loop: S_F + S_n / |chi|^2.

    observable: ``readout`` (y = theta + n) or ``motion`` (theta).
    channels: optional subset of channel names; the rest are treated as zero.
    """
    om = np.asarray(omega, dtype=float)
    if om.ndim != 1 or om.size < 2 or np.any(om <= 0) or np.any(np.diff(om) <= 0):
        raise GridError("frequency grid must be strictly positive and ascending")
    if observable not in ("readout", "motion"):
        raise ValueError(f"unknown observable {observable!r}")
    stab = stability_report(loop)
    if not stab["stable"] and not loop.acknowledge_unstable:
        warnings.warn("closed loop is unstable; spectra are formal", RuntimeWarning, stacklevel=2)

    p = loop.pendulum
    chi_q = _chi_laplace(p, loop.omega_q, om)
    chi_m = _chi_laplace(p, p.omega_m, om)
    c = loop.servo_at(om)
    den_q = np.abs(1.0 + chi_q * c) ** 2
    den_m = np.abs(1.0 + chi_m * c) ** 2

    f_q = sum(_psd(loop, n, om, channels) for n in _QUANTUM_TORQUES)
    f_cl = sum(_psd(loop, n, om, channels) for n in _CLASSICAL_TORQUES)
    n_zp = _psd(loop, "sensor_zp", om, channels)
    n_cl = _psd(loop, "sensor_cl", om, channels)

    if observable == "readout":
        g_q, g_m = np.ones_like(om), np.ones_like(om)
    else:
        g_q, g_m = np.abs(c * chi_q) ** 2, np.abs(c * chi_m) ** 2
    quantum = (np.abs(chi_q) ** 2 * f_q + g_q * n_zp) / den_q
    classical = (np.abs(chi_m) ** 2 * f_cl + g_m * n_cl) / den_m

    dg = np.zeros_like(om)
    if include_dg and loop.mean_forcing is not None:
        delta_g = chi_m / (1.0 + chi_m * c) - chi_q / (1.0 + chi_q * c)
        dg = np.abs(delta_g) ** 2 * loop.mean_forcing(om)

    with np.errstate(divide="ignore", invalid="ignore"):
        q_t = f_q + n_zp / np.abs(chi_q) ** 2
        c_t = f_cl + n_cl / np.abs(chi_m) ** 2
        dg_t = np.where(dg > 0, dg * den_m / np.abs(chi_m) ** 2, 0.0)
    branches = {
        "quantum": quantum,
        "classical": classical,
        "dg": dg,
        "total": quantum + classical + dg,
        "quantum_torque": q_t,
        "classical_torque": c_t,
        "dg_torque": dg_t,
        "total_torque": q_t + c_t + dg_t,
    }
    meta = {
        "observable": observable,
        "include_dg": include_dg,
        "stable": stab["stable"],
        "omega_q": loop.omega_q,
        "channels": sorted(channels) if channels is not None else "all",
    }
    return SpectrumResult(om / (2 * math.pi), branches, "total", meta=meta)


def _refine_near_poles(loop: LoopModel, om: np.ndarray, n: int = 4001) -> np.ndarray:
    """Add sample points around every lightly damped closed-loop pole.

    A resonance of half-width |Re p| is far narrower than any sensible log grid at
    high Q; the points follow |Im p| + |Re p| sinh(u) so the Lorentzian is resolved.
    """
    stab = stability_report(loop)
    extra = [om]
    u = np.sinh(np.linspace(-14.0, 14.0, n))
    for name in ("classical", "quantum"):
        for r in stab[name]["roots"]:
            if r.imag > 0:
                pts = r.imag + abs(r.real) * u
                extra.append(pts[(pts > om[0]) & (pts < om[-1])])
    return np.unique(np.concatenate(extra))


def residual_uncertainty(loop: LoopModel, omega, branch: str = "quantum", *, channels=None,
                         measure: str = "per_hz", observable: str = "motion",
                         decay: float = 1e-6) -> tuple[float, float]:
    """(Delta theta, Delta x = L Delta theta) from the integrated motion PSD.

    measure: ``per_hz`` integrates S dOmega/2pi (one-sided PSD per Hz);
    ``per_rad`` integrates S dOmega.
    """
    om = np.asarray(omega, dtype=float)
    wq = loop.omega_q
    if om[0] > wq / 100 * (1 + 1e-12) or om[-1] < 100 * wq * (1 - 1e-12):
        raise GridError("grid must cover [omega_q/100, 100 omega_q]")
    om = _refine_near_poles(loop, om)
    spec = closed_loop_spectrum(loop, om, observable=observable, channels=channels)
    s = spec.branches[branch]
    peak = np.max(s)
    if peak == 0:
        return 0.0, 0.0
    if s[0] > decay * peak or s[-1] > decay * peak:
        raise GridError(f"integrand has not decayed below {decay:g} of its peak at the grid ends")
    integral = np.trapezoid(s, om)
    if measure == "per_hz":
        integral /= 2 * math.pi
    elif measure != "per_rad":
        raise ValueError(f"unknown measure {measure!r}")
    dtheta = math.sqrt(integral)
    return dtheta, loop.pendulum.arm_length * dtheta
