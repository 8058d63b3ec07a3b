"""Noise spectra, loss mechanisms and the optical spring."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import constants as const
from .params import (
    DacParams,
    EddyParams,
    FiberParams,
    GasParams,
    NoiseSettings,
    OpticalParams,
    PendulumParams,
)

__all__ = [
    "CHANNELS",
    "TORQUE_CHANNELS",
    "SENSOR_CHANNELS",
    "NoisePSD",
    "read_psd_file",
    "s_ff_quantum",
    "radiation_force",
    "q_factor",
    "combine_q",
    "thermal_torque_psd",
    "optical_spring_shift",
    "build_channels",
]

CHANNELS = (
    "thermal_cl",
    "thermal_zp",
    "sensor_cl",
    "sensor_zp",
    "qrpn",
    "actuator_dac",
    "classical_radiation",
)
TORQUE_CHANNELS = ("thermal_cl", "thermal_zp", "qrpn", "actuator_dac", "classical_radiation")
SENSOR_CHANNELS = ("sensor_cl", "sensor_zp")
QUANTUM_CHANNELS = ("thermal_zp", "qrpn", "sensor_zp")


class _Const:
    def __init__(self, value: float):
        self.value = value

    def __call__(self, om):
        return np.full(np.shape(om), self.value)


class _LogLog:
    """Log-log linear interpolation of a (freq_hz, psd) table, flat outside it."""

    def __init__(self, f: np.ndarray, p: np.ndarray):
        self.lf = np.log(f)
        self.tiny = np.finfo(float).tiny
        self.lp = np.log(np.maximum(p, self.tiny))

    def __call__(self, om):
        fh = np.asarray(om, dtype=float) / const.TWO_PI
        out = np.exp(np.interp(np.log(np.maximum(fh, self.tiny)), self.lf, self.lp))
        return np.where(out <= self.tiny, 0.0, out)


class _Scaled:
    def __init__(self, inner, factor: float):
        self.inner = inner
        self.factor = factor

    def __call__(self, om):
        return self.factor * self.inner(om)


class _Thermal:
    def __init__(self, pendulum: PendulumParams, model: str, factor: float):
        self.pendulum = pendulum
        self.model = model
        self.factor = factor

    def __call__(self, om):
        return self.factor * thermal_torque_psd(self.pendulum, om, self.model)


@dataclass(frozen=True)
class NoisePSD:
    """One-sided PSD of a single channel as a function of angular frequency.

    Torque channels are in N^2 m^2/Hz, sensor channels in rad^2/Hz. A white channel
    stores its level in ``white``; tabulated channels keep their table so that the
    time-domain shaping filter can be fitted against it.
    """

    channel: str
    evaluator: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    white: float | None = None
    table: tuple[np.ndarray, np.ndarray] | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self) -> None:
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown noise channel {self.channel!r}")

    def __call__(self, omega) -> np.ndarray:
        om = np.asarray(omega, dtype=float)
        return np.broadcast_to(np.asarray(self.evaluator(om), dtype=float), om.shape).copy()

    @property
    def is_zero(self) -> bool:
        if self.white is not None:
            return self.white == 0.0
        return self.table is not None and not np.any(self.table[1] > 0)

    def scaled(self, factor: float) -> "NoisePSD":
        if factor < 0:
            raise ValueError("PSD scale factor must be >= 0")
        if self.white is not None:
            return NoisePSD.constant(self.channel, self.white * factor, self.label)
        f, p = self.table
        return NoisePSD.tabulated(self.channel, f, p * factor, self.label)

    @classmethod
    def constant(cls, channel: str, value: float, label: str = "") -> "NoisePSD":
        if value < 0:
            raise ValueError("PSD level must be >= 0")
        return cls(channel, _Const(float(value)), white=float(value), label=label)

    @classmethod
    def tabulated(cls, channel: str, freq_hz, psd, label: str = "") -> "NoisePSD":
        """Log-log linear interpolation in (f, PSD); flat extrapolation outside the table."""
        f = np.asarray(freq_hz, dtype=float)
        p = np.asarray(psd, dtype=float)
        if f.ndim != 1 or f.shape != p.shape or f.size < 2:
            raise ValueError("tabulated PSD needs two equal-length columns with >= 2 rows")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("tabulated PSD frequencies must be positive and strictly ascending")
        if np.any(p < 0):
            raise ValueError("tabulated PSD values must be >= 0")
        return cls(channel, _LogLog(f, p), table=(f, p), label=label)


def read_psd_file(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two-column ``freq_hz, psd`` CSV. Lines starting with ``#`` are skipped,
    as is a non-numeric header row."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(line for line in fh if not line.lstrip().startswith("#")):
            if not rec or not "".join(rec).strip():
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"{path}: malformed row {rec!r}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]


# ----------------------------------------------------------------- optics

def s_ff_quantum(optics: OpticalParams) -> float:
    """Quantum back-action force PSD 8 hbar omega_0 P_cav B / c^2 (N^2/Hz)."""
    return 8.0 * const.HBAR * optics.omega_0 * optics.p_cav * optics.buildup / const.C_LIGHT**2


def radiation_force(p_cav: float) -> float:
    if p_cav < 0:
        raise ValueError("p_cav must be >= 0")
    return 2.0 * p_cav / const.C_LIGHT


def optical_spring_shift(optics: OpticalParams, pendulum: PendulumParams) -> tuple[float, float]:
    """Relative change of omega_m^2 and the resulting frequency shift in Hz."""
    rel = (
        16.0 * math.pi * optics.p_cav * pendulum.arm_length**2 * optics.detuning
        / (pendulum.inertia_rz * optics.wavelength * optics.input_transmissivity**2 * const.C_LIGHT
           * optics.g_fss * optics.g_iss * pendulum.omega_m**2)
    )
    # sqrt(1 + rel) - 1 without cancellation
    return rel, pendulum.f_m * math.expm1(0.5 * math.log1p(rel))


# ----------------------------------------------------------------- thermal

def thermal_torque_psd(pendulum: PendulumParams, omega, model: str = "viscous"):
    """Fluctuation-dissipation torque PSD, N^2 m^2/Hz (one-sided).

    viscous:    4 k_B T I gamma_m
    structural: 4 k_B T I omega_m^2 / (Q Omega)
    """
    om = np.asarray(omega, dtype=float)
    if np.any(om <= 0):
        raise ValueError("omega must be > 0")
    kt4 = 4.0 * const.K_B * pendulum.temperature * pendulum.inertia_rz
    if model == "viscous":
        out = np.full(om.shape, kt4 * pendulum.gamma_m)
    elif model == "structural":
        out = kt4 * pendulum.omega_m**2 / (pendulum.q_factor * om)
    else:
        raise ValueError(f"unknown thermal model {model!r}")
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------- loss budget

def _gas(p: GasParams, **_):
    q = (math.pi / 2) ** 1.5 * (p.mass / p.area) * p.frequency * math.sqrt(
        const.R_GAS * p.gas_temperature / p.molar_mass) / p.pressure
    return q, {"mechanism": "gas", "Q": q, "pressure_Pa": p.pressure}


def _thermoelastic(p: FiberParams, omega: float | None = None, **_):
    if omega is None or omega <= 0:
        raise ValueError("thermoelastic loss needs omega > 0")
    tau = p.density * p.heat_capacity * p.diameter**2 / (4.32 * math.pi * p.conductivity)
    wt = omega * tau
    delta = (p.alpha_thermal - p.static_stress * p.beta_te / p.youngs_modulus) ** 2
    phi = p.youngs_modulus * p.temperature / (p.density * p.heat_capacity) * delta * wt / (1.0 + wt * wt)
    q = math.inf if phi == 0 else 1.0 / phi
    return q, {"mechanism": "thermoelastic", "phi": phi, "Q": q, "tau_s": tau, "omega": omega}


def _surface(p: FiberParams, **_):
    phi = 8.0 * p.surface_loss_depth_product / p.diameter
    return 1.0 / phi, {"mechanism": "surface", "phi": phi, "Q": 1.0 / phi}


def _eddy(p: EddyParams, pendulum: PendulumParams | None = None, **_):
    if pendulum is None:
        raise ValueError("eddy-current loss needs the pendulum (omega_m, inertia)")
    q = pendulum.omega_m * pendulum.inertia_rz / (p.damping * p.lever_arm**2)
    return q, {"mechanism": "eddy", "Q": q, "lever_arm_m": p.lever_arm}


def _dac(p: DacParams, **_):
    q = (p.rms_end / p.rms_start) ** 2 / p.frequency
    note = ("formula RMS = RMS0 sqrt(Q f) evaluated as printed; "
            "a value of 5e4 does not follow from these inputs")
    return q, {"mechanism": "dac_rms", "Q": q, "note": note}


_MECHANISMS = {
    "gas": (_gas, GasParams),
    "thermoelastic": (_thermoelastic, FiberParams),
    "surface": (_surface, FiberParams),
    "eddy": (_eddy, EddyParams),
    "dac_rms": (_dac, DacParams),
}


def q_factor(mechanism: str, inputs, *, omega: float | None = None,
             pendulum: PendulumParams | None = None) -> tuple[float, dict]:
    """Quality factor of one loss mechanism and a diagnostic record.

    Thermoelastic loss is frequency dependent and needs ``omega``; eddy-current
    damping needs the pendulum. The diagnostic carries the loss angle where one
    is defined.
    """
    try:
        fn, kind = _MECHANISMS[mechanism]
    except KeyError:
        raise ValueError(f"unknown mechanism {mechanism!r}; choose from {sorted(_MECHANISMS)}") from None
    if not isinstance(inputs, kind):
        raise TypeError(f"{mechanism} expects {kind.__name__}, got {type(inputs).__name__}")
    return fn(inputs, omega=omega, pendulum=pendulum)


def combine_q(qs) -> float:
    """1/Q_total = sum 1/Q_i."""
    inv = sum(0.0 if math.isinf(q) else 1.0 / q for q in qs)
    if any(q <= 0 for q in qs):
        raise ValueError("quality factors must be > 0")
    return math.inf if inv == 0 else 1.0 / inv


# ----------------------------------------------------------------- channel set

def _file_or_white(channel: str, asd: float, path: str, scale: float = 1.0) -> NoisePSD:
    if path:
        f, p = read_psd_file(path)
        return NoisePSD.tabulated(channel, f, p * scale, label=Path(path).name)
    return NoisePSD.constant(channel, (asd * math.sqrt(scale)) ** 2 if asd else 0.0, label="white")


def _split(psd: NoisePSD, channel: str, frac: float) -> NoisePSD:
    if psd.white is not None:
        return NoisePSD.constant(channel, frac * psd.white, psd.label)
    if psd.table is not None:
        return NoisePSD.tabulated(channel, psd.table[0], frac * psd.table[1], psd.label)
    return NoisePSD(channel, _Scaled(psd.evaluator, frac), label=psd.label)


def build_channels(pendulum: PendulumParams, optics: OpticalParams, settings: NoiseSettings) -> dict[str, NoisePSD]:
    """Assemble every channel from the noise settings. Channels that are switched
    off are present with zero PSD, so downstream code never needs to special-case."""
    out: dict[str, NoisePSD] = {}
    if settings.thermal == "on":
        model = settings.thermal_model
        zp = settings.thermal_zp_fraction
        if model == "viscous":
            level = thermal_torque_psd(pendulum, 1.0)
            out["thermal_cl"] = NoisePSD.constant("thermal_cl", level * (1 - zp), "viscous FDT")
            out["thermal_zp"] = NoisePSD.constant("thermal_zp", level * zp, "viscous FDT")
        else:
            out["thermal_cl"] = NoisePSD("thermal_cl", _Thermal(pendulum, model, 1 - zp), label=model)
            out["thermal_zp"] = NoisePSD("thermal_zp", _Thermal(pendulum, model, zp), label=model)
    else:
        out["thermal_cl"] = NoisePSD.constant("thermal_cl", 0.0)
        out["thermal_zp"] = NoisePSD.constant("thermal_zp", 0.0)

    if settings.qrpn == "on":
        if settings.backaction == "buildup":
            level = s_ff_quantum(optics) * pendulum.arm_length**2
        else:
            level = (const.HBAR * optics.coupling * pendulum.arm_length) ** 2
        out["qrpn"] = NoisePSD.constant("qrpn", level, settings.backaction)
    else:
        out["qrpn"] = NoisePSD.constant("qrpn", 0.0)

    sensor = _file_or_white("sensor_cl", settings.sensor_asd, settings.sensor_file, settings.sensor_scale)
    zpf = settings.sensor_zp_fraction
    out["sensor_cl"] = _split(sensor, "sensor_cl", 1 - zpf)
    out["sensor_zp"] = _split(sensor, "sensor_zp", zpf)
    out["actuator_dac"] = _file_or_white("actuator_dac", settings.actuator_asd, settings.actuator_file)
    out["classical_radiation"] = _file_or_white(
        "classical_radiation", settings.classical_radiation_asd, settings.classical_radiation_file)
    return out
