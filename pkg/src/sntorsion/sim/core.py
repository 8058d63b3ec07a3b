"""Closed-loop time-domain simulation of the torsion pendulum."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import constants as const
from ..loops import LoopModel, closed_loop_spectrum, stability_report
from ..noise import NoisePSD, QUANTUM_CHANNELS, SENSOR_CHANNELS, TORQUE_CHANNELS
from ..params import Config, OpticalParams, PendulumParams, SNModel
from . import kernel
from .colored import NoiseStream

__all__ = ["SimConfig", "TrajectoryRecord", "SimulationError", "simulate_trajectory", "simulate_ensemble"]

_MODES = {"off": kernel.MODE_OFF, "quadratic_preselection": kernel.MODE_QUADRATIC,
          "nonquadratic": kernel.MODE_NONQUADRATIC}
_CHUNK = 1 << 15


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float
    duration: float
    n_traj: int = 1
    seed: int = 20240917
    t_bw: float = 32768.0
    sn_mode: str = "off"
    record_decimation: int = 1
    theta0: float = 0.0
    init: str = "zero"
    acknowledge_unstable: bool = False
    check_resolution: bool = True

    def __post_init__(self) -> None:
        if self.sn_mode not in _MODES:
            raise ValueError(f"unknown sn_mode {self.sn_mode!r}")
        if not (self.dt > 0 and self.duration > 0 and self.t_bw > 0):
            raise ValueError("dt, duration and t_bw must be > 0")
        if self.n_traj < 1 or self.record_decimation < 1:
            raise ValueError("n_traj and record_decimation must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.init not in ("zero", "thermal"):
            raise ValueError(f"unknown init {self.init!r}")
        n_seg = self.t_bw / (self.dt * self.record_decimation)
        k = round(n_seg)
        if abs(n_seg - k) > 1e-9 * n_seg or k < 1 or k & (k - 1):
            raise ValueError(f"t_bw / (dt * decimation) = {n_seg:g} is not an integer power of two")

    @property
    def n_steps(self) -> int:
        n = self.duration / self.dt
        k = round(n)
        if abs(n - k) > 1e-9 * n:
            raise ValueError("duration must be an integer number of steps")
        return (k // self.record_decimation) * self.record_decimation

    @property
    def record_dt(self) -> float:
        return self.dt * self.record_decimation

    @classmethod
    def from_config(cls, cfg: Config, **overrides) -> "SimConfig":
        run = cfg.run
        kw = dict(dt=run.dt, duration=run.duration, n_traj=run.n_traj, seed=run.seed, t_bw=run.t_bw,
                  sn_mode=run.sn_mode, record_decimation=run.record_decimation, theta0=run.theta0,
                  init=run.init)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class TrajectoryRecord:
    time: np.ndarray
    theta: np.ndarray
    theta_mean: np.ndarray  # NaN outside quadratic mode
    readout: np.ndarray
    control: np.ndarray
    sn_torque: np.ndarray
    index: int = 0
    meta: dict = field(default_factory=dict)


def _guard_resolution(sim: SimConfig, omega_q: float) -> None:
    f_q = omega_q / (2 * math.pi)
    if sim.check_resolution and sim.dt > 1.0 / (50.0 * f_q) * (1 + 1e-12):
        raise ValueError(f"dt = {sim.dt:g} s exceeds 1/(50 f_q) = {1 / (50 * f_q):g} s")


def _servo_matrices(loop: LoopModel, dt: float):
    if loop.servo is None or loop.servo.is_zero:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0), 0.0
    a, b, c, d = loop.servo.state_space()
    r = a.shape[0]
    if r == 0:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0), float(d[0, 0])
    eye = np.eye(r)
    m = np.linalg.inv(eye - 0.5 * dt * a)
    ad = m @ (eye + 0.5 * dt * a)
    bd = (m @ b)[:, 0] * (0.5 * dt)
    return np.ascontiguousarray(ad), np.ascontiguousarray(bd), np.ascontiguousarray(c[0]), float(d[0, 0])


def _thermal_init(loop: LoopModel, sim: SimConfig, index: int) -> tuple[float, float]:
    """Draw (theta, theta_dot) from the steady-state closed-loop variance of the off mode."""
    off = LoopModel(loop.pendulum, loop.servo, 0.0, dict(loop.channels), acknowledge_unstable=True)
    w0 = loop.pendulum.omega_m
    om = np.geomspace(w0 * 1e-4, w0 * 1e4, 200001)
    s = closed_loop_spectrum(off, om, observable="motion").branches["total"]
    var_th = np.trapezoid(s, om) / (2 * math.pi)
    var_om = np.trapezoid(s * om**2, om) / (2 * math.pi)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(sim.seed, spawn_key=(index, 99))))
    z = rng.standard_normal(2)
    return float(z[0] * math.sqrt(var_th)), float(z[1] * math.sqrt(var_om))


def simulate_trajectory(pendulum: PendulumParams, optics: OpticalParams | None, sn: SNModel,
                        loop: LoopModel, channels: dict[str, NoisePSD] | None, sim: SimConfig,
                        index: int = 0, *, backend: str | None = None) -> TrajectoryRecord:
    """Integrate one trajectory. Streams are keyed by (sim.seed, index, channel)."""
    del optics  # the optical set-up enters only through the noise channels
    channels = channels if channels is not None else loop.channels
    mode = _MODES[sim.sn_mode]
    omega_sn = sn.omega_sn if mode == kernel.MODE_QUADRATIC else 0.0
    _guard_resolution(sim, math.hypot(pendulum.omega_m, omega_sn))
    stab = stability_report(LoopModel(pendulum, loop.servo, omega_sn, dict(channels)))
    if not stab["stable"] and not (sim.acknowledge_unstable or loop.acknowledge_unstable):
        raise SimulationError("closed loop is unstable; set acknowledge_unstable to integrate anyway")

    nq_scale = nq_w = 1.0
    if mode == kernel.MODE_NONQUADRATIC:
        if not sn.sigma_theta:
            raise ValueError("non-quadratic mode needs sn.sigma_theta")
        nq_scale = sn.fit_a * const.G * pendulum.mass * sn.atomic_mass / (sn.r_tilde * sn.sigma_theta)
        nq_w = sn.fit_b1 * sn.sigma_theta**2

    dt = sim.dt
    n_steps = sim.n_steps
    decim = sim.record_decimation
    f_lo = 0.5 / sim.t_bw
    streams = {c: NoiseStream(channels[c], dt, sim.seed, index, f_lo) for c in (*TORQUE_CHANNELS, *SENSOR_CHANNELS)}
    ad, bd, cc, dd = _servo_matrices(loop, dt)
    r = bd.shape[0]
    xs = np.zeros(r)
    xm = np.zeros(r)
    th0, om0 = sim.theta0, 0.0
    if sim.init == "thermal":
        dth, dom = _thermal_init(loop, sim, index)
        th0, om0 = th0 + dth, dom
    z = np.array([th0, om0, th0 if mode == kernel.MODE_QUADRATIC else 0.0, 0.0])

    n_rec = n_steps // decim
    out = {k: np.empty(n_rec) for k in ("th", "m", "y", "u", "sn")}
    quad = mode == kernel.MODE_QUADRATIC
    carry_tot = carry_mean = None
    run = kernel.run_heun if backend in (None, "auto") else (
        kernel.run_heun_python if backend == "python" else kernel.run_heun)
    if backend == "cython" and kernel.BACKEND != "cython":
        raise RuntimeError("compiled kernel is not available")

    chunk = max(decim, (_CHUNK // decim) * decim)
    pos = 0
    while pos < n_steps:
        n = min(chunk, n_steps - pos)
        tq = {c: streams[c].take(n) for c in TORQUE_CHANNELS}
        sz = {c: streams[c].take(n + (1 if carry_tot is None else 0)) for c in SENSOR_CHANNELS}
        cl = tq["thermal_cl"] + tq["actuator_dac"] + tq["classical_radiation"]
        tq_tot = cl + tq["thermal_zp"] + tq["qrpn"]
        if carry_tot is None:
            n_tot = sz["sensor_cl"] + sz["sensor_zp"]
            n_mean = sz["sensor_cl"].copy()
        else:
            n_tot = np.concatenate([[carry_tot], sz["sensor_cl"] + sz["sensor_zp"]])
            n_mean = np.concatenate([[carry_mean], sz["sensor_cl"]])
        carry_tot, carry_mean = n_tot[-1], n_mean[-1]
        r0 = pos // decim
        r1 = r0 + n // decim
        bad = run(z, xs, xm, dt, 1.0 / pendulum.inertia_rz, pendulum.omega_m**2, pendulum.omega_m**2,
                  pendulum.gamma_m, omega_sn**2, mode, nq_scale, nq_w, ad, bd, cc, dd,
                  np.ascontiguousarray(tq_tot), np.ascontiguousarray(cl), np.ascontiguousarray(n_tot),
                  np.ascontiguousarray(n_mean), decim, out["th"][r0:r1], out["m"][r0:r1],
                  out["y"][r0:r1], out["u"][r0:r1], out["sn"][r0:r1])
        if bad >= 0:
            raise SimulationError(f"state became non-finite at step {pos + bad} "
                                  f"(theta={z[0]!r}, theta_dot={z[1]!r})")
        pos += n

    rec = TrajectoryRecord(
        time=np.arange(n_rec) * sim.record_dt,
        theta=out["th"],
        theta_mean=out["m"] if quad else np.full(n_rec, np.nan),
        readout=out["y"],
        control=out["u"],
        sn_torque=out["sn"],
        index=index,
        meta={
            "sn_mode": sim.sn_mode,
            "backend": kernel.BACKEND if backend in (None, "auto") else backend,
            "stable": stab["stable"],
            "noise_kinds": {c: s.kind for c, s in streams.items()},
            "filter_residuals": {c: s.filter.rms_log_residual for c, s in streams.items() if s.filter},
            "quantum_channels": list(QUANTUM_CHANNELS),
        },
    )
    return rec


def _one(args):
    return simulate_trajectory(*args[:-1], index=args[-1])


def simulate_ensemble(pendulum, optics, sn, loop, channels, sim: SimConfig, jobs: int = 1,
                      indices=None) -> list[TrajectoryRecord]:
    """All trajectories of ``sim`` in index order; ``jobs`` does not change the result."""
    idx = list(range(sim.n_traj)) if indices is None else list(indices)
    tasks = [(pendulum, optics, sn, loop, channels, sim, i) for i in idx]
    if jobs <= 1 or len(tasks) <= 1:
        return [_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_one, tasks))
