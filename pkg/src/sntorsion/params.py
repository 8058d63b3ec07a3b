"""Parameter records shared by every module, and the ``key = value`` config reader.

All records hold SI values with angular frequencies in rad/s. Config files may
spell a value in Hz, mm, nm, um, u or Torr through a suffixed key
(``omega_m_hz``, ``arm_length_mm``, ``pressure_torr``...); the reader converts
on load so nothing downstream ever sees those units.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, NamedTuple

from . import constants as const

__all__ = [
    "ConfigError",
    "PendulumParams",
    "OpticalParams",
    "SNModel",
    "ServoSettings",
    "NoiseSettings",
    "FiberParams",
    "GasParams",
    "EddyParams",
    "DacParams",
    "RunSettings",
    "Config",
    "load_config",
    "loads_config",
    "dump_config",
    "builtin_config",
    "CONFIG_KEYS",
]


class ConfigError(ValueError):
    """Raised for malformed, incomplete or unphysical configuration."""


def _require_positive(obj: Any, names: tuple[str, ...], allow_zero: tuple[str, ...] = ()) -> None:
    bad = []
    for name in names:
        value = getattr(obj, name)
        if value is None:
            continue
        if name in allow_zero:
            if not value >= 0.0:
                bad.append(f"{name}={value!r} (must be >= 0)")
        elif not value > 0.0:
            bad.append(f"{name}={value!r} (must be > 0)")
    if bad:
        raise ConfigError(f"{type(obj).__name__}: non-positive physical value: " + ", ".join(bad))


@dataclass(frozen=True)
class PendulumParams:
    """Torsion oscillator. ``temperature`` may be zero; everything else is > 0."""

    inertia_rz: float
    omega_m: float
    q_factor: float
    arm_length: float
    mass: float
    temperature: float

    def __post_init__(self) -> None:
        _require_positive(
            self,
            ("inertia_rz", "omega_m", "q_factor", "arm_length", "mass", "temperature"),
            allow_zero=("temperature",),
        )

    @property
    def gamma_m(self) -> float:
        """Viscous damping rate omega_m / Q (applied as -gamma_m * dTheta/dt)."""
        return self.omega_m / self.q_factor

    @property
    def f_m(self) -> float:
        return self.omega_m / const.TWO_PI


@dataclass(frozen=True)
class OpticalParams:
    wavelength: float
    input_transmissivity: float
    finesse: float
    p_cav: float
    round_trip_loss: float = 1e-6
    buildup: float | None = None
    g_fss: float = 1e11
    g_iss: float = 100.0
    detuning: float = 0.0
    t_rt: float = 6.4e-10

    def __post_init__(self) -> None:
        _require_positive(
            self,
            ("wavelength", "input_transmissivity", "finesse", "p_cav", "round_trip_loss",
             "buildup", "g_fss", "g_iss", "detuning", "t_rt"),
            allow_zero=("p_cav", "round_trip_loss", "detuning"),
        )
        if self.buildup is None:
            object.__setattr__(self, "buildup", 2.0 * self.finesse / math.pi)

    @property
    def omega_0(self) -> float:
        """Laser angular frequency 2*pi*c/lambda."""
        return const.TWO_PI * const.C_LIGHT / self.wavelength

    @property
    def coupling(self) -> float:
        """Optomechanical coupling alpha = sqrt(8 omega_0 P_cav / (hbar T c^2)), 1/(m s^1/2)."""
        return math.sqrt(
            8.0 * self.omega_0 * self.p_cav
            / (const.HBAR * self.input_transmissivity * const.C_LIGHT**2)
        )


def sn_frequency_from(atomic_mass: float, delta_x_int: float) -> float:
    return const.G * atomic_mass / (6.0 * math.sqrt(math.pi) * delta_x_int**3)


@dataclass(frozen=True)
class SNModel:
    """Material and SN-potential description.

    ``omega_sn`` left as None is computed from the atomic mass and the internal
    localisation length. When it is given explicitly the stored value is used and
    ``omega_sn_discrepancy`` reports its relative distance from the formula.
    """

    atomic_mass: float
    delta_x_int: float
    lattice_const: float = 4.05e-10
    omega_sn: float | None = None
    fit_a: float = 3.298
    fit_b1: float = 1.62
    r_tilde: float = 0.176
    sigma_x: float | None = None
    sigma_y: float | None = None
    sigma_z: float | None = None
    c1: float = 547.0
    c2: float = 547.0
    sigma_theta: float | None = None

    def __post_init__(self) -> None:
        _require_positive(
            self,
            ("atomic_mass", "delta_x_int", "lattice_const", "omega_sn", "fit_a", "fit_b1",
             "r_tilde", "sigma_x", "sigma_y", "sigma_z", "c1", "c2", "sigma_theta"),
            allow_zero=("omega_sn",),
        )
        if self.sigma_x is not None and self.sigma_y is not None:
            object.__setattr__(self, "c1", self.sigma_x / self.sigma_y)
        if self.sigma_x is not None and self.sigma_z is not None:
            object.__setattr__(self, "c2", self.sigma_x / self.sigma_z)
        if self.c1 < 1.0 or self.c2 < 1.0:
            raise ConfigError(f"SNModel: c1, c2 must be >= 1 (got {self.c1}, {self.c2})")
        if self.omega_sn is None:
            object.__setattr__(self, "omega_sn", self.omega_sn_formula)

    @property
    def omega_sn_formula(self) -> float:
        return sn_frequency_from(self.atomic_mass, self.delta_x_int)

    @property
    def omega_sn_discrepancy(self) -> float:
        """Relative difference between the stored and the formula value of omega_SN."""
        formula = self.omega_sn_formula
        return (self.omega_sn - formula) / formula


@dataclass(frozen=True)
class ServoSettings:
    kind: str = "none"
    a0: float | None = None
    eps: float | None = None
    omega_ugf: float | None = None
    time_scale: float = 1.0
    num: tuple[float, ...] = ()
    den: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        kinds = ("none", "baseline", "quadratic_upgrade", "nonquadratic_upgrade", "custom")
        if self.kind not in kinds:
            raise ConfigError(f"servo kind {self.kind!r} not in {kinds}")
        _require_positive(self, ("a0", "omega_ugf", "time_scale"), allow_zero=("a0",))
        if self.kind == "custom" and not (self.num and self.den):
            raise ConfigError("servo kind 'custom' needs num and den coefficient lists")


@dataclass(frozen=True)
class NoiseSettings:
    thermal: str = "on"
    thermal_model: str = "viscous"
    thermal_zp_fraction: float = 0.0
    qrpn: str = "on"
    backaction: str = "buildup"
    sensor_asd: float = 0.0
    sensor_file: str = ""
    sensor_scale: float = 1.0
    sensor_zp_fraction: float = 0.0
    actuator_asd: float = 0.0
    actuator_file: str = ""
    classical_radiation_asd: float = 0.0
    classical_radiation_file: str = ""

    def __post_init__(self) -> None:
        for name, allowed in (
            ("thermal", ("on", "off")),
            ("qrpn", ("on", "off")),
            ("thermal_model", ("viscous", "structural")),
            ("backaction", ("buildup", "coupling")),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"noise.{name}={getattr(self, name)!r} not in {allowed}")
        for name in ("thermal_zp_fraction", "sensor_zp_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"noise.{name} must lie in [0, 1], got {value}")
        _require_positive(
            self, ("sensor_asd", "actuator_asd", "classical_radiation_asd", "sensor_scale"),
            allow_zero=("sensor_asd", "actuator_asd", "classical_radiation_asd"),
        )


@dataclass(frozen=True)
class FiberParams:
    """Suspension fibre. ``static_stress`` may be zero (unloaded limit)."""

    youngs_modulus: float = 7.2e10
    heat_capacity: float = 772.0
    conductivity: float = 1.38
    density: float = 2202.0
    alpha_thermal: float = 3.9e-7
    static_stress: float = 0.0
    beta_te: float = 1.52e-4
    diameter: float = 100e-6
    surface_loss_depth_product: float = 6.15e-12
    temperature: float = 300.0

    def __post_init__(self) -> None:
        _require_positive(self, tuple(f.name for f in fields(self)), allow_zero=("static_stress",))


@dataclass(frozen=True)
class GasParams:
    mass: float
    area: float
    pressure: float
    molar_mass: float = 2e-3
    gas_temperature: float = 300.0
    frequency: float = 6e-4

    def __post_init__(self) -> None:
        _require_positive(self, tuple(f.name for f in fields(self)))


@dataclass(frozen=True)
class EddyParams:
    damping: float
    lever_arm: float

    def __post_init__(self) -> None:
        _require_positive(self, ("damping", "lever_arm"))


@dataclass(frozen=True)
class DacParams:
    rms_start: float
    rms_end: float
    frequency: float = 6e-4

    def __post_init__(self) -> None:
        _require_positive(self, ("rms_start", "rms_end", "frequency"))


@dataclass(frozen=True)
class RunSettings:
    dt: float = 0.05
    duration: float = 32768.0
    n_traj: int = 1
    seed: int = 20240917
    t_bw: float = 32768.0
    sn_mode: str = "off"
    record_decimation: int = 1
    theta0: float = 0.0
    init: str = "zero"
    overlap: float = 0.0
    s_noise_asd: float = 3e-7
    servo: ServoSettings = field(default_factory=ServoSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    fiber: FiberParams | None = None
    gas: GasParams | None = None
    eddy: EddyParams | None = None
    dac: DacParams | None = None

    def __post_init__(self) -> None:
        if self.sn_mode not in ("off", "quadratic_preselection", "nonquadratic"):
            raise ConfigError(f"run.sn_mode={self.sn_mode!r} is not a known mode")
        if self.init not in ("zero", "thermal"):
            raise ConfigError(f"run.init={self.init!r} not in ('zero', 'thermal')")
        _require_positive(self, ("dt", "duration", "t_bw", "s_noise_asd"))
        if self.n_traj < 1 or self.record_decimation < 1:
            raise ConfigError("run.n_traj and run.record_decimation must be >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("run.overlap must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")


class Config(NamedTuple):
    pendulum: PendulumParams
    optics: OpticalParams
    sn: SNModel
    run: RunSettings


# --------------------------------------------------------------------------- schema

_REQ = object()


@dataclass(frozen=True)
class _Key:
    spellings: dict[str, float]
    default: Any = None
    kind: str = "float"  # float | int | str | list | path


def _k(name: str, default: Any = None, kind: str = "float", **alt: float) -> tuple[str, _Key]:
    return name, _Key({name: 1.0, **alt}, default, kind)


_HZ = const.TWO_PI

SCHEMA: dict[str, dict[str, _Key]] = {
    "pendulum": dict([
        ("inertia_rz", _Key({"inertia_rz": 1.0, "inertia": 1.0}, _REQ)),
        _k("omega_m", _REQ, omega_m_hz=_HZ),
        ("q_factor", _Key({"q_factor": 1.0, "q": 1.0}, _REQ)),
        _k("arm_length", _REQ, arm_length_mm=1e-3),
        _k("mass", _REQ),
        _k("temperature", _REQ),
    ]),
    "optics": dict([
        _k("wavelength", _REQ, wavelength_nm=1e-9),
        _k("input_transmissivity", _REQ, input_transmissivity_ppm=1e-6),
        _k("finesse", _REQ),
        _k("p_cav", _REQ),
        _k("round_trip_loss", 1e-6, round_trip_loss_ppm=1e-6),
        _k("buildup"),
        _k("g_fss", 1e11),
        _k("g_iss", 100.0),
        _k("detuning", 0.0),
        _k("detuning_unit", "rad", kind="str"),
        _k("t_rt", 6.4e-10),
    ]),
    "sn": dict([
        ("atomic_mass", _Key({"atomic_mass": 1.0, "atomic_mass_u": const.ATOMIC_MASS_UNIT}, _REQ)),
        _k("delta_x_int", _REQ),
        _k("lattice_const", 4.05e-10),
        _k("omega_sn", None, omega_sn_hz=_HZ),
        _k("fit_a", 3.298),
        _k("fit_b1", 1.62),
        _k("r_tilde", 0.176),
        _k("sigma_x"),
        _k("sigma_y"),
        _k("sigma_z"),
        _k("c1", 547.0),
        _k("c2", 547.0),
        _k("sigma_theta"),
    ]),
    "run": dict([
        _k("dt", 0.05),
        _k("duration", 32768.0),
        _k("n_traj", 1, kind="int"),
        _k("seed", 20240917, kind="int"),
        _k("t_bw", 32768.0),
        _k("sn_mode", "off", kind="str"),
        _k("record_decimation", 1, kind="int"),
        _k("theta0", 0.0),
        _k("init", "zero", kind="str"),
        _k("overlap", 0.0),
        _k("s_noise_asd", 3e-7),
    ]),
    "servo": dict([
        _k("kind", "none", kind="str"),
        _k("a0"),
        _k("eps"),
        _k("omega_ugf", None, omega_ugf_hz=_HZ),
        _k("time_scale", 1.0),
        _k("num", (), kind="list"),
        _k("den", (), kind="list"),
    ]),
    "noise": dict([
        _k("thermal", "on", kind="str"),
        _k("thermal_model", "viscous", kind="str"),
        _k("thermal_zp_fraction", 0.0),
        _k("qrpn", "on", kind="str"),
        _k("backaction", "buildup", kind="str"),
        _k("sensor_asd", 0.0),
        _k("sensor_file", "", kind="path"),
        _k("sensor_scale", 1.0),
        _k("sensor_zp_fraction", 0.0),
        _k("actuator_asd", 0.0),
        _k("actuator_file", "", kind="path"),
        _k("classical_radiation_asd", 0.0),
        _k("classical_radiation_file", "", kind="path"),
    ]),
    "fiber": dict([
        _k("youngs_modulus", 7.2e10),
        _k("heat_capacity", 772.0),
        _k("conductivity", 1.38),
        _k("density", 2202.0),
        _k("alpha_thermal", 3.9e-7),
        _k("static_stress", 0.0),
        _k("beta_te", 1.52e-4),
        _k("diameter", 100e-6, diameter_um=1e-6),
        _k("surface_loss_depth_product", 6.15e-12),
        _k("temperature", 300.0),
    ]),
    "gas": dict([
        _k("mass", _REQ),
        _k("area", _REQ),
        ("pressure", _Key({"pressure": 1.0, "pressure_torr": const.TORR}, _REQ)),
        _k("molar_mass", 2e-3),
        _k("gas_temperature", 300.0),
        _k("frequency", 6e-4, frequency_hz=1.0),
    ]),
    "eddy": dict([
        _k("damping", _REQ),
        _k("lever_arm", _REQ),
    ]),
    "dac": dict([
        _k("rms_start", _REQ, rms_start_um=1e-6),
        _k("rms_end", _REQ, rms_end_um=1e-6),
        _k("frequency", 6e-4, frequency_hz=1.0),
    ]),
}

_REQUIRED_SECTIONS = ("pendulum", "optics", "sn")
_OPTIONAL_RECORDS = {"fiber": FiberParams, "gas": GasParams, "eddy": EddyParams, "dac": DacParams}

CONFIG_KEYS = {sec: sorted(sp for key in keys.values() for sp in key.spellings) for sec, keys in SCHEMA.items()}

_DATA_DIR = Path(__file__).resolve().parent / "data"


def _parse_value(raw: str, kind: str, where: str, base: Path | None) -> Any:
    raw = raw.strip()
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw, 0)
        if kind == "list":
            return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from exc
    if kind == "path":
        if not raw:
            return ""
        if raw.startswith("builtin:"):
            return str(_DATA_DIR / raw[len("builtin:"):])
        path = Path(raw)
        if not path.is_absolute() and base is not None:
            path = base / path
        return str(path)
    return raw


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, default_section="__defaults__",
    )
    parser.optionxform = str  # keys are case sensitive
    return parser


def _build(sections: dict[str, dict[str, tuple[str, Path | None]]]) -> Config:
    errors: list[str] = []
    missing: list[str] = []
    values: dict[str, dict[str, Any]] = {}

    for sec, items in sections.items():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        spelled = {sp: canon for canon, key in SCHEMA[sec].items() for sp in key.spellings}
        for name in items:
            if name not in spelled:
                errors.append(f"unknown key [{sec}] {name}")

    for sec, keys in SCHEMA.items():
        present = sections.get(sec)
        if present is None and sec not in _REQUIRED_SECTIONS and sec not in ("run", "servo", "noise"):
            continue
        present = present or {}
        out: dict[str, Any] = {}
        for canon, key in keys.items():
            given = [sp for sp in key.spellings if sp in present]
            if len(given) > 1:
                errors.append(f"[{sec}] {canon} given more than once: {', '.join(given)}")
                continue
            if given:
                sp = given[0]
                raw, base = present[sp]
                try:
                    value = _parse_value(raw, key.kind, f"[{sec}] {sp}", base)
                except ConfigError as exc:
                    errors.append(str(exc))
                    continue
                if key.kind == "float":
                    value = value * key.spellings[sp] if key.spellings[sp] != 1.0 else value
                out[canon] = value
            elif key.default is _REQ:
                missing.append(f"[{sec}] {canon}")
            elif key.default is not None:
                out[canon] = key.default
        values[sec] = out

    if missing:
        errors.insert(0, "missing required keys: " + ", ".join(missing))
    if errors:
        raise ConfigError("; ".join(errors))

    optics = dict(values["optics"])
    unit = optics.pop("detuning_unit", "rad")
    if unit == "deg":
        optics["detuning"] = math.radians(optics.get("detuning", 0.0))
    elif unit != "rad":
        raise ConfigError(f"[optics] detuning_unit must be rad or deg, got {unit!r}")

    try:
        pendulum = PendulumParams(**values["pendulum"])
        optics_p = OpticalParams(**optics)
        sn = SNModel(**values["sn"])
        extra = {name: rec(**values[name]) for name, rec in _OPTIONAL_RECORDS.items() if name in values}
        run = RunSettings(
            **values["run"],
            servo=ServoSettings(**values["servo"]),
            noise=NoiseSettings(**values["noise"]),
            **extra,
        )
    except TypeError as exc:  # pragma: no cover - schema and records out of sync
        raise ConfigError(str(exc)) from exc
    return Config(pendulum, optics_p, sn, run)


def _collect(parser: configparser.ConfigParser, base_of: dict[str, Path | None]) -> dict:
    out: dict[str, dict[str, tuple[str, Path | None]]] = {}
    for sec in parser.sections():
        out[sec] = {k: (v, base_of.get(f"{sec}.{k}")) for k, v in parser.items(sec)}
    return out


def load_config(*paths: str | Path) -> Config:
    """Read one or more config files; keys in later files override earlier ones."""
    if not paths:
        raise ConfigError("no config file given")
    parser = _parser()
    base_of: dict[str, Path | None] = {}
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        single = _parser()
        try:
            single.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for sec in single.sections():
            if not parser.has_section(sec):
                parser.add_section(sec)
            for key, value in single.items(sec):
                parser.set(sec, key, value)
                base_of[f"{sec}.{key}"] = path.parent
    return _build(_collect(parser, base_of))


def loads_config(text: str, base: str | Path | None = None) -> Config:
    parser = _parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    b = Path(base) if base is not None else None
    return _build(_collect(parser, {f"{s}.{k}": b for s in parser.sections() for k, _ in parser.items(s)}))


def builtin_config(name: str) -> Path:
    """Path of a config shipped with the package (``reference``, ``upgrade_quadratic``,
    ``upgrade_nonquadratic``, ``desk``, ``desk_quadratic``)."""
    path = _DATA_DIR / (name if name.endswith(".cfg") else f"{name}.cfg")
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


def _fmt(value: Any) -> str:
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: Config) -> str:
    """Serialise in canonical SI keys; ``loads_config(dump_config(c)) == c`` exactly."""
    records = {
        "pendulum": cfg.pendulum,
        "optics": cfg.optics,
        "sn": cfg.sn,
        "run": cfg.run,
        "servo": cfg.run.servo,
        "noise": cfg.run.noise,
        **{name: getattr(cfg.run, name) for name in _OPTIONAL_RECORDS},
    }
    lines: list[str] = []
    for sec, rec in records.items():
        if rec is None:
            continue
        lines.append(f"[{sec}]")
        for canon in SCHEMA[sec]:
            if canon == "detuning_unit":
                lines.append("detuning_unit = rad")
                continue
            value = getattr(rec, canon)
            if value is None or (sec == "sn" and canon in ("c1", "c2") and rec.sigma_x is not None):
                continue
            lines.append(f"{canon} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)
