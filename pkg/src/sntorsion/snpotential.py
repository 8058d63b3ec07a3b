"""Schrodinger-Newton potentials.

Self-gravity of a smeared atom
------------------------------
In scaled coordinates the self-gravity integral is ``E[1/|w|]`` where
``w = D (r_hat - r)``, ``r ~ N(0, 1_3)`` and ``D = diag(1, 1/c1, 1/c2)``, so
``w`` is Gaussian with mean ``D r_hat`` and diagonal covariance. Writing
``1/|w| = (2/sqrt(pi)) * int_0^inf exp(-t^2 |w|^2) dt`` and taking the Gaussian
expectation inside gives the exact one-dimensional form::

    I = 2/sqrt(pi) * int_0^inf prod_k (1 + 2 t^2 v_k)^(-1/2)
                                 * exp(-t^2 mu_k^2 / (1 + 2 t^2 v_k)) dt

with ``mu = D r_hat`` and ``v = diag(D D^T)``. The 1/r singularity has been
integrated out analytically, and the remaining integrand is smooth. After
``t = exp(s)`` it decays exponentially at both ends, so the trapezoid rule
converges geometrically; step halving supplies the error estimate.

The nuisance coordinates y_hat, z_hat ~ N(0, 1) are marginalised exactly:
averaging over them adds 1/c^2 to the y and z variances. ``nuisance="sample"``
averages over explicit draws instead, and ``"slice"`` pins them to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import constants as const
from .params import PendulumParams, SNModel

__all__ = [
    "QuadSettings",
    "QuadratureError",
    "FitError",
    "PotentialCurve",
    "GaussianFit",
    "sn_frequency",
    "omega_q",
    "self_gravity_integral",
    "self_gravity_gradient",
    "self_gravity_mc",
    "fit_gaussian_potential",
    "geometric_factor",
    "bar_radii",
    "effective_sn_torque",
    "mutual_gravity_curve",
]


class QuadratureError(RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(f"{message} (achieved relative error estimate {estimate:.3g})")
        self.estimate = estimate


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadSettings:
    """Quadrature controls.

    method: ``transform`` (default) or ``montecarlo``.
    nuisance: ``marginalize`` | ``slice`` | ``sample``.
    """

    method: str = "transform"
    rtol: float = 1e-4
    nuisance: str = "marginalize"
    n_nuisance: int = 64
    mc_samples: int = 1_000_000
    mc_batch: int = 250_000
    seed: int = 12345
    max_halvings: int = 12

    def __post_init__(self) -> None:
        if self.method not in ("transform", "montecarlo"):
            raise ValueError(f"unknown quadrature method {self.method!r}")
        if self.nuisance not in ("marginalize", "slice", "sample"):
            raise ValueError(f"unknown nuisance mode {self.nuisance!r}")


@dataclass
class PotentialCurve:
    abscissa: np.ndarray
    potential: np.ndarray
    force: np.ndarray
    regime_tag: str = "self_only"
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    b1: float
    max_rel_residual: float
    window: float


def sn_frequency(model: SNModel) -> float:
    """G m / (6 sqrt(pi) dx_int^3), rad/s."""
    return const.G * model.atomic_mass / (6.0 * math.sqrt(math.pi) * model.delta_x_int**3)


def omega_q(omega_m: float, omega_sn: float) -> float:
    if omega_m < 0 or omega_sn < 0:
        raise ValueError("omega_m and omega_sn must be >= 0")
    return math.hypot(omega_m, omega_sn)


# ----------------------------------------------------------------- transform quadrature

_S_LO, _S_HI = -30.0, 30.0


def _variances(c1: float, c2: float, nuisance: str) -> np.ndarray:
    # y, z nuisance draws ~ N(0, 1) add unit variance before the 1/c scaling
    extra = 1.0 if nuisance == "marginalize" else 0.0
    return np.array([1.0, (1.0 + extra) / c1**2, (1.0 + extra) / c2**2])


def _transform_sum(mu: np.ndarray, var: np.ndarray, h: float, deriv: bool) -> np.ndarray:
    """Trapezoid sum in s = log t for every row of ``mu`` (shape (n, 3))."""
    s = np.arange(_S_LO, _S_HI + 0.5 * h, h)
    t2 = np.exp(2.0 * s)[None, :]
    den = 1.0 + 2.0 * t2[..., None] * var[None, None, :]            # (1, m, 3)
    expo = -t2 * np.sum(mu[:, None, :] ** 2 / den, axis=-1)         # (n, m)
    f = np.exp(expo - 0.5 * np.sum(np.log(den), axis=-1)) * np.sqrt(t2)
    if deriv:
        f = f * (-2.0 * t2 * mu[:, :1] / den[..., 0])
    return (2.0 / math.sqrt(math.pi)) * h * f.sum(axis=1)


def _transform(mu: np.ndarray, var: np.ndarray, rtol: float, max_halvings: int, deriv: bool = False):
    h = 0.5
    prev = _transform_sum(mu, var, h, deriv)
    scale = np.max(np.abs(prev)) if deriv else None
    for _ in range(max_halvings):
        h *= 0.5
        cur = _transform_sum(mu, var, h, deriv)
        ref = scale if deriv else np.abs(cur)
        err = np.max(np.abs(cur - prev) / np.maximum(ref, 1e-300))
        if err <= rtol * 1e-2:
            return cur, err
        prev = cur
    raise QuadratureError("transform quadrature did not converge", float(err))


def _as_mu(x_tilde, c1, c2, y_hat, z_hat, offset):
    x = np.atleast_1d(np.asarray(x_tilde, dtype=float))
    mu = np.zeros((x.size, 3))
    mu[:, 0] = x - offset
    mu[:, 1] = y_hat / c1
    mu[:, 2] = z_hat / c2
    return x, mu


def _nuisance_draws(settings: QuadSettings) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(settings.seed, spawn_key=(0xA1,)))
    return rng.standard_normal((settings.n_nuisance, 2))


def self_gravity_integral(x_tilde, c1: float, c2: float, quad: QuadSettings | None = None,
                          *, y_hat: float = 0.0, z_hat: float = 0.0, offset: float = 0.0):
    """Normalised self-gravity integral I(x_tilde); scalar in, scalar out.

    ``offset`` shifts the source distribution by ``x_bar / sigma_x`` (used for the
    mutual terms of a lattice). The returned value is dimensionless; the
    per-atom energy is ``-G m^2 / sigma_x * I``.
    """
    quad = quad or QuadSettings()
    if c1 < 1.0 or c2 < 1.0:
        raise ValueError("c1 and c2 must be >= 1")
    scalar = np.ndim(x_tilde) == 0
    if quad.method == "montecarlo":
        out = np.array([self_gravity_mc(x, c1, c2, quad, y_hat=y_hat, z_hat=z_hat, offset=offset)[0]
                        for x in np.atleast_1d(x_tilde)])
        return float(out[0]) if scalar else out

    if quad.nuisance == "sample":
        draws = _nuisance_draws(quad)
        var = _variances(c1, c2, "slice")
        x = np.atleast_1d(np.asarray(x_tilde, dtype=float))
        acc = np.zeros(x.size)
        for yh, zh in draws:
            _, mu = _as_mu(x, c1, c2, yh, zh, offset)
            acc += _transform(mu, var, quad.rtol, quad.max_halvings)[0]
        out = acc / len(draws)
    else:
        var = _variances(c1, c2, quad.nuisance)
        _, mu = _as_mu(x_tilde, c1, c2, y_hat, z_hat, offset)
        out = _transform(mu, var, quad.rtol, quad.max_halvings)[0]
    return float(out[0]) if scalar else out


def self_gravity_gradient(x_tilde, c1: float, c2: float, quad: QuadSettings | None = None,
                          *, offset: float = 0.0):
    """dI/dx_tilde, differentiated under the integral sign."""
    quad = quad or QuadSettings()
    if quad.nuisance == "sample":
        raise ValueError("gradient supports marginalize/slice nuisance modes only")
    var = _variances(c1, c2, quad.nuisance)
    scalar = np.ndim(x_tilde) == 0
    _, mu = _as_mu(x_tilde, c1, c2, 0.0, 0.0, offset)
    out = _transform(mu, var, quad.rtol, quad.max_halvings, deriv=True)[0]
    return float(out[0]) if scalar else out


def self_gravity_mc(x_tilde: float, c1: float, c2: float, quad: QuadSettings | None = None,
                    *, y_hat: float = 0.0, z_hat: float = 0.0, offset: float = 0.0) -> tuple[float, float]:
    """Brute-force Monte Carlo of the 3-D integral: (value, standard error).

    Batch b draws from SeedSequence(seed, spawn_key=(b,)), so the result does not
    depend on how batches are scheduled.
    """
    quad = quad or QuadSettings(method="montecarlo")
    n_batches = max(1, -(-quad.mc_samples // quad.mc_batch))
    sums = np.zeros(n_batches)
    sq = np.zeros(n_batches)
    counts = np.zeros(n_batches)
    remaining = quad.mc_samples
    for b in range(n_batches):
        n = min(quad.mc_batch, remaining)
        remaining -= n
        rng = np.random.default_rng(np.random.SeedSequence(quad.seed, spawn_key=(b,)))
        r = rng.standard_normal((n, 3))
        if quad.nuisance == "marginalize":
            nz = rng.standard_normal((n, 2))
            yh, zh = nz[:, 0], nz[:, 1]
        else:
            yh, zh = y_hat, z_hat
        dx = (x_tilde - offset) - r[:, 0]
        dy = (yh - r[:, 1]) / c1
        dz = (zh - r[:, 2]) / c2
        val = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
        sums[b] = val.sum()
        sq[b] = (val * val).sum()
        counts[b] = n
    n_tot = counts.sum()
    mean = sums.sum() / n_tot
    var = sq.sum() / n_tot - mean**2
    return float(mean), float(math.sqrt(max(var, 0.0) / n_tot))


# ----------------------------------------------------------------- Gaussian fit

def _gauss(x, a, b1):
    return a * np.exp(-(x**2) / (2.0 * b1))


def fit_gaussian_potential(x_tilde, values, window: float = 5.0) -> GaussianFit:
    """Least-squares fit of ``A exp(-x^2 / (2 b1))`` on |x| <= window, uniform weights."""
    x = np.asarray(x_tilde, dtype=float)
    y = np.asarray(values, dtype=float)
    sel = np.abs(x) <= window + 1e-12
    x, y = x[sel], y[sel]
    if x.size < 21:
        raise FitError("need at least 21 samples inside the fit window")
    if np.ptp(y) <= 1e-14 * max(np.max(np.abs(y)), 1e-300):
        raise FitError("degenerate curve: all samples equal")
    a0 = float(np.max(y))
    half = y >= 0.5 * a0
    b0 = max((np.max(np.abs(x[half])) / 1.1774) ** 2, 1e-3) if half.any() else 1.0
    res = optimize.least_squares(
        lambda p: _gauss(x, *p) - y, x0=[a0, b0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
        max_nfev=2000,
    )
    if not res.success:
        raise FitError(f"least-squares iteration did not converge: {res.message}")
    a, b1 = (float(v) for v in res.x)
    resid = np.max(np.abs(_gauss(x, a, b1) - y)) / np.max(np.abs(y))
    return GaussianFit(a, b1, float(resid), float(window))


# ----------------------------------------------------------------- geometry

def geometric_factor(radii) -> float:
    """Harmonic-mean radius n / sum(1/r_i)."""
    r = np.asarray(radii, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("radii list is empty")
    if np.any(r <= 0):
        raise ValueError("all radii must be > 0")
    return float(r.size / np.sum(1.0 / r))


def bar_radii(length: float, width: float, height: float, n: int = 200) -> np.ndarray:
    """Distances from a vertical axis through the centre of a uniform bar (midpoint grid)."""
    xs = (np.arange(n) + 0.5) / n * length - length / 2
    ny = max(2, int(round(n * width / length)) | 1)
    ys = (np.arange(ny) + 0.5) / ny * width - width / 2
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    # height adds identical copies along the axis and does not change r
    del height
    return np.hypot(X, Y).ravel()


# ----------------------------------------------------------------- effective torque

def effective_sn_torque(theta, sigma_theta: float, model: SNModel, pendulum: PendulumParams):
    """Energy and torque of the fitted non-quadratic SN potential at rotation ``theta``.

    energy = -A G M m / (r_tilde sigma) * exp(-theta^2 / (2 b1 sigma^2))
    torque = -d(energy)/d(theta)
    """
    if not sigma_theta > 0:
        raise ValueError("sigma_theta must be > 0")
    th = np.asarray(theta, dtype=float)
    scale = model.fit_a * const.G * pendulum.mass * model.atomic_mass / (model.r_tilde * sigma_theta)
    w = model.fit_b1 * sigma_theta**2
    energy = -scale * np.exp(-(th**2) / (2.0 * w))
    torque = energy * th / w
    if np.ndim(theta) == 0:
        return float(energy), float(torque)
    return energy, torque


# ----------------------------------------------------------------- mutual gravity

def mutual_gravity_curve(x, model: SNModel, neighbors: int, quad: QuadSettings | None = None,
                         sigma_x: float | None = None) -> PotentialCurve:
    """Per-atom SN energy of a 1-D chain along x, self term plus 2*neighbors mutual terms.

    ``x`` is the displacement in metres; atom j sits at offset j*a. Force is the
    analytic derivative under the integral sign.
    """
    if neighbors < 0:
        raise ValueError("neighbors must be >= 0")
    quad = quad or QuadSettings()
    if quad.method != "transform" or quad.nuisance == "sample":
        raise ValueError("mutual_gravity_curve needs the transform method with marginalize/slice nuisance")
    sx = sigma_x if sigma_x is not None else model.sigma_x
    if sx is None or sx <= 0:
        raise ValueError("sigma_x must be given (argument or SNModel.sigma_x)")
    x = np.asarray(x, dtype=float)
    if not np.allclose(np.sort(x), np.sort(-x), rtol=0, atol=1e-12 * max(np.max(np.abs(x)), 1e-300)):
        raise ValueError("grid must be symmetric about 0")
    xt = x / sx
    total = np.zeros_like(xt)
    grad = np.zeros_like(xt)
    for j in range(-neighbors, neighbors + 1):
        off = j * model.lattice_const / sx
        total += self_gravity_integral(xt, model.c1, model.c2, quad, offset=off)
        grad += self_gravity_gradient(xt, model.c1, model.c2, quad, offset=off)
    pref = const.G * model.atomic_mass**2 / sx
    potential = -pref * total
    force = pref * grad / sx
    return PotentialCurve(
        abscissa=x,
        potential=potential,
        force=force,
        regime_tag="with_mutual" if neighbors > 0 else "self_only",
        meta={
            "neighbors": neighbors,
            "a_over_sigma_x": model.lattice_const / sx,
            "c1": model.c1,
            "c2": model.c2,
            "method": quad.method,
            "nuisance": quad.nuisance,
            "rtol": quad.rtol,
            "force_method": "analytic derivative under the integral",
        },
    )
