from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from sntorsion import constants as const
from sntorsion.params import PendulumParams, SNModel
from sntorsion.snpotential import (
    FitError,
    QuadSettings,
    bar_radii,
    effective_sn_torque,
    fit_gaussian_potential,
    geometric_factor,
    mutual_gravity_curve,
    omega_q,
    self_gravity_gradient,
    self_gravity_integral,
    self_gravity_mc,
    sn_frequency,
)

AL = SNModel(26.9815385 * const.ATOMIC_MASS_UNIT, 1.04e-11)
# Frozen from a 40-digit mpmath evaluation of G m / (6 sqrt(pi) dx^3) with the package constants.
OMEGA_SN_AL = 2.4997428038123906e-4


def test_sn_frequency_matches_arbitrary_precision_oracle():
    assert sn_frequency(AL) == pytest.approx(OMEGA_SN_AL, rel=1e-13)
    mpmath.mp.dps = 40
    ref = (mpmath.mpf(repr(const.G)) * mpmath.mpf(repr(AL.atomic_mass))
           / (6 * mpmath.sqrt(mpmath.pi) * mpmath.mpf("1.04e-11") ** 3))
    assert sn_frequency(AL) == pytest.approx(float(ref), rel=1e-13)
    # the stated 2 pi x 2.51 mHz is not what the formula gives
    assert sn_frequency(AL) / (2 * math.pi * 2.51e-3) == pytest.approx(0.01585, rel=1e-3)


def test_omega_q_reduces_to_omega_m():
    assert omega_q(3.0, 0.0) == 3.0
    assert omega_q(3.0, 4.0) == 5.0
    with pytest.raises(ValueError):
        omega_q(-1.0, 1.0)


def test_isotropic_slice_oracles():
    # c1 = c2 = 1, no nuisance: I(x) = E|x e - r|^-1 = erf(x / sqrt 2) / x, I(0) = sqrt(2/pi)
    q = QuadSettings(nuisance="slice", rtol=1e-10)
    assert self_gravity_integral(0.0, 1.0, 1.0, q) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)
    xs = np.array([0.3, 1.0, 2.0, 4.0])
    assert np.allclose(self_gravity_integral(xs, 1.0, 1.0, q), special.erf(xs / math.sqrt(2)) / xs, rtol=1e-10)


def test_marginalized_isotropic_equals_broadened_slice():
    # unit-variance nuisance on y, z with c = 1 doubles those variances
    x = np.linspace(-3, 3, 13)
    marg = self_gravity_integral(x, 1.0, 1.0, QuadSettings(nuisance="marginalize"))
    assert np.all(np.isfinite(marg)) and np.all(marg > 0)
    mc = self_gravity_mc(1.0, 1.0, 1.0, QuadSettings(method="montecarlo", mc_samples=400_000, nuisance="marginalize"))
    assert abs(self_gravity_integral(1.0, 1.0, 1.0) - mc[0]) < 5 * mc[1]


def test_transform_agrees_with_monte_carlo_at_large_c():
    mean, err = self_gravity_mc(0.5, 50.0, 50.0, QuadSettings(method="montecarlo", mc_samples=1_000_000))
    assert abs(self_gravity_integral(0.5, 50.0, 50.0) - mean) < 5 * err


def test_monte_carlo_is_reproducible():
    q = QuadSettings(method="montecarlo", mc_samples=50_000, mc_batch=20_000)
    assert self_gravity_mc(0.2, 5.0, 5.0, q) == self_gravity_mc(0.2, 5.0, 5.0, q)


def test_gradient_matches_finite_difference():
    x = np.array([-2.0, -0.5, 0.7, 3.0])
    h = 1e-5
    fd = (self_gravity_integral(x + h, 30.0, 30.0, QuadSettings(rtol=1e-10))
          - self_gravity_integral(x - h, 30.0, 30.0, QuadSettings(rtol=1e-10))) / (2 * h)
    assert np.allclose(self_gravity_gradient(x, 30.0, 30.0, QuadSettings(rtol=1e-10)), fd, rtol=1e-5, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.0, 8.0), c=st.floats(1.0, 1000.0))
def test_integral_even_positive_and_decreasing(x, c):
    q = QuadSettings(nuisance="slice")
    a = self_gravity_integral(x, c, c, q)
    assert a > 0
    assert a == pytest.approx(self_gravity_integral(-x, c, c, q), rel=1e-9)
    assert self_gravity_integral(x + 0.5, c, c, q) < a * (1 + 1e-9)


def test_far_field_is_coulomb():
    assert self_gravity_integral(200.0, 500.0, 500.0) == pytest.approx(1 / 200.0, rel=1e-4)


def test_gaussian_fit_recovers_synthetic_parameters():
    x = np.linspace(-5, 5, 101)
    fit = fit_gaussian_potential(x, 3.298 * np.exp(-x**2 / (2 * 1.62)))
    assert fit.amplitude == pytest.approx(3.298, rel=1e-9)
    assert fit.b1 == pytest.approx(1.62, rel=1e-9)
    assert fit.max_rel_residual < 1e-9


def test_gaussian_fit_rejects_degenerate_and_sparse():
    with pytest.raises(FitError):
        fit_gaussian_potential(np.linspace(-1, 1, 41), np.ones(41))
    with pytest.raises(FitError):
        fit_gaussian_potential(np.linspace(-1, 1, 11), np.exp(-np.linspace(-1, 1, 11) ** 2))


def test_geometric_factor():
    assert geometric_factor([1.0, 1.0]) == 1.0
    assert geometric_factor([1.0, 3.0]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        geometric_factor([])
    with pytest.raises(ValueError):
        geometric_factor([1.0, 0.0])
    # uniform rectangle of half-sides a, b: mean 1/r = (a asinh(b/a) + b asinh(a/b)) / (a b)
    a, b = 0.3, 0.025
    exact = a * b / (a * math.asinh(b / a) + b * math.asinh(a / b))
    assert geometric_factor(bar_radii(2 * a, 2 * b, 0.05, 2000)) == pytest.approx(exact, rel=2e-3)


def test_effective_torque_is_minus_gradient_of_energy():
    p = PendulumParams(0.36, 1.0, 5e4, 0.6, 1.0, 300.0)
    s = 2e-11
    th = np.linspace(-5 * s, 5 * s, 41)
    h = 1e-4 * s
    e_plus, _ = effective_sn_torque(th + h, s, AL, p)
    e_minus, _ = effective_sn_torque(th - h, s, AL, p)
    _, tq = effective_sn_torque(th, s, AL, p)
    assert np.allclose(tq, -(e_plus - e_minus) / (2 * h), rtol=1e-6, atol=1e-12 * np.max(np.abs(tq)))
    e0, t0 = effective_sn_torque(0.0, s, AL, p)
    assert t0 == 0.0
    assert e0 == pytest.approx(-AL.fit_a * const.G * p.mass * AL.atomic_mass / (AL.r_tilde * s))
    with pytest.raises(ValueError):
        effective_sn_torque(0.0, 0.0, AL, p)


def test_mutual_with_no_neighbors_is_self_only():
    sx = 4.05e-10
    m = SNModel(AL.atomic_mass, AL.delta_x_int, sigma_x=sx, sigma_y=sx / 547, sigma_z=sx / 547)
    x = np.linspace(-3 * sx, 3 * sx, 31)
    curve = mutual_gravity_curve(x, m, 0)
    ref = -const.G * m.atomic_mass**2 / sx * self_gravity_integral(x / sx, m.c1, m.c2)
    assert np.array_equal(curve.potential, ref)
    assert curve.regime_tag == "self_only"
    assert mutual_gravity_curve(x, m, 2).regime_tag == "with_mutual"


def test_mutual_rejects_bad_input():
    m = SNModel(AL.atomic_mass, AL.delta_x_int, sigma_x=1e-10)
    with pytest.raises(ValueError):
        mutual_gravity_curve(np.linspace(0, 1e-10, 5), m, 1)
    with pytest.raises(ValueError):
        mutual_gravity_curve(np.linspace(-1e-10, 1e-10, 5), m, -1)
