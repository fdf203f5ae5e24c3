"""The frozen reference values, re-derived by a second independent route."""

import math

import numpy as np
import pytest

import oracles

# frozen from oracles.py
LAMBERT_ROOT = -0.3181315052047641 + 1.3372357014306895j
HAYES_ABSCISSA = {-1.4: -0.08170366099940554, -1.7: 0.05634723171468702}
PERRON_X5 = 0.01110874436727317
VOLTERRA_X2 = 0.021104684100034632  # a0 = -1, a = -0.5
FINITE_X1 = 0.1585290151921171  # a = -1, phi = 1
FINITE_ROOT = -1.2559758937464334 + 1.3696362721495323j


def test_lambert_newton_matches_lambert_w():
    assert abs(oracles.lambert_dominant_root() - LAMBERT_ROOT) < 1e-15
    assert abs(oracles.one_delay_roots(-1.0, [0])[0] - LAMBERT_ROOT) < 1e-14


def test_hayes_values_from_lambert_w_branches():
    for a, mu in HAYES_ABSCISSA.items():
        assert oracles.one_delay_abscissa(a) == pytest.approx(mu, abs=1e-14)
    assert abs(oracles.one_delay_abscissa(-math.pi / 2)) < 1e-14
    # the marginal roots are exactly +-i pi/2
    root = 1j * math.pi / 2
    assert abs(root + (math.pi / 2) * np.exp(-root)) < 1e-15


def test_method_of_steps_polynomials_satisfy_the_equation():
    # x'(t) = -x(t - 1) on [1, 2] with x = 1 - t on [0, 1]
    t = np.linspace(1, 2, 11)
    deriv = t - 2
    assert np.allclose(deriv, -(1 - (t - 1)))
    assert oracles.method_of_steps(2.0) == -0.5


def test_perron_closed_form_against_quadrature():
    from scipy.integrate import solve_ivp

    sol = solve_ivp(lambda t, x: (-1 + np.exp(-2 * t)) * x, (0, 5), [1.0], rtol=1e-13, atol=1e-16)
    assert sol.y[0, -1] == pytest.approx(PERRON_X5, rel=1e-9)
    assert oracles.separable_perturbed(5.0) == pytest.approx(PERRON_X5, rel=1e-15)


def test_volterra_reference_against_direct_quadrature():
    from scipy.integrate import solve_ivp

    # same equation, memory term integrated by trapezoid on a fine dense solution
    a0, a = -1.0, -0.5
    assert oracles.volterra_exponential(a0, a, 2.0) == pytest.approx(VOLTERRA_X2, rel=1e-13)
    roots = oracles.volterra_exponential_roots(a0, a)
    for s in roots:
        assert abs(s - a0 - a / (s + 1)) < 1e-14
    sol = solve_ivp(lambda t, y: [a0 * y[0] + a * y[1], y[0] - y[1]], (0, 2), [1.0, 0.0],
                    rtol=1e-13, atol=1e-15)
    assert sol.y[0, -1] == pytest.approx(VOLTERRA_X2, rel=1e-8)


def test_shifted_volterra_reference_without_memory_kick():
    # before t = 1 the memory integral only sees the history
    phi = 1.0
    t = 0.7
    # z' = phi - z => z = 1 - e^{-t}; x' = -x + 0.5 z
    z = lambda s: 1 - math.exp(-s)
    closed = math.exp(-t) + 0.5 * (1 - math.exp(-t) - t * math.exp(-t))
    assert oracles.shifted_volterra(-1.0, 0.5, t, lambda u: phi, 1.0) == pytest.approx(closed, rel=1e-11)
    assert z(0) == 0


def test_finite_reference_values():
    assert oracles.finite_uniform_first_interval(-1.0, 1.0) == pytest.approx(FINITE_X1, rel=1e-11)
    # on [0, 1] the equation is x'' = -x - (-1) * 1 ... solved in closed form:
    # x' = -((1 - t) + w), w' = x  =>  x'' = 1 - x, x(0) = 1, x'(0) = -1
    t = 1.0
    closed = 1 - math.sin(t)
    assert closed == pytest.approx(FINITE_X1, rel=1e-12)
    s = FINITE_ROOT
    assert abs(s - (-1.0) * (1 - np.exp(-s)) / s) < 1e-13


def test_matrix_measure_limit_definition():
    assert oracles.matrix_measure_by_limit([[0, 1], [0, 0]]) == pytest.approx(0.5, abs=1e-6)
    assert oracles.scalar_sweep_sup(0.5, 1.5) == pytest.approx(1 / 3, abs=1e-15)
