import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delay_spectra import (
    DelaySystem,
    ExpPoly,
    KernelSpec,
    characteristic_det,
    characteristic_matrix,
    eigensolution,
    find_roots,
    integrate_limiting,
    lambda_sets,
    spectral_abscissa,
    validate_system,
)
from delay_spectra.errors import KernelPoleError, UnsupportedMultiplicity
from delay_spectra.spectrum import CharacteristicRoot

import oracles
from conftest import ones_history, random_stable_one_delay, scalar_delay
from test_oracles import FINITE_ROOT, HAYES_ABSCISSA, LAMBERT_ROOT


def root(lam, mult=1):
    return CharacteristicRoot(complex(lam), mult, 0.0, None, True)


def volterra_exp(a0, a):
    kernel = KernelSpec("volterra", ExpPoly(((1.0, 0, 1.0),)))
    return validate_system({"n": 1, "point_terms": [{"A": [[a0]], "h": 0}],
                            "volterra_terms": [{"A": [[a]], "shift": 0.0, "kernel": kernel}]})


def finite_uniform(a):
    kernel = KernelSpec("finite", ExpPoly(((1.0, 0, 0.0),)), (), 1.0)
    return validate_system({"n": 1, "point_terms": [{"A": [[0.0]], "h": 0}],
                            "finite_dist_terms": [{"A": [[a]], "span": 1.0, "kernel": kernel}]})


# -- characteristic matrix -----------------------------------------------------


def test_characteristic_matrix_examples():
    assert characteristic_matrix(DelaySystem.point([[-1.0]]), -1.0)[0, 0] == 0
    marginal = scalar_delay(0.0, -math.pi / 2)
    assert abs(characteristic_matrix(marginal, 1j * math.pi / 2)[0, 0]) < 1e-15
    diag = DelaySystem.point(np.diag([-1.0, -3.0]))
    assert np.allclose(characteristic_matrix(diag, 0.0), np.diag([1.0, 3.0]))


def test_characteristic_det_and_derivative():
    det, ddet = characteristic_det(DelaySystem.point([[-1.0]]), 2.0)
    assert det == pytest.approx(3.0) and ddet == pytest.approx(1.0)
    det, ddet = characteristic_det(scalar_delay(0.0, -1.0), 0.0)
    assert det == pytest.approx(1.0) and abs(ddet) < 1e-15


@given(st.floats(-3, 3), st.floats(-5, 5))
def test_det_is_conjugate_symmetric(re, im):
    system = DelaySystem.point([[-1.0, 2.0], [0.5, -0.3]], [([[0.2, 0], [1.0, -0.7]], 0.8)])
    s = complex(re, im)
    assert abs(characteristic_det(system, s.conjugate())[0] - np.conj(characteristic_det(system, s)[0])) < 1e-12 * (1 + abs(s)) ** 2


@given(st.floats(-1, 2), st.floats(-4, 4))
def test_derivative_matches_finite_differences(re, im):
    system = DelaySystem.point([[-1.0, 2.0], [0.5, -0.3]], [([[0.2, 0], [1.0, -0.7]], 0.8)])
    s = complex(re, im)
    eps = 1e-6
    fd = (characteristic_det(system, s + eps)[0] - characteristic_det(system, s - eps)[0]) / (2 * eps)
    assert abs(characteristic_det(system, s)[1] - fd) < 1e-6 * (1 + abs(fd))


def test_volterra_characteristic_function():
    system = volterra_exp(-1.0, -0.5)
    s = 0.3 + 0.9j
    assert abs(characteristic_matrix(system, s)[0, 0] - (s + 1 + 0.5 / (s + 1))) < 1e-14
    with pytest.raises(KernelPoleError):
        characteristic_matrix(system, -1.0)


def test_finite_forms_agree_for_a_kernel_filling_its_span():
    system = finite_uniform(-1.0)
    s = -0.4 + 2.1j
    expected = s + (1 - np.exp(-s)) / s
    assert abs(characteristic_matrix(system, s)[0, 0] - expected) < 1e-14
    assert abs(characteristic_matrix(system, s, finite_form="literal")[0, 0] - expected) < 1e-14


def test_forms_differ_for_a_partial_support():
    # density only on [0, 0.5] of a span of 1
    kernel = KernelSpec("finite", ExpPoly(((1.0, 0, 2.0),)), (), 0.5)
    system = validate_system({"n": 1, "point_terms": [{"A": [[-1.0]], "h": 0}],
                              "finite_dist_terms": [{"A": [[1.0]], "span": 1.0, "kernel": kernel}]})
    s = 0.5 + 0.5j
    consistent = characteristic_matrix(system, s)[0, 0]
    truncated = (1 - np.exp(-(s + 2) * 0.5)) / (s + 2)
    assert abs(consistent - (s + 1 - truncated)) < 1e-14
    assert abs(characteristic_matrix(system, s, finite_form="literal")[0, 0] - consistent) > 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_resolvent_identity(seed):
    rng = np.random.default_rng(seed)
    system = DelaySystem.point(rng.normal(size=(3, 3)), [(rng.normal(size=(3, 3)), 0.7)])
    for _ in range(20):
        s = complex(rng.uniform(-2, 2), rng.uniform(-10, 10))
        delta = characteristic_matrix(system, s)
        assert np.allclose(delta @ np.linalg.inv(delta), np.eye(3), atol=1e-10)


# -- root finding ----------------------------------------------------------------


def test_find_roots_ode():
    roots = find_roots(DelaySystem.point([[-1.0]]), (-2, 1, -1, 1))
    assert len(roots) == 1 and abs(roots.roots[0].lam + 1) < 1e-12
    assert roots.roots[0].multiplicity == 1 and roots.exhaustive


def test_find_roots_lambert():
    roots = find_roots(scalar_delay(0.0, -1.0), (-1, 1, 0, 3))
    assert len(roots) == 1
    r = roots.roots[0]
    assert abs(r.lam - LAMBERT_ROOT) < 1e-10
    assert r.residual < 1e-10


def test_find_roots_diagonal():
    roots = find_roots(DelaySystem.point(np.diag([-1.0, -3.0])), (-4, 1, -1, 1))
    assert sorted(r.lam.real for r in roots) == pytest.approx([-3.0, -1.0])
    assert all(r.multiplicity == 1 for r in roots) and roots.exhaustive


def test_symmetric_band_region():
    roots = find_roots(scalar_delay(0.0, -1.0), (-1, 1, 3))
    assert roots.region[2:] == (-3, 3)
    assert len(roots) == 2


def test_double_root_is_reported_once_with_multiplicity_two():
    # s + e^{-1} e^{-s} has a double zero at s = -1
    roots = find_roots(scalar_delay(0.0, -math.exp(-1)), (-1.5, -0.5, -0.5, 0.5))
    assert len(roots) == 1
    assert roots.roots[0].multiplicity == 2
    assert abs(roots.roots[0].lam + 1) < 1e-6


def test_volterra_roots_match_the_quadratic():
    expected = oracles.volterra_exponential_roots(-0.5, -1.0)
    roots = find_roots(volterra_exp(-0.5, -1.0), (-0.9, 1, -3, 3))
    found = sorted((r.lam for r in roots), key=lambda z: z.imag)
    assert np.allclose(found, sorted(expected, key=lambda z: z.imag), atol=1e-10)


def test_kernel_pole_inside_region_is_rejected():
    with pytest.raises(ValueError, match="pole"):
        find_roots(volterra_exp(-1.0, -0.5), (-2, 1, -3, 3))


def test_finite_kernel_root():
    roots = find_roots(finite_uniform(-1.0), (-2, 0, 0.5, 3))
    assert any(abs(r.lam - FINITE_ROOT) < 1e-10 for r in roots)


def test_roots_are_conjugate_closed(rng):
    for _ in range(3):
        A0 = rng.normal(size=(2, 2))
        A1 = rng.normal(size=(2, 2))
        roots = find_roots(DelaySystem.point(A0, [(A1, 1.0)]), (-3, 3, -12, 12))
        lams = np.array([r.lam for r in roots])
        for lam in lams[lams.imag > 1e-9]:
            assert np.min(np.abs(lams - lam.conjugate())) < 1e-9


def test_winding_counts_add_over_subrectangles():
    system = DelaySystem.point([[0.3, 1.0], [-1.0, -0.2]], [(np.eye(2) * -0.8, 1.0)])
    whole = find_roots(system, (-3, 2, -0.37, 15))
    left = find_roots(system, (-3, -0.71, -0.37, 15))
    right = find_roots(system, (-0.71, 2, -0.37, 15))
    assert whole.winding_count == left.winding_count + right.winding_count
    assert sum(r.multiplicity for r in whole) == whole.winding_count


@pytest.mark.parametrize("seed", range(20))
def test_ode_roots_are_eigenvalues(seed):
    A = np.random.default_rng(seed).uniform(-1, 1, (3, 3))
    roots = find_roots(DelaySystem.point(A), (-4, 4, -4, 4))
    found = np.array([r.lam for r in roots for _ in range(r.multiplicity)])
    assert found.size == 3
    for eig in np.linalg.eigvals(A):
        assert np.min(np.abs(found - eig)) < 1e-8


# -- abscissa and sets -----------------------------------------------------------


def test_abscissa_examples():
    assert spectral_abscissa(DelaySystem.point([[-1.0]])).mu == pytest.approx(-1.0, abs=1e-12)
    mu, dominant = spectral_abscissa(scalar_delay(0.0, -math.pi / 2))
    assert abs(mu) < 1e-8
    assert sorted(r.lam.imag for r in dominant) == pytest.approx([-math.pi / 2, math.pi / 2])
    assert spectral_abscissa(scalar_delay(0.0, -1.0)).mu == pytest.approx(LAMBERT_ROOT.real, abs=1e-10)


@pytest.mark.parametrize("a", sorted(HAYES_ABSCISSA))
def test_abscissa_matches_lambert_w(a):
    assert spectral_abscissa(scalar_delay(0.0, a)).mu == pytest.approx(HAYES_ABSCISSA[a], abs=1e-9)


def test_abscissa_of_volterra_system():
    expected = max(oracles.volterra_exponential_roots(-0.5, -1.0).real)
    assert spectral_abscissa(volterra_exp(-0.5, -1.0)).mu == pytest.approx(expected, abs=1e-10)


def test_lambda_set_examples():
    sets = lambda_sets([root(-1)], -1.0)
    assert [r.lam for r in sets.lambda0] == [-1] and not sets.lambda1
    sets = lambda_sets([root(-1), root(-3)], -3.0)
    assert [r.lam for r in sets.lambda0] == [-3] and [r.lam for r in sets.lambda1] == [-1]
    pair = [root(1j * math.pi / 2), root(-1j * math.pi / 2)]
    sets = lambda_sets(pair, 0.0)
    assert len(sets.lambda0) == 2 and not sets.lambda1
    assert len(sets.lambda_all) == 2


def test_lambda_sets_use_the_tie_tolerance():
    sets = lambda_sets([root(-1 + 5e-8), root(-1 - 5e-8), root(-1 + 1e-6)], -1.0)
    assert len(sets.lambda0) == 2 and len(sets.lambda1) == 1


# -- eigensolutions ----------------------------------------------------------------


def test_eigensolution_examples():
    eig = eigensolution(DelaySystem.point([[-1.0]]), root(-1))
    assert eig.v.tolist() == [1.0]
    assert eig(1.0, 2.0)[0] == pytest.approx(2 * math.exp(-1))
    eig = eigensolution(DelaySystem.point(np.diag([-1.0, -3.0])), root(-1))
    assert np.allclose(eig.v, [1.0, 0.0])
    eig = eigensolution(scalar_delay(0.0, -1.0), root(LAMBERT_ROOT))
    assert np.allclose(eig.v, [1.0])
    assert abs(LAMBERT_ROOT + np.exp(-LAMBERT_ROOT)) < 1e-9


def test_eigensolution_residual_and_normalization(rng):
    system = DelaySystem.point(rng.normal(size=(3, 3)), [(rng.normal(size=(3, 3)), 0.5)])
    for r in find_roots(system, (-2, 3, -6, 6)):
        if r.multiplicity != 1:
            continue
        eig = eigensolution(system, r)
        delta = characteristic_matrix(system, r.lam)
        assert np.linalg.norm(delta @ eig.v) <= 1e-8 * np.linalg.norm(delta, 2)
        assert np.linalg.norm(eig.v) == pytest.approx(1.0)
        first = eig.v[np.argmax(np.abs(eig.v) > 1e-12)]
        assert first.imag == 0 and first.real > 0


def test_eigensolution_is_a_solution():
    eig = eigensolution(scalar_delay(0.0, -1.0), root(LAMBERT_ROOT))
    t = np.linspace(1, 3, 5)
    dy = (eig(t + 1e-6, 0.7 - 0.2j) - eig(t - 1e-6, 0.7 - 0.2j)) / 2e-6
    assert np.allclose(dy, -eig(t - 1, 0.7 - 0.2j), atol=1e-8)


def test_multiple_roots_have_no_eigensolution():
    with pytest.raises(UnsupportedMultiplicity):
        eigensolution(scalar_delay(0.0, -math.exp(-1)), root(-1, 2))


@pytest.mark.slow
def test_abscissa_sign_predicts_growth():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 10:
        A0 = rng.uniform(-1, 1, (2, 2)) - rng.uniform(0, 1.5) * np.eye(2)
        A1 = rng.uniform(-1, 1, (2, 2))
        system = DelaySystem.point(A0, [(A1, 1.0)])
        mu = spectral_abscissa(system).mu
        if abs(mu) <= 0.05:
            continue
        checked += 1
        traj = integrate_limiting(system, ones_history(system), 40.0, 0.05)
        _, norms = traj.string_norms()
        late, early = norms[-1], norms[int(10 / 0.05)]
        assert (late < early) == (mu < 0)


def test_stable_suite_generator_gives_stable_systems(rng):
    for _ in range(5):
        assert spectral_abscissa(random_stable_one_delay(rng)).mu < -0.19
