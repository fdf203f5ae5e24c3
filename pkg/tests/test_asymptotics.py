import math

import numpy as np
import pytest

from delay_spectra import (
    DelaySystem,
    ExpPoly,
    Forcing,
    HistoryFunction,
    PerturbationSpec,
    TimeMatrix,
    Trajectory,
    classify_gamma,
    default_horizon,
    estimate_exponent,
    integrate_limiting,
    perron_compare,
    spectral_abscissa,
    verify_stability_verdict,
)

from conftest import random_stable_one_delay, scalar_delay
from test_oracles import LAMBERT_ROOT


def synthetic(fn, h, horizon, step=0.01):
    t = np.arange(int(round(horizon / step)) + 1) * step
    states = np.array([[fn(v)] for v in t])
    history = HistoryFunction.from_function(lambda v: np.atleast_1d(fn(v)), h, 64)
    return Trajectory(0.0, step, states, np.zeros_like(states), history, h)


def decaying_coefficient(rate, scale=1.0, n=1):
    """A_0 perturbed by scale * exp(-rate t) I with the matching envelope."""
    return PerturbationSpec(tilde_point=(TimeMatrix.scalar(ExpPoly.exponential(scale, rate), n),),
                            gamma=ExpPoly.exponential(scale, rate))


def fit_horizon(system):
    mu, dominant = spectral_abscissa(system)
    return default_horizon(system, mu, max(abs(r.lam.imag) for r in dominant))


def test_default_horizon():
    system = scalar_delay(0.0, -1.0)
    assert default_horizon(system, -0.5) == 80.0
    assert default_horizon(system, -0.5, 0.1) == pytest.approx(160 * math.pi)
    assert default_horizon(system, -2.0, 0.01) == 250.0
    assert default_horizon(DelaySystem.point([[0.0]]), 0.0) == 10.0


def test_peaks_of_a_kinked_norm_are_refined():
    # |sin| has kinks at its zeros; the peaks of its decaying envelope sit at the smooth maxima,
    # while max(|cos|, |sin|) peaks at kinks between grid points
    def fn(t):
        return math.exp(-0.5 * t) * max(abs(math.cos(3 * t)), abs(math.sin(3 * t)))
    fit = estimate_exponent(synthetic(fn, 1.0, 40.0, step=0.05))
    assert fit.used_peaks
    assert fit.mu_hat == pytest.approx(-0.5, abs=1e-3)


def constant(value, h):
    return HistoryFunction.constant(np.atleast_1d(value), h)


# -- exponent estimation --------------------------------------------------------------


def test_exponent_of_pure_exponential():
    fit = estimate_exponent(synthetic(lambda t: math.exp(-t), 1.0, 40.0))
    assert fit.mu_hat == pytest.approx(-1.0, abs=1e-3)
    assert fit.nu_hat == pytest.approx(1.0, abs=1e-3)
    assert fit.window == pytest.approx((20.0, 40.0))
    assert fit.r2 > 0.999


def test_exponent_with_polynomial_factor():
    fit = estimate_exponent(synthetic(lambda t: t * math.exp(-2 * t), 1.0, 40.0))
    assert fit.mu_hat == pytest.approx(-2.0, abs=1e-2)
    assert fit.nu_hat == pytest.approx(2.0, abs=0.1)


def test_nu_is_clamped_at_one():
    fit = estimate_exponent(synthetic(lambda t: math.exp(-t) / (2 + t), 1.0, 40.0))
    assert fit.nu_hat == 1.0


def test_exponent_of_lambert_equation():
    traj = integrate_limiting(scalar_delay(0.0, -1.0), constant(1.0, 1.0), 60.0, 0.01)
    fit = estimate_exponent(traj, h=1.0)
    assert fit.mu_hat == pytest.approx(LAMBERT_ROOT.real, abs=5e-3)
    assert fit.to_dict()["norm"] == "l2"


def test_exponent_rejects_short_windows_and_zero_tails():
    with pytest.raises(ValueError, match="window"):
        estimate_exponent(synthetic(lambda t: math.exp(-t), 1.0, 15.0))
    with pytest.raises(ValueError):
        estimate_exponent(synthetic(lambda t: 0.0, 1.0, 40.0))


def test_exponent_is_norm_independent(rng):
    for _ in range(5):
        system = random_stable_one_delay(rng)
        traj = integrate_limiting(system, constant(rng.uniform(-1, 1, 2), 1.0), fit_horizon(system), 0.01)
        fits = [estimate_exponent(traj, norm=norm) for norm in ("l1", "l2", "linf")]
        for a in fits:
            for b in fits:
                assert abs(a.mu_hat - b.mu_hat) <= 2 * math.hypot(a.stderr, b.stderr)


def test_stderr_accounts_for_correlated_residuals():
    # a periodic wobble on an exact exponential: naive OLS errors would be
    # tiny because 2000 samples cover only a few oscillations
    fit = estimate_exponent(synthetic(lambda t: math.exp(-t + 0.01 * math.sin(t)), 1.0, 40.0))
    assert abs(fit.mu_hat + 1.0) <= 3 * fit.stderr


@pytest.mark.slow
def test_exponent_tracks_abscissa_on_random_suite(rng):
    for _ in range(10):
        system = random_stable_one_delay(rng)
        mu = spectral_abscissa(system).mu
        traj = integrate_limiting(system, constant(rng.uniform(-1, 1, 2), 1.0), fit_horizon(system), 0.01)
        assert abs(estimate_exponent(traj).mu_hat - mu) <= 0.05


# -- envelope classes -------------------------------------------------------------------


def test_classify_gamma_examples():
    cls = classify_gamma(PerturbationSpec(gamma=ExpPoly.exponential(1.0, 1.0)), 1)
    assert cls.kind == "exp_decay_a" and cls.a == 1.0
    cls = classify_gamma(PerturbationSpec(gamma=ExpPoly(((1.0, 1, 0.1),))), 2)
    assert cls.kind == "exp_decay_a" and cls.a == pytest.approx(0.1)
    assert classify_gamma(PerturbationSpec(gamma=ExpPoly.constant(0.3)), 1).kind == "bounded_only"


def test_classify_gamma_edge_cases():
    assert classify_gamma(PerturbationSpec.zero()).a == math.inf
    # cancelling constants leave only the decaying term
    gamma = ExpPoly(((0.5, 0, 0.0), (-0.5, 0, 0.0), (2.0, 0, 3.0)))
    assert classify_gamma(PerturbationSpec(gamma=gamma)).a == 3.0
    with pytest.raises(ValueError):
        classify_gamma(PerturbationSpec.zero(), 0)


# -- comparison with eigensolutions ---------------------------------------------------


def test_perron_separable_example():
    report = perron_compare(DelaySystem.point([[-1.0]]), decaying_coefficient(2.0), constant(1.0, 0.0), 30.0)
    assert abs(report.c_hat - math.exp(0.5)) < 1e-3
    assert report.residual_rate <= -2.5
    assert report.classification == "small_o_exp"
    assert report.gamma_class == "exp_decay_a"
    assert report.consistent


def test_zero_perturbation_matches_the_eigensolution():
    report = perron_compare(DelaySystem.point([[-1.0]]), PerturbationSpec.zero(), constant(1.0, 0.0), 30.0)
    assert abs(report.c_hat - 1.0) < 1e-6
    assert report.classification == "small_o_exp"
    assert report.consistent


def test_zero_perturbation_with_delay_decays_faster_than_the_dominant_pair():
    report = perron_compare(scalar_delay(0.0, -1.0), PerturbationSpec.zero(), constant(1.0, 1.0))
    assert report.classification == "small_o_exp"
    assert report.residual_rate < LAMBERT_ROOT.real - 1.0
    assert report.consistent


def test_constant_forcing_branch():
    pert = PerturbationSpec(f0=Forcing.closed_form([1.0]), K0=1.0)
    report = perron_compare(DelaySystem.point([[-1.0]]), pert, constant(0.0, 0.0), 40.0)
    assert report.mu == pytest.approx(-1.0)
    assert report.exponent_branch == "not_characteristic_zero"
    assert abs(report.x_exponent) < 0.05
    assert abs(report.residual_rate) < 0.05
    assert report.consistent


def test_report_serializes():
    report = perron_compare(DelaySystem.point([[-1.0]]), decaying_coefficient(2.0), constant(1.0, 0.0), 30.0)
    data = report.to_dict()
    assert data["c_hat"]["re"] == pytest.approx(math.exp(0.5), abs=1e-3)
    assert report.series.shape[1] == 3


def test_smaller_perturbation_never_slows_the_residual():
    system = scalar_delay(-1.0, 0.3)
    hist = constant(1.0, 1.0)
    big = perron_compare(system, decaying_coefficient(2.0, 1.0), hist, 30.0)
    small = perron_compare(system, decaying_coefficient(2.0, 0.1), hist, 30.0)
    assert small.residual_rate <= big.residual_rate + 2 * math.hypot(small.residual_se, big.residual_se)


@pytest.mark.slow
def test_perron_margin_on_random_suite(rng):
    passed = 0
    for _ in range(10):
        system = random_stable_one_delay(rng)
        report = perron_compare(system, decaying_coefficient(2.0, 1.0, 2), constant(rng.uniform(-1, 1, 2), 1.0))
        eps = report.epsilon_hat if math.isfinite(report.epsilon_hat) else math.inf
        if report.residual_rate <= report.mu + min(eps, -0.1):
            passed += 1
    assert passed >= 9


# -- stability verdicts -----------------------------------------------------------------


def test_verdict_for_exponential_decay():
    hists = [constant(v, 0.0) for v in (1.0, -2.0, 0.5)]
    verdict = verify_stability_verdict(DelaySystem.point([[-1.0]]), PerturbationSpec.zero(), hists, 30.0)
    assert verdict["passed"] and verdict["decay_branch_applicable"]
    for entry in verdict["histories"]:
        assert entry["mu_hat"] == pytest.approx(-1.0, abs=0.01)


def test_verdict_for_marginal_oscillation():
    hists = [constant(v, 1.0) for v in (1.0, -2.0, 0.5)]
    verdict = verify_stability_verdict(scalar_delay(0.0, -math.pi / 2), PerturbationSpec.zero(), hists, 100.0)
    assert verdict["passed"]
    assert verdict["bounded_branch_applicable"] and not verdict["decay_branch_applicable"]


def test_verdict_for_constant_forcing():
    pert = PerturbationSpec(f0=Forcing.closed_form([1.0]), K0=1.0)
    hists = [constant(v, 0.0) for v in (0.0, 2.0, -1.0)]
    verdict = verify_stability_verdict(DelaySystem.point([[-1.0]]), pert, hists, 30.0)
    assert verdict["passed"]
    assert verdict["bounded_branch_applicable"] and not verdict["decay_branch_applicable"]


def test_verdict_reports_growth():
    hists = [constant(v, 1.0) for v in (1.0, -2.0, 0.5)]
    verdict = verify_stability_verdict(scalar_delay(0.0, -1.7), PerturbationSpec.zero(), hists, 40.0)
    assert not verdict["decay_branch_applicable"] and not verdict["bounded_branch_applicable"]
    assert not verdict["passed"]


def test_verdict_needs_three_histories():
    with pytest.raises(ValueError):
        verify_stability_verdict(DelaySystem.point([[-1.0]]), PerturbationSpec.zero(), [constant(1.0, 0.0)] * 2, 10.0)
