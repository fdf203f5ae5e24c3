"""Exponent estimates from trajectories and comparison with the limiting equation.

All checks here are finite-horizon evidence: a report can be consistent or
inconsistent with an asymptotic statement, never a proof of it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import BlowUpError, UnsupportedMultiplicity
from .model import DelaySystem, HistoryFunction, PerturbationSpec, vector_norm
from .simulator import Trajectory, integrate_perturbed
from .spectrum import eigensolution, spectral_abscissa

__all__ = [
    "ExponentFit",
    "GammaClass",
    "ComparisonReport",
    "estimate_exponent",
    "classify_gamma",
    "perron_compare",
    "verify_stability_verdict",
]

TINY = 1e-290
# residuals closer than this factor to the step-halving error are not trusted
FLOOR_FACTOR = 100.0
# a fit whose log residuals scatter less than this is exact enough whatever its r2
FLAT_SE = 1e-3
# abscissas within this distance of zero count as marginal
MARGINAL = 1e-7


def _fit_is_conclusive(fit) -> bool:
    # r2 compares against the spread of the data, which is nil for a flat series
    return fit.r2 >= 0.9 or fit.residual_se <= FLAT_SE


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares fit ``log|x_t| ~ mu t + (nu - 1) log t + c`` on a tail window."""

    mu_hat: float
    nu_hat: float
    window: tuple[float, float]
    r2: float
    stderr: float
    residual_se: float
    norm: str
    points: int
    used_peaks: bool

    def to_dict(self) -> dict:
        return {
            "mu_hat": self.mu_hat,
            "nu_hat": self.nu_hat,
            "window": list(self.window),
            "r2": self.r2,
            "stderr": self.stderr,
            "residual_se": self.residual_se,
            "norm": self.norm,
            "points": self.points,
            "used_peaks": self.used_peaks,
        }


def _peaks(values: np.ndarray) -> np.ndarray:
    """Indices of interior local maxima (first index of a plateau)."""
    if values.size < 3:
        return np.zeros(0, dtype=int)
    up = np.diff(values) > 0
    down = np.diff(values) < 0
    idx = []
    rising = False
    for i in range(values.size - 1):
        if up[i]:
            rising = True
            start = i + 1
        elif down[i] and rising:
            idx.append(start)
            rising = False
    return np.array(idx, dtype=int)


def _ols(t: np.ndarray, y: np.ndarray, with_log: bool = True):
    cols = [t, np.log(t), np.ones_like(t)] if with_log else [t, np.ones_like(t)]
    X = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - X.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    # densely sampled smooth data has strongly correlated residuals; scale the
    # slope error by the AR(1) effective-sample-size factor
    inflation = 1.0
    denom = float(resid @ resid)
    if denom > 0 and len(y) > 2:
        rho = float(resid[1:] @ resid[:-1]) / denom
        rho = min(max(rho, 0.0), 1.0 - 1.0 / len(y))
        inflation = math.sqrt((1.0 + rho) / (1.0 - rho))
    # the slope cannot be resolved beyond the rounding error of the log values
    rounding = 16 * np.finfo(float).eps * float(np.max(np.abs(y))) / max(float(t[-1] - t[0]), 1e-300)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    se = max(inflation * math.sqrt(max(cov[0, 0], 0.0)), rounding)
    return coef, se, math.sqrt(sigma2), r2


def _fit_log_series(t, log_norm, pointwise_log, norm, with_log=True, refine=None) -> ExponentFit:
    # oscillating tails: fit through the peaks of the pointwise norm, which
    # carry the envelope of the string norm
    peaks = _peaks(pointwise_log)
    used_peaks = peaks.size >= 6
    if used_peaks:
        tt, yy = t[peaks], pointwise_log[peaks]
        if refine is not None:
            tt, yy = refine(tt)
    else:
        tt, yy = t, log_norm
    coef, se, rse, r2 = _ols(tt, yy, with_log)
    nu = 1.0 + coef[1] if with_log else 1.0
    if nu < 1.0:
        # the constraint nu >= 1 is active: the constrained fit drops log t
        coef, se, rse, r2 = _ols(tt, yy, False)
        nu = 1.0
    return ExponentFit(float(coef[0]), float(nu), (float(t[0]), float(t[-1])), float(r2),
                       float(se), float(rse), norm, int(tt.size), bool(used_peaks))


def estimate_exponent(traj: Trajectory, h: float | None = None, window_frac: float = 0.5,
                      norm: str = "l2") -> ExponentFit:
    """Estimate the strict Lyapunov exponent of a trajectory.

    Parameters
    ----------
    traj : Trajectory
    h : float, optional
        String length; defaults to the system's maximal delay.
    window_frac : float
        Fraction of the horizon, counted from the end, used for the fit.
    norm : {"l1", "l2", "linf"}

    Returns
    -------
    ExponentFit
        ``mu_hat`` is the coefficient of ``t``; ``nu_hat = 1 + `` the
        coefficient of ``log t``, clamped to at least one.

    Raises
    ------
    ValueError
        If the window is shorter than ten delays or the tail is zero.
    """
    h = traj.h if h is None else h
    T = traj.t_end
    if not 0 < window_frac <= 1:
        raise ValueError("window_frac must lie in (0, 1]")
    if T * window_frac < 10 * h:
        raise ValueError(f"window too short: {T * window_frac} < 10 h = {10 * h}")
    times, sn = traj.string_norms(h, norm)
    start = T * (1 - window_frac)
    mask = (times >= start) & (times > 0)
    t = times[mask]
    if t.size < 8:
        raise ValueError("window too short: fewer than 8 samples")
    values = sn[mask]
    if np.any(values <= TINY) or not np.all(np.isfinite(values)):
        raise ValueError("zero or underflowed trajectory tail")
    pointwise = vector_norm(traj.states[mask], norm)
    with np.errstate(divide="ignore"):
        point_log = np.log(np.maximum(pointwise, TINY))

    def refine(peak_times):
        # grid maxima of a kinked norm jitter by a whole step; re-maximize
        # the dense output between the neighbouring grid points
        offsets = np.linspace(-traj.step, traj.step, 129)
        times_out = np.empty(peak_times.size)
        logs_out = np.empty(peak_times.size)
        for i, tp in enumerate(peak_times):
            sub = np.clip(tp + offsets, traj.t0, traj.t_end)
            vals = vector_norm(traj(sub), norm)
            k = int(np.argmax(vals))
            times_out[i] = sub[k]
            logs_out[i] = math.log(max(float(vals[k]), TINY))
        return times_out, logs_out

    return _fit_log_series(t, np.log(values), point_log, norm, refine=refine)


# ---------------------------------------------------------------------------
# envelope classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaClass:
    """Decay class of the envelope: exp_decay_a, integrable_b, little_o_power_c or bounded_only."""

    kind: str
    a: float | None = None

    def __str__(self):
        return self.kind


def classify_gamma(pert: PerturbationSpec, nu: int = 1) -> GammaClass:
    """Classify ``gamma`` by inspecting its terms.

    After merging like terms: every term decaying exponentially gives
    ``exp_decay_a`` with ``a`` the slowest rate.  A surviving non-decaying
    term ``c t^k`` with ``k >= 0`` is neither integrable against
    ``t^(nu-1)`` nor ``o(t^(1-nu))``, so the class is ``bounded_only``.  The
    family has no negative powers, so ``integrable_b`` and
    ``little_o_power_c`` only arise together with ``exp_decay_a``.
    """
    if nu < 1:
        raise ValueError("nu must be a positive integer")
    merged: dict[tuple[int, float], float] = {}
    for c, k, d in pert.gamma.terms:
        merged[(k, d)] = merged.get((k, d), 0.0) + c
    live = [(k, d) for (k, d), c in merged.items() if c != 0.0]
    if all(d > 0 for _, d in live):
        return GammaClass("exp_decay_a", min((d for _, d in live), default=math.inf))
    return GammaClass("bounded_only", None)


# ---------------------------------------------------------------------------
# comparison with the limiting equation
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    mu: float
    c_hat: complex
    residual_rate: float
    residual_se: float
    classification: str
    epsilon_hat: float
    gamma_class: str
    gamma_rate: float | None
    exponent_branch: str
    x_exponent: float | None
    expected: str
    consistent: bool | None
    window: tuple[float, float]
    r2: float | None
    notes: list = field(default_factory=list)
    series: np.ndarray | None = None  # columns t, log|x_t|, log|x_t - y_t|

    def to_dict(self) -> dict:
        c = complex(self.c_hat)
        return {
            "mu": self.mu,
            "c_hat": {"re": c.real, "im": c.imag},
            "residual_rate": self.residual_rate if math.isfinite(self.residual_rate) else None,
            "residual_rate_below_floor": not math.isfinite(self.residual_rate),
            "residual_se": self.residual_se,
            "classification": self.classification,
            "epsilon_hat": self.epsilon_hat if math.isfinite(self.epsilon_hat) else None,
            "gamma_class": self.gamma_class,
            "gamma_rate": self.gamma_rate,
            "exponent_branch": self.exponent_branch,
            "x_exponent": self.x_exponent,
            "expected": self.expected,
            "consistent": self.consistent,
            "window": list(self.window),
            "r2": self.r2,
            "notes": list(self.notes),
        }


def default_step(system: DelaySystem) -> float:
    delays = [d for d in system.positive_delays if d > 0]
    for term in system.volterra_terms + system.finite_terms:
        delays += [a.tau for a in term.kernel.atoms if a.tau > 0]
    return min([0.01] + [d / 4 for d in delays])


def default_horizon(system: DelaySystem, mu: float, omega: float = 0.0) -> float:
    """Simulation length for exponent fits.

    ``max(20 h, 40/|mu|)``, extended so that the last half of the horizon
    holds at least eight half-periods ``pi/|omega|`` of the dominant
    oscillation, but never beyond ``500/|mu|`` where the tail would underflow.
    """
    h = system.h
    candidates = [20 * h, 10.0]
    if mu != 0:
        candidates.append(40 / abs(mu))
    horizon = max(candidates)
    if omega != 0:
        periodic = 16 * math.pi / abs(omega)
        if mu != 0:
            periodic = min(periodic, 500 / abs(mu))
        horizon = max(horizon, periodic)
    return horizon


def _eigen_basis(system, dominant):
    cols = []
    for root in dominant:
        if root.lam.imag < -1e-12:
            continue
        eig = eigensolution(system, root)
        cols.append((eig, abs(root.lam.imag) > 1e-12))
    return cols


def _basis_matrix(cols, t):
    blocks = []
    for eig, is_complex in cols:
        b = eig.basis(t)  # (T, n, 2)
        blocks.append(b if is_complex else b[..., :1])
    return np.concatenate(blocks, axis=-1)  # (T, n, k)


def _fit_amplitude(basis, x, t, tail, mu):
    """Weighted least squares of ``x`` against the basis on the tail.

    Rows are scaled by ``exp(-mu t)`` so every tail time counts equally in
    relative terms.  If the fit does not reduce the tail residual (the
    solution is not tracking any eigensolution) the amplitude is zero.
    """
    k = basis.shape[-1]
    weight = np.exp(-mu * t[tail])
    design = (basis[tail] * weight[:, None, None]).reshape(-1, k)
    target = (x[tail] * weight[:, None]).reshape(-1)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    y = basis @ coef
    if not np.all(np.isfinite(y)) or np.sum((x[tail] - y[tail]) ** 2) >= np.sum(x[tail] ** 2):
        coef = np.zeros(k)
        y = np.zeros_like(x)
    return coef, y


def _amplitude(cols, coef):
    # y = sum Re(c v e^{lam t}) = a Re(.) - b Im(.) with c = a - i b
    if not cols:
        return 0j
    eig, is_complex = cols[0]
    if is_complex:
        return complex(coef[0], -coef[1])
    return complex(coef[0], 0.0)


def _sliding_max(values: np.ndarray, width: int) -> np.ndarray:
    """Max over the trailing ``width`` samples (the window is cut at the first sample)."""
    if width <= 1:
        return values
    return maximum_filter1d(values, size=width, origin=(width - 1) // 2, mode="nearest")


def _residual_fit(t, r_norm, floor, norm):
    """Rate of ``|x - y|`` on the stretch where it stays above the error floor."""
    above = r_norm > floor
    if not np.any(above[1:]):
        return None
    # measurable stretch: from the start up to the first drop below the floor
    below = np.nonzero(~above[1:])[0]
    end = below[0] + 1 if below.size else t.size
    t_end = t[end - 1]
    sel = (t >= t_end / 2) & (np.arange(t.size) < end) & (t > 0)
    if np.count_nonzero(sel) < 8:
        return None
    tt = t[sel]
    yy = np.log(r_norm[sel])
    return _fit_log_series(tt, yy, yy, norm, with_log=False)


def perron_compare(system: DelaySystem, pert: PerturbationSpec, history: HistoryFunction,
                   horizon: float | None = None, norm: str = "l2", *, step: float | None = None,
                   window_frac: float = 0.5, sigma_min: float | None = None) -> ComparisonReport:
    """Compare a perturbed solution with the dominant eigensolutions of the limiting equation.

    Steps: locate the dominant roots; simulate at ``step`` and ``step/2``;
    fit the eigensolution amplitude on the tail window (rows weighted by
    ``exp(-mu t)``); fit the decay rate of ``x - y`` where it is above the
    discretization floor; classify against the envelope class.

    Returns
    -------
    ComparisonReport
        ``classification`` is ``small_o_exp``, ``small_o_mu``, ``big_O_c`` or
        ``inconclusive`` (fit r2 below 0.9, or the two step sizes disagree).

    Raises
    ------
    UnsupportedMultiplicity
        If a dominant root is not simple.
    """
    absc = spectral_abscissa(system, sigma_min=sigma_min)
    mu = absc.mu
    dominant = [r for r in absc.dominant]
    if any(r.multiplicity != 1 for r in dominant):
        raise UnsupportedMultiplicity("dominant roots must be simple for the comparison")
    step = step or default_step(system)
    horizon = horizon or default_horizon(system, mu, max((abs(r.lam.imag) for r in dominant), default=0.0))
    # whole number of coarse steps so both runs share the coarse grid
    horizon = step * math.ceil(horizon / step - 1e-9)
    notes = []

    x_traj = integrate_perturbed(system, pert, history, horizon, step, norm)
    x_fine = integrate_perturbed(system, pert, history, horizon, step / 2, norm)
    t = x_traj.times
    x = x_traj.states

    cols = _eigen_basis(system, dominant)
    basis = _basis_matrix(cols, t)  # (T, n, k)
    tail = t >= horizon * (1 - window_frac)
    x_half = x_fine.states[::2][: t.size]
    # the half-step run is primary; the coarse run measures the discretization error
    coef_c, y_c = _fit_amplitude(basis, x, t, tail, mu)
    coef, y = _fit_amplitude(basis, x_half, t, tail, mu)
    if not np.any(coef):
        notes.append("eigensolution fit did not reduce the tail residual; amplitude set to zero")
    c_hat = _amplitude(cols, coef)
    width = int(round(system.h / step)) + 1
    r_norm = _sliding_max(vector_norm(x_half - y, norm), width)
    x_norm = vector_norm(x_half, norm)
    err = _sliding_max(vector_norm(x - x_half, norm) + vector_norm(y - y_c, norm), width)
    floor = FLOOR_FACTOR * err + 100 * np.finfo(float).eps * np.maximum(x_norm, vector_norm(y, norm))

    fit = _residual_fit(t, r_norm, floor, norm)
    fit_coarse = _residual_fit(t, _sliding_max(vector_norm(x - y_c, norm), width), floor, norm)

    gclass = classify_gamma(pert, max((r.multiplicity for r in dominant), default=1))
    K0 = pert.K0
    if fit is None:
        rate, se, r2 = -math.inf, 0.0, None
        window = (float(t[0]), float(t[-1]))
        classification = "small_o_exp"
        notes.append("residual stays below the discretization floor")
    else:
        rate, se, r2 = fit.mu_hat, fit.stderr, fit.r2
        window = fit.window
        eps_hat = mu - rate
        if eps_hat > 2 * se + 1e-2:
            classification = "small_o_exp"
        elif rate <= mu + 1e-2:
            classification = "small_o_mu"
        else:
            classification = "big_O_c"
        if not _fit_is_conclusive(fit):
            classification = "inconclusive"
            notes.append(f"residual fit r2 = {r2:.3g} below 0.9")
        if fit_coarse is not None and abs(fit_coarse.mu_hat - rate) > 2 * math.hypot(se, fit_coarse.stderr) + 1e-3:
            classification = "inconclusive"
            notes.append(
                f"rates at step and step/2 disagree ({rate:.6g} vs {fit_coarse.mu_hat:.6g})"
            )
    epsilon_hat = mu - rate

    # exponent of the perturbed solution itself
    x_exp = None
    branch = "characteristic_zero"
    try:
        if horizon * window_frac >= 10 * system.h:
            xf = estimate_exponent(x_traj, window_frac=window_frac, norm=norm)
            x_exp = xf.mu_hat
            if x_exp > mu + 0.05:
                branch = "not_characteristic_zero"
    except ValueError:
        branch = "superexponential"
        notes.append("solution tail underflowed; decay faster than any exponential on this horizon")

    if K0 > 0 and mu < 0:
        expected = "bounded, exponent not a characteristic root real part"
        consistent = branch == "not_characteristic_zero" or (x_exp is not None and abs(x_exp) < 0.05)
    elif gclass.kind == "exp_decay_a" and K0 == 0:
        expected = "small_o_exp"
        consistent = classification == "small_o_exp"
    elif K0 == 0:
        expected = "small_o_mu"
        consistent = classification in ("small_o_exp", "small_o_mu")
    else:
        expected = "none"
        consistent = None
    if classification == "inconclusive":
        consistent = None

    with np.errstate(divide="ignore"):
        series = np.column_stack([
            t,
            np.log(np.maximum(x_traj.string_norms(norm=norm)[1], TINY)),
            np.log(np.maximum(r_norm, TINY)),
        ])
    return ComparisonReport(
        mu=mu, c_hat=c_hat, residual_rate=float(rate), residual_se=float(se),
        classification=classification, epsilon_hat=float(epsilon_hat), gamma_class=gclass.kind,
        gamma_rate=gclass.a, exponent_branch=branch, x_exponent=x_exp, expected=expected,
        consistent=consistent, window=window, r2=r2, notes=notes, series=series,
    )


# ---------------------------------------------------------------------------
# stability verdicts over several histories
# ---------------------------------------------------------------------------


def _threads() -> int:
    raw = os.environ.get("DELAY_SPECTRA_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    return value if value > 0 else (os.cpu_count() or 1)


def verify_stability_verdict(system: DelaySystem, pert: PerturbationSpec, histories: list,
                             horizon: float, *, step: float | None = None, norm: str = "l2",
                             sigma_min: float | None = None) -> dict:
    """Check decay or boundedness claims along several simulated solutions.

    Two branches are checked where applicable:

    * exponential decay (``mu < 0`` and ``K0 = 0``): the fitted exponent
      must not exceed ``mu + 0.05``;
    * uniform boundedness (``mu <= 0`` with simple dominant roots): the sup
      of ``|x|`` over the second half of the horizon must not exceed
      ``1.05 max(sup over the first half, ||phi||)``.

    Returns
    -------
    dict
        ``passed``, ``mu``, the applicable branches and one entry per history.
    """
    if len(histories) < 3:
        raise ValueError("at least three histories are required")
    absc = spectral_abscissa(system, sigma_min=sigma_min)
    mu = absc.mu
    simple = all(r.multiplicity == 1 for r in absc.dominant)
    decay_branch = mu < -MARGINAL and pert.K0 == 0
    bounded_branch = mu <= MARGINAL and simple
    step = step or default_step(system)

    def run(history):
        entry = {"decay": None, "bounded": None, "mu_hat": None}
        try:
            traj = integrate_perturbed(system, pert, history, horizon, step, norm)
        except BlowUpError as exc:
            entry.update(passed=False, error=str(exc))
            return entry
        norms = vector_norm(traj.states, norm)
        if decay_branch:
            try:
                fit = estimate_exponent(traj, norm=norm)
                entry["mu_hat"] = fit.mu_hat
                entry["decay"] = bool(fit.mu_hat <= mu + 0.05)
            except ValueError:
                entry["decay"] = bool(norms[-1] <= TINY * 1e10)
        if bounded_branch:
            mid = norms.size // 2
            phi = history.sup_norm(norm)
            first = max(float(np.max(norms[: mid + 1])), phi)
            second = float(np.max(norms[mid:]))
            entry["sup_first_half"] = first
            entry["sup_second_half"] = second
            entry["bounded"] = bool(second <= 1.05 * first)
        checks = [v for v in (entry["decay"], entry["bounded"]) if v is not None]
        entry["passed"] = bool(checks) and all(checks)
        return entry

    with ThreadPoolExecutor(max_workers=min(_threads(), len(histories))) as pool:
        entries = list(pool.map(run, histories))
    return {
        "mu": mu,
        "decay_branch_applicable": decay_branch,
        "bounded_branch_applicable": bounded_branch,
        "histories": entries,
        "passed": all(e["passed"] for e in entries),
    }
