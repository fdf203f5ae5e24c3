"""Fixed-step integration of the limiting and perturbed delay equations.

The scheme is classical RK4 on a uniform grid ``t_k = k * step`` with cubic
Hermite dense output built from the stored states and derivatives.  Delayed
reads use dense output (or the history for negative arguments).  Distributed
terms use the composite trapezoid rule over the stored grid, with the two
partial end intervals handled exactly and atoms added in closed form.

Volterra integrals run over the whole stored grid, so a run costs
``O((horizon/step)**2)`` when Volterra terms are present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import (
    BlowUpError,
    EnvelopeOverflowError,
    EnvelopeViolation,
    OutOfRangeError,
)
from .expoly import ExpPoly
from .model import (
    DelaySystem,
    HistoryFunction,
    PerturbationSpec,
    validate_perturbation,
    vector_norm,
)

__all__ = [
    "Trajectory",
    "HypothesisReport",
    "integrate_limiting",
    "integrate_perturbed",
    "perturbation_value",
    "string_norm",
    "hypothesis_check",
]

ENVELOPE_SLACK = 1e-9


def _hermite(x0, x1, f0, f1, step, theta):
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + theta
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * x0 + h10 * step * f0 + h01 * x1 + h11 * step * f1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense numerical solution on ``[-h, t_end]``.

    ``states[k]`` and ``derivs[k]`` are the state and its derivative at
    ``t0 + k * step``.  Values between grid points come from cubic Hermite
    interpolation; values before ``t0`` come from the history.
    """

    t0: float
    step: float
    states: np.ndarray
    derivs: np.ndarray
    history: HistoryFunction
    h: float
    f_norms: np.ndarray | None = None
    envelope: np.ndarray | None = None
    interpolation: str = "hermite3"

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.states.shape[0])

    @property
    def t_end(self) -> float:
        return self.t0 + self.step * (self.states.shape[0] - 1)

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr) - self.t0
        end = self.t_end - self.t0
        if np.any(flat > end * (1 + 1e-12) + 1e-12):
            raise OutOfRangeError(f"trajectory evaluated beyond t_end={self.t_end}")
        out = np.empty((flat.size, self.n))
        past = flat <= 0.0
        if np.any(past):
            out[past] = self.history(np.maximum(flat[past], -self.history.h))
        live = ~past
        if np.any(live):
            u = np.minimum(flat[live], end) / self.step
            k = np.minimum(np.floor(u).astype(int), self.states.shape[0] - 2)
            theta = (u - k)[:, None]
            out[live] = _hermite(
                self.states[k], self.states[k + 1], self.derivs[k], self.derivs[k + 1], self.step, theta
            )
        return out[0] if t_arr.ndim == 0 else out

    def string_norm(self, t: float, h: float | None = None, norm: str = "l2") -> float:
        return string_norm(self, t, self.h if h is None else h, norm)

    def string_norms(self, h: float | None = None, norm: str = "l2") -> tuple[np.ndarray, np.ndarray]:
        """Sliding-window sup norms ``|x_t|`` at every grid point ``t >= t0``.

        Uses the grid points and the Hermite midpoints, plus history samples
        at the same resolution for windows reaching below ``t0``.
        """
        h = self.h if h is None else h
        half = self.step / 2
        n_hist = int(math.ceil(h / half - 1e-9)) if h > 0 else 0
        hist_t = self.t0 - half * np.arange(n_hist, 0, -1)
        hist_vals = vector_norm(self.history(np.maximum(hist_t - self.t0, -self.history.h)), norm) if n_hist else np.zeros(0)
        mids = _hermite(
            self.states[:-1], self.states[1:], self.derivs[:-1], self.derivs[1:], self.step, 0.5
        )
        fine = np.empty((2 * self.states.shape[0] - 1, self.n))
        fine[0::2] = self.states
        fine[1::2] = mids
        values = np.concatenate([hist_vals, vector_norm(fine, norm)])
        width = n_hist + 1
        # trailing window of `width` samples ending at each position
        filtered = maximum_filter1d(values, size=width, origin=(width - 1) // 2, mode="nearest")
        on_grid = filtered[n_hist::2]
        return self.times, on_grid

    def to_csv(self, path) -> None:
        header = "t," + ",".join(f"x{i + 1}" for i in range(self.n))
        rows = np.column_stack([self.times, self.states])
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# right-hand side assembly
# ---------------------------------------------------------------------------


class _DistTerm:
    """Precomputed data for one distributed term (Volterra or finite)."""

    def __init__(self, A, kernel, offset: float, volterra: bool, tilde=None):
        self.A = np.asarray(A, dtype=float)
        self.kernel = kernel
        self.offset = offset  # Volterra shift, 0 for finite kernels
        self.volterra = volterra
        self.tilde = tilde if tilde is not None and not tilde.is_zero else None
        self.matrix = kernel.is_matrix
        self.support = math.inf if volterra else float(kernel.support_bound)
        p = kernel.size
        self.atoms = []
        for atom in kernel.atoms:
            w = np.asarray(atom.weight, dtype=float)
            if self.matrix and w.ndim == 0:
                w = np.full((p, p), float(w))
            self.atoms.append((atom.tau, w))
        self.tables: dict[float, np.ndarray] = {}

    def build_tables(self, step: float, count: int):
        for c in (0.0, 0.5):
            taus = (np.arange(count) + c) * step - self.offset
            self.tables[c] = self.kernel.density_values(np.maximum(taus, 0.0))

    def density(self, tau):
        return self.kernel.density_values(tau)

    def tau_max(self, T: float) -> float:
        return T if self.volterra else self.support

    def combine(self, weights, values):
        """``sum_k weights[k] * values[k]`` as a vector (scalar kernel) or tensor."""
        if self.matrix:
            return np.einsum("kij,kl->ijl", weights, values)
        return weights @ values


class _Integrator:
    """RK4 driver with dense-output memory; also serves post-hoc evaluation."""

    def __init__(self, system: DelaySystem, history: HistoryFunction, step: float, n_steps: int,
                 pert: PerturbationSpec | None):
        self.system = system
        self.history = history
        self.step = step
        self.n = system.n
        self.N = n_steps
        self.h = system.h
        self.J = int(math.ceil(self.h / step)) + 1 if self.h > 0 else 0
        self.X = np.zeros((self.J + n_steps + 1, self.n))
        self.F = np.zeros((n_steps + 1, self.n))
        if self.J:
            neg = -step * np.arange(self.J, 0, -1)
            self.X[: self.J] = history(np.maximum(neg, -history.h))
        self.X[self.J] = history.terminal_value
        self.known = 0  # index of the last accepted grid point

        pert = pert if pert is not None else PerturbationSpec()
        tp = list(pert.tilde_point) + [None] * (len(system.point_terms) - len(pert.tilde_point))
        tv = list(pert.tilde_volterra) + [None] * (len(system.volterra_terms) - len(pert.tilde_volterra))
        tf = list(pert.tilde_finite) + [None] * (len(system.finite_terms) - len(pert.tilde_finite))
        self.points = [
            (t.A, t.delay, None if m is None or m.is_zero else m)
            for t, m in zip(system.point_terms, tp)
        ]
        self.dist = [_DistTerm(t.A, t.kernel, t.shift, True, m) for t, m in zip(system.volterra_terms, tv)]
        self.dist += [_DistTerm(t.A, t.kernel, 0.0, False, m) for t, m in zip(system.finite_terms, tf)]
        self.jumps = history.jumps() if self.dist else []
        self.f0 = pert.f0
        self.perturbed = self.f0 is not None or any(p[2] is not None for p in self.points) or any(
            d.tilde is not None for d in self.dist
        )
        for d in self.dist:
            count = (self.N + self.J + 3) if d.volterra else int(math.ceil(d.support / step)) + 3
            d.build_tables(step, count)
        self.cache: dict = {}

    # -- state access -----------------------------------------------------
    def x_at(self, v: float) -> np.ndarray:
        if v <= 0.0:
            return self.history(max(v, -self.history.h))
        u = v / self.step
        k = int(u)
        if k >= self.known:
            if k == self.known and u - k <= 1e-9:
                return self.X[self.J + k]
            raise OutOfRangeError(f"state at t={v} is not yet available")
        theta = u - k
        if theta == 0.0:
            return self.X[self.J + k]
        return _hermite(self.X[self.J + k], self.X[self.J + k + 1], self.F[k], self.F[k + 1], self.step, theta)

    # -- distributed integrals --------------------------------------------
    def _fixed_part(self, idx: int, d: _DistTerm, T: float, half: int | None):
        """Part of the integral not involving the state at ``T`` itself.

        Returns ``(fixed, stage_coeff)`` where the full integral equals
        ``fixed + stage_coeff * x(T)`` (matrix kernels: ``stage_coeff`` is p x p).
        ``half`` is ``T`` in units of ``step/2`` when ``T`` sits on that grid;
        it keys the cache and selects the precomputed density table.
        """
        key = (idx, half) if half is not None else None
        if key is not None and key in self.cache:
            return self.cache[key]
        step = self.step
        tau_max = d.tau_max(T)
        a = T - d.offset - tau_max
        b = T - d.offset
        tol = 1e-9 * step
        j_lo = int(math.floor(a / step + 1e-9)) + 1
        if abs(j_lo * step - a) <= tol:
            j_lo += 1
        j_hi = int(math.ceil(b / step - 1e-9)) - 1
        if abs(j_hi * step - b) <= tol:
            j_hi -= 1
        zero = np.zeros((d.kernel.size, d.kernel.size, self.n)) if d.matrix else np.zeros(self.n)
        fixed = zero.copy()
        p = d.kernel.size
        stage = np.zeros((p, p)) if d.matrix else 0.0
        b_is_stage = d.offset == 0.0
        g_a = d.density(np.array([tau_max]))[0]
        g_b = d.density(np.array([0.0]))[0]
        x_a = self.x_at(a)
        if j_hi >= j_lo:
            xs = self.X[self.J + j_lo: self.J + j_hi + 1]
            if half is not None:
                table = d.tables[0.5 if half % 2 else 0.0]
                top = half // 2
                gs = table[top - j_hi: top - j_lo + 1][::-1]
            else:
                gs = d.density(T - d.offset - step * np.arange(j_lo, j_hi + 1))
            weights = np.full(len(xs), step)
            delta_a = j_lo * step - a
            delta_b = b - j_hi * step
            weights[0] += (delta_a - step) / 2
            weights[-1] += (delta_b - step) / 2
            gw = gs * (weights[:, None, None] if d.matrix else weights)
            fixed = fixed + d.combine(gw, xs)
            fixed = fixed + d.combine((delta_a / 2) * g_a[None] if d.matrix else np.array([delta_a / 2 * g_a]), x_a[None])
            end_w = delta_b / 2
        else:
            end_w = (b - a) / 2
            fixed = fixed + d.combine(end_w * g_a[None] if d.matrix else np.array([end_w * g_a]), x_a[None])
        if b_is_stage:
            stage = stage + end_w * g_b
        else:
            x_b = self.x_at(b)
            fixed = fixed + d.combine(end_w * g_b[None] if d.matrix else np.array([end_w * g_b]), x_b[None])
        for u, left, right in self.jumps:
            if a < u <= b:
                fixed = fixed + self._jump_correction(d, T, a, b, u, left, right)
        for tau, w in d.atoms:
            if tau > tau_max * (1 + 1e-12):
                continue
            if tau == 0.0 and b_is_stage:
                stage = stage + w
            else:
                x_v = self.x_at(T - d.offset - tau)
                fixed = fixed + d.combine(w[None] if d.matrix else np.array([w]), x_v[None])
        result = (fixed, stage)
        if key is not None:
            self.cache[key] = result
        return result

    def _jump_correction(self, d: _DistTerm, T: float, a: float, b: float, u: float, left, right):
        """Replace the trapezoid on the cell holding a history jump at ``u`` by the split rule.

        Grid values at ``u`` are right values, so only the part of the cell
        left of ``u`` needs the left limit.
        """
        step = self.step
        c0 = max(a, step * math.floor(u / step - 1e-9))
        if c0 >= u:
            return 0.0
        g_u = d.density(np.array([T - d.offset - u]))[0]
        on_grid = abs(u - step * round(u / step)) <= 1e-9 * step or u == b
        if on_grid:
            # the trapezoid used the right value at u for the cell [c0, u]
            return d.combine(((u - c0) / 2) * g_u[None] if d.matrix else np.array([(u - c0) / 2 * g_u]),
                             (left - right)[None])
        c1 = min(b, step * math.ceil(u / step + 1e-9))
        g0 = d.density(np.array([T - d.offset - c0]))[0]
        g1 = d.density(np.array([T - d.offset - c1]))[0]
        x0 = self.x_at(c0)
        x1 = self.x_at(c1)
        # split trapezoid minus plain trapezoid, as weights on the four values
        w = np.array([(u - c0) / 2 - (c1 - c0) / 2, (u - c0) / 2, (c1 - u) / 2, (c1 - u) / 2 - (c1 - c0) / 2])
        gs = np.stack([g0, g_u, g_u, g1])
        xs = np.stack([x0, left, right, x1])
        return d.combine(gs * (w[:, None, None] if d.matrix else w), xs)

    def _apply(self, d: _DistTerm, fixed, stage, M, x_stage):
        if d.matrix:
            out = np.einsum("ijl,jl->i", fixed, M)
            if np.any(stage):
                out = out + stage @ (M @ x_stage)
            return out
        r = fixed + stage * x_stage if stage != 0.0 else fixed
        return M @ r

    # -- right-hand side --------------------------------------------------
    def rhs(self, T: float, x_stage: np.ndarray, half: int | None):
        lin = np.zeros(self.n)
        f = np.zeros(self.n) if self.perturbed else None
        for A, delay, tilde in self.points:
            xd = x_stage if delay == 0.0 else self.x_at(T - delay)
            lin = lin + A @ xd
            if tilde is not None:
                f = f + tilde(T) @ xd
        for idx, d in enumerate(self.dist):
            fixed, stage = self._fixed_part(idx, d, T, half)
            lin = lin + self._apply(d, fixed, stage, d.A, x_stage)
            if d.tilde is not None:
                f = f + self._apply(d, fixed, stage, d.tilde(T), x_stage)
        if self.f0 is not None:
            def x_of(v, _T=T, _x=x_stage):
                return _x if v >= _T else self.x_at(v)

            f = f + self.f0(T, x_of)
        if self.perturbed:
            return lin + f, f
        return lin, f

    def run(self, envelope=None, norm: str = "l2"):
        step = self.step
        f_norms = np.zeros(self.N + 1) if self.perturbed else None
        env = np.zeros(self.N + 1) if self.perturbed else None
        window = int(math.ceil(self.h / step - 1e-9)) if self.h > 0 else 0
        all_norms = np.zeros(self.J + self.N + 1)
        all_norms[: self.J + 1] = vector_norm(self.X[: self.J + 1], norm)

        def check(k, f):
            if f is None:
                return
            lo = max(self.J + k - window, 0)
            xt = float(np.max(all_norms[lo: self.J + k + 1]))
            fn = float(vector_norm(f[None], norm)[0])
            f_norms[k] = fn
            if envelope is not None:
                gamma, K0 = envelope
                allowed = float(gamma(k * step)) * xt + K0
                env[k] = allowed
                if fn > allowed + ENVELOPE_SLACK * (1 + xt):
                    raise EnvelopeViolation(k * step, fn, allowed)

        x = self.X[self.J].copy()
        k1, f = self.rhs(0.0, x, 0)
        self.F[0] = k1
        check(0, f)
        for k in range(self.N):
            t = k * step
            self.known = k
            for key in [key for key in self.cache if key[1] < 2 * k]:
                del self.cache[key]
            k2, _ = self.rhs(t + step / 2, x + (step / 2) * k1, 2 * k + 1)
            k3, _ = self.rhs(t + step / 2, x + (step / 2) * k2, 2 * k + 1)
            k4, _ = self.rhs(t + step, x + step * k3, 2 * k + 2)
            x = x + (step / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise BlowUpError((k + 1) * step)
            self.X[self.J + k + 1] = x
            self.known = k + 1
            all_norms[self.J + k + 1] = vector_norm(x[None], norm)[0]
            k1, f = self.rhs((k + 1) * step, x, 2 * k + 2)
            if not np.all(np.isfinite(k1)):
                raise BlowUpError((k + 1) * step)
            self.F[k + 1] = k1
            check(k + 1, f)
        self.cache.clear()
        return f_norms, env


def _check_step(system: DelaySystem, history: HistoryFunction, horizon: float, step: float):
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    if not (step > 0 and math.isfinite(step)):
        raise ValueError(f"step must be positive, got {step}")
    delays = list(system.positive_delays)
    for term in system.volterra_terms + system.finite_terms:
        delays += [a.tau for a in term.kernel.atoms if a.tau > 0]
    if delays and step > min(delays) / 4 * (1 + 1e-12):
        raise ValueError(
            f"step {step} exceeds a quarter of the smallest positive delay {min(delays)}"
        )
    if history.n != system.n:
        raise ValueError(f"history has dimension {history.n}, system has {system.n}")
    if history.h < system.h * (1 - 1e-12):
        raise ValueError(f"history covers [-{history.h}, 0] but the system needs [-{system.h}, 0]")


def _integrate(system, history, horizon, step, pert, norm):
    _check_step(system, history, horizon, step)
    n_steps = int(math.ceil(horizon / step - 1e-9))
    integ = _Integrator(system, history, step, n_steps, pert)
    envelope = None if pert is None else (pert.gamma, pert.K0)
    # overflow is detected and reported as a blow-up by the driver
    with np.errstate(over="ignore", invalid="ignore"):
        f_norms, env = integ.run(envelope if integ.perturbed else None, norm)
    states = integ.X[integ.J:].copy()
    states.setflags(write=False)
    derivs = integ.F.copy()
    derivs.setflags(write=False)
    return Trajectory(0.0, step, states, derivs, history, system.h, f_norms, env)


def integrate_limiting(system: DelaySystem, history: HistoryFunction, horizon: float, step: float) -> Trajectory:
    """Solve the unperturbed equation on ``[0, horizon]``.

    Parameters
    ----------
    system : DelaySystem
        A validated system.
    history : HistoryFunction
        Initial function on ``[-h, 0]``.
    horizon, step : float
        End time and grid spacing; ``step`` must not exceed a quarter of the
        smallest positive delay.

    Raises
    ------
    BlowUpError
        If the state becomes non-finite.
    """
    return _integrate(system, history, horizon, step, None, "l2")


def integrate_perturbed(system: DelaySystem, pert: PerturbationSpec, history: HistoryFunction,
                        horizon: float, step: float, norm: str = "l2") -> Trajectory:
    """Solve the perturbed equation and check the declared envelope at every grid point.

    The realized ``|f(t, x_t)|`` is stored in ``Trajectory.f_norms``.  A
    perturbation with no nonzero part takes the same code path as
    :func:`integrate_limiting` and reproduces it bitwise.

    Raises
    ------
    EnvelopeViolation
        If ``|f| > gamma(t) |x_t| + K0 + 1e-9 (1 + |x_t|)`` at some grid point.
    """
    validate_perturbation(pert, system)
    return _integrate(system, history, horizon, step, pert, norm)


def perturbation_value(pert: PerturbationSpec, system: DelaySystem, t: float, traj: Trajectory) -> np.ndarray:
    """Evaluate ``f(t, x_t)`` from a stored trajectory."""
    if t < traj.t0 or t > traj.t_end * (1 + 1e-12) + 1e-12:
        raise OutOfRangeError(f"t={t} outside the solved range [{traj.t0}, {traj.t_end}]")
    integ = _Integrator(system, traj.history, traj.step, traj.states.shape[0] - 1, pert)
    integ.X[integ.J:] = traj.states
    integ.F[:] = traj.derivs
    integ.known = traj.states.shape[0] - 1
    x_now = traj(t)

    def x_at(v):
        return traj(v)

    integ.x_at = x_at
    f = np.zeros(system.n)
    for A, delay, tilde in integ.points:
        if tilde is not None:
            f = f + tilde(t) @ (x_now if delay == 0.0 else traj(t - delay))
    for idx, d in enumerate(integ.dist):
        if d.tilde is None:
            continue
        fixed, stage = integ._fixed_part(idx, d, t, None)
        f = f + integ._apply(d, fixed, stage, d.tilde(t), x_now)
    if integ.f0 is not None:
        f = f + integ.f0(t, x_at)
    return f


def string_norm(traj: Trajectory, t: float, h: float, norm: str = "l2") -> float:
    """``sup_{s in [t-h, t]} |x(s)|`` sampled at spacing ``<= step/2``.

    Grid points, history breakpoints and the window ends are always included,
    and the best sample is refined on a fine local grid.
    """
    lo = t - h
    if lo < traj.t0 - traj.history.h - 1e-12 or t > traj.t_end * (1 + 1e-12) + 1e-12:
        raise OutOfRangeError(f"window [{lo}, {t}] not available")
    if h <= 0:
        return float(vector_norm(traj(t)[None], norm)[0])
    spacing = traj.step / 2
    count = int(math.ceil(h / spacing)) + 1
    pts = [np.linspace(lo, t, count)]
    bp = traj.history.breakpoints + traj.t0
    pts.append(bp[(bp >= lo) & (bp <= t)])
    grid = np.concatenate(pts)
    values = vector_norm(traj(grid), norm)
    best_idx = int(np.argmax(values))
    best = float(values[best_idx])
    centre = grid[best_idx]
    width = h / (count - 1)
    fine = np.clip(np.linspace(centre - width, centre + width, 129), lo, t)
    best = max(best, float(np.max(vector_norm(traj(fine), norm))))
    # one-sided limits at history jumps
    hist = traj.history
    for j in range(len(hist.pieces)):
        right = hist.breakpoints[j + 1] + traj.t0
        if lo <= right <= t:
            width_j = hist.breakpoints[j + 1] - hist.breakpoints[j]
            left_val = hist.pieces[j] @ np.array([1.0, width_j, width_j**2, width_j**3])
            best = max(best, float(vector_norm(left_val[None], norm)[0]))
    return best


# ---------------------------------------------------------------------------
# hypothesis check on the envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HypothesisReport:
    """Window integrals of the weighted envelope and the resulting verdict.

    ``window_integrals[k]`` holds the sequence for the k-th dominant
    ``(sigma, multiplicity)`` pair, at window starts ``0, 1, ..., T_max - 1``.
    """

    window_integrals: list[np.ndarray]
    dominant: list[tuple[float, int]]
    beta: int
    indicator_averages: np.ndarray
    verdict: str
    first_failing_window: int | None
    threshold: float
    note: str = (
        "window integrand uses the integration variable in the power prefactor"
    )

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "dominant": [{"sigma": s, "multiplicity": m} for s, m in self.dominant],
            "window_integrals": [w.tolist() for w in self.window_integrals],
            "indicator_averages": self.indicator_averages.tolist(),
            "verdict": self.verdict,
            "first_failing_window": self.first_failing_window,
            "threshold": self.threshold,
            "note": self.note,
        }


def _dominant_pairs(roots) -> list[tuple[float, int]]:
    if isinstance(roots, tuple) and len(roots) == 2 and not hasattr(roots[0], "real"):
        roots = [(float(roots[0]), int(roots[1]))]
    members = getattr(roots, "roots", roots)
    pairs = []
    for r in members:
        if isinstance(r, tuple):
            pairs.append((float(r[0]), int(r[1])))
        else:
            pairs.append((float(np.real(r.lam)), int(r.multiplicity)))
    if not pairs:
        raise ValueError("hypothesis_check needs at least one root")
    top = max(s for s, _ in pairs)
    chosen = sorted({(s, m) for s, m in pairs if abs(s - top) <= 1e-7}, key=lambda p: (-p[1], p[0]))
    seen = {}
    for s, m in chosen:
        seen.setdefault(m, s)
    return [(s, m) for m, s in sorted(seen.items())]


def hypothesis_check(pert: PerturbationSpec, roots, T_max: int = 100, *, system: DelaySystem | None = None,
                     beta: int | None = None, threshold: float = 1e-3) -> HypothesisReport:
    """Check that the weighted envelope windows decay to zero.

    For each dominant pair ``(sigma, m)`` the windows
    ``int_t^{t+1} s**(m-1)/m! * exp(beta*sigma*s) * gamma(s) ds`` are evaluated
    in closed form for ``t = 0, ..., T_max - 1``.  The verdict is ``pass`` when
    the last quarter of every sequence is non-increasing and its final value
    is below ``threshold``.

    Parameters
    ----------
    roots
        A RootSet, a list of characteristic roots, or ``(sigma, multiplicity)``
        tuples.  Only the roots with the largest real part are used.
    system, beta
        ``beta`` is 1 iff the system has a Volterra term; give either.
    """
    if beta is None:
        beta = 1 if (system is not None and system.has_volterra) else 0
    if beta not in (0, 1):
        raise ValueError("beta must be 0 or 1")
    T_max = int(T_max)
    if T_max < 4:
        raise ValueError("T_max must be at least 4")
    pairs = _dominant_pairs(roots)
    gamma = pert.gamma
    windows = []
    verdict = "pass"
    failing = None
    start = (3 * T_max) // 4
    for sigma, mult in pairs:
        weighted = gamma.times_power_exp(mult - 1, beta * sigma).scaled(1.0 / math.factorial(mult))
        seq = np.empty(T_max)
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(T_max):
                val = weighted.integral(float(t), float(t + 1))
                if not math.isfinite(val):
                    raise EnvelopeOverflowError(t)
                seq[t] = val
        windows.append(seq)
        tail = seq[start:]
        scale = max(float(np.max(np.abs(tail))), 1e-300)
        for i in range(1, len(tail)):
            bad = tail[i] > tail[i - 1] + 1e-12 * scale
            if bad or abs(tail[i]) >= threshold:
                if failing is None or start + i < failing:
                    failing = start + i
                verdict = "fail"
                break
        if abs(tail[0]) >= threshold and verdict == "fail" and failing is not None:
            failing = min(failing, start)
    shifted = gamma + ExpPoly.constant(-pert.K0)
    averages = np.empty(T_max)
    for t in range(T_max):
        plain = shifted.integral(float(t), float(t + 1))
        absolute = shifted.abs_integral(float(t), float(t + 1))
        averages[t] = 0.5 * (plain + absolute)
    return HypothesisReport(windows, pairs, beta, averages, verdict, failing, threshold)
