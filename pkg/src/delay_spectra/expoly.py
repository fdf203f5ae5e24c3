"""Exponential polynomials ``sum c * t**k * exp(-d*t)``.

This family carries kernel densities, time-varying perturbation matrices,
envelope functions and closed-form forcing terms.  Everything needed
downstream (values, definite integrals, Laplace transforms, total variation)
is available in closed form or through a sign-change decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import KernelPoleError

__all__ = ["Term", "ExpPoly", "incomplete_moment"]


class Term(NamedTuple):
    """One summand ``c * t**k * exp(-d*t)``."""

    c: float
    k: int
    d: float


def incomplete_moment(j: int, z, upper: float):
    """Return ``int_0^upper u**j exp(-z*u) du`` for scalar or array ``z``.

    ``upper`` may be ``inf``; the result is then ``j!/z**(j+1)``, which is the
    meromorphic continuation outside ``Re z > 0``.  For finite ``upper`` the
    function is entire in ``z``; a power series is used for small ``|z*upper|``
    and the closed form otherwise.
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    fact = math.factorial(j)
    if math.isinf(upper):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = fact / z ** (j + 1)
        return out[0] if scalar else out
    if upper == 0.0:
        out = np.zeros_like(z)
        return out[0] if scalar else out

    x = z * upper
    out = np.empty_like(z)
    small = np.abs(x) <= max(1.0, 0.5 * j + 1.0)
    if np.any(small):
        xs = x[small]
        total = np.zeros_like(xs)
        term = np.ones_like(xs)  # (-x)^m / m!
        for m in range(400):
            contrib = term / (j + m + 1)
            total += contrib
            if np.max(np.abs(contrib)) <= 1e-18 * max(np.max(np.abs(total)), 1e-300):
                break
            term = term * (-xs) / (m + 1)
        out[small] = upper ** (j + 1) * total
    if np.any(~small):
        xl = x[~small]
        zl = z[~small]
        partial = np.zeros_like(xl)
        term = np.ones_like(xl)
        for i in range(j + 1):
            partial += term
            term = term * xl / (i + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            out[~small] = fact / zl ** (j + 1) * (1.0 - np.exp(-xl) * partial)
    return out[0] if scalar else out


@dataclass(frozen=True)
class ExpPoly:
    """A finite sum of :class:`Term` objects, evaluated as a function of t >= 0."""

    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "terms",
            tuple(Term(float(c), int(k), float(d)) for c, k, d in self.terms),
        )

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "ExpPoly":
        return cls(((c, 0, 0.0),)) if c != 0 else cls()

    @classmethod
    def exponential(cls, c: float, d: float) -> "ExpPoly":
        return cls(((c, 0, d),))

    @classmethod
    def coerce(cls, value) -> "ExpPoly":
        """Build from an ExpPoly, a number, or an iterable of terms/dicts."""
        if isinstance(value, ExpPoly):
            return value
        if value is None:
            return cls()
        if isinstance(value, (int, float, np.floating, np.integer)):
            return cls.constant(float(value))
        terms = []
        for item in value:
            if isinstance(item, dict):
                terms.append((item["c"], item.get("k", 0), item.get("d", 0.0)))
            else:
                terms.append(tuple(item))
        return cls(tuple(terms))

    def to_list(self) -> list[dict]:
        return [{"c": t.c, "k": t.k, "d": t.d} for t in self.terms]

    # -- algebra ----------------------------------------------------------
    def __add__(self, other: "ExpPoly") -> "ExpPoly":
        return ExpPoly(self.terms + ExpPoly.coerce(other).terms)

    def scaled(self, factor: float) -> "ExpPoly":
        return ExpPoly(tuple((factor * c, k, d) for c, k, d in self.terms))

    def times_power_exp(self, power: int, rate: float) -> "ExpPoly":
        """Multiply by ``t**power * exp(rate*t)``."""
        return ExpPoly(tuple((c, k + power, d - rate) for c, k, d in self.terms))

    @property
    def is_zero(self) -> bool:
        return all(t.c == 0.0 for t in self.terms)

    @property
    def min_decay(self) -> float:
        rates = [t.d for t in self.terms if t.c != 0.0]
        return min(rates) if rates else math.inf

    # -- evaluation -------------------------------------------------------
    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        with np.errstate(over="ignore", invalid="ignore"):
            for c, k, d in self.terms:
                if c == 0.0:
                    continue
                out = out + c * t**k * np.exp(-d * t)
        return out[()] if out.ndim == 0 else out

    def integral(self, a: float, b: float) -> float:
        """Closed-form ``int_a^b g(t) dt`` for ``0 <= a <= b`` (``b`` may be inf)."""
        if b < a:
            raise ValueError("integral requires a <= b")
        if b == a:
            return 0.0
        total = 0.0
        length = b - a
        for c, k, d in self.terms:
            if c == 0.0:
                continue
            if math.isinf(length) and d <= 0.0:
                return math.inf if c > 0 else -math.inf
            acc = 0.0
            for j in range(k + 1):
                coef = math.comb(k, j) * (a ** (k - j) if k - j else 1.0)
                if coef == 0.0:
                    continue
                acc += coef * incomplete_moment(j, d, length).real
            with np.errstate(over="ignore"):
                scale = np.exp(-d * a) if a else 1.0
            total += c * scale * acc
        return float(total)

    def laplace(self, s, upper: float = math.inf, moment: int = 0):
        """``int_0^upper (-t)**moment exp(-s t) g(t) dt`` (continued analytically).

        Raises :class:`KernelPoleError` when ``upper`` is infinite and ``s``
        coincides with a pole ``-d``.
        """
        s_arr = np.asarray(s, dtype=complex)
        out = np.zeros(s_arr.shape, dtype=complex)
        sign = -1.0 if moment % 2 else 1.0
        for c, k, d in self.terms:
            if c == 0.0:
                continue
            z = s_arr + d
            if math.isinf(upper) and np.any(np.abs(z) < 1e-300):
                raise KernelPoleError(s, -d)
            out = out + sign * c * incomplete_moment(k + moment, z, upper)
        return out[()] if out.ndim == 0 else out

    # -- sign structure ---------------------------------------------------
    def _horizon(self) -> float:
        """A time beyond which every decaying term is negligible."""
        horizon = 1.0
        for c, k, d in self.terms:
            if c == 0.0 or d <= 0.0:
                continue
            t = (k + 45.0 + max(math.log(abs(c)), 0.0)) / d
            for _ in range(8):
                t = (k * math.log(max(t, 1.0)) + 45.0 + max(math.log(abs(c)), 0.0)) / d
            horizon = max(horizon, t)
        return horizon

    def _sign_breaks(self, a: float, b: float, samples: int = 4001) -> list[float]:
        ts = np.linspace(a, b, samples)
        vals = self(ts)
        breaks = [a]
        for i in range(samples - 1):
            if vals[i] == 0.0:
                continue
            if vals[i] * vals[i + 1] < 0.0:
                breaks.append(brentq(self, ts[i], ts[i + 1], xtol=1e-15, rtol=1e-15))
        breaks.append(b)
        return breaks

    def abs_integral(self, a: float = 0.0, b: float = math.inf) -> float:
        """``int_a^b |g(t)| dt`` via sign changes and closed-form pieces."""
        if self.is_zero or a == b:
            return 0.0
        finite_b = b
        if math.isinf(b):
            if self.min_decay <= 0.0:
                return math.inf
            finite_b = max(a + 1.0, self._horizon())
        breaks = self._sign_breaks(a, finite_b)
        total = 0.0
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            total += abs(self.integral(lo, hi))
        if math.isinf(b):
            total += abs(self.integral(finite_b, math.inf))
        return total

    def is_nonnegative(self, t_max: float | None = None) -> bool:
        """Dense check on ``[0, t_max]`` plus the sign of the dominant tail term."""
        live = [t for t in self.terms if t.c != 0.0]
        if not live:
            return True
        # dominant as t -> inf: smallest decay, then highest power
        lead = min(live, key=lambda t: (t.d, -t.k))
        tail = sum(t.c for t in live if t.d == lead.d and t.k == lead.k)
        if tail < 0.0:
            return False
        t_max = t_max if t_max is not None else self._horizon()
        ts = np.linspace(0.0, t_max, 20001)
        vals = self(ts)
        scale = max(np.max(np.abs(vals)), 1e-300)
        return bool(np.all(vals >= -1e-12 * scale))

    def sup(self, t_max: float | None = None) -> float:
        """Numerical sup of ``|g|`` on ``[0, t_max]`` (inf for growing terms)."""
        live = [t for t in self.terms if t.c != 0.0]
        if not live:
            return 0.0
        if any(t.d < 0.0 or (t.d == 0.0 and t.k > 0) for t in live) and t_max is None:
            return math.inf
        t_max = t_max if t_max is not None else self._horizon()
        ts = np.linspace(0.0, t_max, 20001)
        vals = np.abs(self(ts))
        i = int(np.argmax(vals))
        best = float(vals[i])
        # polish the grid maximum inside its neighbouring cells
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda t: -abs(self(t)), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-13})
            best = max(best, -float(res.fun))
        return best
