"""Data model for linear delay systems and their perturbations.

A :class:`DelaySystem` holds point terms ``A_i x(t - h_i)``, Volterra terms
``int_0^t dalpha(tau) A x(t - tau - shift)`` and finite distributed terms
``int_{t-span}^t dalpha(t - tau) A x(tau)``.  Kernels are exponential
polynomial densities plus finitely many atoms, so measures, transforms and
total variations have closed forms.

All objects are immutable once built; :func:`validate_system` never mutates
its input and returns a normalized copy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import SingularPointError, ValidationError, OutOfRangeError
from .expoly import ExpPoly

__all__ = [
    "Atom",
    "KernelSpec",
    "PointTerm",
    "VolterraTerm",
    "FiniteTerm",
    "DelaySystem",
    "HistoryFunction",
    "TimeMatrix",
    "Forcing",
    "PerturbationSpec",
    "validate_system",
    "validate_perturbation",
    "kernel_transform",
    "kernel_measure",
]

VOLTERRA = "volterra"
FINITE = "finite"


def _frozen_array(value, dtype=float) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Atom:
    """A jump of size ``weight`` (scalar or matrix) at delay ``tau``."""

    tau: float
    weight: float | np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau", float(self.tau))
        w = np.array(self.weight, dtype=float)
        if w.ndim == 0:
            object.__setattr__(self, "weight", float(w))
        else:
            w.setflags(write=False)
            object.__setattr__(self, "weight", w)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A bounded-variation kernel ``alpha`` given by its density and atoms.

    ``density`` is an :class:`ExpPoly` for scalar kernels, or a square nested
    tuple of them for matrix kernels.  ``support_bound`` is the span of a
    finite kernel and is ignored for Volterra kernels.
    """

    kind: str
    density: ExpPoly | tuple = field(default_factory=ExpPoly)
    atoms: tuple[Atom, ...] = ()
    support_bound: float | None = None
    alpha_at_zero: float | np.ndarray = 0.0

    def __post_init__(self):
        dens = self.density
        if isinstance(dens, ExpPoly):
            pass
        elif isinstance(dens, (list, tuple)) and dens and isinstance(dens[0], (list, tuple)) and (
            not dens[0] or not isinstance(dens[0][0], (int, float, dict))
        ):
            dens = tuple(tuple(ExpPoly.coerce(e) for e in row) for row in dens)
        else:
            dens = ExpPoly.coerce(dens)
        object.__setattr__(self, "density", dens)
        object.__setattr__(
            self, "atoms", tuple(a if isinstance(a, Atom) else Atom(*a) for a in self.atoms)
        )
        if self.support_bound is not None:
            object.__setattr__(self, "support_bound", float(self.support_bound))
        a0 = np.array(self.alpha_at_zero, dtype=float)
        if a0.ndim == 0:
            object.__setattr__(self, "alpha_at_zero", float(a0))
        else:
            a0.setflags(write=False)
            object.__setattr__(self, "alpha_at_zero", a0)

    # -- shape ------------------------------------------------------------
    @property
    def is_matrix(self) -> bool:
        return not isinstance(self.density, ExpPoly)

    @property
    def size(self) -> int:
        return len(self.density) if self.is_matrix else 1

    def entries(self):
        """Yield ``(i, j, ExpPoly)`` over density entries (scalar as (0, 0))."""
        if self.is_matrix:
            for i, row in enumerate(self.density):
                for j, poly in enumerate(row):
                    yield i, j, poly
        else:
            yield 0, 0, self.density

    @property
    def upper(self) -> float:
        """Right end of the support: inf for Volterra kernels."""
        if self.kind == VOLTERRA:
            return math.inf
        return float(self.support_bound)

    @property
    def min_decay(self) -> float:
        return min((p.min_decay for _, _, p in self.entries()), default=math.inf)

    def _shape_value(self, values: np.ndarray):
        return values if self.is_matrix else values[..., 0, 0]

    def _atom_weight(self, atom: Atom) -> np.ndarray:
        w = np.asarray(atom.weight, dtype=float)
        if w.ndim == 0:
            return np.full((self.size, self.size), float(w)) if self.is_matrix else w.reshape(1, 1)
        return w

    # -- closed-form operations -------------------------------------------
    def density_values(self, tau) -> np.ndarray:
        """Density at ``tau`` (array); shape ``tau.shape`` or ``tau.shape + (p, p)``."""
        tau = np.asarray(tau, dtype=float)
        out = np.zeros(tau.shape + (self.size, self.size))
        for i, j, poly in self.entries():
            if not poly.is_zero:
                out[..., i, j] = poly(tau)
        return self._shape_value(out)

    def transform(self, s, moment: int = 0, truncate: bool = True):
        """``int (-t)^moment e^{-st} dalpha(t)`` over the support.

        With ``truncate=False`` a finite kernel's density is transformed over
        ``[0, inf)`` instead of its support.
        """
        s = np.asarray(s, dtype=complex)
        upper = self.upper if truncate else math.inf
        out = np.zeros(s.shape + (self.size, self.size), dtype=complex)
        for i, j, poly in self.entries():
            if not poly.is_zero:
                out[..., i, j] += poly.laplace(s, upper=upper, moment=moment)
        sign = -1.0 if moment % 2 else 1.0
        for atom in self.atoms:
            if atom.tau > upper:
                continue
            factor = sign * atom.tau**moment * np.exp(-s * atom.tau) if moment else np.exp(-s * atom.tau)
            out += factor[..., None, None] * self._atom_weight(atom)
        return self._shape_value(out)

    def measure(self, a: float, b: float):
        """``int_[a, b) dalpha`` with atoms at ``b`` included only at the support end."""
        if b < a:
            raise ValueError("measure requires a <= b")
        if a < 0.0 or b > self.upper + 1e-12 * max(1.0, self.upper):
            raise OutOfRangeError(f"interval [{a}, {b}] outside kernel support [0, {self.upper}]")
        out = np.zeros((self.size, self.size))
        if b == a:
            return self._shape_value(out)
        for i, j, poly in self.entries():
            if not poly.is_zero:
                out[i, j] += poly.integral(a, b)
        closed_right = b >= self.upper
        for atom in self.atoms:
            if a <= atom.tau < b or (closed_right and atom.tau == b):
                out += self._atom_weight(atom)
        return self._shape_value(out)

    def total_variation(self) -> float:
        """Total variation in the 2-norm sense (exact for scalar kernels).

        For matrix kernels the density part is bounded by the Frobenius norm
        of the entrywise variations.
        """
        upper = self.upper
        tv = np.zeros((self.size, self.size))
        for i, j, poly in self.entries():
            tv[i, j] = poly.abs_integral(0.0, upper)
        dens = float(np.sqrt(np.sum(tv**2))) if self.is_matrix else float(tv[0, 0])
        atoms = 0.0
        for atom in self.atoms:
            w = np.asarray(atom.weight, dtype=float)
            atoms += abs(float(w)) if w.ndim == 0 and not self.is_matrix else float(
                np.linalg.norm(self._atom_weight(atom), 2)
            )
        return dens + atoms

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.is_matrix:
            out["density_matrix"] = [[p.to_list() for p in row] for row in self.density]
        else:
            out["density"] = self.density.to_list()
        out["atoms"] = [
            {"tau": a.tau, "w": a.weight.tolist() if isinstance(a.weight, np.ndarray) else a.weight}
            for a in self.atoms
        ]
        if self.kind == FINITE:
            out["support_bound"] = self.support_bound
        a0 = self.alpha_at_zero
        out["alpha_at_zero"] = a0.tolist() if isinstance(a0, np.ndarray) else a0
        return out

    @classmethod
    def from_dict(cls, data: dict, kind: str | None = None) -> "KernelSpec":
        kind = data.get("kind", kind)
        if "density_matrix" in data:
            density = tuple(tuple(ExpPoly.coerce(e) for e in row) for row in data["density_matrix"])
        else:
            density = ExpPoly.coerce(data.get("density", []))
        atoms = tuple(Atom(a["tau"], a["w"]) for a in data.get("atoms", []))
        return cls(
            kind=kind,
            density=density,
            atoms=atoms,
            support_bound=data.get("support_bound"),
            alpha_at_zero=data.get("alpha_at_zero", 0.0),
        )

    def __eq__(self, other):
        return isinstance(other, KernelSpec) and self.to_dict() == other.to_dict()

    __hash__ = None


def kernel_transform(kernel: KernelSpec, s: complex, of: str = "dalpha"):
    """Laplace transform of ``dalpha`` (``of="dalpha"``) or of ``alpha`` itself.

    The transform of ``alpha`` follows ``Lap[dalpha](s) = s Lap[alpha](s) - alpha(0)``;
    it is singular at ``s = 0`` unless ``alpha(0)`` cancels ``Lap[dalpha](0)``,
    in which case the removable value is returned.
    """
    d_hat = kernel.transform(s)
    if of == "dalpha":
        return d_hat
    if of != "alpha":
        raise ValueError("of must be 'dalpha' or 'alpha'")
    numerator = d_hat + kernel.alpha_at_zero
    if abs(complex(s)) == 0.0:
        scale = max(1.0, float(np.max(np.abs(d_hat))))
        if np.max(np.abs(numerator)) <= 1e-14 * scale:
            return kernel.transform(0.0, moment=1)
        raise SingularPointError("transform of alpha is singular at s = 0")
    return numerator / s


def kernel_measure(kernel: KernelSpec, a: float, b: float):
    """Closed-form ``int_[a,b) dalpha`` (density integral plus included atoms)."""
    return kernel.measure(a, b)


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointTerm:
    A: np.ndarray
    delay: float

    def __post_init__(self):
        object.__setattr__(self, "A", _matrix(self.A))
        object.__setattr__(self, "delay", float(self.delay))


@dataclass(frozen=True, eq=False)
class VolterraTerm:
    A: np.ndarray
    shift: float
    kernel: KernelSpec

    def __post_init__(self):
        object.__setattr__(self, "A", _matrix(self.A))
        object.__setattr__(self, "shift", float(self.shift))


@dataclass(frozen=True, eq=False)
class FiniteTerm:
    A: np.ndarray
    span: float
    kernel: KernelSpec

    def __post_init__(self):
        object.__setattr__(self, "A", _matrix(self.A))
        object.__setattr__(self, "span", float(self.span))


@dataclass(frozen=True, eq=False)
class DelaySystem:
    """Linear autonomous delay system; ``point_terms[0]`` is ``A_0`` once validated."""

    n: int
    point_terms: tuple[PointTerm, ...]
    volterra_terms: tuple[VolterraTerm, ...] = ()
    finite_terms: tuple[FiniteTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "point_terms", tuple(_as_point(t) for t in self.point_terms))
        object.__setattr__(self, "volterra_terms", tuple(self.volterra_terms))
        object.__setattr__(self, "finite_terms", tuple(self.finite_terms))

    @classmethod
    def point(cls, A0, delayed: Sequence[tuple] = ()) -> "DelaySystem":
        """Shortcut for ``x' = A0 x + sum A_i x(t - h_i)``."""
        A0 = _matrix(A0)
        terms = [PointTerm(A0, 0.0)] + [PointTerm(A, h) for A, h in delayed]
        return validate_system(cls(A0.shape[0], tuple(terms)))

    @property
    def h(self) -> float:
        """Largest delay over point delays, Volterra shifts and finite spans."""
        delays = [t.delay for t in self.point_terms]
        delays += [t.shift for t in self.volterra_terms]
        delays += [t.span for t in self.finite_terms]
        return max(delays, default=0.0)

    @property
    def A0(self) -> np.ndarray:
        for t in self.point_terms:
            if t.delay == 0.0:
                return t.A
        return np.zeros((self.n, self.n))

    @property
    def has_volterra(self) -> bool:
        return bool(self.volterra_terms)

    @property
    def positive_delays(self) -> list[float]:
        out = [t.delay for t in self.point_terms if t.delay > 0]
        out += [t.shift for t in self.volterra_terms if t.shift > 0]
        for t in self.finite_terms:
            out.append(t.span)
            out.append(t.kernel.support_bound)
        return [d for d in out if d and d > 0]

    def norm_bound(self) -> float:
        """``sum ||A_i|| + sum TV(alpha_i) ||A_alpha_i||``; bounds |s| at roots in Re s >= 0."""
        total = sum(np.linalg.norm(t.A, 2) for t in self.point_terms)
        for t in self.volterra_terms + self.finite_terms:
            total += t.kernel.total_variation() * np.linalg.norm(t.A, 2)
        return float(total)

    def with_delays(self, delays: Sequence[float]) -> "DelaySystem":
        """Copy with new positive point delays (A_0 keeps delay zero)."""
        delays = list(delays)
        terms = []
        for t in self.point_terms:
            if t.delay == 0.0 and t is self.point_terms[0]:
                terms.append(t)
            else:
                terms.append(PointTerm(t.A, delays.pop(0)))
        return validate_system(DelaySystem(self.n, tuple(terms), self.volterra_terms, self.finite_terms))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "point_terms": [{"A": t.A.tolist(), "h": t.delay} for t in self.point_terms],
            "volterra_terms": [
                {"A": t.A.tolist(), "shift": t.shift, "kernel": t.kernel.to_dict()}
                for t in self.volterra_terms
            ],
            "finite_dist_terms": [
                {"A": t.A.tolist(), "span": t.span, "kernel": t.kernel.to_dict()}
                for t in self.finite_terms
            ],
        }

    def __eq__(self, other):
        return isinstance(other, DelaySystem) and self.to_dict() == other.to_dict()

    __hash__ = None


def _as_point(term) -> PointTerm:
    if isinstance(term, PointTerm):
        return term
    if isinstance(term, dict):
        return PointTerm(term["A"], term.get("h", term.get("delay", 0.0)))
    A, h = term
    return PointTerm(A, h)


def _check_matrix(errors: list, value, n: int, label: str):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{label}: not a numeric matrix")
        return None
    if arr.ndim == 0 and n == 1:
        arr = arr.reshape(1, 1)
    if arr.shape != (n, n):
        errors.append(f"dimension mismatch: {label} has shape {arr.shape}, expected {(n, n)}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"{label}: non-finite entries")
        return None
    return arr


def _check_kernel(errors: list, kernel, kind: str, n: int, label: str, span: float | None):
    if isinstance(kernel, dict):
        try:
            kernel = KernelSpec.from_dict(kernel, kind=kind)
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{label}: malformed kernel ({exc})")
            return None
    if not isinstance(kernel, KernelSpec):
        errors.append(f"{label}: kernel must be a KernelSpec")
        return None
    if kernel.kind != kind:
        errors.append(f"{label}: kernel kind {kernel.kind!r} where {kind!r} is required")
    if kernel.is_matrix and kernel.size != n:
        errors.append(f"dimension mismatch: {label} matrix kernel is {kernel.size}x{kernel.size}")
    if kernel.is_matrix and any(len(row) != kernel.size for row in kernel.density):
        errors.append(f"dimension mismatch: {label} matrix kernel is not square")
    for _, _, poly in kernel.entries():
        for c, k, d in poly.terms:
            if k < 0:
                errors.append(f"{label}: density power k={k} must be a nonnegative integer")
            if not (math.isfinite(c) and math.isfinite(d)):
                errors.append(f"{label}: non-finite density term")
            if kind == VOLTERRA and c != 0.0 and d <= 0.0:
                errors.append(f"{label}: non-integrable Volterra kernel (decay rate d={d} must be > 0)")
    for atom in kernel.atoms:
        if atom.tau < 0.0:
            errors.append(f"{label}: negative delay in atom location tau={atom.tau}")
        w = np.asarray(atom.weight)
        if w.ndim and w.shape != (n, n):
            errors.append(f"dimension mismatch: {label} atom weight has shape {w.shape}")
    a0 = np.asarray(kernel.alpha_at_zero)
    if a0.ndim and a0.shape != (n, n):
        errors.append(f"dimension mismatch: {label} alpha_at_zero has shape {a0.shape}")
    if kind == FINITE:
        if kernel.support_bound is None and span is not None and span > 0.0:
            # an omitted support bound means the kernel fills the declared span
            kernel = KernelSpec(kernel.kind, kernel.density, kernel.atoms, span, kernel.alpha_at_zero)
        sb = kernel.support_bound
        if sb is None or not sb > 0.0:
            errors.append(f"{label}: finite kernel needs support_bound > 0")
        else:
            if span is not None and sb > span * (1 + 1e-12):
                errors.append(
                    f"{label}: finite kernel support exceeding declared span ({sb} > {span})"
                )
            for atom in kernel.atoms:
                if atom.tau > sb * (1 + 1e-12):
                    errors.append(
                        f"{label}: finite kernel support exceeding declared span (atom at {atom.tau})"
                    )
    return kernel


def validate_system(raw) -> DelaySystem:
    """Check every structural invariant and return a normalized system.

    ``raw`` is a :class:`DelaySystem` or a mapping with the JSON spec keys.
    All violations are collected and raised together as
    :class:`ValidationError`.  The zero-delay term is moved to the front.
    """
    errors: list[str] = []
    if isinstance(raw, DelaySystem):
        n = raw.n
        points = [{"A": t.A, "h": t.delay} for t in raw.point_terms]
        volts = [{"A": t.A, "shift": t.shift, "kernel": t.kernel} for t in raw.volterra_terms]
        fins = [{"A": t.A, "span": t.span, "kernel": t.kernel} for t in raw.finite_terms]
    elif isinstance(raw, dict):
        n = raw.get("n")
        points = list(raw.get("point_terms", []))
        volts = list(raw.get("volterra_terms", []))
        fins = list(raw.get("finite_dist_terms", raw.get("finite_terms", [])))
    else:
        raise ValidationError([f"unsupported system candidate of type {type(raw).__name__}"])

    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise ValidationError([f"state dimension n must be a positive integer, got {n!r}"])
    n = int(n)

    point_terms = []
    zero_count = 0
    for idx, term in enumerate(points):
        label = f"point_terms[{idx}]"
        if isinstance(term, PointTerm):
            term = {"A": term.A, "h": term.delay}
        h = float(term.get("h", term.get("delay", 0.0)))
        if not math.isfinite(h):
            errors.append(f"{label}: non-finite delay")
        elif h < 0.0:
            errors.append(f"{label}: negative delay h={h}")
        if h == 0.0:
            zero_count += 1
        A = _check_matrix(errors, term.get("A"), n, f"{label}.A")
        if A is not None:
            point_terms.append(PointTerm(A, h))
    if zero_count != 1:
        errors.append(
            f"exactly one point term must have zero delay (the A_0 term), found {zero_count}"
        )

    volterra_terms = []
    for idx, term in enumerate(volts):
        label = f"volterra_terms[{idx}]"
        shift = float(term.get("shift", term.get("h", 0.0)))
        if shift < 0.0:
            errors.append(f"{label}: negative delay shift={shift}")
        A = _check_matrix(errors, term.get("A"), n, f"{label}.A")
        kernel = _check_kernel(errors, term.get("kernel"), VOLTERRA, n, label, None)
        if A is not None and kernel is not None:
            volterra_terms.append(VolterraTerm(A, shift, kernel))

    finite_terms = []
    for idx, term in enumerate(fins):
        label = f"finite_dist_terms[{idx}]"
        span = float(term.get("span", term.get("h", 0.0)))
        if span < 0.0:
            errors.append(f"{label}: negative delay span={span}")
        elif span == 0.0:
            errors.append(f"{label}: finite distributed span must be > 0")
        A = _check_matrix(errors, term.get("A"), n, f"{label}.A")
        kernel = _check_kernel(errors, term.get("kernel"), FINITE, n, label, span)
        if A is not None and kernel is not None:
            finite_terms.append(FiniteTerm(A, span, kernel))

    if errors:
        raise ValidationError(errors)
    point_terms.sort(key=lambda t: 0 if t.delay == 0.0 else 1)
    return DelaySystem(n, tuple(point_terms), tuple(volterra_terms), tuple(finite_terms))


# ---------------------------------------------------------------------------
# initial histories
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HistoryFunction:
    """Piecewise-cubic initial function on ``[-h, 0]``.

    ``pieces[j]`` has shape ``(n, 4)`` with ascending coefficients in the local
    variable ``t - breakpoints[j]``.  Pieces are right-continuous; the value at
    ``t = 0`` is ``terminal_value``, so jumps are allowed at every breakpoint.
    """

    breakpoints: np.ndarray
    pieces: np.ndarray
    terminal_value: np.ndarray

    def __post_init__(self):
        bp = _frozen_array(np.atleast_1d(self.breakpoints))
        tv = _frozen_array(np.atleast_1d(self.terminal_value))
        pieces = np.array(self.pieces, dtype=float)
        pieces = pieces.reshape(len(bp) - 1, tv.size, pieces.shape[-1] if pieces.size else 4)
        if pieces.shape[2] < 4:
            pieces = np.concatenate(
                [pieces, np.zeros(pieces.shape[:2] + (4 - pieces.shape[2],))], axis=2
            )
        if pieces.shape[2] > 4:
            raise ValueError("history pieces have degree at most 3")
        pieces.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "terminal_value", tv)
        object.__setattr__(self, "pieces", pieces)
        if np.any(np.diff(bp) <= 0) or abs(bp[-1]) > 0.0:
            raise ValueError("breakpoints must increase and end at 0")

    @classmethod
    def constant(cls, value, h: float) -> "HistoryFunction":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if h <= 0.0:
            return cls(np.array([0.0]), np.zeros((0, value.size, 4)), value)
        pieces = np.zeros((1, value.size, 4))
        pieces[0, :, 0] = value
        return cls(np.array([-h, 0.0]), pieces, value)

    @classmethod
    def from_function(cls, fn: Callable, h: float, n_pieces: int = 16) -> "HistoryFunction":
        """Piecewise cubic interpolant of ``fn`` (returns an n-vector) on ``[-h, 0]``."""
        x0 = np.atleast_1d(np.asarray(fn(0.0), dtype=float))
        if h <= 0.0:
            return cls(np.array([0.0]), np.zeros((0, x0.size, 4)), x0)
        bp = np.linspace(-h, 0.0, n_pieces + 1)
        pieces = np.zeros((n_pieces, x0.size, 4))
        for j in range(n_pieces):
            width = bp[j + 1] - bp[j]
            local = width * (1 - np.cos(np.pi * np.arange(4) / 3)) / 2
            values = np.array([np.atleast_1d(fn(bp[j] + u)) for u in local])
            vander = np.vander(local, 4, increasing=True)
            pieces[j] = np.linalg.solve(vander, values).T
        return cls(bp, pieces, x0)

    @property
    def n(self) -> int:
        return self.terminal_value.size

    @property
    def h(self) -> float:
        return float(-self.breakpoints[0])

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr)
        lo = self.breakpoints[0]
        if np.any(flat < lo - 1e-12 * max(1.0, abs(lo))) or np.any(flat > 0.0):
            raise OutOfRangeError(f"history evaluated outside [{lo}, 0]")
        out = np.empty((flat.size, self.n))
        at_zero = flat >= 0.0
        out[at_zero] = self.terminal_value
        rest = ~at_zero
        if np.any(rest):
            idx = np.clip(np.searchsorted(self.breakpoints, flat[rest], side="right") - 1, 0, len(self.pieces) - 1)
            u = flat[rest] - self.breakpoints[idx]
            coeffs = self.pieces[idx]  # (m, n, 4)
            powers = np.stack([np.ones_like(u), u, u * u, u * u * u], axis=-1)
            out[rest] = np.einsum("mnk,mk->mn", coeffs, powers)
        return out[0] if t_arr.ndim == 0 else out

    def jumps(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        """``(t, left limit, value)`` at every breakpoint in ``(-h, 0]`` where the history jumps."""
        out = []
        for j in range(len(self.pieces)):
            end = self.breakpoints[j + 1]
            width = end - self.breakpoints[j]
            left = self.pieces[j] @ np.array([1.0, width, width**2, width**3])
            right = self.terminal_value if j == len(self.pieces) - 1 else self.pieces[j + 1][:, 0]
            if not np.array_equal(left, right):
                out.append((float(end), left, np.array(right)))
        return out

    def sup_norm(self, norm: str = "l2", samples_per_piece: int = 256) -> float:
        """Sup of the vector norm over ``[-h, 0]``, including one-sided limits at jumps."""
        best = float(vector_norm(self.terminal_value[None, :], norm)[0])
        for j, coeffs in enumerate(self.pieces):
            a, b = self.breakpoints[j], self.breakpoints[j + 1]
            local = [np.linspace(0.0, b - a, samples_per_piece)]
            for comp in coeffs:
                deriv = np.polynomial.polynomial.polyder(comp)
                if np.any(deriv):
                    r = np.polynomial.polynomial.polyroots(deriv)
                    r = r[np.abs(r.imag) < 1e-12].real
                    local.append(r[(r >= 0.0) & (r <= b - a)])
            u = np.concatenate(local)
            values = np.stack([np.polynomial.polynomial.polyval(u, c) for c in coeffs], axis=-1)
            best = max(best, float(np.max(vector_norm(values, norm))))
        return best

    def to_dict(self) -> dict:
        return {
            "breakpoints": self.breakpoints.tolist(),
            "pieces": self.pieces.tolist(),
            "terminal_value": self.terminal_value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, h: float, n: int) -> "HistoryFunction":
        if "constant" in data:
            return cls.constant(np.broadcast_to(np.asarray(data["constant"], float), (n,)), h)
        return cls(data["breakpoints"], data["pieces"], data["terminal_value"])

    def __eq__(self, other):
        return isinstance(other, HistoryFunction) and self.to_dict() == other.to_dict()

    __hash__ = None


def vector_norm(values: np.ndarray, norm: str) -> np.ndarray:
    """Row-wise vector norm, ``norm`` in {'l1', 'l2', 'linf'}."""
    values = np.asarray(values)
    if norm == "l2":
        return np.sqrt(np.sum(np.abs(values) ** 2, axis=-1))
    if norm == "l1":
        return np.sum(np.abs(values), axis=-1)
    if norm == "linf":
        return np.max(np.abs(values), axis=-1)
    raise ValueError(f"unknown norm {norm!r}")


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeMatrix:
    """An n x n matrix of exponential polynomials, evaluated as ``M(t)``."""

    entries: tuple[tuple[ExpPoly, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(ExpPoly.coerce(e) for e in row) for row in self.entries)
        object.__setattr__(self, "entries", rows)
        flat = []
        for i, row in enumerate(rows):
            for j, poly in enumerate(row):
                for c, k, d in poly.terms:
                    if c != 0.0:
                        flat.append((i, j, c, k, d))
        table = np.array(flat, dtype=float).reshape(-1, 5)
        object.__setattr__(self, "_table", table)

    @classmethod
    def scalar(cls, profile, n: int) -> "TimeMatrix":
        """``profile(t) * I_n``."""
        profile = ExpPoly.coerce(profile)
        return cls(tuple(tuple(profile if i == j else ExpPoly() for j in range(n)) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def is_zero(self) -> bool:
        return self._table.shape[0] == 0

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        tab = self._table
        if tab.shape[0]:
            vals = tab[:, 2] * t ** tab[:, 3] * np.exp(-tab[:, 4] * t)
            np.add.at(out, (tab[:, 0].astype(int), tab[:, 1].astype(int)), vals)
        return out

    def to_dict(self):
        return [[p.to_list() for p in row] for row in self.entries]

    @classmethod
    def from_dict(cls, data, n: int) -> "TimeMatrix":
        if isinstance(data, dict) and "scalar" in data:
            return cls.scalar(data["scalar"], n)
        return cls(data)


@dataclass(frozen=True, eq=False)
class Forcing:
    """Residual forcing ``f0(t, x)`` with a declared bound on its norm.

    ``fn`` receives the time and a callable giving the state at any earlier
    time.  Closed-form forcings ``vector * profile(t)`` keep a JSON description.
    """

    fn: Callable[[float, Callable], np.ndarray]
    sup_bound: float
    description: dict | None = None

    @classmethod
    def closed_form(cls, vector, profile=1.0) -> "Forcing":
        vector = _frozen_array(np.atleast_1d(vector))
        profile = ExpPoly.coerce(profile)
        bound = float(np.linalg.norm(vector, 2)) * profile.sup()

        def fn(t, x_of=None):
            return vector * profile(t)

        return cls(fn, bound, {"vector": vector.tolist(), "profile": profile.to_list()})

    def __call__(self, t: float, x_of: Callable | None = None) -> np.ndarray:
        return np.asarray(self.fn(t, x_of), dtype=float)


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Time-varying matrices, residual forcing and the ``(gamma, K0)`` envelope.

    The tilde lists align with the system's term lists; ``None`` (or a
    shorter list) means a zero matrix.
    """

    tilde_point: tuple = ()
    tilde_volterra: tuple = ()
    tilde_finite: tuple = ()
    f0: Forcing | None = None
    gamma: ExpPoly = field(default_factory=ExpPoly)
    K0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tilde_point", tuple(self.tilde_point))
        object.__setattr__(self, "tilde_volterra", tuple(self.tilde_volterra))
        object.__setattr__(self, "tilde_finite", tuple(self.tilde_finite))
        object.__setattr__(self, "gamma", ExpPoly.coerce(self.gamma))
        object.__setattr__(self, "K0", float(self.K0))

    @classmethod
    def zero(cls) -> "PerturbationSpec":
        return cls()

    @property
    def is_zero(self) -> bool:
        mats = self.tilde_point + self.tilde_volterra + self.tilde_finite
        return self.f0 is None and all(m is None or m.is_zero for m in mats)

    def to_dict(self) -> dict:
        def mats(seq):
            return [None if m is None else m.to_dict() for m in seq]

        if self.f0 is not None and self.f0.description is None:
            raise ValueError("a callable f0 has no JSON representation")
        return {
            "tilde_point": mats(self.tilde_point),
            "tilde_volterra": mats(self.tilde_volterra),
            "tilde_finite": mats(self.tilde_finite),
            "f0": None if self.f0 is None else self.f0.description,
            "gamma": self.gamma.to_list(),
            "K0": self.K0,
        }

    @classmethod
    def from_dict(cls, data: dict, n: int) -> "PerturbationSpec":
        def mats(seq):
            return tuple(None if m is None else TimeMatrix.from_dict(m, n) for m in seq or [])

        f0 = data.get("f0")
        if f0 is not None:
            f0 = Forcing.closed_form(f0["vector"], f0.get("profile", 1.0))
        return cls(
            tilde_point=mats(data.get("tilde_point")),
            tilde_volterra=mats(data.get("tilde_volterra")),
            tilde_finite=mats(data.get("tilde_finite")),
            f0=f0,
            gamma=ExpPoly.coerce(data.get("gamma", [])),
            K0=data.get("K0", 0.0),
        )


def validate_perturbation(pert: PerturbationSpec, system: DelaySystem) -> PerturbationSpec:
    """Check list lengths, matrix sizes, ``gamma >= 0`` and ``K0 >= 0``."""
    errors = []
    for name, seq, terms in (
        ("tilde_point", pert.tilde_point, system.point_terms),
        ("tilde_volterra", pert.tilde_volterra, system.volterra_terms),
        ("tilde_finite", pert.tilde_finite, system.finite_terms),
    ):
        if len(seq) > len(terms):
            errors.append(f"{name} has {len(seq)} entries for {len(terms)} system terms")
        for idx, m in enumerate(seq):
            if m is not None and m.n != system.n:
                errors.append(f"dimension mismatch: {name}[{idx}] is {m.n}x{m.n}")
    if pert.K0 < 0.0 or not math.isfinite(pert.K0):
        errors.append(f"K0 must be a finite nonnegative real, got {pert.K0}")
    if not pert.gamma.is_nonnegative():
        errors.append("gamma must be nonnegative on [0, inf)")
    if errors:
        raise ValidationError(errors)
    return pert
