"""Characteristic matrix, root location and spectral sets.

The characteristic matrix of a validated system is

    Delta(s) = s I - sum_i A_i exp(-h_i s)
                   - sum_V G_V(s) A_V exp(-shift_V s)
                   - sum_F G_F(s) A_F

where ``G(s)`` is the Laplace transform of ``dalpha`` (truncated at the
support bound for finite kernels).  ``finite_form="literal"`` swaps the finite
terms for ``G_full(s) A_F (1 - exp(-span s))`` with the untruncated transform
and adds ``alpha(0) A`` of a leading unshifted Volterra term; see
:func:`characteristic_matrix`.

Roots are isolated by recursive rectangle subdivision driven by the argument
principle and polished by Newton's method on ``det Delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContourError,
    DegenerateNullSpace,
    EmptyRegion,
    UnsupportedMultiplicity,
)
from .model import DelaySystem

__all__ = [
    "CharacteristicRoot",
    "RootSet",
    "LambdaSets",
    "Eigensolution",
    "AbscissaResult",
    "characteristic_matrix",
    "characteristic_det",
    "find_roots",
    "spectral_abscissa",
    "lambda_sets",
    "eigensolution",
    "TIE_TOL",
]

TIE_TOL = 1e-7
FINITE_FORMS = ("consistent", "literal")


# ---------------------------------------------------------------------------
# characteristic matrix
# ---------------------------------------------------------------------------


def _assemble(system: DelaySystem, s: np.ndarray, finite_form: str, derivative: bool):
    """Delta(s) (and optionally Delta'(s)) for an array of ``s``; shape ``s.shape + (n, n)``."""
    if finite_form not in FINITE_FORMS:
        raise ValueError(f"finite_form must be one of {FINITE_FORMS}")
    n = system.n
    s = np.asarray(s, dtype=complex)
    eye = np.eye(n)
    delta = s[..., None, None] * eye
    d_delta = np.broadcast_to(eye.astype(complex), delta.shape).copy() if derivative else None
    for term in system.point_terms:
        if term.delay == 0.0:
            delta = delta - term.A
            continue
        e = np.exp(-term.delay * s)[..., None, None]
        delta = delta - e * term.A
        if derivative:
            d_delta = d_delta + term.delay * e * term.A
    for idx, term in enumerate(system.volterra_terms):
        g0 = _as_matrix(term.kernel.transform(s), n, s.shape, term.kernel.is_matrix)
        e = np.exp(-term.shift * s)[..., None, None]
        delta = delta - e * (g0 @ term.A)
        if derivative:
            g1 = _as_matrix(term.kernel.transform(s, moment=1), n, s.shape, term.kernel.is_matrix)
            d_delta = d_delta - e * ((g1 - term.shift * g0) @ term.A)
        if finite_form == "literal" and idx == 0 and term.shift == 0.0:
            a0 = np.asarray(term.kernel.alpha_at_zero, dtype=float)
            delta = delta + (a0 * eye if a0.ndim == 0 else a0) @ term.A
    for term in system.finite_terms:
        truncate = finite_form == "consistent"
        g0 = _as_matrix(term.kernel.transform(s, truncate=truncate), n, s.shape, term.kernel.is_matrix)
        if truncate:
            delta = delta - g0 @ term.A
            if derivative:
                g1 = _as_matrix(term.kernel.transform(s, moment=1), n, s.shape, term.kernel.is_matrix)
                d_delta = d_delta - g1 @ term.A
        else:
            e = np.exp(-term.span * s)[..., None, None]
            delta = delta - (1 - e) * (g0 @ term.A)
            if derivative:
                g1 = _as_matrix(
                    term.kernel.transform(s, moment=1, truncate=False), n, s.shape, term.kernel.is_matrix
                )
                d_delta = d_delta - ((1 - e) * g1 + term.span * e * g0) @ term.A
    return delta, d_delta


def _as_matrix(value, n, shape, is_matrix):
    value = np.asarray(value, dtype=complex)
    if is_matrix:
        return value
    return value.reshape(shape)[..., None, None] * np.eye(n)


def characteristic_matrix(system: DelaySystem, s: complex, finite_form: str = "consistent") -> np.ndarray:
    """Characteristic matrix ``Delta(s)``; its inverse is the resolvent.

    Parameters
    ----------
    finite_form : {"consistent", "literal"}
        ``consistent`` (default) matches the simulated dynamics.  ``literal``
        uses the untruncated kernel transform with the factor
        ``1 - exp(-span s)`` for finite terms; the two agree for uniform
        densities filling the whole span.

    Raises
    ------
    KernelPoleError
        If ``s`` is a pole of a Volterra kernel transform.
    """
    return _assemble(system, np.asarray(s, dtype=complex), finite_form, False)[0]


def _det_batch(delta: np.ndarray):
    sign, logabs = np.linalg.slogdet(delta)
    return sign, logabs


def _jacobi(delta: np.ndarray, d_delta: np.ndarray):
    """``det`` and ``d det`` via the adjugate (valid at singular points too)."""
    u, sv, vh = np.linalg.svd(delta)
    n = delta.shape[0]
    phase = np.linalg.det(u) * np.linalg.det(vh)
    det = phase * np.prod(sv)
    cof = np.empty(n)
    for i in range(n):
        cof[i] = np.prod(np.delete(sv, i))
    adj = phase * (vh.conj().T * cof) @ u.conj().T
    return complex(det), complex(np.trace(adj @ d_delta))


def characteristic_det(system: DelaySystem, s: complex, finite_form: str = "consistent") -> tuple[complex, complex]:
    """``det Delta(s)`` and its derivative.

    The derivative is ``tr(adj(Delta) Delta')`` with ``Delta'`` in closed
    form, exact up to rounding and defined at roots as well.
    """
    delta, d_delta = _assemble(system, np.asarray(s, dtype=complex), finite_form, True)
    return _jacobi(delta, d_delta)


def _newton_step(system, s, finite_form):
    delta, d_delta = _assemble(system, np.asarray(s, dtype=complex), finite_form, True)
    try:
        ratio = np.trace(np.linalg.solve(delta, d_delta))
    except np.linalg.LinAlgError:
        return 0.0
    if ratio == 0:
        return None
    return 1.0 / ratio


def _local_scale(system: DelaySystem, s: complex) -> float:
    total = abs(s)
    for term in system.point_terms:
        total += np.linalg.norm(term.A, 2) * abs(np.exp(-term.delay * s))
    for term in system.volterra_terms:
        g = np.linalg.norm(np.atleast_2d(term.kernel.transform(s)), 2)
        total += g * np.linalg.norm(term.A, 2) * abs(np.exp(-term.shift * s))
    for term in system.finite_terms:
        g = np.linalg.norm(np.atleast_2d(term.kernel.transform(s)), 2)
        total += g * np.linalg.norm(term.A, 2)
    return max(total, 1.0) ** system.n


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CharacteristicRoot:
    """A located zero of ``det Delta`` with its winding multiplicity."""

    lam: complex
    multiplicity: int
    residual: float
    enclosure: tuple[float, float, float, float]
    converged: bool = True

    @property
    def real(self) -> float:
        return float(self.lam.real)

    def conjugate(self) -> "CharacteristicRoot":
        re0, re1, im0, im1 = self.enclosure
        return CharacteristicRoot(self.lam.conjugate(), self.multiplicity, self.residual,
                                  (re0, re1, -im1, -im0), self.converged)

    def to_dict(self) -> dict:
        return {
            "re": float(self.lam.real),
            "im": float(self.lam.imag),
            "multiplicity": self.multiplicity,
            "residual": float(self.residual),
            "converged": self.converged,
            "enclosure": list(self.enclosure),
        }


@dataclass(frozen=True)
class RootSet:
    roots: tuple[CharacteristicRoot, ...]
    region: tuple[float, float, float, float]
    exhaustive: bool
    winding_count: int

    @property
    def abscissa(self) -> float:
        if not self.roots:
            return -math.inf
        return max(r.real for r in self.roots)

    def __iter__(self):
        return iter(self.roots)

    def __len__(self):
        return len(self.roots)

    def to_dict(self) -> dict:
        re0, re1, im0, im1 = self.region
        return {
            "region": {"re_min": re0, "re_max": re1, "im_min": im0, "im_max": im1},
            "abscissa": self.abscissa if self.roots else None,
            "exhaustive": self.exhaustive,
            "winding_count": self.winding_count,
            "roots": [r.to_dict() for r in self.roots],
        }


@dataclass(frozen=True)
class LambdaSets:
    mu: float
    lambda0: tuple[CharacteristicRoot, ...]
    lambda1: tuple[CharacteristicRoot, ...]

    @property
    def lambda_all(self) -> tuple[CharacteristicRoot, ...]:
        return self.lambda0 + self.lambda1


@dataclass(frozen=True)
class Eigensolution:
    """``y(t) = Re(c v exp(lam t))`` for a simple root ``lam``."""

    lam: complex
    v: np.ndarray
    residual: float

    def __call__(self, t, c: complex = 1.0):
        t = np.asarray(t, dtype=float)
        vals = c * np.exp(self.lam * t)[..., None] * self.v
        return vals.real

    def basis(self, t) -> np.ndarray:
        """Real basis ``[Re(v e^{lam t}), Im(v e^{lam t})]`` of shape ``t.shape + (n, 2)``."""
        z = np.exp(self.lam * np.asarray(t, dtype=float))[..., None] * self.v
        return np.stack([z.real, z.imag], axis=-1)


@dataclass(frozen=True)
class AbscissaResult:
    mu: float
    dominant: tuple[CharacteristicRoot, ...]
    roots: RootSet
    sigma_cap: float
    exhaustive: bool

    def __iter__(self):
        # allows ``mu, dominant = spectral_abscissa(...)``
        return iter((self.mu, self.dominant))


# ---------------------------------------------------------------------------
# argument principle
# ---------------------------------------------------------------------------


class _NearRoot(Exception):
    pass


class _Winder:
    """Winding numbers of det Delta along axis-parallel edges."""

    def __init__(self, system: DelaySystem, finite_form: str, max_points: int = 200_000):
        self.system = system
        self.finite_form = finite_form
        self.max_points = max_points
        delays = [t.delay for t in system.point_terms]
        delays += [t.shift for t in system.volterra_terms]
        delays += [t.span for t in system.finite_terms]
        self.h_max = max(delays, default=0.0)
        self.evals = 0

    def phase(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        delta, _ = _assemble(self.system, s, self.finite_form, False)
        self.evals += s.size
        sign, logabs = _det_batch(delta)
        return np.angle(sign), logabs

    def edge(self, a: complex, b: complex) -> float:
        """Change of arg det Delta from ``a`` to ``b`` along the straight edge."""
        length = abs(b - a)
        if length == 0:
            return 0.0
        n = self.system.n
        count = 8 + int(math.ceil(length * (n * self.h_max + 1) * 1.5))
        u = np.linspace(0.0, 1.0, count + 1)
        ph, logabs = self.phase(a + (b - a) * u)
        min_frac = 1e-12
        while True:
            if np.any(~np.isfinite(logabs)):
                raise _NearRoot()
            jumps = np.angle(np.exp(1j * np.diff(ph)))
            bad = np.abs(jumps) >= math.pi / 4
            if not np.any(bad):
                return float(np.sum(jumps))
            idx = np.nonzero(bad)[0]
            if np.min(u[idx + 1] - u[idx]) < min_frac or u.size > self.max_points:
                raise _NearRoot()
            mids = 0.5 * (u[idx] + u[idx + 1])
            mph, mlog = self.phase(a + (b - a) * mids)
            u = np.insert(u, idx + 1, mids)
            ph = np.insert(ph, idx + 1, mph)
            logabs = np.insert(logabs, idx + 1, mlog)

    def count(self, rect) -> int:
        re0, re1, im0, im1 = rect
        corners = [complex(re0, im0), complex(re1, im0), complex(re1, im1), complex(re0, im1)]
        total = 0.0
        for a, b in zip(corners, corners[1:] + corners[:1]):
            total += self.edge(a, b)
        winding = total / (2 * math.pi)
        count = int(round(winding))
        if abs(winding - count) > 0.1:
            raise _NearRoot()
        return count


def _kernel_poles(system: DelaySystem, finite_form: str) -> list[float]:
    poles = []
    terms = list(system.volterra_terms)
    if finite_form == "literal":
        terms += list(system.finite_terms)
    for term in terms:
        for _, _, poly in term.kernel.entries():
            poles += [-d for c, k, d in poly.terms if c != 0.0]
    return poles


def _check_region(rect):
    re0, re1, im0, im1 = rect
    if not (re0 < re1 and im0 < im1):
        raise ValueError(f"degenerate region {rect}")


def _newton(system, s0, rect, finite_form, multiplicity=1, max_iter=60, pad=0.0):
    re0, re1, im0, im1 = rect
    s = complex(s0)
    for _ in range(max_iter):
        step = _newton_step(system, s, finite_form)
        if step is None:
            return s, False
        s_new = s - multiplicity * step
        if not (re0 - pad <= s_new.real <= re1 + pad and im0 - pad <= s_new.imag <= im1 + pad):
            return s_new, False
        if abs(s_new - s) <= 4e-16 * (1 + abs(s_new)):
            return s_new, True
        s = s_new
    # accept a plateau at rounding level
    step = _newton_step(system, s, finite_form)
    return s, step is not None and abs(multiplicity * step) <= 1e-10 * (1 + abs(s))


def _residual(system, lam, finite_form):
    det, _ = characteristic_det(system, lam, finite_form)
    return abs(det)


def find_roots(system: DelaySystem, region, root_tol: float = 1e-10, *, min_size: float | None = None,
               finite_form: str = "consistent", max_nudges: int = 5) -> RootSet:
    """Locate all zeros of ``det Delta`` inside a rectangle.

    Parameters
    ----------
    region : tuple
        ``(re_min, re_max, im_min, im_max)``.  A 3-tuple
        ``(re_min, re_max, im_max)`` means the symmetric band
        ``|Im s| <= im_max``.
    root_tol : float
        Newton results must satisfy ``|det Delta| <= root_tol * scale``
        with ``scale`` the local size of the characteristic matrix entries.
    min_size : float, optional
        Side length below which a multi-count rectangle is reported as a
        single root of that multiplicity.

    Returns
    -------
    RootSet
        Roots sorted by ``(Re, Im)``; ``exhaustive`` tells whether the
        winding count of the region matches the sum of multiplicities.

    Raises
    ------
    ContourError
        If the outer contour passes too close to a root after all nudges.
    ValueError
        If the region contains a pole of a kernel transform.
    """
    region = tuple(float(v) for v in region)
    if len(region) == 3:
        region = (region[0], region[1], -region[2], region[2])
    _check_region(region)
    re0, re1, im0, im1 = region
    for pole in _kernel_poles(system, finite_form):
        if re0 <= pole <= re1 and im0 <= 0.0 <= im1:
            raise ValueError(f"region contains the kernel pole s={pole}")
    size = max(re1 - re0, im1 - im0)
    min_size = min_size if min_size is not None else 1e-7 * (1 + size)
    winder = _Winder(system, finite_form)

    rect = region
    total = None
    for attempt in range(max_nudges + 1):
        try:
            total = winder.count(rect)
            break
        except _NearRoot:
            grow = 1e-3 * (1 + size) * (attempt + 1) * (1 + 0.137 * attempt)
            rect = (region[0] - grow, region[1] + grow, region[2] - grow * 0.91, region[3] + grow * 1.07)
    if total is None:
        raise ContourError(f"contour of {region} passes through a root after {max_nudges} nudges")

    roots: list[CharacteristicRoot] = []
    exhaustive = True

    def split(r, c):
        nonlocal exhaustive
        x0, x1, y0, y1 = r
        wide = (x1 - x0) >= (y1 - y0)
        for attempt in range(max_nudges + 1):
            frac = 0.5 + 0.0137 + 0.0511 * attempt
            if wide:
                cut = x0 + frac * (x1 - x0)
                kids = [(x0, cut, y0, y1), (cut, x1, y0, y1)]
            else:
                cut = y0 + frac * (y1 - y0)
                kids = [(x0, x1, y0, cut), (x0, x1, cut, y1)]
            try:
                counts = [winder.count(k) for k in kids]
            except _NearRoot:
                continue
            if sum(counts) == c:
                return list(zip(kids, counts))
        exhaustive = False
        return []

    def solve(r, c):
        if c <= 0:
            if c < 0:
                nonlocal_flag()
            return
        x0, x1, y0, y1 = r
        centre = complex((x0 + x1) / 2, (y0 + y1) / 2)
        small = max(x1 - x0, y1 - y0) <= min_size
        if c == 1 or small:
            lam, ok = _newton(system, centre, r, finite_form, multiplicity=c)
            inside = x0 <= lam.real <= x1 and y0 <= lam.imag <= y1
            if ok and inside:
                res = _residual(system, lam, finite_form)
                roots.append(CharacteristicRoot(lam, c, res, r, bool(res <= root_tol * _local_scale(system, lam))))
                return
            if small:
                lam = lam if ok and inside else centre
                res = _residual(system, lam, finite_form)
                roots.append(CharacteristicRoot(lam, c, res, r, False))
                return
        for kid, kc in split(r, c):
            solve(kid, kc)

    def nonlocal_flag():
        nonlocal exhaustive
        exhaustive = False

    solve(rect, total)
    roots.sort(key=lambda r: (r.lam.real, r.lam.imag))
    if sum(r.multiplicity for r in roots) != total:
        exhaustive = False
    return RootSet(tuple(roots), rect, exhaustive, total)


# ---------------------------------------------------------------------------
# spectral abscissa and derived sets
# ---------------------------------------------------------------------------


def spectral_abscissa(system: DelaySystem, sigma_min: float | None = None, omega_max: float | None = None,
                      *, tie_tol: float = TIE_TOL, finite_form: str = "consistent",
                      strips: int = 8) -> AbscissaResult:
    """Largest real part of the characteristic roots and the roots attaining it.

    The search covers ``[sigma_min, sigma_cap + margin] x [0, omega_max]``
    where ``sigma_cap`` is the norm bound ``sum ||A_i|| + sum TV ||A_alpha||``;
    no root lies to its right.  Vertical strips are tested right to left and
    only the first strip holding roots is resolved.

    Returns
    -------
    AbscissaResult
        Unpacks as ``(mu, dominant)``; ``dominant`` includes conjugates.

    Raises
    ------
    EmptyRegion
        If no root lies in the searched region.
    """
    cap = system.norm_bound()
    right = cap + 0.25 + 0.01 * cap
    if sigma_min is None:
        sigma_min = -max(10.0, 2 * cap + 1)
    poles = _kernel_poles(system, finite_form)
    if poles:
        limit = max(p for p in poles)
        if sigma_min <= limit:
            sigma_min = limit + 1e-3 * (1 + abs(limit))
    if omega_max is None:
        omega_max = 10.0 * (1.0 + cap)
    eta = 0.0123456789 * min(1.0, omega_max)
    winder = _Winder(system, finite_form)
    width = (right - sigma_min) / strips
    hi = right
    found_strip = None
    while hi > sigma_min + 1e-12:
        lo = max(hi - width, sigma_min)
        try:
            count = _robust_count(winder, (lo, hi, -eta, omega_max))
        except ContourError:
            lo -= 1e-3 * width
            count = _robust_count(winder, (lo, hi, -eta, omega_max))
        if count > 0:
            found_strip = (lo, hi)
            break
        hi = lo
    if found_strip is None:
        raise EmptyRegion(f"no characteristic roots in [{sigma_min}, {right}] x [0, {omega_max}]")
    lo, hi = found_strip
    # halve the strip, keeping the part that holds the rightmost roots
    for _ in range(4):
        mid = lo + 0.5137 * (hi - lo)
        if _robust_count(winder, (mid, hi, -eta, omega_max)) > 0:
            lo = mid
        else:
            hi = mid
    roots = find_roots(system, (lo, hi, -eta, omega_max), finite_form=finite_form)
    kept = []
    for r in roots.roots:
        if r.lam.imag < -1e-9:
            continue
        if abs(r.lam.imag) <= 1e-9:
            r = CharacteristicRoot(complex(r.lam.real, 0.0), r.multiplicity, r.residual, r.enclosure, r.converged)
        kept.append(r)
    if not kept:
        raise EmptyRegion("root search returned no roots")
    mu = max(r.real for r in kept)
    dominant = [r for r in kept if abs(r.real - mu) <= tie_tol]
    mirrored = list(dominant)
    for r in dominant:
        if r.lam.imag > 1e-9:
            mirrored.append(r.conjugate())
    mirrored.sort(key=lambda r: (r.lam.real, r.lam.imag))
    result_set = RootSet(tuple(kept), roots.region, roots.exhaustive, roots.winding_count)
    return AbscissaResult(float(mu), tuple(mirrored), result_set, cap, roots.exhaustive)


def _robust_count(winder: _Winder, rect, tries: int = 5) -> int:
    re0, re1, im0, im1 = rect
    for attempt in range(tries):
        try:
            return winder.count((re0, re1, im0, im1))
        except _NearRoot:
            shift = 1e-4 * (1 + abs(re1 - re0)) * (attempt + 1)
            re0 -= shift * 0.731
            im1 += shift
    raise ContourError(f"contour of {rect} passes through a root")


def lambda_sets(roots, mu: float, tie_tol: float = TIE_TOL) -> LambdaSets:
    """Split roots into ``Re = mu`` (within ``tie_tol``) and ``Re > mu``."""
    members = getattr(roots, "roots", roots)
    zero, one = [], []
    for r in members:
        re = float(np.real(r.lam))
        if abs(re - mu) <= tie_tol:
            zero.append(r)
        elif re > mu:
            one.append(r)
    return LambdaSets(float(mu), tuple(zero), tuple(one))


def eigensolution(system: DelaySystem, root: CharacteristicRoot, finite_form: str = "consistent") -> Eigensolution:
    """Null vector of ``Delta(lam)`` for a simple root.

    The vector has unit 2-norm and its first nonzero component is real and
    positive.

    Raises
    ------
    UnsupportedMultiplicity
        For roots of multiplicity greater than one.
    DegenerateNullSpace
        If the second smallest singular value is also negligible.
    """
    if root.multiplicity != 1:
        raise UnsupportedMultiplicity(
            f"root {root.lam} has multiplicity {root.multiplicity}; only simple roots are supported"
        )
    delta = characteristic_matrix(system, root.lam, finite_form)
    _, sv, vh = np.linalg.svd(delta)
    scale = max(sv[0], 1.0)
    if system.n > 1 and sv[-2] <= 1e-8 * scale:
        raise DegenerateNullSpace(f"null space of Delta({root.lam}) is at least two-dimensional")
    v = vh[-1].conj()
    first = int(np.argmax(np.abs(v) > 1e-12 * np.max(np.abs(v))))
    v = v * (abs(v[first]) / v[first])
    v = v / np.linalg.norm(v)
    residual = float(np.linalg.norm(delta @ v))
    v.setflags(write=False)
    return Eigensolution(complex(root.lam), v, residual)
