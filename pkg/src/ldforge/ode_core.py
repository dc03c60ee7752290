"""Integration of phi'' + V(s) phi = 0 with dense output, fluxes and auxiliary solutions."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp

from .backgrounds import Background, BackgroundId, EndKind

DEFAULT_TOL = 1e-10
TOL_RANGE = (1e-13, 1e-6)
ROOT_XTOL = 1e-12


class OdeError(RuntimeError):
    pass


class DomainError(OdeError):
    pass


class PoleError(OdeError):
    pass


def default_tol() -> float:
    env = os.environ.get("LDFORGE_TOL")
    if env:
        return float(env)
    return DEFAULT_TOL


def _check_tol(tol):
    tol = default_tol() if tol is None else float(tol)
    if not (TOL_RANGE[0] <= tol <= TOL_RANGE[1]):
        raise ValueError(f"tol must lie in [{TOL_RANGE[0]}, {TOL_RANGE[1]}], got {tol}")
    return tol


def bisect(f, a, b, xtol=ROOT_XTOL, fa=None, fb=None, maxiter=400):
    """Bracketing bisection; f(a) and f(b) must have opposite signs."""
    fa = f(a) if fa is None else fa
    fb = f(b) if fb is None else fb
    if fa == 0:
        return a
    if fb == 0:
        return b
    if (fa > 0) == (fb > 0):
        raise OdeError(f"bisection bracket [{a}, {b}] has no sign change ({fa}, {fb})")
    for _ in range(maxiter):
        c = 0.5 * (a + b)
        if abs(b - a) <= 2 * xtol or c == a or c == b:
            return c
        fc = f(c)
        if fc == 0:
            return c
        if (fc > 0) == (fa > 0):
            a, fa = c, fc
        else:
            b, fb = c, fc
    return 0.5 * (a + b)


class Profile:
    """A solution (phi, dphi) evaluable at points of its interval."""

    lo: float
    hi: float
    tol: float

    def __call__(self, s):
        raise NotImplementedError

    def phi(self, s):
        return self(s)[0]

    def dphi(self, s):
        return self(s)[1]

    def scaled(self, c):
        return ScaledProfile(self, c)


class ScaledProfile(Profile):
    def __init__(self, base: Profile, c: float):
        self.base, self.c = base, float(c)
        self.lo, self.hi, self.tol = base.lo, base.hi, base.tol

    def __call__(self, s):
        p, dp = self.base(s)
        return self.c * p, self.c * dp


class ClosedFormProfile(Profile):
    def __init__(self, fn: Callable, lo=-math.inf, hi=math.inf, label=""):
        self.fn, self.lo, self.hi, self.tol, self.label = fn, lo, hi, 0.0, label

    def __call__(self, s):
        p, dp = self.fn(np.asarray(s, dtype=float))
        return np.asarray(p, dtype=float), np.asarray(dp, dtype=float)


@dataclass
class _Segment:
    lo: float
    hi: float
    sol: object
    affine_lo: bool = False
    affine_hi: bool = False


class OdeProfile(Profile):
    """Dense-output solution assembled from one or more integrated segments.

    Outside the far field of a decaying potential the solution is affine, which
    is used to extend segments that stop there.
    """

    def __init__(self, segments, tol, background_id=None):
        self.segments = sorted(segments, key=lambda g: g.lo)
        self.lo = self.segments[0].lo
        self.hi = self.segments[-1].hi
        if any(g.affine_lo for g in self.segments[:1]):
            self.lo = -math.inf
        if any(g.affine_hi for g in self.segments[-1:]):
            self.hi = math.inf
        self.tol = tol
        self.background_id = background_id
        self._bounds = np.array([g.lo for g in self.segments[1:]])

    def _eval_segment(self, g: _Segment, s):
        out = np.empty((2, s.size))
        inside = (s >= g.lo) & (s <= g.hi)
        if np.any(inside):
            out[:, inside] = g.sol(s[inside])
        below = s < g.lo
        if np.any(below):
            if not g.affine_lo:
                raise DomainError(f"evaluation at {s[below].min()} below profile interval {g.lo}")
            y = g.sol(g.lo)
            out[0, below] = y[0] + y[1] * (s[below] - g.lo)
            out[1, below] = y[1]
        above = s > g.hi
        if np.any(above):
            if not g.affine_hi:
                raise DomainError(f"evaluation at {s[above].max()} above profile interval {g.hi}")
            y = g.sol(g.hi)
            out[0, above] = y[0] + y[1] * (s[above] - g.hi)
            out[1, above] = y[1]
        return out

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        flat = s_arr.reshape(-1)
        slack = 1e-9 * max(1.0, abs(self.lo) if math.isfinite(self.lo) else 1.0)
        if flat.size and (flat.min() < self.lo - slack or flat.max() > self.hi + slack):
            raise DomainError(f"evaluation outside [{self.lo}, {self.hi}]")
        flat = np.clip(flat, self.segments[0].lo if not self.segments[0].affine_lo else -np.inf,
                       self.segments[-1].hi if not self.segments[-1].affine_hi else np.inf)
        idx = np.searchsorted(self._bounds, flat, side="right")
        out = np.empty((2, flat.size))
        for j in np.unique(idx):
            sel = idx == j
            out[:, sel] = self._eval_segment(self.segments[j], flat[sel])
        return out[0].reshape(s_arr.shape), out[1].reshape(s_arr.shape)

    def nodes(self):
        ts = [np.asarray(g.sol.ts) for g in self.segments]
        return np.unique(np.concatenate(ts))

    def residual(self, bg: Background, n=200):
        """|phi'' + V phi| at midpoints, phi'' from the dense derivative by central differences."""
        lo = self.segments[0].lo
        hi = self.segments[-1].hi
        s = np.linspace(lo, hi, n + 2)[1:-1]
        h = 1e-4 * max(1.0, hi - lo)
        s = s[(s - h > lo) & (s + h < hi)]
        d2 = (self.dphi(s + h) - self.dphi(s - h)) / (2 * h)
        return np.abs(d2 + bg.V(s) * self.phi(s))


def _rhs_factory(bg: Background):
    pot = bg.potential

    def rhs(s, y):
        return (y[1], -float(pot(abs(s))) * y[0])

    return rhs


def _check_domain(bg: Background, s0, s1):
    l = bg.half_length
    if math.isfinite(l):
        slack = 1e-12 * max(1.0, l)
        for v in (s0, s1):
            if abs(v) > l + slack:
                raise DomainError(f"interval [{s0}, {s1}] leaves the domain (-{l}, {l})")


def _solve_segment(bg, s0, y0, s1, tol, events=None):
    rhs = _rhs_factory(bg)
    res = solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=tol, atol=tol * 1e-3,
                    dense_output=True, events=events)
    if res.status == -1:
        raise OdeError(f"integration failed: {res.message}")
    return res


def integrate(bg: Background, s0, phi0, dphi0, s1, tol=None) -> OdeProfile:
    """Adaptive order-8 Runge-Kutta with dense output from s0 to s1 (either direction)."""
    tol = _check_tol(tol)
    s0, s1 = float(s0), float(s1)
    _check_domain(bg, s0, s1)
    if s0 == s1:
        raise ValueError("empty interval")
    far = bg.far_field
    y0 = np.array([float(phi0), float(dphi0)])
    # integrate only up to the far field, beyond it the profile is affine
    t1 = s1
    affine = False
    if math.isfinite(far):
        if s1 > far and s0 < far:
            t1, affine = far, True
        elif s1 < -far and s0 > -far:
            t1, affine = -far, True
    if phi0 == 0.0 and dphi0 == 0.0:
        sol = _ZeroSolution(min(s0, t1), max(s0, t1))
    else:
        sol = _solve_segment(bg, s0, y0, t1, tol).sol
    lo, hi = min(s0, t1), max(s0, t1)
    seg = _Segment(lo, hi, sol, affine_lo=affine and t1 < s0, affine_hi=affine and t1 > s0)
    prof = OdeProfile([seg], tol, bg.id)
    if affine:
        # clip the affine extension to the requested interval for reporting
        prof.requested = (min(s0, s1), max(s0, s1))
    return prof


class _ZeroSolution:
    def __init__(self, lo, hi):
        self.ts = np.array([lo, hi])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.zeros((2,) + s.shape)


def two_sided(bg: Background, s_bar, left_data, right_data, span=None, tol=None) -> OdeProfile:
    """Integrate left and right of s_bar from separate initial data (value, derivative)."""
    tol = _check_tol(tol)
    l = bg.half_length
    if span is None:
        reach = l if math.isfinite(l) else bg.far_field + 1.0
        right_end = reach
        left_end = -reach
    else:
        right_end = s_bar + span
        left_end = s_bar - span
        if math.isfinite(l):
            right_end = min(right_end, l)
            left_end = max(left_end, -l)
    segs = []
    if left_end < s_bar:
        p = integrate(bg, s_bar, left_data[0], left_data[1], left_end, tol)
        segs.extend(p.segments)
    if right_end > s_bar:
        p = integrate(bg, s_bar, right_data[0], right_data[1], right_end, tol)
        segs.extend(p.segments)
    return OdeProfile(segs, tol, bg.id)


# ---------------------------------------------------------------------------
# fluxes


class Side(str, Enum):
    PLUS = "Plus"
    MINUS = "Minus"


@dataclass(frozen=True)
class Flux:
    value: float
    side: Side
    latitude: float


def flux(profile: Profile, s_bar, side) -> Flux:
    side = Side(side) if not isinstance(side, Side) else side
    s_bar = float(s_bar)
    if isinstance(profile, OdeProfile) and len(profile.segments) > 1:
        # pick the one-sided derivative from the segment on the requested side
        segs = profile.segments
        if side is Side.PLUS:
            cand = [g for g in segs if g.lo <= s_bar < g.hi] or [segs[-1]]
        else:
            cand = [g for g in segs if g.lo < s_bar <= g.hi] or [segs[0]]
        p, dp = (float(v) for v in profile._eval_segment(cand[0], np.array([s_bar]))[:, 0])
    else:
        p, dp = (float(v) for v in profile(s_bar))
    if p == 0.0 or abs(p) < 1e-300:
        raise PoleError(f"flux undefined: phi({s_bar}) = 0")
    val = dp / p if side is Side.PLUS else -dp / p
    return Flux(val, side, s_bar)


# ---------------------------------------------------------------------------
# auxiliary solutions


def h_solution(bg: Background, F, s_bar, tol=None) -> OdeProfile:
    """H[F; s_bar]: H(s_bar) = 1, H'(s_bar) = F, continued to the first root or the end."""
    tol = _check_tol(tol)
    l = bg.half_length
    end = l if math.isfinite(l) else (bg.far_field if math.isfinite(bg.far_field) else 50.0)
    if s_bar >= end:
        raise DomainError("s_bar at or beyond the domain end")

    def root(s, y):
        return y[0]

    root.terminal = True
    root.direction = -1
    res = _solve_segment(bg, float(s_bar), np.array([1.0, float(F)]), end, tol, events=root)
    hi = float(res.t[-1])
    affine = (not math.isfinite(l)) and res.status == 0 and hi >= bg.far_field - 1e-12
    seg = _Segment(float(s_bar), hi, res.sol, affine_hi=affine)
    return OdeProfile([seg], tol, bg.id)


def h_flux_derivatives(bg: Background, F, s_bar, s, tol=None):
    """Closed-form derivatives of F_+^{H[F; s_bar]}(s) in s_bar and in F."""
    h = h_solution(bg, F, s_bar, tol)
    hs = float(h.phi(s))
    if hs == 0.0:
        raise PoleError("H vanishes at s")
    d_sbar = (float(bg.V(s_bar)) + float(F) ** 2) / hs ** 2
    d_F = 1.0 / hs ** 2
    return d_sbar, d_F


def phi_bar(bg: Background, a, b, s_bar, span=None, tol=None) -> OdeProfile:
    """Solution with value a and derivative b at s_bar on both sides."""
    if s_bar < 0:
        raise ValueError("s_bar must be >= 0")
    return two_sided(bg, float(s_bar), (a, b), (a, b), span, tol)


def j_bar(bg: Background, c, s_bar, span=None, tol=None) -> OdeProfile:
    """Vanishes at s_bar with both one-sided outward derivatives equal to c."""
    if s_bar < 0:
        raise ValueError("s_bar must be >= 0")
    return two_sided(bg, float(s_bar), (0.0, -c), (0.0, c), span, tol)


def phi_even(bg: Background, tol=None) -> Profile:
    if bg.closed_basis is not None:
        return ClosedFormProfile(bg.closed_basis.even_solution, label="even")
    return phi_bar(bg, 1.0, 0.0, 0.0, tol=tol)


def phi_odd(bg: Background, tol=None) -> Profile:
    if bg.id in (BackgroundId.CATENOID, BackgroundId.SPHERE_IN_S3, BackgroundId.CRITICAL_CATENOID):
        from .backgrounds import catenoid_odd
        return ClosedFormProfile(catenoid_odd, label="odd")
    if bg.id is BackgroundId.CLIFFORD_TORUS:
        return ClosedFormProfile(bg.closed_basis.end_solution, label="odd")
    return two_sided(bg, 0.0, (0.0, 1.0), (0.0, 1.0), tol=tol)


def tail_integral(bg: Background, S):
    """Integral of V over [S, far field]; zero beyond the far field."""
    far = bg.far_field if math.isfinite(bg.far_field) else 60.0
    if S >= far:
        return 0.0
    val, _ = quad(lambda t: float(bg.potential(t)), S, far, epsabs=1e-16, epsrel=1e-13, limit=200)
    return val


_END_CACHE: dict = {}


def _end_solution_numeric(bg: Background, S_max, tol):
    # phi -> 1 at the end, phi' = integral of V phi over the tail, approximated with phi ~ 1
    slope = tail_integral(bg, S_max)
    res = _solve_segment(bg, S_max, np.array([1.0, slope]), 0.0, tol)
    return _Segment(0.0, S_max, res.sol)


def phi_end(bg: Background, tol=None) -> Profile:
    """Decaying-flux end solution normalized to tend to 1."""
    if bg.end_condition.kind is not EndKind.SMOOTH_ENDS:
        raise OdeError("phi_end requires smooth ends")
    if bg.id in (BackgroundId.CATENOID, BackgroundId.SPHERE_IN_S3):
        from .backgrounds import catenoid_odd
        return ClosedFormProfile(catenoid_odd, label="end")
    tol = _check_tol(tol)
    key = (id(bg), tol)
    if key in _END_CACHE:
        return _END_CACHE[key]
    probes = np.array([0.25, 0.5, 1.0, 2.0, 4.0])
    S = 8.0
    seg = _end_solution_numeric(bg, S, tol)
    prev = _flux_plus(seg.sol(probes))
    for _ in range(8):
        S *= 2.0
        seg = _end_solution_numeric(bg, S, tol)
        cur = _flux_plus(seg.sol(probes))
        if np.max(np.abs(cur - prev)) < 1e-9:
            break
        prev = cur
    prof = _EndProfile(bg, seg, S, tol)
    _END_CACHE[key] = prof
    return prof


def _flux_plus(y):
    return y[1] / y[0]


class _EndProfile(Profile):
    def __init__(self, bg, seg, S, tol):
        self.bg, self.seg, self.S, self.tol = bg, seg, S, tol
        self.lo, self.hi = 0.0, math.inf

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        flat = s.reshape(-1)
        out = np.empty((2, flat.size))
        inside = flat <= self.S
        if np.any(inside):
            out[:, inside] = self.seg.sol(np.maximum(flat[inside], 0.0))
        if np.any(~inside):
            v = self.bg.potential(flat[~inside])
            out[0, ~inside] = 1.0 - v / 4.0
            out[1, ~inside] = v / 2.0
        return out[0].reshape(s.shape), out[1].reshape(s.shape)


def end_solution(bg: Background, tol=None) -> Profile:
    """Solution fixed by the end condition: phi_end, the Robin solution, or the periodic one."""
    kind = bg.end_condition.kind
    if kind is EndKind.SMOOTH_ENDS:
        return phi_end(bg, tol)
    tol = _check_tol(tol)
    l = bg.half_length
    if kind is EndKind.ROBIN:
        if bg.id is BackgroundId.CRITICAL_CATENOID:
            from .backgrounds import critical_basis
            return ClosedFormProfile(critical_basis, label="crit")
        slope = 1.0 / bg.end_condition.robin_root
    else:
        slope = 0.0
    res = _solve_segment(bg, l, np.array([1.0, slope]), 0.0, tol)
    return OdeProfile([_Segment(0.0, l, res.sol)], tol, bg.id)


def profile_root(profile: Profile, lo, hi, n=400):
    """First sign change of the profile on [lo, hi], refined by bisection; None if absent."""
    grid = np.linspace(lo, hi, n)
    vals = profile.phi(grid)
    if vals[0] == 0.0:
        return float(lo)
    sgn = np.sign(vals)
    idx = np.nonzero(sgn[1:] != sgn[0])[0]
    if idx.size == 0:
        return None
    j = idx[0]
    return bisect(lambda x: float(profile.phi(x)), grid[j], grid[j + 1])


def flux_identity_residual(bg: Background, profile: Profile, a, b):
    """F_-(b) + F_+(a) - int_a^b (V + F_-^2) ds for a profile positive on [a, b]."""
    Fm = lambda s: -float(profile.dphi(s)) / float(profile.phi(s))
    integrand = lambda s: float(bg.V(s)) + Fm(s) ** 2
    val, _ = quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    return Fm(b) + float(profile.dphi(a)) / float(profile.phi(a)) - val
