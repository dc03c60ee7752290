"""Rotationally invariant solutions with derivative jumps, built by shooting on fluxes.

Indices are zero-based in code: circle i has fluxes F_minus[i], F_plus[i] and
mean flux F[i]; sigma[i] links circle i to circle i + 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .backgrounds import Background, BackgroundId, EndKind, make_background
from .ode_core import (OdeProfile, Profile, _Segment, _check_tol, _solve_segment, bisect,
                       end_solution, phi_even, profile_root)


class RldError(RuntimeError):
    pass


class TooFewCircles(RldError):
    def __init__(self, msg, bound=None):
        super().__init__(msg)
        self.bound = bound


class Infeasible(RldError):
    pass


class NonConvergence(RldError):
    pass


@dataclass(frozen=True)
class FluxRatios:
    sigma: tuple
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if len(self.xi) != len(self.sigma) + 1:
            raise ValueError("xi must have exactly one more entry than sigma")
        if any(abs(x) >= 1 for x in self.xi):
            raise ValueError("|xi_i| < 1 required")

    @classmethod
    def zeros(cls, k):
        return cls((0.0,) * (k - 1), (0.0,) * k)

    @classmethod
    def from_lists(cls, sigma=(), xi=None, k=None):
        sigma = list(sigma)
        if xi is None:
            xi = [0.0] * (len(sigma) + 1)
        xi = list(xi)
        if k is not None:
            sigma = (sigma + [0.0] * k)[: max(k - 1, 0)]
            xi = (xi + [0.0] * k)[:k]
        elif len(xi) < len(sigma) + 1:
            xi = xi + [0.0] * (len(sigma) + 1 - len(xi))
        elif len(xi) > len(sigma) + 1:
            sigma = sigma + [0.0] * (len(xi) - 1 - len(sigma))
        return cls(tuple(sigma), tuple(xi))

    def sigma_at(self, i):
        return self.sigma[i] if i < len(self.sigma) else 0.0

    def xi_at(self, i):
        return self.xi[i] if i < len(self.xi) else 0.0

    def truncated(self, k):
        return FluxRatios.from_lists(self.sigma, self.xi, k)

    def weight(self, i):
        """exp(sigma_0 + ... + sigma_{i-1}), the mean flux of circle i over that of circle 0."""
        return math.exp(sum(self.sigma_at(j) for j in range(i)))

    @property
    def k(self):
        return len(self.xi)


def balanced_sigma(m_vector: Sequence[int]) -> FluxRatios:
    m = [int(v) for v in m_vector]
    if any(v == 0 for v in m):
        raise ValueError("m_vector entries must be nonzero")
    sigma = [math.log(abs(m[j + 1] / m[j])) for j in range(len(m) - 1)]
    return FluxRatios(tuple(sigma), (0.0,) * len(m))


@dataclass
class _Piece:
    lo: float
    hi: float
    amp: float
    profile: Profile


@dataclass
class RldSolution:
    background: Background
    parity: str
    s: np.ndarray
    Fminus: np.ndarray
    Fplus: np.ndarray
    phi_at: np.ndarray
    F1: float
    ratios: FluxRatios
    pieces: List[_Piece] = field(repr=False)
    smooth_end: bool = False
    tol: float = 1e-10

    @property
    def k(self):
        return len(self.s)

    @property
    def kcirc(self):
        return 2 * self.k if self.parity == "even" else 2 * self.k - 1

    @property
    def F(self):
        return 0.5 * (self.Fminus + self.Fplus)

    def _locate(self, a):
        idx = np.searchsorted(np.array([p.lo for p in self.pieces]), a, side="right") - 1
        return np.clip(idx, 0, len(self.pieces) - 1)

    def values(self, s):
        """(phi, dphi) of the even extension; at a jump the right-hand derivative is used."""
        s = np.asarray(s, dtype=float)
        a = np.abs(s).reshape(-1)
        sgn = np.where(s.reshape(-1) < 0, -1.0, 1.0)
        idx = self._locate(a)
        p = np.empty_like(a)
        dp = np.empty_like(a)
        for j in np.unique(idx):
            sel = idx == j
            pc = self.pieces[j]
            v, dv = pc.profile(a[sel])
            p[sel] = pc.amp * v
            dp[sel] = pc.amp * dv
        return p.reshape(s.shape), (sgn * dp).reshape(s.shape)

    def phi(self, s):
        return self.values(s)[0]

    def dphi(self, s):
        return self.values(s)[1]

    def one_sided(self, i):
        """(phi', from the left and from the right) at circle i, in the +s direction."""
        si = self.s[i]
        right = self.pieces[self._piece_starting(i)]
        dright = right.amp * float(right.profile.dphi(si))
        if si == 0.0:
            return -dright, dright
        left = self.pieces[self._piece_starting(i) - 1]
        dleft = left.amp * float(left.profile.dphi(si))
        return dleft, dright

    def _piece_starting(self, i):
        for j, pc in enumerate(self.pieces):
            if pc.lo == self.s[i]:
                return j
        raise KeyError(i)

    def realized_fluxes(self):
        Fm = np.empty(self.k)
        Fp = np.empty(self.k)
        for i in range(self.k):
            dl, dr = self.one_sided(i)
            Fm[i] = -dl / self.phi_at[i]
            Fp[i] = dr / self.phi_at[i]
        return Fm, Fp

    def realized_ratios(self):
        Fm, Fp = self.realized_fluxes()
        F = 0.5 * (Fm + Fp)
        return np.log(F[1:] / F[:-1]), (Fp - Fm) / (Fp + Fm)

    def to_dict(self):
        return {
            "background": self.background.name,
            "parity": self.parity,
            "k": self.k,
            "kcirc": self.kcirc,
            "s": self.s.tolist(),
            "Fminus": self.Fminus.tolist(),
            "Fplus": self.Fplus.tolist(),
            "F": self.F.tolist(),
            "phi": self.phi_at.tolist(),
            "sigma": list(self.ratios.sigma),
            "xi": list(self.ratios.xi),
            "smooth_end": self.smooth_end,
        }


# ---------------------------------------------------------------------------
# shooting


def _domain_end(bg: Background):
    if math.isfinite(bg.half_length):
        return bg.half_length, False
    return bg.far_field, True


def _shoot(bg: Background, s0, y0, target, tol, stop_at_target=True):
    """Integrate from s0 until F_- = -phi'/phi reaches target.

    Returns (s_event or None, profile). Past the far field the solution is
    affine and the event is located in closed form.
    """
    end, affine = _domain_end(bg)
    if s0 >= end:
        # already in the affine region
        seg = _affine_segment(s0, y0)
        return _affine_event(s0, y0, target) if stop_at_target else None, OdeProfile([seg], tol, bg.id)

    events = None
    if stop_at_target:
        def g(s, y):
            return -y[1] - target * y[0]
        g.terminal = True
        g.direction = 1
        events = g
    res = _solve_segment(bg, s0, np.asarray(y0, dtype=float), end, tol, events=events)
    if stop_at_target and res.status == 1:
        sol = res.sol
        ts = sol.ts
        a = ts[-2] if len(ts) > 1 else s0
        b = ts[-1]
        fun = lambda x: float(-sol(x)[1] - target * sol(x)[0])
        fb = fun(b)
        if fb < 0:
            b2 = b + 1e-9 * max(1.0, abs(b))
            fb2 = fun(b2)
            if fb2 > 0:
                b, fb = b2, fb2
        if fb <= 0:
            s_ev = b
        else:
            s_ev = bisect(fun, a, b, fb=fb, xtol=1e-13)
        seg = _Segment(s0, s_ev, sol)
        return s_ev, OdeProfile([seg], tol, bg.id)
    seg = _Segment(s0, float(res.t[-1]), res.sol, affine_hi=affine)
    prof = OdeProfile([seg], tol, bg.id)
    if affine and stop_at_target:
        yS = res.y[:, -1]
        s_ev = _affine_event(end, yS, target)
        return s_ev, prof
    return None, prof


def _affine_event(S, y, target):
    a, b = float(y[0]), float(y[1])
    if a > 0 and b < 0:
        s_ev = S + a / (-b) - 1.0 / target
        if s_ev > S:
            return s_ev
        return S
    return None


class _AffineSol:
    def __init__(self, s0, y0):
        self.s0, self.y0 = s0, np.asarray(y0, dtype=float)
        self.ts = np.array([s0, s0])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([self.y0[0] + self.y0[1] * (s - self.s0), self.y0[1] + 0.0 * s])


def _affine_segment(s0, y0):
    return _Segment(s0, s0, _AffineSol(s0, y0), affine_hi=True)


def build_rld(bg: Background, F1, flux_ratios: Optional[FluxRatios] = None, parity="even",
              max_jumps=None, tol=None) -> RldSolution:
    """Shoot circle by circle from the axis of symmetry.

    Even parity: phi = phi_even near s = 0 and F1 is the flux F_{1-} at the
    first circle. Odd parity: the first circle sits at s = 0 with F_{1+-} = F1.
    Missing entries of the flux ratios are taken to be zero.
    """
    tol = _check_tol(tol)
    F1 = float(F1)
    if F1 <= 0:
        raise ValueError("F1 must be positive")
    ratios = flux_ratios if flux_ratios is not None else FluxRatios.zeros(1)
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    if parity == "odd" and ratios.xi_at(0) != 0.0:
        raise ValueError("odd parity requires xi_1 = 0")
    cap = 400 if max_jumps is None else int(max_jumps)

    pieces: List[_Piece] = []
    s_list, Fm_list, Fp_list, amp_list = [], [], [], []
    if parity == "even":
        Fmean = F1 / (1.0 - ratios.xi_at(0))
        s1, prof = _shoot(bg, 0.0, (1.0, 0.0), F1, tol)
        if s1 is None:
            fm = -float(prof.dphi(prof.hi)) / float(prof.phi(prof.hi))
            raise TooFewCircles(f"too few circles: F1 = {F1} exceeds the flux bound {fm:.6g} of phi_even", fm)
        pieces.append(_Piece(0.0, s1, 1.0, prof))
        amp = float(prof.phi(s1))
        s_list.append(s1)
    else:
        Fmean = F1
        s_list.append(0.0)
        amp = 1.0
    amp_list.append(amp)
    Fm_list.append((1.0 - ratios.xi_at(0)) * Fmean)
    Fp_list.append((1.0 + ratios.xi_at(0)) * Fmean)

    while True:
        i = len(s_list) - 1
        s_i = s_list[-1]
        Fplus = Fp_list[-1]
        more = len(s_list) < cap
        w_next = ratios.weight(i + 1)
        target = (1.0 - ratios.xi_at(i + 1)) * w_next * Fmean
        s_next, prof = _shoot(bg, s_i, (1.0, Fplus), target, tol, stop_at_target=more)
        if s_next is None:
            end = prof.hi
            pieces.append(_Piece(s_i, end, amp, prof))
            break
        pieces.append(_Piece(s_i, s_next, amp, prof))
        amp = amp * float(prof.phi(s_next))
        s_list.append(s_next)
        amp_list.append(amp)
        Fm_list.append(target)
        Fp_list.append((1.0 + ratios.xi_at(i + 1)) * w_next * Fmean)

    k = len(s_list)
    return RldSolution(bg, parity, np.array(s_list), np.array(Fm_list), np.array(Fp_list),
                       np.array(amp_list), Fmean, ratios.truncated(k), pieces, False, tol)


# ---------------------------------------------------------------------------
# smooth at the ends


def kcirc_min(bg: Background, tol=None) -> int:
    """Smallest admissible circle count from the roots of the end and even solutions."""
    e = end_solution(bg, tol)
    ev = phi_even(bg, tol)
    end, _ = _domain_end(bg)
    end = min(end, 12.0) if not math.isfinite(bg.half_length) else end
    e0 = float(e.phi(0.0))
    if abs(e0) < 1e-14:
        r_e = 0.0
    else:
        r_e = profile_root(e, 0.0, end)
        if r_e is None:
            return 1 if e0 > 0 else 3
    r_ev = profile_root(ev, 0.0, r_e) if r_e > 0 else None
    return 2 if r_ev is None else 3


def _parity_for(kcirc):
    if kcirc < 1:
        raise ValueError("kcirc must be positive")
    return ("even", kcirc // 2) if kcirc % 2 == 0 else ("odd", (kcirc + 1) // 2)


def _end_mismatch(sol: RldSolution, e: Profile, k):
    """F_{k+} e(s_k) - e'(s_k); vanishes exactly when the tail is a multiple of e."""
    if sol.k < k:
        return math.inf
    sk = sol.s[k - 1]
    ev, dev = (float(v) for v in e(sk))
    return sol.Fplus[k - 1] * ev - dev


def _attach_tail(sol: RldSolution, e: Profile, k) -> RldSolution:
    sk = float(sol.s[k - 1])
    pieces = [pc for pc in sol.pieces if pc.lo < sk]
    amp = sol.phi_at[k - 1] / float(e.phi(sk))
    hi = sol.background.half_length
    pieces.append(_Piece(sk, hi, amp, e))
    return RldSolution(sol.background, sol.parity, sol.s[:k].copy(), sol.Fminus[:k].copy(),
                       sol.Fplus[:k].copy(), sol.phi_at[:k].copy(), sol.F1,
                       sol.ratios.truncated(k), pieces, True, sol.tol)


def _bracket(g, F0, label):
    lo = hi = F0
    glo = ghi = g(F0)
    n = 0
    while glo >= 0:
        n += 1
        if n > 60:
            raise NonConvergence(f"{label}: no lower bracket found, scanned down to F = {lo:.3e}")
        hi, ghi = lo, glo
        lo = lo / 2.0
        glo = g(lo)
    n = 0
    while ghi <= 0:
        n += 1
        if n > 60:
            raise NonConvergence(f"{label}: no upper bracket found, scanned [{lo:.3e}, {hi:.3e}]")
        lo, glo = hi, ghi
        hi = hi * 2.0
        ghi = g(hi)
    return lo, hi, glo, ghi


def smooth_at_ends(bg: Background, flux_ratios: Optional[FluxRatios], kcirc: int, tol=None,
                   residual_tol=1e-9) -> RldSolution:
    """Unit RLD solution with kcirc circles whose last interval is a multiple of the end solution."""
    tol = _check_tol(tol)
    parity, k = _parity_for(kcirc)
    kmin = kcirc_min(bg, tol)
    if kcirc < kmin:
        raise Infeasible(f"k∘ < k∘_min: {kcirc} < {kmin} for {bg.name}")
    ratios = (flux_ratios or FluxRatios.zeros(k)).truncated(k)
    if parity == "odd" and ratios.xi[0] != 0.0:
        raise ValueError("odd circle count requires xi_1 = 0")
    e = end_solution(bg, tol)

    def g(F):
        try:
            sol = build_rld(bg, F, ratios, parity, max_jumps=k, tol=tol)
        except TooFewCircles:
            return 1.0
        val = _end_mismatch(sol, e, k)
        return 1.0 if not math.isfinite(val) else val

    # heuristic start: flux of the end solution a little past its root
    F0 = 1.0 / kcirc
    lo, hi, glo, ghi = _bracket(g, F0, f"smooth_at_ends({bg.name}, k∘={kcirc})")
    F = bisect(g, lo, hi, xtol=1e-15 * hi, fa=glo, fb=ghi)
    sol = build_rld(bg, F, ratios, parity, max_jumps=k, tol=tol)
    if sol.k < k:
        raise NonConvergence("bisection converged to the boundary of the k-jump region")
    sk = sol.s[k - 1]
    res = abs(sol.Fplus[k - 1] - float(e.dphi(sk)) / float(e.phi(sk)))
    if res > residual_tol:
        raise NonConvergence(f"end flux residual {res:.3e} above {residual_tol}")
    if float(e.phi(sk)) <= 0:
        raise Infeasible("end solution not positive at the last circle")
    return _attach_tail(sol, e, k)


def end_flux_residual(sol: RldSolution, tol=None):
    e = end_solution(sol.background, tol)
    sk = sol.s[-1]
    return abs(sol.Fplus[-1] - float(e.dphi(sk)) / float(e.phi(sk)))


def rld_critical_catenoid(flux_ratios: Optional[FluxRatios], kcirc: int, tol=None) -> RldSolution:
    if kcirc not in (2, 3):
        raise Infeasible("critical catenoid RLD solutions are available for k∘ ∈ {2, 3}")
    bg = make_background(BackgroundId.CRITICAL_CATENOID)
    k = 1 if kcirc == 2 else 2
    ratios = (flux_ratios or FluxRatios.zeros(k)).truncated(k)
    if kcirc == 2 and not abs(ratios.xi[0]) < 1:
        raise Infeasible("k∘ = 2 requires |xi| < 1")
    try:
        sol = smooth_at_ends(bg, ratios, kcirc, tol)
    except (NonConvergence, TooFewCircles) as exc:
        raise Infeasible(f"no critical catenoid RLD solution for {ratios}: {exc}") from exc
    r = bg.half_length
    if abs(r * float(sol.dphi(r)) / float(sol.phi(r)) - 1.0) > 1e-8:
        raise NonConvergence("Robin condition not met")
    return sol


# ---------------------------------------------------------------------------
# derivatives of the jump latitudes


def jump_derivatives(rld: RldSolution, F1=None, flux_ratios: Optional[FluxRatios] = None):
    """Matrix of d s_i / d(F_1, sigma_1..sigma_{k-1}, xi_1..xi_k) at fixed mean flux F_1.

    Rows are circles; the first column is the mean-flux derivative.
    """
    bg = rld.background
    k = rld.k
    ratios = (flux_ratios or rld.ratios).truncated(k)
    F1 = rld.F1 if F1 is None else float(F1)
    s = rld.s
    V = bg.V(s)
    Fm, Fp, ph = rld.Fminus, rld.Fplus, rld.phi_at
    sig, xi = ratios.sigma, ratios.xi
    ncol = 1 + (k - 1) + k
    out = np.zeros((k, ncol))

    def e(n):
        return math.exp(sum(sig[:n]))

    def de(n, j):
        # derivative of exp(sigma_1 + ... + sigma_n) w.r.t. sigma_{j+1} (zero-based j)
        return e(n) if j < n else 0.0

    if rld.parity == "even":
        P0 = V[0] + Fm[0] ** 2
        out[0, 0] = (1.0 - xi[0]) / P0
        out[0, 1 + (k - 1) + 0] = -F1 / P0
    for i in range(1, k):
        P = V[i] + Fm[i] ** 2
        Q = (ph[i - 1] / ph[i]) ** 2
        lead = (V[i - 1] + Fp[i - 1] ** 2) * out[i - 1] * Q
        row = lead.copy()
        # mean flux
        row[0] += (1.0 + xi[i - 1]) * e(i - 1) * Q + (1.0 - xi[i]) * e(i)
        # sigma_j: the start flux of interval i and the target flux both move
        for j in range(k - 1):
            row[1 + j] += F1 * (1.0 + xi[i - 1]) * de(i - 1, j) * Q + F1 * (1.0 - xi[i]) * de(i, j)
        # xi_j
        if not (rld.parity == "odd" and i == 1):
            row[1 + (k - 1) + (i - 1)] += e(i - 1) * F1 * Q
        row[1 + (k - 1) + i] -= e(i) * F1
        out[i] = row / P
    return out


def rebuild_with(rld: RldSolution, F1_mean, ratios: FluxRatios, max_jumps=None):
    """Rebuild with the mean first flux F1_mean held fixed (used by finite differences)."""
    bg = rld.background
    if rld.parity == "even":
        start = (1.0 - ratios.xi_at(0)) * F1_mean
    else:
        start = F1_mean
    sol = build_rld(bg, start, ratios, rld.parity, max_jumps=max_jumps or rld.k, tol=rld.tol)
    return sol


# ---------------------------------------------------------------------------
# catenoid family with prescribed last-interval coefficient


def ab_coefficients(sol: RldSolution, i):
    """(A, B) with phi = A phi_even + B phi_odd on the interval starting at circle i (catenoid basis)."""
    from .backgrounds import catenoid_even, catenoid_odd
    si = float(sol.s[i])
    p = float(sol.phi_at[i])
    dp = sol.Fplus[i] * p
    e, de = (float(v) for v in catenoid_even(si))
    o, do = (float(v) for v in catenoid_odd(si))
    A = p * do - dp * o
    B = e * dp - de * p
    return A, B


def catenoid_a_family(flux_ratios: Optional[FluxRatios], kcirc: int, a_bar: float, tol=None,
                      window=1.0) -> RldSolution:
    """Root-find the first flux so that the last-interval phi_even coefficient equals a_bar."""
    tol = _check_tol(tol)
    parity, k = _parity_for(kcirc)
    if a_bar > 0 or a_bar <= -window / k:
        raise Infeasible(f"a_bar = {a_bar} outside the window (-{window}/k, 0]")
    bg = make_background(BackgroundId.CATENOID)
    if kcirc < kcirc_min(bg, tol):
        raise Infeasible("k∘ < k∘_min")
    ratios = (flux_ratios or FluxRatios.zeros(k)).truncated(k)

    def h(F):
        try:
            sol = build_rld(bg, F, ratios, parity, max_jumps=k, tol=tol)
        except TooFewCircles:
            return -1.0
        if sol.k < k:
            return -1.0
        return ab_coefficients(sol, k - 1)[0] - a_bar

    neg = lambda F: -h(F)
    lo, hi, glo, ghi = _bracket(neg, 1.0 / kcirc, f"catenoid_a_family(k∘={kcirc}, a={a_bar})")
    F = bisect(neg, lo, hi, xtol=1e-15 * hi, fa=glo, fb=ghi)
    sol = build_rld(bg, F, ratios, parity, max_jumps=k, tol=tol)
    A, B = ab_coefficients(sol, k - 1)
    if abs(A - a_bar) > 1e-8:
        raise NonConvergence(f"A_k = {A} does not match a_bar = {a_bar}")
    if a_bar == 0.0:
        return _attach_tail(sol, end_solution(bg, tol), k)
    return sol
