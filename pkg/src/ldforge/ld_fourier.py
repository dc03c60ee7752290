"""Singular LD solutions on the cylinder by Fourier synthesis.

A maximally symmetric LD solution is written as

    Phi = phi_avg(s) + sum over sublattices of tau'_sub * [flat(s - c) + flat(s + c)
                                                          + sum_n w_n(s) cos(n n_sub (theta - theta_sub))]

where ``flat`` is the exact oscillatory part of the same point lattice on the
flat cylinder (V = 0), and w_n is the correction produced by the potential in
mode n. Each mode amplitude u_n = flat_n + w_n solves u'' - mu^2 u + V u = 0
away from the source circles, with a derivative jump 2 n_sub at the circle and
decay (or the background's end condition) at the end. The mode problem for a
symmetric pair of source circles reduces to two log-derivative (Riccati)
integrations that meet at the circle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import List, Optional, Sequence

import numpy as np
from scipy import special
from scipy.integrate import quad, solve_ivp

from .backgrounds import Background, EndKind
from .ode_core import _check_tol, end_solution, j_bar, phi_bar, phi_even
from .rld import RldSolution

MODE_FLOOR = 32
MODE_CAP = 512
DECAY_SPAN = 40.0  # mode profiles are integrated over |s - c| < DECAY_SPAN / mu
EULER_GAMMA = 0.57721566490153286


class LdError(RuntimeError):
    pass


class TruncationError(LdError):
    pass


class ExtrapolationError(LdError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


# ---------------------------------------------------------------------------
# cutoffs


def _smooth_step(x):
    """Nondecreasing, 0 on (-inf, -1], 1 on [1, inf), and step - 1/2 is odd."""
    x = np.asarray(x, dtype=float)
    a = np.clip(1.0 + x, 0.0, 2.0)
    b = np.clip(1.0 - x, 0.0, 2.0)
    with np.errstate(divide="ignore", over="ignore"):
        ha = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
        hb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
    return ha / (ha + hb)


def cutoff(a, b, d):
    """psi_cut[a, b](d): 0 near a, 1 near b, via the affine map sending a to -3 and b to 3."""
    a = float(a)
    b = float(b)
    if a == b:
        raise ValueError("cutoff needs a != b")
    x = -3.0 + 6.0 * (np.asarray(d, dtype=float) - a) / (b - a)
    out = _smooth_step(x)
    return float(out) if np.ndim(out) == 0 else out


def transition(a, b, d, f0, f1):
    """Psi[a, b; d](f0, f1): equal to f0 where d is near a and to f1 where d is near b."""
    return cutoff(a, b, d) * f1 + cutoff(b, a, d) * f0


# ---------------------------------------------------------------------------
# flat lattice kernels


def flat_osc(a, b):
    """Oscillatory part of the unit lattice Green's function on the flat cylinder.

    In scaled variables a = mu0 x, b = mu0 y this equals
    -sum_n exp(-n|a|) cos(n b) / n = 1/2 log((cosh a - cos b) / 2) + log 2 - |a|/2.
    """
    a = np.abs(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    t = np.exp(-a)
    D = np.expm1(-a) ** 2 + 4.0 * t * np.sin(0.5 * b) ** 2
    return 0.5 * np.log(D)


def flat_osc_grad(a, b):
    """(d/da, d/db) of flat_osc for a != 0 or b off the lattice."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aa = np.abs(a)
    t = np.exp(-aa)
    S = np.sin(0.5 * b) ** 2
    D = np.expm1(-aa) ** 2 + 4.0 * t * S
    da = np.sign(a) * t * (1.0 - t - 2.0 * S) / D
    db = t * np.sin(b) / D
    return da, db


def green_limit(theta_t, s_hat):
    """G_inf = 1/2 log(sin^2(theta/2) + sinh^2(s/2)), the scaled single-circle limit."""
    theta_t = np.asarray(theta_t, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    val = np.sin(0.5 * theta_t) ** 2 + np.sinh(0.5 * s_hat) ** 2
    if np.any(val == 0.0):
        raise ValueError("green_limit evaluated on the singular lattice")
    out = 0.5 * np.log(val)
    return float(out) if out.ndim == 0 else out


def green_limit_average(s_hat):
    return 0.5 * np.abs(s_hat) - math.log(2.0)


def radial_green(V0, r):
    """Radial Green's function of Delta + V0 in the plane, log r + O(r^2 log r)."""
    r = np.asarray(r, dtype=float)
    if V0 == 0.0:
        return np.log(r)
    k = math.sqrt(abs(V0))
    x = k * r
    c = math.log(0.5 * k) + EULER_GAMMA
    if V0 > 0:
        return 0.5 * math.pi * special.y0(x) - c * special.j0(x)
    return -special.k0(x) - c * special.i0(x)


# ---------------------------------------------------------------------------
# configuration


def _grid_args(theta, s):
    theta, s = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(s, dtype=float))
    return np.array(theta, ndmin=1), np.array(s, ndmin=1)


def _gcd(values):
    return reduce(math.gcd, [abs(int(v)) for v in values])


@dataclass(frozen=True)
class Sublattice:
    """|order| equidistributed points at theta0 + 2 pi j / order on the circles at +-c."""
    circle: int
    c: float
    order: int
    theta0: float
    strength: float

    def points(self):
        th = self.theta0 + 2.0 * math.pi * np.arange(self.order) / self.order
        out = [(t, self.c) for t in th]
        if self.c > 0:
            out += [(t, -self.c) for t in th]
        return out


@dataclass
class LatticeConfig:
    background: Background
    rld: RldSolution
    m_vector: tuple
    m: int
    zeta1: float
    xi_circ: tuple
    s: np.ndarray
    tau_prime: np.ndarray
    tau1: float
    delta: np.ndarray
    F: np.ndarray
    scale: float  # unit average = scale * rld profile

    @property
    def k(self):
        return len(self.s)

    @property
    def tau(self):
        return self.tau1 * self.tau_prime

    @property
    def kcirc(self):
        return 2 * self.k - 1 if self.s[0] == 0.0 else 2 * self.k

    @property
    def cardinality(self):
        absm = np.abs(np.array(self.m_vector))
        if self.s[0] == 0.0:
            return int(absm[0] + 2 * absm[1:].sum())
        return int(2 * absm.sum())

    def sublattices(self) -> List[Sublattice]:
        out = []
        m = self.m
        for i, mi in enumerate(self.m_vector):
            tp = float(self.tau_prime[i])
            c = float(self.s[i])
            if mi == m:
                out.append(Sublattice(i, c, m, 0.0, tp))
            elif mi == -m:
                out.append(Sublattice(i, c, m, math.pi / m, tp))
            else:
                eps = self.xi_circ[i] / (2 * m)
                out.append(Sublattice(i, c, m, 1.5 * math.pi / m + eps, tp))
                out.append(Sublattice(i, c, m, 0.5 * math.pi / m - eps, tp))
        return out

    def representative(self, i):
        """(theta, s) of the representative singular point on circle i."""
        mi = self.m_vector[i]
        m = self.m
        if mi == m:
            th = 0.0
        elif mi == -m:
            th = math.pi / m
        else:
            th = (3.0 * math.pi + self.xi_circ[i]) / (2 * m)
        return th, float(self.s[i])

    def to_dict(self):
        return {
            "background": self.background.name,
            "m": self.m,
            "m_vector": list(self.m_vector),
            "zeta1": self.zeta1,
            "xi_circ": list(self.xi_circ),
            "s": self.s.tolist(),
            "tau_prime": self.tau_prime.tolist(),
            "tau1": self.tau1,
            "tau": self.tau.tolist(),
            "delta": self.delta.tolist(),
            "F": self.F.tolist(),
            "cardinality": self.cardinality,
        }


def make_config(bg: Background, rld: RldSolution, m_vector: Sequence[int], zeta1=0.0,
                xi_circ=None, m=None) -> LatticeConfig:
    m_vector = tuple(int(v) for v in m_vector)
    k = rld.k
    if len(m_vector) != k:
        raise ValueError(f"m_vector has {len(m_vector)} entries but the RLD solution has {k} circles")
    if any(v == 0 for v in m_vector):
        raise ValueError("m_i must be nonzero")
    m = _gcd(m_vector) if m is None else int(m)
    for v in m_vector:
        if v not in (m, -m, -2 * m):
            raise ValueError(f"m_i = {v} not in {{m, -m, -2m}} for m = {m}")
    xi_circ = tuple(0.0 for _ in m_vector) if xi_circ is None else tuple(float(x) for x in xi_circ)
    if len(xi_circ) != k:
        raise ValueError("xi_circ must have one entry per circle")
    for v, x, s in zip(m_vector, xi_circ, rld.s):
        if x != 0.0 and (v != -2 * m or s == 0.0):
            raise ValueError("angular offsets are only allowed on m_i = -2m circles away from s = 0")

    absm = np.abs(np.array(m_vector, dtype=float))
    jumps = np.empty(k)
    for i in range(k):
        dl, dr = rld.one_sided(i)
        jumps[i] = dr - dl
    scale = absm[0] / jumps[0]
    tau_prime = scale * jumps / absm
    phi1 = scale * rld.phi_at[0]
    delta = 1.0 / (9.0 * absm)
    tau1 = 2.0 * delta[0] * math.exp(zeta1) * math.exp(-phi1)
    return LatticeConfig(bg, rld, m_vector, m, float(zeta1), xi_circ, np.array(rld.s, dtype=float),
                         tau_prime, tau1, delta, np.array(rld.F, dtype=float), scale)


# ---------------------------------------------------------------------------
# mode profiles


class _Mode:
    """Amplitude of cos(n order (theta - theta0)) for a source pair at +-c, unit strength."""

    def __init__(self, bg: Background, c, mu, jump, tol):
        self.c = c
        self.mu = mu
        self.jump = jump
        V = bg.V
        mu2 = mu * mu

        def rhs(s, y):
            q = y[0]
            return [mu2 - float(V(s)) - q * q, q]

        span = DECAY_SPAN / mu
        opts = dict(method="DOP853", rtol=tol, atol=tol * 1e-3, dense_output=True)
        l = bg.half_length
        s_b = c + span
        if math.isfinite(l) and s_b >= l:
            s_b = l
            kind = bg.end_condition.kind
            q_b = 1.0 / bg.end_condition.robin_root if kind is EndKind.ROBIN else 0.0
        else:
            q_b = -math.sqrt(mu2 - float(V(s_b)))
        right = solve_ivp(rhs, (s_b, c), [q_b, 0.0], **opts)
        if not right.success:
            raise LdError(f"mode integration failed: {right.message}")
        self.right = right.sol
        self.L_right_c = right.y[1, -1]
        self.q_right = right.y[0, -1]
        self.s_b = s_b
        if c == 0.0:
            self.left = None
            self.s_a = 0.0
            self.q_left = -self.q_right
            if not self.q_right < 0:
                raise LdError("mode problem is singular")
            self.u_c = 0.5 * jump / self.q_right
        else:
            s_a = c - span
            if s_a <= 0.0:
                s_a = 0.0
                q_a = 0.0
            else:
                q_a = math.sqrt(mu2 - float(V(s_a)))
            left = solve_ivp(rhs, (s_a, c), [q_a, 0.0], **opts)
            if not left.success:
                raise LdError(f"mode integration failed: {left.message}")
            self.left = left.sol
            self.L_left_c = left.y[1, -1]
            self.q_left = left.y[0, -1]
            self.s_a = s_a
            den = self.q_right - self.q_left
            if not den < 0:
                raise LdError("mode problem is singular")
            self.u_c = jump / den

    def _flat(self, s):
        """Flat-cylinder amplitude of the same sources and its derivative."""
        f = np.zeros_like(s)
        df = np.zeros_like(s)
        centers = (self.c, -self.c) if self.c > 0 else (self.c,)
        for cc in centers:
            x = s - cc
            e = np.exp(-self.mu * np.abs(x))
            f += -0.5 * self.jump / self.mu * e
            df += 0.5 * self.jump * np.sign(x) * e
        return f, df

    def amplitude(self, s):
        """(u, u') on s >= 0; zero outside the integration window."""
        s = np.asarray(s, dtype=float)
        u = np.zeros_like(s)
        du = np.zeros_like(s)
        sel = (s >= self.c) & (s <= self.s_b)
        if np.any(sel):
            y = self.right(s[sel])
            u[sel] = self.u_c * np.exp(y[1] - self.L_right_c)
            du[sel] = y[0] * u[sel]
        if self.left is not None:
            sel = (s >= self.s_a) & (s < self.c)
            if np.any(sel):
                y = self.left(s[sel])
                u[sel] = self.u_c * np.exp(y[1] - self.L_left_c)
                du[sel] = y[0] * u[sel]
        return u, du

    def correction(self, s):
        """(w, w') = amplitude minus its flat-cylinder counterpart."""
        s = np.asarray(s, dtype=float)
        u, du = self.amplitude(s)
        inside = (s <= self.s_b) & (s >= self.s_a)
        f, df = self._flat(s)
        w = np.where(inside, u - f, 0.0)
        dw = np.where(inside, du - df, 0.0)
        at_c = s == self.c
        if np.any(at_c):
            # C^1 across the circle: use the mean of the one-sided slopes
            mirror = 0.0
            if self.c > 0:
                mirror = 0.5 * self.jump * math.exp(-2.0 * self.mu * self.c)
            dw[at_c] = 0.5 * self.u_c * (self.q_right + self.q_left) - mirror
        return w, dw


@dataclass
class _SublatticeModes:
    sub: Sublattice
    modes: list


def mode_count(config: LatticeConfig, floor=MODE_FLOOR, cap=MODE_CAP):
    s = np.sort(np.concatenate([config.s, -config.s[config.s > 0]]))
    gaps = np.diff(s)
    gap = float(gaps.min()) if gaps.size else math.inf
    if config.background.finite:
        gap = min(gap, 2.0 * (config.background.half_length - float(config.s.max())))
    need = 1 if not math.isfinite(gap) else math.ceil(-math.log(1e-12) / (config.m * gap))
    if need > cap:
        raise TruncationError(f"modes needed ({need}) exceed the cap {cap}: circles too close for m = {config.m}")
    return max(need, floor)


# ---------------------------------------------------------------------------
# LD solution


@dataclass
class LdSolution:
    config: LatticeConfig
    subs: List[_SublatticeModes] = field(repr=False)
    n_modes: int = MODE_FLOOR
    tol: float = 1e-10

    @property
    def background(self):
        return self.config.background

    # -- average
    def average(self, s):
        """(phi, phi') of the unit average; the right-hand slope at a circle."""
        v, dv = self.config.rld.values(np.asarray(s, dtype=float))
        return self.config.scale * v, self.config.scale * dv

    def average_one_sided(self, i):
        dl, dr = self.config.rld.one_sided(i)
        return self.config.scale * dl, self.config.scale * dr

    def singular_strengths(self, nodes=64):
        """Coefficient of log r in circle averages of the synthesized unit field about each representative.

        Circle averages behave like A + c log r + (d + e log r) r^2, so four radii fix c.
        """
        cfg = self.config
        t = 2.0 * math.pi * (np.arange(nodes) + 0.5) / nodes
        out = []
        for i in range(cfg.k):
            th, s = cfg.representative(i)
            radii = cfg.delta[i] / 4.0 * np.array([1.0, 0.5, 0.25, 0.125])
            avgs = [np.mean(self.unit_field(th + r * np.sin(t), s + r * np.cos(t))) for r in radii]
            M = np.column_stack([np.ones(4), np.log(radii), radii ** 2, radii ** 2 * np.log(radii)])
            out.append(float(np.linalg.solve(M, avgs)[1]))
        return np.array(out)

    def balancing_residual(self):
        """max_i | |m_i| c_i - jump of phi_avg' at s_i | / jump, c_i the measured log strength of the field."""
        cfg = self.config
        strength = self.singular_strengths()
        res = []
        for i, mi in enumerate(cfg.m_vector):
            dl, dr = self.average_one_sided(i)
            res.append(abs(abs(mi) * strength[i] - (dr - dl)) / abs(dr - dl))
        return max(res)

    # -- field
    def unit_field(self, theta, s):
        """Phi normalized by tau'_1 = 1."""
        theta, s = _grid_args(theta, s)
        a = np.abs(s)
        out = self.average(a)[0].astype(float)
        for sm in self.subs:
            sub = sm.sub
            mu0 = sub.order
            y = mu0 * (theta - sub.theta0)
            acc = flat_osc(mu0 * (a - sub.c), y)
            if sub.c > 0:
                acc = acc + flat_osc(mu0 * (a + sub.c), y)
            acc = acc + self._wsum(sm, a, y)
            out = out + sub.strength * acc
        return out

    def field(self, theta, s):
        return self.config.tau1 * self.unit_field(theta, s)

    def _wsum(self, sm, a, y):
        flat_a = a.reshape(-1)
        flat_y = y.reshape(-1)
        acc = np.zeros_like(flat_a)
        lo = min(md.s_a for md in sm.modes)
        hi = max(md.s_b for md in sm.modes)
        sel = (flat_a >= lo) & (flat_a <= hi)
        if not np.any(sel):
            return acc.reshape(a.shape)
        aa = flat_a[sel]
        yy = flat_y[sel]
        part = np.zeros_like(aa)
        for n, md in enumerate(sm.modes, start=1):
            w, _ = md.correction(aa)
            part += w * np.cos(n * yy)
        acc[sel] = part
        return acc.reshape(a.shape)

    def mode_amplitude(self, sub_index, n, s):
        """Full amplitude (flat + correction) of mode n of a sublattice."""
        md = self.subs[sub_index].modes[n - 1]
        s = np.abs(np.asarray(s, dtype=float))
        w, _ = md.correction(s)
        f, _ = md._flat(s)
        return w + f

    def mode_correction(self, sub_index, n, s):
        return self.subs[sub_index].modes[n - 1].correction(np.abs(np.asarray(s, dtype=float)))

    # -- regular part at the representative singular points
    def regular_part(self, i):
        """(R, dR/ds, dR/dtheta) with Phi = tau'_i log r + R + dR . (ds, dtheta) + ... at p_i."""
        cfg = self.config
        th_p, s_p = cfg.representative(i)
        dl, dr = self.average_one_sided(i)
        R = float(self.average(s_p)[0])
        Rs = 0.5 * (dl + dr)
        Rt = 0.0
        for sm in self.subs:
            sub = sm.sub
            mu0 = sub.order
            b = mu0 * (th_p - sub.theta0)
            tp = sub.strength
            if sub.circle == i:
                if math.isclose(math.cos(b), 1.0, rel_tol=0.0, abs_tol=1e-14):
                    R += tp * math.log(mu0)
                else:
                    R += tp * float(flat_osc(0.0, b))
                    Rt += tp * mu0 * 0.5 * math.sin(b) / (1.0 - math.cos(b))
            else:
                a = mu0 * (s_p - sub.c)
                R += tp * float(flat_osc(a, b))
                ga, gb = flat_osc_grad(a, b)
                Rs += tp * mu0 * float(ga)
                Rt += tp * mu0 * float(gb)
            if sub.c > 0:
                a = mu0 * (s_p + sub.c)
                R += tp * float(flat_osc(a, b))
                ga, gb = flat_osc_grad(a, b)
                Rs += tp * mu0 * float(ga)
                Rt += tp * mu0 * float(gb)
            for n, md in enumerate(sm.modes, start=1):
                w, dw = md.correction(np.array([s_p]))
                R += tp * float(w[0]) * math.cos(n * b)
                Rs += tp * float(dw[0]) * math.cos(n * b)
                Rt += -tp * float(w[0]) * n * mu0 * math.sin(n * b)
        return R, Rs, Rt

    def to_dict(self):
        out = self.config.to_dict()
        out["n_modes"] = self.n_modes
        out["balancing_residual"] = self.balancing_residual()
        return out


def build_ld(bg: Background, rld: RldSolution, m_vector: Sequence[int], zeta1=0.0, xi_circ=None,
             m=None, n_modes=None, tol=None) -> LdSolution:
    """Synthesize the LD solution with average proportional to rld and singular set L[s; m]."""
    tol = _check_tol(tol)
    cfg = make_config(bg, rld, m_vector, zeta1, xi_circ, m)
    return _synthesize(cfg, n_modes, tol)


def _synthesize(cfg: LatticeConfig, n_modes, tol):
    N = mode_count(cfg) if n_modes is None else int(n_modes)
    if N > MODE_CAP:
        raise TruncationError(f"n_modes = {N} exceeds the cap {MODE_CAP}")
    mode_tol = max(tol * 0.1, 1e-13)
    subs = []
    for sub in cfg.sublattices():
        modes = [_Mode(cfg.background, sub.c, n * sub.order, 2.0 * sub.order, mode_tol)
                 for n in range(1, N + 1)]
        subs.append(_SublatticeModes(sub, modes))
    return LdSolution(cfg, subs, N, tol)


# ---------------------------------------------------------------------------
# single circle solutions and the Green's function limit


class _RotationalAverage:
    """Even solution with a derivative jump at +-c and the background's end condition."""

    def __init__(self, bg: Background, c, jump, tol):
        self.c = c
        self.inner = phi_even(bg, tol)
        self.outer = end_solution(bg, tol)
        e, de = (float(v) for v in self.outer(c))
        p, dp = (float(v) for v in self.inner(c))
        W = p * de - dp * e
        if W == 0.0:
            raise LdError("single circle average is not unique at this latitude")
        self.A = jump * e / W
        self.B = jump * p / W

    def __call__(self, s):
        a = np.abs(np.asarray(s, dtype=float))
        v = np.empty_like(a)
        dv = np.empty_like(a)
        lo = a < self.c
        if np.any(lo):
            p, dp = self.inner(a[lo])
            v[lo] = self.A * p
            dv[lo] = self.A * dp
        if np.any(~lo):
            e, de = self.outer(a[~lo])
            v[~lo] = self.B * e
            dv[~lo] = self.B * de
        return v, dv

    def one_sided(self):
        p, dp = self.inner(self.c)
        e, de = self.outer(self.c)
        return self.A * float(dp), self.B * float(de)


class _RotationalRld:
    """Adapter exposing the piece of the RldSolution interface used by LdSolution."""

    def __init__(self, avg: _RotationalAverage):
        self.avg = avg
        self.s = np.array([avg.c])
        self.phi_at = np.array([float(avg(avg.c)[0])])
        self.k = 1

    def values(self, s):
        return self.avg(s)

    def one_sided(self, i):
        return self.avg.one_sided()

    @property
    def F(self):
        dl, dr = self.avg.one_sided()
        return np.array([0.5 * (dr - dl) / self.phi_at[0]])


def single_circle_ld(bg: Background, s_bar, m, n_modes=None, tol=None) -> LdSolution:
    """Unit-strength LD solution with singular set L[s_bar; m] (both circles +-s_bar)."""
    tol = _check_tol(tol)
    if s_bar <= 0:
        raise ValueError("s_bar must be positive")
    avg = _RotationalAverage(bg, float(s_bar), float(m), tol)
    rld = _RotationalRld(avg)
    cfg = LatticeConfig(bg, rld, (int(m),), int(m), 0.0, (0.0,), np.array([float(s_bar)]),
                        np.array([1.0]), 1.0, np.array([1.0 / (9.0 * m)]), rld.F, 1.0)
    return _synthesize(cfg, n_modes, tol)


def green_m(ld: LdSolution, theta_t, s_hat, tol=None):
    """G_m + phi_m in scaled variables for a single circle solution."""
    tol = _check_tol(tol)
    m = ld.config.m
    c = float(ld.config.s[0])
    dl, dr = ld.average_one_sided(0)
    a = -math.log(2.0) - float(ld.average(c)[0])
    b = -0.5 * (dl + dr)
    corr = phi_bar(ld.background, a, b, c, tol=tol)
    s = c + np.asarray(s_hat, dtype=float) / m
    G = ld.unit_field(np.asarray(theta_t, dtype=float) / m, s)
    return G + corr.phi(s)


def green_limit_error(bg: Background, m, s_bar=1.0, probes=None, tol=None):
    """sup over a compact probe set of |G_m + phi_m - G_inf|."""
    if probes is None:
        th = np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0, math.pi, 4.0, 5.0])
        sh = np.array([-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0])
        T, S = np.meshgrid(th, sh)
        probes = (T.ravel(), S.ravel())
    ld = single_circle_ld(bg, s_bar, m, tol=tol)
    T, S = probes
    return float(np.max(np.abs(green_m(ld, T, S, tol) - green_limit(T, S))))


# ---------------------------------------------------------------------------
# decomposition Phi = G_hat + Phi_hat + Phi'


class Decomposition:
    """Pointwise evaluation of the pieces of Phi = G_hat + Phi_hat + Phi' for the unit solution."""

    def __init__(self, ld: LdSolution):
        self.ld = ld
        cfg = ld.config
        bg = cfg.background
        self.circ_phi_bar = []
        self.circ_j_bar = []
        for i in range(cfg.k):
            si = float(cfg.s[i])
            self.circ_phi_bar.append(phi_bar(bg, math.log(cfg.delta[i]), 0.0, si, tol=ld.tol))
            dl, dr = ld.average_one_sided(i)
            self.circ_j_bar.append(j_bar(bg, 0.5 * (dr - dl), si, tol=ld.tol))
        self.V_at = [float(bg.V(si)) for si in cfg.s]

    def _nearest(self, sub: Sublattice, theta, a):
        period = 2.0 * math.pi / sub.order
        dth = np.mod(theta - sub.theta0 + 0.5 * period, period) - 0.5 * period
        return np.hypot(dth, a - sub.c)

    def distance_to_lattice(self, theta, s):
        theta, s = _grid_args(theta, s)
        a = np.abs(s)
        d = np.full(a.shape, np.inf)
        ratio = np.full(a.shape, np.inf)
        for sm in self.ld.subs:
            dd = self._nearest(sm.sub, theta, a)
            d = np.minimum(d, dd)
            ratio = np.minimum(ratio, dd / self.ld.config.delta[sm.sub.circle])
        return d, ratio

    def g_hat(self, theta, s):
        cfg = self.ld.config
        theta, s = _grid_args(theta, s)
        a = np.abs(s)
        out = np.zeros(a.shape)
        for sm in self.ld.subs:
            i = sm.sub.circle
            dlt = cfg.delta[i]
            d = self._nearest(sm.sub, theta, a)
            sel = d < 3.0 * dlt
            if not np.any(sel):
                continue
            f0 = radial_green(self.V_at[i], d[sel]) - self.circ_phi_bar[i].phi(a[sel])
            out[sel] += cfg.tau_prime[i] * cutoff(3.0 * dlt, 2.0 * dlt, d[sel]) * f0
        return out

    def phi_hat(self, theta, s):
        cfg = self.ld.config
        theta, s = _grid_args(theta, s)
        a = np.abs(s)
        out = self.ld.average(a)[0].astype(float)
        for i in range(cfg.k):
            mi = abs(cfg.m_vector[i])
            d = np.abs(a - cfg.s[i])
            sel = d < 3.0 / mi
            if np.any(sel):
                out[sel] -= cutoff(3.0 / mi, 2.0 / mi, d[sel]) * self.circ_j_bar[i].phi(a[sel])
        return out

    def phi_prime(self, theta, s):
        return self.ld.unit_field(theta, s) - self.g_hat(theta, s) - self.phi_hat(theta, s)

    def phi_prime_at(self, i):
        """(Phi', dPhi'/ds, dPhi'/dtheta) at the representative point of circle i, as a limit."""
        cfg = self.ld.config
        R, Rs, Rt = self.ld.regular_part(i)
        tp = cfg.tau_prime[i]
        dl, dr = self.ld.average_one_sided(i)
        val = R + tp * math.log(cfg.delta[i]) - float(self.ld.average(cfg.s[i])[0])
        return val, Rs - 0.5 * (dl + dr), Rt


def decompose(ld: LdSolution, s_max=None, per_delta=4, coarse=None):
    """Evaluate G_hat, Phi_hat, Phi' on a (theta, s) grid over the fundamental domain.

    The grid is fine (spacing delta/per_delta) within 4/m of every circle and
    coarse elsewhere; points within delta_i of a singular point are masked.
    """
    cfg = ld.config
    m = cfg.m
    dmin = float(cfg.delta.min())
    h = dmin / per_delta
    theta = np.linspace(0.0, math.pi / m, max(int(math.ceil(math.pi / m / h)), 8) + 1)
    top = float(cfg.s.max()) + 1.0 if s_max is None else float(s_max)
    if cfg.background.finite:
        top = min(top, cfg.background.half_length)
    coarse = 0.25 / m if coarse is None else coarse
    pieces = [np.arange(0.0, top, coarse), [top]]
    for si in cfg.s:
        lo = max(0.0, si - 4.0 / m)
        hi = min(top, si + 4.0 / m)
        pieces.append(np.arange(lo, hi, h))
        pieces.append([si])
    s = np.unique(np.concatenate([np.asarray(p, float) for p in pieces]))
    T, S = np.meshgrid(theta, s)
    dec = Decomposition(ld)
    _, ratio = dec.distance_to_lattice(T, S)
    mask = ratio < 1.0
    safe_T = np.where(mask, T + 0.5 * math.pi / m, T)
    safe_S = np.where(mask, S + 1.0, S)
    Phi = ld.unit_field(safe_T, safe_S)
    G = dec.g_hat(T, S)
    Ph = dec.phi_hat(T, S)
    Pp = Phi - G - Ph
    for arr in (Phi, G, Pp):
        arr[mask] = np.nan
    return {"theta": theta, "s": s, "Phi": Phi, "G_hat": G, "Phi_hat": Ph, "Phi_prime": Pp,
            "mask": mask}


def sup_phi_prime(ld: LdSolution, **kw):
    grid = decompose(ld, **kw)
    return float(np.nanmax(np.abs(grid["Phi_prime"])))


# ---------------------------------------------------------------------------
# mismatch


@dataclass
class MismatchVector:
    mu: np.ndarray
    mu_prime: np.ndarray
    mu_circ: np.ndarray  # raw dtheta coefficient of M_p / tau_p
    tau: np.ndarray
    m_abs: np.ndarray
    frame: str = "g"
    method: str = ""
    residual: Optional[np.ndarray] = None

    def __add__(self, other):
        return MismatchVector(self.mu + other.mu, self.mu_prime + other.mu_prime,
                              self.mu_circ + other.mu_circ, self.tau, self.m_abs, self.frame, "sum")

    def scaled(self, c):
        return MismatchVector(c * self.mu, c * self.mu_prime, c * self.mu_circ, self.tau, self.m_abs,
                              self.frame, "scaled")

    def to_dict(self):
        out = {"mu": self.mu.tolist(), "mu_prime": self.mu_prime.tolist(),
               "mu_circ": self.mu_circ.tolist(), "tau": self.tau.tolist(),
               "frame": self.frame, "method": self.method}
        if self.residual is not None:
            out["residual"] = np.asarray(self.residual).tolist()
        return out


def _circle_harmonics(ld: LdSolution, i, r, n_nodes, frame_shift=0.0):
    """Constant and first-harmonic coefficients of Phi - tau' log r on a circle about p_i."""
    cfg = ld.config
    th_p, s_p = cfg.representative(i)
    t = 2.0 * math.pi * np.arange(n_nodes) / n_nodes
    vals = ld.unit_field(th_p + r * np.sin(t), s_p + r * np.cos(t))
    vals = vals - cfg.tau_prime[i] * (math.log(r) + frame_shift)
    a0 = vals.mean()
    gs = 2.0 * np.mean(vals * np.cos(t)) / r
    gt = 2.0 * np.mean(vals * np.sin(t)) / r
    return np.array([a0, gs, gt])


def _richardson(E1, E2, r):
    """Eliminate an error term proportional to r^2 log r between radii r and r/2."""
    e1 = r * r * math.log(r)
    e2 = 0.25 * r * r * math.log(0.5 * r)
    B = (E1 - E2) / (e1 - e2)
    return E1 - B * e1


def _nodes(r0, m):
    return 8 * int(math.ceil(r0 * m)) + 64


def regular_part_extracted(ld: LdSolution, i, frame_shift=0.0, check=True):
    """Regular part (R, dR/ds, dR/dtheta) at p_i from circle sampling and extrapolation."""
    cfg = ld.config
    r0 = 0.25 * cfg.delta[i]
    n = _nodes(r0, cfg.m)
    E1 = _circle_harmonics(ld, i, r0, n, frame_shift)
    E2 = _circle_harmonics(ld, i, 0.5 * r0, n, frame_shift)
    est = _richardson(E1, E2, r0)
    resid = None
    if check:
        E3 = _circle_harmonics(ld, i, 0.25 * r0, n, frame_shift)
        est2 = _richardson(E2, E3, 0.5 * r0)
        resid = np.abs(est - est2)
        scale = 1.0 + np.abs(est) * np.array([1.0, 1.0 / cfg.m, 1.0 / cfg.m])
        if np.any(resid > 1e-6 * scale * max(1.0, cfg.m)):
            raise ExtrapolationError("circle extrapolation did not settle", resid)
    return est, resid


def mismatch(ld: LdSolution, method="formula", frame="g", frame_shift=0.0) -> MismatchVector:
    """Constant and linear mismatch data at each representative point, divided by tau_p.

    circle_extraction: sample Phi on small circles and extrapolate its regular part.
    formula: closed expressions in terms of Phi' at p and the RLD data.
    frame "chi" omits the conformal conversion; frame_shift c measures distances in e^{2c} chi.
    """
    if frame not in ("g", "chi"):
        raise ValueError("frame must be 'g' or 'chi'")
    cfg = ld.config
    bg = cfg.background
    k = cfg.k
    absm = np.abs(np.array(cfg.m_vector, dtype=float))
    mu = np.empty(k)
    mup = np.empty(k)
    muc = np.empty(k)
    resid = []
    if method == "circle_extraction":
        for i in range(k):
            (R, Rs, Rt), res = regular_part_extracted(ld, i, frame_shift)
            resid.append(res)
            tp = cfg.tau_prime[i]
            tau_p = cfg.tau[i]
            mu[i] = R / tp + math.log(tau_p / 2.0)
            mup[i] = Rs / tp / absm[i]
            muc[i] = Rt / tp
    elif method == "formula":
        dec = Decomposition(ld)
        xi = (cfg.rld.Fplus - cfg.rld.Fminus) / (cfg.rld.Fplus + cfg.rld.Fminus) \
            if hasattr(cfg.rld, "Fplus") else np.zeros(k)
        for i in range(k):
            P, Ps, Pt = dec.phi_prime_at(i)
            tp = cfg.tau_prime[i]
            mu[i] = (absm[i] / (2.0 * cfg.F[i]) + math.log(tp * cfg.tau1 / (2.0 * cfg.delta[i]))
                     + P / tp - frame_shift)
            mup[i] = (0.5 * absm[i] * xi[i] + Ps / tp) / absm[i]
            muc[i] = Pt / tp
    else:
        raise ValueError("method must be 'circle_extraction' or 'formula'")
    if frame == "g":
        for i in range(k):
            si = float(cfg.s[i])
            mu[i] -= float(bg.omega(si))
            mup[i] -= 0.5 * float(bg.domega(si)) / absm[i]
    # reflection through p_i is a symmetry when |m_i| = m, so the dtheta part vanishes
    muc[absm == cfg.m] = 0.0
    return MismatchVector(mu, mup, muc, cfg.tau.copy(), absm, frame, method,
                          np.array(resid) if resid else None)


def unbalancing_map(mis: MismatchVector, ld: LdSolution):
    """Z(mismatch) = (mu_1, -(2F_1/|m_1|) diff(mu), 2 mu', -4 mu_circ / m on m_i = -2m circles)."""
    cfg = ld.config
    if mis.frame != "g":
        raise ValueError("the unbalancing map takes g-frame mismatch")
    F1 = cfg.F[0]
    m1 = abs(cfg.m_vector[0])
    top = [np.array([mis.mu[0]]), -(2.0 * F1 / m1) * np.diff(mis.mu), 2.0 * mis.mu_prime]
    perp = [-4.0 * mis.mu_circ[i] / cfg.m for i, mi in enumerate(cfg.m_vector) if mi == -2 * cfg.m]
    return np.concatenate(top + [np.array(perp)])


def zeta_vector(ld: LdSolution):
    """The parameter vector (zeta_1, sigma, xi, xi_circ) the configuration was built from."""
    cfg = ld.config
    k = cfg.k
    sigma = np.zeros(k - 1)
    xi = np.zeros(k)
    rld = cfg.rld
    if hasattr(rld, "ratios"):
        absm = np.abs(np.array(cfg.m_vector, dtype=float))
        balanced = np.log(absm[1:] / absm[:-1])
        sigma = np.array([rld.ratios.sigma_at(j) for j in range(1, k)]) - balanced
        xi = np.array([rld.ratios.xi_at(j) for j in range(k)])
    perp = [cfg.xi_circ[i] for i, mi in enumerate(cfg.m_vector) if mi == -2 * cfg.m]
    return np.concatenate([[cfg.zeta1], sigma, xi, perp])


def grid_csv(grid, key="Phi_prime"):
    """Rows 'theta,s,value' for a decomposition grid."""
    th = grid["theta"]
    s = grid["s"]
    vals = grid[key]
    lines = ["theta,s,value"]
    for a, sv in enumerate(s):
        for b, tv in enumerate(th):
            v = vals[a, b]
            lines.append(f"{tv:.17g},{sv:.17g},{'nan' if np.isnan(v) else format(v, '.17g')}")
    return "\n".join(lines) + "\n"


def average_profile_quadrature(fn, s, n=4096):
    """theta-average of fn(theta, s) by the periodic trapezoid rule."""
    th = 2.0 * math.pi * np.arange(n) / n
    return float(np.mean(fn(th, np.full(n, s))))


def green_average_quadrature(s_hat):
    """theta-average of G_inf at fixed s_hat by adaptive quadrature."""
    val, _ = quad(lambda t: green_limit(t, s_hat), 0.0, 2.0 * math.pi, limit=400,
                  points=[0.0, 2.0 * math.pi] if s_hat == 0 else None, epsabs=1e-13, epsrel=1e-13)
    return val / (2.0 * math.pi)
