"""LD solutions on the Clifford torus.

The torus is flat with coordinates (x, y), each of period sqrt(2) pi. The
symmetric lattice of k x m points is the orbit of p0 = (0, 0) under the shifts
x -> x + Lx, y -> y + Ly (Lx = sqrt(2) pi / k, Ly = sqrt(2) pi / m) and the
reflections x -> -x, y -> -y. The unit LD solution Phi (Phi ~ log r at every
lattice point) of Delta + 4 is built as a Fourier series in y whose modes are
solved exactly in x:

    Phi = Phi_avg(x) + flat(mu0 x, mu0 y) + sum_n w_n(x) cos(n mu0 y),   mu0 = 2 pi / Ly,

where ``flat`` is the closed-form oscillatory part for Delta on the flat
cylinder and w_n is the exponentially small correction from the potential
and the periodic images in x. The decomposition Phi = G_hat + Phi_hat + Phi'
is evaluated pointwise from it. An independent spectral solve of
L~ Phi' = E' (E' sampled on a polar quadrature grid, divided by the
eigenvalues of the symmetric cosine basis, average part by ODE) cross-checks
Phi'.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special
from scipy.integrate import quad, solve_ivp

from . import kernels
from .ld_fourier import EULER_GAMMA, cutoff, flat_osc, radial_green

SQRT2 = math.sqrt(2.0)
TORUS_AREA = 2.0 * math.pi ** 2


class CliffordError(ValueError):
    pass


def angle_g(k):
    return SQRT2 * math.pi / k


def clifford_F(k):
    """F = sqrt(2) tan(sqrt(2) pi / k); positive for k >= 3 and k = 1, negative for k = 2."""
    return SQRT2 * math.tan(angle_g(k))


def _check_k(k):
    if int(k) != k or k < 3:
        raise CliffordError(f"k = {k}: need k >= 3 (F = {clifford_F(k):.4g} is not usable)")


def clifford_phi_avg(k, m, d):
    """Rotational average m / (2 sqrt2 sin g) cos(g - 2d), d = distance to the nearest lattice circle."""
    _check_k(k)
    g = angle_g(k)
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(d > 0.5 * g + 1e-12):
        raise CliffordError("d must lie in [0, sqrt(2) pi / (2k)]")
    out = m / (2.0 * SQRT2 * math.sin(g)) * np.cos(g - 2.0 * d)
    return float(out) if out.ndim == 0 else out


def clifford_phi_avg_slope(k, m):
    """One-sided d-derivative of Phi_avg at d = 0+."""
    g = angle_g(k)
    return 2.0 * m / (2.0 * SQRT2 * math.sin(g)) * math.sin(g)


def clifford_eigenvalue(k, m, ell, n):
    """Eigenvalue of Delta_g~ + 4/m^2 on cos(ell k x~ / (sqrt2 m)) cos(n y~ / sqrt2)."""
    ell = np.asarray(ell, dtype=float)
    n = np.asarray(n, dtype=float)
    return -0.5 * (k * k * ell * ell / (m * m) + n * n) + 4.0 / (m * m)


def inverse_eigenvalue_bound(k, m, n_min=1):
    """sup |1/lambda| over ell >= 0, n >= n_min; attained at ell = 0, n = n_min."""
    lam = clifford_eigenvalue(k, m, 0, n_min)
    if lam >= 0:
        raise CliffordError("eigenvalue with n >= 1 is not negative; m too small")
    return 1.0 / abs(lam)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class CliffordConfig:
    k: int
    m: int
    lattice: str = "single"
    zeta: float = 0.0
    sigma: Tuple[float, float] = (0.0, 0.0)
    c1: float = 8.0

    def __post_init__(self):
        _check_k(self.k)
        if int(self.m) != self.m or self.m < self.k:
            raise CliffordError(f"need integer m >= k, got m = {self.m}")
        if self.lattice not in ("single", "triple"):
            raise CliffordError(f"unknown lattice {self.lattice!r}")
        if 3.0 / self.m > 0.5 * self.period_x:
            raise CliffordError("m too small: the 3/m neighbourhoods of the lattice circles overlap")
        if self.lattice == "triple" and self.m / self.k >= self.c1:
            raise CliffordError(f"triple lattice needs m/k < {self.c1}")
        self.sigma = (float(self.sigma[0]), float(self.sigma[1]))

    @property
    def g(self):
        return angle_g(self.k)

    @property
    def F(self):
        return clifford_F(self.k)

    @property
    def delta(self):
        return 1.0 / (100.0 * self.m)

    @property
    def period_x(self):
        return SQRT2 * math.pi / self.k

    @property
    def period_y(self):
        return SQRT2 * math.pi / self.m

    @property
    def mean_value(self):
        return self.k * self.m / (4.0 * math.pi)

    @property
    def sigmas(self):
        s1, s2 = self.sigma
        return (-s1 - s2, s1, s2)

    @property
    def tau(self):
        """Single lattice: (1/m) e^zeta e^(-m/2F). Triple lattice: (1/m) e^zeta e^(-3km/4pi)."""
        if self.lattice == "single":
            return math.exp(self.zeta - self.m / (2.0 * self.F)) / self.m
        return math.exp(self.zeta - 3.0 * self.mean_value) / self.m

    def points(self):
        if self.lattice == "single":
            return [(0.0, 0.0)]
        return [(0.0, 0.0), (0.5 * self.period_x, 0.0), (0.0, 0.5 * self.period_y)]

    def to_dict(self):
        return {"k": self.k, "m": self.m, "lattice": self.lattice, "zeta": self.zeta,
                "sigma": list(self.sigma), "F": self.F, "delta": self.delta, "tau": self.tau}


# ---------------------------------------------------------------------------
# cutoff derivatives


def _step_derivs(x):
    """Smooth step of ld_fourier and its first two derivatives."""
    x = np.asarray(x, dtype=float)
    inside = (x > -1.0) & (x < 1.0)
    xi = np.where(inside, x, 0.0)
    a = 1.0 + xi
    b = 1.0 - xi
    ha = np.exp(-1.0 / a)
    hb = np.exp(-1.0 / b)
    S = ha + hb
    s = np.where(x >= 1.0, 1.0, np.where(inside, ha / S, 0.0))
    q = ha * hb / S ** 2
    p = 1.0 / a ** 2 + 1.0 / b ** 2
    dp = -2.0 / a ** 3 + 2.0 / b ** 3
    dq = q * ((1.0 / a ** 2 - 1.0 / b ** 2) - 2.0 * (ha / a ** 2 - hb / b ** 2) / S)
    d1 = np.where(inside, q * p, 0.0)
    d2 = np.where(inside, dq * p + q * dp, 0.0)
    return s, d1, d2


def cutoff_derivs(a, b, d):
    """cutoff(a, b, d) with its first and second d-derivatives."""
    scale = 6.0 / (b - a)
    s, d1, d2 = _step_derivs(-3.0 + scale * (np.asarray(d, dtype=float) - a))
    return s, scale * d1, scale * scale * d2


def _green4(r):
    return radial_green(4.0, r)


def _green4_deriv(r):
    r = np.asarray(r, dtype=float)
    return -math.pi * special.y1(2.0 * r) + 2.0 * EULER_GAMMA * special.j1(2.0 * r)


# ---------------------------------------------------------------------------
# unit LD solution by exact y-modes


def _default_modes(mu0, eps):
    return int(min(max(64, math.ceil(1.0 / (mu0 * math.sqrt(eps)))), 20000))


class TorusField:
    """Unit LD solution Phi for the k x m lattice through (0, 0)."""

    def __init__(self, k, m, n_modes=None, eps=1e-11):
        _check_k(k)
        self.k = int(k)
        self.m = int(m)
        self.g = angle_g(k)
        self.Lx = SQRT2 * math.pi / k
        self.Ly = SQRT2 * math.pi / m
        self.h = 0.5 * self.Lx
        self.mu0 = 2.0 * math.pi / self.Ly
        self.delta = 1.0 / (100.0 * m)
        self.C = m / (2.0 * SQRT2 * math.sin(self.g))
        self.n_modes = n_modes or _default_modes(self.mu0, eps)
        n = np.arange(1, self.n_modes + 1, dtype=float)
        self.beta = np.sqrt((n * self.mu0) ** 2 - 4.0)
        self.coef = -self.mu0 / (self.beta * -np.expm1(-2.0 * self.beta * self.h))
        self._w0 = None

    # coordinates

    def reduce(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x = np.mod(x + self.h, self.Lx) - self.h
        y = np.mod(y + 0.5 * self.Ly, self.Ly) - 0.5 * self.Ly
        return x, y

    def distance_to_circles(self, x):
        x, _ = self.reduce(x, 0.0)
        return np.abs(x)

    def distance_to_points(self, x, y):
        x, y = self.reduce(x, y)
        return np.hypot(x, y)

    # pieces

    def average(self, x):
        d = self.distance_to_circles(x)
        return self.C * np.cos(self.g - 2.0 * d)

    def mode_correction(self, x):
        """w_n(|x|) for n = 1..N as an array of shape x.shape + (N,)."""
        d = self.distance_to_circles(x)[..., None]
        n = np.arange(1, self.n_modes + 1, dtype=float)
        u = self.coef * (np.exp(-self.beta * d) + np.exp(-self.beta * (2.0 * self.h - d)))
        return u + np.exp(-n * self.mu0 * d) / n

    def w0_sum(self):
        """sum_n w_n(0), summed far beyond the field truncation."""
        if self._w0 is None:
            n = np.arange(1, 2_000_001, dtype=float)
            beta = np.sqrt((n * self.mu0) ** 2 - 4.0)
            ratio = self.mu0 / beta
            # 1/n - mu0/beta computed without cancellation
            diff = -4.0 / (n * beta * (n * self.mu0 + beta))
            img = ratio * np.exp(-2.0 * beta * self.h) / -np.expm1(-2.0 * beta * self.h)
            self._w0 = float(np.sum(diff - 2.0 * img))
        return self._w0

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        shape = x.shape
        xr, yr = self.reduce(x.ravel(), y.ravel())
        d = np.abs(xr)
        with np.errstate(divide="ignore"):
            out = self.C * np.cos(self.g - 2.0 * d) + flat_osc(self.mu0 * d, self.mu0 * yr)
        out = out + kernels.torus_mode_sum(d, self.mu0 * yr, self.mu0, self.beta, self.coef, self.h)
        return out.reshape(shape)

    def grid(self, x, y):
        """Phi on the tensor grid x (nx) by y (ny), shape (nx, ny)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xr, _ = self.reduce(x, 0.0)
        _, yr = self.reduce(0.0, y)
        d = np.abs(xr)
        W = self.mode_correction(d)
        n = np.arange(1, self.n_modes + 1, dtype=float)
        Cy = np.cos(np.outer(n * self.mu0, yr))
        with np.errstate(divide="ignore"):
            flat = flat_osc(self.mu0 * d[:, None], self.mu0 * yr[None, :])
        avg = self.C * np.cos(self.g - 2.0 * d)
        return avg[:, None] + flat + W @ Cy

    def regular_value(self):
        """lim (Phi - log r) at a lattice point."""
        return self.C * math.cos(self.g) + math.log(self.mu0) + self.w0_sum()

    # decomposition Phi = G_hat + Phi_hat + Phi'

    def g_hat(self, x, y):
        xr, yr = self.reduce(x, y)
        r = np.hypot(xr, yr)
        out = np.zeros(np.broadcast(xr, yr).shape)
        near = r < 3.0 * self.delta
        if np.any(near):
            rn = r[near]
            with np.errstate(divide="ignore"):
                f = _green4(rn) - math.log(self.delta) * np.cos(2.0 * np.broadcast_to(xr, r.shape)[near])
            out[near] = (1.0 - cutoff(2.0 * self.delta, 3.0 * self.delta, rn)) * f
        return out

    def phi_hat(self, x):
        d = self.distance_to_circles(x)
        c = cutoff(2.0 / self.m, 3.0 / self.m, d)
        return self.C * np.cos(self.g - 2.0 * d) - (1.0 - c) * self.m / (2.0 * SQRT2) * np.sin(2.0 * d)

    def phi_prime(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        r = self.distance_to_points(x, y)
        out = np.empty(x.shape)
        at = r == 0.0
        if np.any(~at):
            xs, ys = x[~at], y[~at]
            out[~at] = self(xs, ys) - self.g_hat(xs, ys) - self.phi_hat(xs)
        out[at] = self.phi_prime_at_point()
        return out

    def phi_prime_at_point(self):
        """Phi'(p) = log(mu0 delta) + sum_n w_n(0)."""
        return math.log(self.mu0 * self.delta) + self.w0_sum()

    # E' = -L~(G_hat + Phi_hat)

    def _e_ghat_polar(self, r, cos_t, sin_t):
        c, c1, c2 = cutoff_derivs(2.0 * self.delta, 3.0 * self.delta, r)
        x = r * cos_t
        ld = math.log(self.delta)
        f = _green4(r) - ld * np.cos(2.0 * x)
        fr = _green4_deriv(r) + 2.0 * ld * np.sin(2.0 * x) * cos_t
        return (f * (c2 + c1 / r) + 2.0 * c1 * fr) / self.m ** 2

    def e_prime_hat(self, x):
        """Part of E' produced by Phi_hat; depends on the distance to the circles only."""
        d = self.distance_to_circles(x)
        c, c1, c2 = cutoff_derivs(2.0 / self.m, 3.0 / self.m, d)
        hh = self.m / (2.0 * SQRT2) * np.sin(2.0 * d)
        dh = self.m / SQRT2 * np.cos(2.0 * d)
        return -(c2 * hh + 2.0 * c1 * dh) / self.m ** 2

    def e_prime(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        xr, yr = self.reduce(x, y)
        r = np.hypot(xr, yr)
        out = np.array(self.e_prime_hat(xr), dtype=float, ndmin=1).reshape(x.shape)
        band = (r > 2.0 * self.delta) & (r < 3.0 * self.delta)
        if np.any(band):
            rb = r[band]
            out[band] += self._e_ghat_polar(rb, xr[band] / rb, yr[band] / rb)
        return out

    def e_prime_avg(self, x, nodes=96):
        """y-average of E' on the circle at abscissa x."""
        d = float(self.distance_to_circles(x))
        val = float(self.e_prime_hat(d))
        r1, r2 = self.band()
        if d < r2:
            ylo = math.sqrt(max(r1 * r1 - d * d, 0.0))
            yhi = math.sqrt(r2 * r2 - d * d)
            t, w = np.polynomial.legendre.leggauss(nodes)
            yy = ylo + 0.5 * (yhi - ylo) * (t + 1.0)
            rr = np.hypot(d, yy)
            e = self._e_ghat_polar(rr, d / rr, yy / rr)
            val += 2.0 / self.Ly * 0.5 * (yhi - ylo) * float(np.dot(w, e))
        return val

    def band(self):
        """Radii between which the cutoff of G_hat is not locally constant."""
        return 2.0 * self.delta + self.delta / 3.0, 2.0 * self.delta + 2.0 * self.delta / 3.0

    def hat_band(self):
        return 2.0 / self.m + 1.0 / (3.0 * self.m), 2.0 / self.m + 2.0 / (3.0 * self.m)

    # diagnostics

    def operator_residual(self, x, y, step=1e-2):
        """(Delta_g~ + 4/m^2) Phi' - E' by a fourth-order stencil of scaled step ``step``."""
        h = step / self.m
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        wts = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
        offs = np.arange(-2, 3) * h
        lap = np.zeros(np.broadcast(x, y).shape)
        for o, wt in zip(offs, wts):
            lap = lap + wt * (self.phi_prime(x + o, y) + self.phi_prime(x, y + o))
        lap = lap / (h * h)
        return (lap + 4.0 * self.phi_prime(x, y)) / self.m ** 2 - self.e_prime(x, y)


# ---------------------------------------------------------------------------
# spectral solve of L~ Phi' = E'


class SpectralPhiPrime:
    """Phi' from E' sampled on a polar grid, expanded in the symmetric cosine basis.

    Modes with a y-frequency are divided by their eigenvalue; the y-average
    solves d^2u/dx~^2 + (4/m^2) u = E'_avg with even, periodic data.
    """

    def __init__(self, field: TorusField, kappa=8.0, nr=None, nth=None, tol=1e-10):
        self.field = field
        f = field
        self.kappa = float(kappa)
        kmax = self.kappa / f.delta
        a1 = 2.0 * math.pi / f.Lx
        b1 = 2.0 * math.pi / f.Ly
        self.J = int(math.ceil(kmax / a1))
        self.N = int(math.ceil(kmax / b1))
        self.a = a1 * np.arange(self.J + 1)
        self.b = b1 * np.arange(1, self.N + 1)
        r1, r2 = f.band()
        nr = nr or max(24, int(math.ceil(1.5 * self.kappa)) + 16)
        nth = nth or max(32, int(math.ceil(6.0 * self.kappa)) + 16)
        t, w = np.polynomial.legendre.leggauss(nr)
        r = r1 + 0.5 * (r2 - r1) * (t + 1.0)
        wr = 0.5 * (r2 - r1) * w
        th = (np.arange(nth) + 0.5) * (0.5 * math.pi / nth)
        R, TH = np.meshgrid(r, th, indexing="ij")
        weight = 4.0 * (0.5 * math.pi / nth) * (wr[:, None] * R)
        ct, st = np.cos(TH), np.sin(TH)
        E = f._e_ghat_polar(R, ct, st)
        px = (R * ct).ravel()
        py = (R * st).ravel()
        we = (weight * E).ravel()
        eps_j = np.where(np.arange(self.J + 1) == 0, 1.0, 2.0)
        Ax = np.cos(np.outer(self.a, px)) * we[None, :]
        By = np.cos(np.outer(self.b, py))
        self.E_coef = (Ax @ By.T) * (eps_j[:, None] * 2.0 / (f.Lx * f.Ly))
        lam = clifford_eigenvalue(f.k, f.m, 2 * np.arange(self.J + 1)[:, None], 2 * np.arange(1, self.N + 1)[None, :])
        if np.max(lam) >= 0.0:
            raise CliffordError("non-negative eigenvalue among the oscillatory modes")
        self.coef = self.E_coef / lam
        self._solve_average(tol)

    def _solve_average(self, tol):
        f = self.field
        m2 = f.m ** 2
        breaks = sorted({0.0, f.band()[1], *f.hat_band(), f.h})
        breaks = [b for b in breaks if b <= f.h]

        r2 = f.band()[1]
        h1, h2 = f.hat_band()

        def rhs(x, u):
            src = m2 * f.e_prime_avg(x) if (x < r2 or h1 < x < h2) else 0.0
            return [u[1], -4.0 * u[0] + src]

        sols = []
        y0 = [0.0, 0.0]
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            sol = solve_ivp(rhs, (lo, hi), y0, method="DOP853", rtol=tol, atol=tol * 1e-3,
                            dense_output=True, max_step=(hi - lo) / 8.0)
            sols.append((lo, hi, sol.sol))
            y0 = sol.y[:, -1]
        self._pieces = sols
        # even solution cos(2x) fixes u'(h) = 0
        self._A = y0[1] / (2.0 * math.sin(2.0 * f.h))

    def average(self, x):
        f = self.field
        d = np.atleast_1d(f.distance_to_circles(x))
        out = self._A * np.cos(2.0 * d)
        for lo, hi, s in self._pieces:
            sel = (d >= lo) & (d <= hi)
            if np.any(sel):
                out[sel] += s(d[sel])[0]
        return out

    def average_from_modes(self, x, nodes=256, j_max=None):
        """The same average part from the n = 0 cosine coefficients; a cross-check."""
        f = self.field
        d = np.atleast_1d(f.distance_to_circles(x))
        t, w = np.polynomial.legendre.leggauss(nodes)
        xs, ws = [], []
        for lo, hi in ((0.0, f.band()[0]), f.band(), f.hat_band()):
            xs.append(lo + 0.5 * (hi - lo) * (t + 1.0))
            ws.append(0.5 * (hi - lo) * w)
        xs = np.concatenate(xs)
        ws = np.concatenate(ws) * np.array([f.e_prime_avg(v) for v in xs])
        j = np.arange((j_max or 16 * self.J) + 1)
        aj = 2.0 * math.pi * j / f.Lx
        cj = np.where(j == 0, 1.0, 2.0) * 2.0 / f.Lx * (np.cos(np.outer(aj, xs)) @ ws)
        cj = cj / clifford_eigenvalue(f.k, f.m, 2 * j, 0)
        return np.cos(np.outer(d, aj)) @ cj

    def oscillatory(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        xr, yr = self.field.reduce(x.ravel(), y.ravel())
        Cx = np.cos(np.outer(xr, self.a))
        Cy = np.cos(np.outer(yr, self.b))
        return np.einsum("pj,jn,pn->p", Cx, self.coef, Cy).reshape(x.shape)

    def grid(self, x, y):
        f = self.field
        xr, _ = f.reduce(np.asarray(x, dtype=float), 0.0)
        _, yr = f.reduce(0.0, np.asarray(y, dtype=float))
        osc = np.cos(np.outer(xr, self.a)) @ self.coef @ np.cos(np.outer(self.b, yr))
        return self.average(xr)[:, None] + osc

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self.average(x.ravel()).reshape(x.shape) + self.oscillatory(x, y)

    def mean(self):
        """Torus average of Phi' from the ODE solution."""
        f = self.field
        total = 0.0
        for lo, hi, s in self._pieces:
            total += quad(lambda t: s(t)[0], lo, hi, limit=200, epsabs=1e-13)[0]
        total += self._A * math.sin(2.0 * f.h) / 2.0
        return total / f.h


def mean_value_decomposition(field: TorusField, spectral: Optional[SpectralPhiPrime] = None):
    """Torus average of Phi = G_hat + Phi_hat + Phi' term by term."""
    f = field
    spectral = spectral or SpectralPhiPrime(f)
    r1, r2 = f.band()
    ld = math.log(f.delta)

    def ghat_radial(r):
        c = cutoff(2.0 * f.delta, 3.0 * f.delta, r)
        return (1.0 - c) * (_green4(r) - ld * special.j0(2.0 * r)) * r

    g_int = quad(ghat_radial, 0.0, r1, limit=200)[0] + quad(ghat_radial, r1, r2, limit=200)[0]
    g_mean = 2.0 * math.pi * g_int / (f.Lx * f.Ly)
    pts = sorted({0.0, *f.hat_band(), f.h})
    h_int = sum(quad(lambda t: float(f.phi_hat(t)), lo, hi, limit=200)[0] for lo, hi in zip(pts[:-1], pts[1:]))
    h_mean = h_int / f.h
    p_mean = spectral.mean()
    return {"G_hat": g_mean, "Phi_hat": h_mean, "Phi_prime": p_mean, "total": g_mean + h_mean + p_mean,
            "expected": f.k * f.m / (4.0 * math.pi)}


# ---------------------------------------------------------------------------
# grids and mismatch


def fundamental_grid(field: TorusField, per_delta=16, per_unit=16, coarse=0.25):
    """Tensor grid on [0, Lx/2] x [0, Ly/2]: fine near the point, scaled-uniform near the circle."""
    f = field
    d = f.delta
    inv = 1.0 / f.m

    def axis(end):
        parts = [np.linspace(0.0, min(4.0 * d, end), per_delta * 4 + 1)]
        if end > 4.0 * d:
            hi = min(4.0 * inv, end)
            parts.append(np.linspace(4.0 * d, hi, max(2, int(math.ceil((hi - 4.0 * d) / (inv / per_unit)))) + 1))
        if end > 4.0 * inv:
            parts.append(np.linspace(4.0 * inv, end, max(2, int(math.ceil((end - 4.0 * inv) / (coarse * inv)))) + 1))
        return np.unique(np.concatenate(parts))

    return axis(f.h), axis(0.5 * f.Ly)


def clifford_phi(k, m, lattice="single", sigma=(0.0, 0.0), spectral=True, kappa=8.0, grid=None):
    """Phi and its decomposition on a fundamental-domain grid.

    For the triple lattice Phi = sum_i e^sigma_i Phi_i with Phi_i the unit
    solution translated to p_i.
    """
    cfg = CliffordConfig(k, m, lattice=lattice, sigma=sigma)
    f = TorusField(k, m)
    x, y = grid if grid is not None else fundamental_grid(f)
    X, Y = np.meshgrid(x, y, indexing="ij")
    weights = [1.0] if lattice == "single" else [math.exp(s) for s in cfg.sigmas]
    Phi = np.zeros_like(X)
    G = np.zeros_like(X)
    H = np.zeros_like(X)
    for wgt, (px, py) in zip(weights, cfg.points()):
        Phi_i = f.grid(x - px, y - py)
        G += wgt * f.g_hat(X - px, Y - py)
        H += wgt * f.phi_hat(X - px)
        Phi += wgt * Phi_i
    r = np.min([np.hypot(*f.reduce(X - px, Y - py)) for px, py in cfg.points()], axis=0)
    singular = r == 0.0
    with np.errstate(invalid="ignore"):
        P = Phi - G - H
    out = {"config": cfg, "x": x, "y": y, "Phi": Phi, "G_hat": G, "Phi_hat": H, "Phi_prime": P,
           "singular": singular}
    if lattice == "single":
        P[singular] = f.phi_prime_at_point()
        if spectral:
            sp = SpectralPhiPrime(f, kappa=kappa)
            out["Phi_prime_spectral"] = sp.grid(x, y)
            out["spectral"] = sp
    out["field"] = f
    return out


def sup_phi_prime(k, m, **kw):
    res = clifford_phi(k, m, spectral=False, **kw)
    return float(np.max(np.abs(res["Phi_prime"])))


def _circle_regular_value(field: TorusField, center=(0.0, 0.0), others=(), r0=None, nodes=64):
    """lim (Phi - log r) at a lattice point from circle averages at three radii.

    The circle average equals A + c r^2 log r + d r^2 + O(r^4 log r); three
    radii determine (A, c, d).
    """
    r0 = r0 or field.delta / 4.0
    th = 2.0 * math.pi * (np.arange(nodes) + 0.5) / nodes
    radii = np.array([r0, r0 / 2.0, r0 / 4.0])
    avgs = []
    for r in radii:
        xs = center[0] + r * np.cos(th)
        ys = center[1] + r * np.sin(th)
        avgs.append(np.mean(field(xs, ys)) - math.log(r))
    M = np.column_stack([np.ones(3), radii ** 2 * np.log(radii), radii ** 2])
    return float(np.linalg.solve(M, np.array(avgs))[0])


def clifford_mismatch(cfg: CliffordConfig, method="series"):
    """Mismatch data of the LD solution of ``cfg``.

    method "series" uses the closed-form regular value at the point,
    "circle_extraction" recovers it from circle averages of Phi.
    """
    f = TorusField(cfg.k, cfg.m)
    if method == "series":
        A00 = f.regular_value()
    elif method == "circle_extraction":
        A00 = _circle_regular_value(f)
    else:
        raise CliffordError(f"unknown method {method!r}")
    phi_p = f.phi_prime_at_point()
    if cfg.lattice == "single":
        tau = cfg.tau
        mu = tau * (A00 + math.log(tau / 2.0))
        mu_over_tau = mu / tau
        return {
            "config": cfg.to_dict(),
            "method": method,
            "tau": tau,
            "mu": mu,
            "mu_over_tau": mu_over_tau,
            "phi_prime_p": phi_p,
            "regular_value": A00,
            "identity_residual": mu_over_tau - cfg.zeta - phi_p - math.log(50.0),
            "expansion": cfg.m / (2.0 * cfg.F) + math.log(tau / (2.0 * cfg.delta)) + phi_p,
            "Z": mu_over_tau,
            "zeta_gap": cfg.zeta - mu_over_tau,
        }
    pts = cfg.points()
    sig = cfg.sigmas
    tau_u = cfg.tau
    A = np.empty((3, 3))
    for i, (xi, yi) in enumerate(pts):
        for j, (xj, yj) in enumerate(pts):
            A[i, j] = A00 if i == j else float(f(xi - xj, yi - yj))
    ew = np.exp(sig)
    mu = np.array([A[i] @ ew + ew[i] * math.log(ew[i] * tau_u / 2.0) for i in range(3)])
    # bookkeeping with the decomposition Phi_j = G_hat_old + km/4pi + Phi'_j
    mean = cfg.mean_value
    old = A - mean
    old[np.diag_indices(3)] += math.log(cfg.delta)
    mu_formula = np.array([mean * ew.sum() + old[i] @ ew + ew[i] * math.log(ew[i] * tau_u / (2.0 * cfg.delta))
                           for i in range(3)])
    combos = (mu.sum() / 3.0, (2 * mu[2] - mu[1] - mu[0]) / 3.0, (2 * mu[1] - mu[2] - mu[0]) / 3.0)
    scale = 4.0 * math.pi / (3.0 * cfg.k * cfg.m)
    Z = (mu.sum() / 3.0, scale * (mu[0] + mu[2] - 2 * mu[1]) / 3.0, scale * (mu[0] + mu[1] - 2 * mu[2]) / 3.0)
    return {
        "config": cfg.to_dict(),
        "method": method,
        "tau": tau_u,
        "mu": mu.tolist(),
        "mu_formula": mu_formula.tolist(),
        "regular_values": A.tolist(),
        "phi_prime_old": old.tolist(),
        "average": combos[0],
        "split_2": combos[1],
        "split_1": combos[2],
        "Z": list(Z),
        "zeta_gap": [cfg.zeta - Z[0], cfg.sigma[0] - Z[1], cfg.sigma[1] - Z[2]],
    }
