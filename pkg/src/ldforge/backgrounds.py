"""Rotationally symmetric backgrounds written as data on the cylinder.

Every background is described by a potential V(s) and a conformal factor
omega(s) so that the Jacobi equation of the rotationally invariant problem
reads phi'' + V phi = 0 and the induced metric is e^{2 omega}(ds^2 + dtheta^2).
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline


class BackgroundId(str, Enum):
    SPHERE_IN_S3 = "SphereInS3"
    SPHERICAL_SHRINKER = "SphericalShrinker"
    CATENOID = "Catenoid"
    CRITICAL_CATENOID = "CriticalCatenoid"
    CLIFFORD_TORUS = "CliffordTorus"
    CUSTOM = "Custom"


# CLI spellings
ALIASES = {
    "sphere": BackgroundId.SPHERE_IN_S3,
    "sphere-in-s3": BackgroundId.SPHERE_IN_S3,
    "shrinker": BackgroundId.SPHERICAL_SHRINKER,
    "spherical-shrinker": BackgroundId.SPHERICAL_SHRINKER,
    "catenoid": BackgroundId.CATENOID,
    "critical-catenoid": BackgroundId.CRITICAL_CATENOID,
    "clifford": BackgroundId.CLIFFORD_TORUS,
    "clifford-torus": BackgroundId.CLIFFORD_TORUS,
    "custom": BackgroundId.CUSTOM,
}


class EndKind(str, Enum):
    SMOOTH_ENDS = "SmoothEnds"
    ROBIN = "Robin"
    PERIODIC = "Periodic"


@dataclass(frozen=True)
class EndCondition:
    kind: EndKind
    robin_root: Optional[float] = None

    def to_dict(self):
        out = {"kind": self.kind.value}
        if self.robin_root is not None:
            out["s_root"] = self.robin_root
        return out


class BackgroundError(ValueError):
    pass


@dataclass(frozen=True)
class ClosedBasis:
    """Two explicit solutions of phi'' + V phi = 0, each returning (value, derivative)."""
    even_solution: Callable
    end_solution: Callable


@dataclass(frozen=True)
class Background:
    id: BackgroundId
    half_length: float
    potential: Callable
    conformal_log: Callable
    conformal_log_deriv: Callable
    end_condition: EndCondition
    closed_basis: Optional[ClosedBasis] = None
    # beyond this |s| the potential is below 1e-16 and solutions are affine
    far_field: float = math.inf
    params: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.id.value

    def V(self, s):
        return self.potential(np.abs(s))

    def omega(self, s):
        return self.conformal_log(s)

    def domega(self, s):
        return self.conformal_log_deriv(s)

    @property
    def finite(self):
        return math.isfinite(self.half_length)


def _sech2(s):
    return 1.0 / np.cosh(np.clip(s, -350.0, 350.0)) ** 2


def _log_cosh(s):
    a = np.abs(s)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _bisect(f, a, b, xtol=1e-12, maxiter=200):
    fa = f(a)
    fb = f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise BackgroundError(f"no sign change on [{a}, {b}]")
    for _ in range(maxiter):
        c = 0.5 * (a + b)
        fc = f(c)
        if fc == 0.0 or 0.5 * (b - a) < xtol:
            return c
        if np.sign(fc) == np.sign(fa):
            a, fa = c, fc
        else:
            b = c
    return 0.5 * (a + b)


@functools.lru_cache(maxsize=None)
def critical_root() -> float:
    """Positive root of 1 - s tanh s, found once by bisection."""
    return _bisect(lambda s: 1.0 - s * math.tanh(s), 0.5, 2.0, xtol=1e-13)


def catenoid_even(s):
    s = np.asarray(s, dtype=float)
    t = np.tanh(s)
    return 1.0 - s * t, -t - s * _sech2(s)


def catenoid_odd(s):
    s = np.asarray(s, dtype=float)
    return np.tanh(s), _sech2(s)


def critical_basis(s):
    """phi_crit: the combination of the catenoid basis meeting the Robin flux condition."""
    r = critical_root()
    a = _sech2(r) - math.tanh(r) ** 2
    b = -float(catenoid_even(r)[1])
    e, de = catenoid_even(s)
    o, do = catenoid_odd(s)
    return a * e + b * o, a * de + b * do


def _smooth_params(V, omega, domega, bid, half_length, end, basis, far, params=None):
    return Background(bid, half_length, V, omega, domega, end, basis, far, dict(params or {}))


def make_background(bid, params: Optional[dict] = None) -> Background:
    if isinstance(bid, str) and not isinstance(bid, BackgroundId):
        key = bid.strip()
        if key.lower() in ALIASES:
            bid = ALIASES[key.lower()]
        else:
            try:
                bid = BackgroundId(key)
            except ValueError:
                raise BackgroundError(f"unknown background {bid!r}") from None
    params = params or {}
    smooth = EndCondition(EndKind.SMOOTH_ENDS)

    if bid is BackgroundId.CATENOID:
        return _smooth_params(
            lambda s: 2.0 * _sech2(s), _log_cosh, np.tanh, bid, math.inf, smooth,
            ClosedBasis(catenoid_even, catenoid_odd), 20.0)
    if bid is BackgroundId.SPHERE_IN_S3:
        return _smooth_params(
            lambda s: 2.0 * _sech2(s), lambda s: -_log_cosh(s), lambda s: -np.tanh(s),
            bid, math.inf, smooth, ClosedBasis(catenoid_even, catenoid_odd), 20.0)
    if bid is BackgroundId.SPHERICAL_SHRINKER:
        c = math.log(2.0) - 0.5
        return _smooth_params(
            lambda s: 4.0 * _sech2(s), lambda s: c - _log_cosh(s), lambda s: -np.tanh(s),
            bid, math.inf, smooth, None, 20.0)
    if bid is BackgroundId.CRITICAL_CATENOID:
        r = critical_root()
        c = math.log(1.0 / (math.cosh(r) * r))
        return _smooth_params(
            lambda s: 2.0 * _sech2(s), lambda s: c + _log_cosh(s), np.tanh, bid, r,
            EndCondition(EndKind.ROBIN, r), ClosedBasis(catenoid_even, critical_basis), math.inf)
    if bid is BackgroundId.CLIFFORD_TORUS:
        # s = sqrt(2) x, theta = sqrt(2) y on the flat Clifford torus
        q = math.sqrt(2.0)
        even = lambda s: (np.cos(q * np.asarray(s, float)), -q * np.sin(q * np.asarray(s, float)))
        odd = lambda s: (np.sin(q * np.asarray(s, float)) / q, np.cos(q * np.asarray(s, float)))
        return _smooth_params(
            lambda s: 2.0 + 0.0 * np.asarray(s, float),
            lambda s: -0.5 * math.log(2.0) + 0.0 * np.asarray(s, float),
            lambda s: 0.0 * np.asarray(s, float),
            bid, math.pi, EndCondition(EndKind.PERIODIC), ClosedBasis(even, odd), math.inf)
    if bid is BackgroundId.CUSTOM:
        return _custom(params)
    raise BackgroundError(f"unknown background {bid!r}")


def _parse_end(spec) -> EndCondition:
    if isinstance(spec, EndCondition):
        return spec
    if isinstance(spec, dict):
        kind = EndKind(spec.get("kind", "SmoothEnds"))
        return EndCondition(kind, spec.get("s_root"))
    text = str(spec)
    if text.startswith("Robin"):
        val = text[text.find("{") + 1: text.find("}")] if "{" in text else None
        return EndCondition(EndKind.ROBIN, float(val) if val else None)
    return EndCondition(EndKind(text))


def _custom(params: dict) -> Background:
    samples = np.asarray(params.get("samples"), dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 3 or len(samples) < 4:
        raise BackgroundError("custom background needs samples [[s, V, omega], ...]")
    s, V, om = samples.T
    if np.any(np.diff(s) <= 0):
        raise BackgroundError("sample abscissae must increase")
    if np.max(np.diff(s)) > 1e-3 + 1e-12:
        raise BackgroundError("sample spacing must be <= 1e-3")
    if np.any(V <= 0):
        raise BackgroundError("potential samples must be positive")
    end = _parse_end(params.get("end_condition", "SmoothEnds"))
    half = params.get("half_length", math.inf)
    half = math.inf if half in (None, "inf", "Infinity") else float(half)
    if end.kind is EndKind.ROBIN and end.robin_root is None:
        end = EndCondition(EndKind.ROBIN, half)
    Vs = CubicSpline(s, V)
    Os = CubicSpline(s, om)
    dOs = Os.derivative()
    smax = s[-1]

    def pot(x):
        x = np.abs(np.asarray(x, dtype=float))
        return np.where(x <= smax, Vs(np.minimum(x, smax)), 0.0)

    def omega(x):
        x = np.asarray(x, dtype=float)
        return Os(np.clip(np.abs(x), s[0], smax))

    def domega(x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * dOs(np.clip(np.abs(x), s[0], smax))

    far = smax if not math.isfinite(half) else math.inf
    return Background(BackgroundId.CUSTOM, half, pot, omega, domega, end, None, far,
                      {"samples_range": [float(s[0]), float(smax)]})


def load_custom(path) -> Background:
    with open(path) as fh:
        return make_background(BackgroundId.CUSTOM, json.load(fh))


# ---------------------------------------------------------------------------
# embeddings on the cylinder and Fermi charts


def embedding(bg: Background, s, theta):
    """Base surface X(s, theta) and unit normal nu, stacked on the last axis."""
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c, sn = np.cos(theta), np.sin(theta)
    bid = bg.id
    if bid in (BackgroundId.CATENOID, BackgroundId.CRITICAL_CATENOID):
        scale = 1.0
        if bid is BackgroundId.CRITICAL_CATENOID:
            r = critical_root()
            scale = 1.0 / (math.cosh(r) * r)
        ch = np.cosh(s)
        X = scale * np.stack([ch * c, ch * sn, s], axis=-1)
        nu = np.stack([c, sn, -np.sinh(s)], axis=-1) / ch[..., None]
        return X, nu
    if bid is BackgroundId.SPHERICAL_SHRINKER:
        sech = 1.0 / np.cosh(s)
        u = np.stack([sech * c, sech * sn, np.tanh(s)], axis=-1)
        return 2.0 * u, u
    if bid is BackgroundId.SPHERE_IN_S3:
        sech = 1.0 / np.cosh(s)
        X = np.stack([sech * c, sech * sn, np.tanh(s), np.zeros_like(s * c)], axis=-1)
        nu = np.zeros_like(X)
        nu[..., 3] = 1.0
        return X, nu
    if bid is BackgroundId.CLIFFORD_TORUS:
        a = 1.0 / math.sqrt(2.0)
        X = a * np.stack([np.cos(s), np.sin(s), c, sn], axis=-1)
        nu = a * np.stack([np.cos(s), np.sin(s), -c, -sn], axis=-1)
        return X, nu
    raise BackgroundError(f"no embedding for {bid.value}")


def ambient_of(bg: Background) -> str:
    if bg.id in (BackgroundId.SPHERE_IN_S3, BackgroundId.CLIFFORD_TORUS):
        return "S3"
    return "R3"


@dataclass(frozen=True)
class FermiChart:
    """map(u, v, z) -> ambient point; normal(u, v, z) -> unit normal to the z=0 slice."""
    background_id: BackgroundId
    map: Callable
    normal: Callable
    validity_radius: float
    base_point: tuple
    ambient_dim: int


def _sphere_chart(r, th, z):
    r, th, z = (np.asarray(a, dtype=float) for a in (r, th, z))
    cz = np.cos(z)
    return np.stack([np.sin(r) * np.cos(th) * cz, np.sin(r) * np.sin(th) * cz,
                     np.cos(r) * cz, np.sin(z) + 0.0 * r], axis=-1)


def _sphere_normal(r, th, z):
    r, th, z = (np.asarray(a, dtype=float) for a in (r, th, z))
    sz = np.sin(z)
    return np.stack([-np.sin(r) * np.cos(th) * sz, -np.sin(r) * np.sin(th) * sz,
                     -np.cos(r) * sz, np.cos(z) + 0.0 * r], axis=-1)


def _clifford_chart(x, y, z):
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    q = math.sqrt(2.0)
    a = np.sin(z + math.pi / 4)
    b = np.cos(z + math.pi / 4)
    return np.stack([a * np.cos(q * x), a * np.sin(q * x), b * np.cos(q * y), b * np.sin(q * y)], axis=-1)


def _clifford_normal(x, y, z):
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    q = math.sqrt(2.0)
    a = np.cos(z + math.pi / 4)
    b = -np.sin(z + math.pi / 4)
    return np.stack([a * np.cos(q * x), a * np.sin(q * x), b * np.cos(q * y), b * np.sin(q * y)], axis=-1)


def fermi_chart(bid) -> FermiChart:
    bg = make_background(bid) if not isinstance(bid, Background) else bid
    if bg.id is BackgroundId.SPHERE_IN_S3:
        return FermiChart(bg.id, _sphere_chart, _sphere_normal, math.pi / 2, (0.0, 0.0, 1.0, 0.0), 4)
    if bg.id is BackgroundId.CLIFFORD_TORUS:
        h = 1.0 / math.sqrt(2.0)
        return FermiChart(bg.id, _clifford_chart, _clifford_normal, math.pi / 4, (h, 0.0, h, 0.0), 4)
    if bg.id in (BackgroundId.CATENOID, BackgroundId.CRITICAL_CATENOID, BackgroundId.SPHERICAL_SHRINKER):

        def chart(s, th, z, _bg=bg):
            X, nu = embedding(_bg, s, th)
            return X + np.asarray(z, dtype=float)[..., None] * nu

        def normal(s, th, z, _bg=bg):
            return embedding(_bg, s, th)[1] + 0.0 * np.asarray(z, dtype=float)[..., None]

        X0 = embedding(bg, 0.0, 0.0)[0]
        # the offset chart is regular while |z| stays below the smallest curvature radius
        radius = 2.0 if bg.id is BackgroundId.SPHERICAL_SHRINKER else float(
            1.0 / (math.cosh(critical_root()) * critical_root())) if bg.id is BackgroundId.CRITICAL_CATENOID else 1.0
        return FermiChart(bg.id, chart, normal, radius, tuple(float(v) for v in X0), 3)
    raise BackgroundError(f"no Fermi chart for {bg.id.value}")
