"""Catenoidal bridges, tilts, glued initial-surface meshes and discrete curvature.

Charts map Fermi-type coordinates (x, y, z) about a base point p of a background
surface into the ambient space: (x, y) are g-orthonormal tangent coordinates
pushed through the exponential map of the surface, z is arclength along the
normal geodesic. Meshes live in R^3 or, for the S^3 backgrounds, in R^4.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import erf, erfinv

from . import kernels
from .backgrounds import Background, BackgroundId, embedding, make_background
from .ld_fourier import cutoff, transition

ALPHA_DEFAULT = 0.01
RING_STEP = 0.1
REGION_TAGS = ("graph+", "graph-", "gluing+", "gluing-", "bridge", "end")


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# catenoid profile


def varphi_cat(tau, r):
    """tau arccosh(r / tau): height of the upper catenoid sheet over the plane."""
    r = np.asarray(r, dtype=float)
    if tau <= 0:
        raise GeometryError("tau must be positive")
    if np.any(r < tau):
        raise GeometryError("varphi_cat needs r >= tau")
    out = tau * np.arccosh(r / tau)
    return float(out) if out.ndim == 0 else out


def varphi_cat_deriv(tau, r):
    r = np.asarray(r, dtype=float)
    if tau <= 0:
        raise GeometryError("tau must be positive")
    if np.any(r <= tau):
        raise GeometryError("the derivative of varphi_cat needs r > tau")
    out = tau / np.sqrt(r * r - tau * tau)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# tilts


@dataclass(frozen=True)
class TiltData:
    """Affine datum kappa_perp + kappa(.) on a tangent plane; kappa = (k1, k2) in the (x, y) frame."""
    normal_offset: float = 0.0
    slope: tuple = (0.0, 0.0)

    @property
    def slope_norm(self):
        return math.hypot(*self.slope)

    @property
    def norm(self):
        return abs(self.normal_offset) + self.slope_norm

    @property
    def angle(self):
        return math.atan(self.slope_norm)

    @property
    def axis(self):
        n = self.slope_norm
        if n == 0.0:
            return np.array([1.0, 0.0, 0.0])
        return np.array([self.slope[1], -self.slope[0], 0.0]) / n

    @property
    def coaxis(self):
        n = self.slope_norm
        if n == 0.0:
            return np.array([0.0, 1.0, 0.0])
        return np.array([self.slope[0], self.slope[1], 0.0]) / n

    def value(self, x, y):
        return self.normal_offset + self.slope[0] * np.asarray(x) + self.slope[1] * np.asarray(y)

    def admissible(self, tau, alpha=ALPHA_DEFAULT):
        return self.norm < tau ** (1.0 + alpha / 6.0)

    def to_dict(self):
        return {"normal_offset": self.normal_offset, "slope": list(self.slope)}


def tilt_rotation(slope) -> np.ndarray:
    """Rotation by arctan|kappa| about v = (k2, -k1, 0)/|kappa| (Rodrigues); identity for kappa = 0."""
    tilt = slope if isinstance(slope, TiltData) else TiltData(0.0, tuple(float(v) for v in slope))
    n = tilt.slope_norm
    if n == 0.0:
        return np.eye(3)
    th = tilt.angle
    v = tilt.axis
    K = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return math.cos(th) * np.eye(3) + math.sin(th) * K + (1.0 - math.cos(th)) * np.outer(v, v)


def tilted_catenoid(tau, tilt: TiltData, theta, s):
    """Points R_kappa X_cat(theta, s) + kappa_perp e_z with X_cat = tau (cosh s cos, cosh s sin, s)."""
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(s, dtype=float)
    ch = np.cosh(s)
    X = tau * np.stack([ch * np.cos(theta), ch * np.sin(theta), s + 0.0 * theta], axis=-1)
    Y = X @ tilt_rotation(tilt).T
    Y[..., 2] += tilt.normal_offset
    return Y


def tilted_catenoid_graph(tau, tilt: TiltData, x, y, sheet=1, iters=60):
    """Height over (x, y) of the upper (sheet=+1) or lower (sheet=-1) half of the tilted catenoid.

    Writing the catenoid point as a v + b v_perp + tau s e_z, the horizontal
    constraint fixes a and expresses b through s, leaving one equation in s.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    th = tilt.angle
    v, vp = tilt.axis[:2], tilt.coaxis[:2]
    a = v[0] * x + v[1] * y
    c = vp[0] * x + vp[1] * y
    ct, st = math.cos(th), math.sin(th)
    r = np.hypot(x, y)
    if np.any(r <= tau * (1.0 + 2.0 * tilt.slope_norm)):
        raise GeometryError("graph point inside the catenoid waist")
    s = sheet * np.arccosh(np.maximum(r / tau, 1.0 + 1e-12))
    for _ in range(iters):
        b = (c + tau * s * st) / ct
        f = a * a + b * b - (tau * np.cosh(s)) ** 2
        df = 2.0 * b * tau * st / ct - 2.0 * tau * tau * np.cosh(s) * np.sinh(s)
        step = f / df
        s = s - step
        if np.max(np.abs(step)) < 1e-15 * max(1.0, float(np.max(np.abs(s)))):
            break
    b = (c + tau * s * st) / ct
    return b * st + tau * s * ct + tilt.normal_offset


# ---------------------------------------------------------------------------
# charts


class PlaneChart:
    """Identity chart of Euclidean R^3 about the origin; the base surface is the plane z = 0."""
    ambient_dim = 3
    validity_radius = math.inf

    def __call__(self, x, y, z):
        x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
        return np.stack([x, y, z], axis=-1)

    def base_normal(self, x, y):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (3,))
        out[..., 2] = 1.0
        return out


def _shrinker_radius(z):
    """Euclidean radius at g-distance z along a ray normal to the radius-2 sphere, g = e^{-|x|^2/4} delta."""
    return 2.0 * math.sqrt(2.0) * erfinv(np.asarray(z, dtype=float) / math.sqrt(2.0 * math.pi)
                                         + erf(1.0 / math.sqrt(2.0)))


def _injectivity(bg: Background):
    if bg.id is BackgroundId.SPHERE_IN_S3:
        return math.pi
    if bg.id is BackgroundId.SPHERICAL_SHRINKER:
        return math.pi * 2.0 * math.exp(-0.5)
    if bg.id is BackgroundId.CLIFFORD_TORUS:
        return math.pi / math.sqrt(2.0)
    if bg.id is BackgroundId.CATENOID:
        return math.pi
    if bg.id is BackgroundId.CRITICAL_CATENOID:
        return math.exp(float(bg.omega(0.0))) * math.pi
    raise GeometryError(f"no chart for {bg.id.value}")


def normal_point(bg: Background, theta, s, z):
    """End point of the normal geodesic of length z from X(theta, s)."""
    X, nu = embedding(bg, s, theta)
    z = np.asarray(z, dtype=float)[..., None]
    if bg.id in (BackgroundId.SPHERE_IN_S3, BackgroundId.CLIFFORD_TORUS):
        return np.cos(z) * X + np.sin(z) * nu
    if bg.id is BackgroundId.SPHERICAL_SHRINKER:
        return _shrinker_radius(z) * nu
    return X + z * nu


def exp_map(bg: Background, theta_p, s_p, x, y, tol=1e-11):
    """(theta, s) = exp_p(x e_theta + y e_s) on the surface with metric e^{2 omega}(ds^2 + dtheta^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast(x, y).shape
    x = np.broadcast_to(x, shape).ravel()
    y = np.broadcast_to(y, shape).ravel()
    lam = math.exp(-float(bg.omega(s_p)))
    if bg.id is BackgroundId.CLIFFORD_TORUS:
        return (theta_p + lam * x).reshape(shape), (s_p + lam * y).reshape(shape)
    n = x.size

    def rhs(t, u):
        th, s, dth, ds = u[:n], u[n:2 * n], u[2 * n:3 * n], u[3 * n:]
        w = bg.domega(s)
        return np.concatenate([dth, ds, -2.0 * w * dth * ds, -w * (ds * ds - dth * dth)])

    u0 = np.concatenate([np.full(n, float(theta_p)), np.full(n, float(s_p)), lam * x, lam * y])
    sol = solve_ivp(rhs, (0.0, 1.0), u0, method="DOP853", rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise GeometryError(f"geodesic integration failed: {sol.message}")
    u = sol.y[:, -1]
    return u[:n].reshape(shape), u[n:2 * n].reshape(shape)


class NormalChart:
    """(x, y, z) -> normal geodesic of length z from exp_p(x, y) on a background surface."""

    def __init__(self, bg, theta_p=0.0, s_p=0.0):
        self.bg = make_background(bg) if not isinstance(bg, Background) else bg
        self.theta_p = float(theta_p)
        self.s_p = float(s_p)
        self.validity_radius = _injectivity(self.bg)
        self.ambient_dim = 4 if self.bg.id in (BackgroundId.SPHERE_IN_S3, BackgroundId.CLIFFORD_TORUS) else 3
        if self.bg.id is BackgroundId.CRITICAL_CATENOID:
            # distance to the free boundary
            from .backgrounds import critical_root
            r = critical_root()
            c = math.exp(float(self.bg.omega(0.0)))
            self.validity_radius = min(self.validity_radius,
                                       c * abs(math.sinh(r) - math.sinh(abs(self.s_p))))

    def tangent(self, x, y):
        r = np.hypot(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if np.any(r >= self.validity_radius):
            raise GeometryError(f"tangent radius {float(np.max(r)):.4g} exceeds the chart "
                                f"validity radius {self.validity_radius:.4g}")
        return exp_map(self.bg, self.theta_p, self.s_p, x, y)

    @property
    def round(self):
        return self.bg.id in (BackgroundId.SPHERE_IN_S3, BackgroundId.SPHERICAL_SHRINKER)

    def _unit(self, x, y):
        """Unit vector of exp_p(x, y) for the round backgrounds (great circles, no pole singularity)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        if np.any(r >= self.validity_radius):
            raise GeometryError(f"tangent radius {float(np.max(r)):.4g} exceeds the chart "
                                f"validity radius {self.validity_radius:.4g}")
        a = math.exp(float(self.bg.omega(self.s_p))) * math.cosh(self.s_p)
        th, sp = self.theta_p, self.s_p
        u0 = np.array([math.cos(th) / math.cosh(sp), math.sin(th) / math.cosh(sp), math.tanh(sp)])
        et = np.array([-math.sin(th), math.cos(th), 0.0])
        es = np.array([-math.tanh(sp) * math.cos(th), -math.tanh(sp) * math.sin(th), 1.0 / math.cosh(sp)])
        ang = r / a
        sinc = np.where(r > 0, np.sin(ang) / np.where(r > 0, r, 1.0), 1.0 / a)
        return (np.cos(ang)[..., None] * u0 + sinc[..., None] * (x[..., None] * et + y[..., None] * es))

    def __call__(self, x, y, z):
        if self.round:
            u = self._unit(x, y)
            z = np.broadcast_to(np.asarray(z, dtype=float), u.shape[:-1])[..., None]
            if self.bg.id is BackgroundId.SPHERICAL_SHRINKER:
                return _shrinker_radius(z) * u
            e4 = np.zeros(u.shape[:-1] + (1,))
            return np.cos(z) * np.concatenate([u, e4], axis=-1) + np.sin(z) * np.concatenate([0 * u, 1 + e4], axis=-1)
        th, s = self.tangent(x, y)
        return normal_point(self.bg, th, s, np.broadcast_to(np.asarray(z, dtype=float), th.shape))

    def base_normal(self, x, y):
        if self.round:
            u = self._unit(x, y)
            if self.bg.id is BackgroundId.SPHERICAL_SHRINKER:
                return u
            out = np.zeros(u.shape[:-1] + (4,))
            out[..., 3] = 1.0
            return out
        th, s = self.tangent(x, y)
        return embedding(self.bg, s, th)[1]


# ---------------------------------------------------------------------------
# meshes


@dataclass
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray  # index into REGION_TAGS
    normals: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def ambient_dim(self):
        return self.vertices.shape[1]

    def tag_names(self):
        return np.array(REGION_TAGS)[self.tags]

    def mask(self, tag):
        return self.tags == REGION_TAGS.index(tag)

    def edges(self):
        T = self.triangles
        e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        return e

    def boundary_edges(self):
        e = self.edges()
        key = np.sort(e, axis=1)
        _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return e[cnt[inv.ravel()] == 1]

    def boundary_vertices(self):
        out = np.zeros(self.n_vertices, dtype=bool)
        out[self.boundary_edges().ravel()] = True
        return out

    def euler_characteristic(self):
        key = np.unique(np.sort(self.edges(), axis=1), axis=0)
        return self.n_vertices - len(key) + len(self.triangles)

    def orientation_consistent(self):
        """Every interior edge is traversed once in each direction."""
        e = self.edges()
        key = np.sort(e, axis=1)
        sign = np.where(e[:, 0] < e[:, 1], 1, -1)
        _, inv = np.unique(key, axis=0, return_inverse=True)
        tot = np.zeros(inv.max() + 1, dtype=int)
        cnt = np.zeros_like(tot)
        np.add.at(tot, inv.ravel(), sign)
        np.add.at(cnt, inv.ravel(), 1)
        return bool(np.all(cnt <= 2) and np.all(tot[cnt == 2] == 0))

    def triangle_normals(self):
        X = self.vertices
        T = self.triangles
        a, b, c = X[T[:, 0]], X[T[:, 1]], X[T[:, 2]]
        if self.ambient_dim == 3:
            return np.cross(b - a, c - a)
        return cross4((a + b + c) / 3.0, b - a, c - a)

    def compute_normals(self):
        N = np.zeros_like(self.vertices)
        tn = self.triangle_normals()
        for c in range(3):
            np.add.at(N, self.triangles[:, c], tn)
        nrm = np.linalg.norm(N, axis=1)
        if np.any(nrm == 0):
            raise GeometryError("vertex with vanishing normal")
        self.normals = N / nrm[:, None]
        return self.normals

    def normals_aligned(self):
        tn = self.triangle_normals()
        n = self.normals
        ok = np.ones(len(tn), dtype=bool)
        for c in range(3):
            ok &= np.einsum("ij,ij->i", tn, n[self.triangles[:, c]]) > 0
        return bool(np.all(ok))

    def duplicate_vertices(self):
        _, cnt = np.unique(self.vertices, axis=0, return_counts=True)
        return int(np.sum(cnt > 1))

    def to_obj(self, path):
        write_obj(self, path)


def cross4(a, b, c):
    """Vector orthogonal to a, b, c in R^4 with det(a, b, c, n) > 0."""
    M = np.stack([a, b, c], axis=-2)
    out = np.empty(a.shape[:-1] + (4,))
    for i in range(4):
        cols = [j for j in range(4) if j != i]
        out[..., i] = (-1) ** (i + 1) * np.linalg.det(M[..., cols])
    return -out


def merge(parts: Sequence[SurfaceMesh]) -> SurfaceMesh:
    V, T, G = [], [], []
    off = 0
    for p in parts:
        V.append(p.vertices)
        T.append(p.triangles + off)
        G.append(p.tags)
        off += p.n_vertices
    return SurfaceMesh(np.concatenate(V), np.concatenate(T), np.concatenate(G))


def grid_triangles(n_rows, n_cols, periodic_cols=True, flip=False, offset=0):
    """Two triangles per cell of a row-major (rows, cols) vertex grid."""
    r = np.arange(n_rows - 1)[:, None]
    cmax = n_cols if periodic_cols else n_cols - 1
    c = np.arange(cmax)[None, :]
    c1 = (c + 1) % n_cols
    a = r * n_cols + c
    b = r * n_cols + c1
    d = (r + 1) * n_cols + c
    e = (r + 1) * n_cols + c1
    t1 = np.stack([a, b, e], axis=-1).reshape(-1, 3)
    t2 = np.stack([a, e, d], axis=-1).reshape(-1, 3)
    T = np.concatenate([t1, t2])
    if flip:
        T = T[:, ::-1]
    return T + offset


# ---------------------------------------------------------------------------
# bridges


def bridge_extent(tau, alpha=ALPHA_DEFAULT):
    """s_max with tau cosh s_max = 2 tau^alpha."""
    return math.acosh(2.0 * tau ** (alpha - 1.0))


def meridian_count(ds=RING_STEP, dtheta=None):
    dtheta = ds if dtheta is None else dtheta
    return 4 * max(16, int(math.ceil(2.0 * math.pi / dtheta)))


@dataclass
class BridgeGrid:
    """Structured bridge: points[i, j] at s[i], theta[j]; chart coordinates kept for diagnostics."""
    s: np.ndarray
    theta: np.ndarray
    points: np.ndarray
    local: np.ndarray
    tau: float
    tilt: TiltData

    @property
    def radius(self):
        return self.tau * np.cosh(self.s)


def bridge_grid(chart, tau, tilt: Optional[TiltData] = None, alpha=ALPHA_DEFAULT, ds=RING_STEP,
                n_theta=None, s_max=None) -> BridgeGrid:
    tilt = tilt or TiltData()
    S = bridge_extent(tau, alpha) if s_max is None else float(s_max)
    n_s = int(math.ceil(2.0 * S / ds)) + 1
    s = np.linspace(-S, S, n_s)
    n_theta = meridian_count(ds) if n_theta is None else int(n_theta)
    theta = 2.0 * math.pi * np.arange(n_theta) / n_theta
    local = tilted_catenoid(tau, tilt, theta[None, :], s[:, None])
    rmax = float(np.max(np.hypot(local[..., 0], local[..., 1])))
    if rmax >= chart.validity_radius:
        raise GeometryError(f"bridge radius {rmax:.4g} exceeds the chart validity radius "
                            f"{chart.validity_radius:.4g}")
    pts = chart(local[..., 0], local[..., 1], local[..., 2])
    return BridgeGrid(s, theta, pts, local, tau, tilt)


def bridge_mesh(chart, tau, tilt: Optional[TiltData] = None, alpha=ALPHA_DEFAULT, ds=RING_STEP,
                n_theta=None, s_max=None) -> SurfaceMesh:
    """X_K = chart(R_kappa X_cat + kappa_perp e_z) over tau cosh s <= 2 tau^alpha."""
    g = bridge_grid(chart, tau, tilt, alpha, ds, n_theta, s_max)
    n_s, n_t = g.points.shape[:2]
    # orientation: normal toward the axis at the waist, upward on the upper sheet
    T = grid_triangles(n_s, n_t, flip=True)
    mesh = SurfaceMesh(g.points.reshape(n_s * n_t, -1), T,
                       np.full(n_s * n_t, REGION_TAGS.index("bridge")))
    mesh.compute_normals()
    mesh.meta.update(tau=tau, tilt=(tilt or TiltData()).to_dict(), alpha=alpha, rings=n_s,
                     meridian=n_t)
    return mesh


# ---------------------------------------------------------------------------
# curvature


def _check_triangles(mesh: SurfaceMesh):
    tn = mesh.triangle_normals()
    area = np.linalg.norm(tn, axis=1)
    X = mesh.vertices
    T = mesh.triangles
    scale = np.max([np.linalg.norm(X[T[:, (c + 1) % 3]] - X[T[:, c]], axis=1) for c in range(3)],
                   axis=0)
    if np.any(area <= 1e-14 * scale * scale):
        raise GeometryError("degenerate triangle in mesh")


def discrete_mean_curvature(mesh: SurfaceMesh, ambient="R3"):
    """Cotangent mean curvature, trace convention, sign fixed by the stored normals.

    H = -<Delta x, n> with Delta x = L x / A; for meshes in the unit S^3 the
    Laplacian of the R^4 embedding differs from the S^3 mean curvature vector by
    -2x, which is orthogonal to the tangent normal n.
    """
    if ambient not in ("R3", "S3"):
        raise GeometryError("ambient must be 'R3' or 'S3'")
    if (ambient == "S3") != (mesh.ambient_dim == 4):
        raise GeometryError("S3 meshes are stored in R^4, R3 meshes in R^3")
    _check_triangles(mesh)
    if mesh.normals is None:
        mesh.compute_normals()
    L, area = kernels.cotan_laplacian(mesh.vertices, mesh.triangles)
    lap = L / area[:, None]
    return -np.einsum("ij,ij->i", lap, mesh.normals)


def shrinker_residual(mesh: SurfaceMesh, H=None):
    """H - <x, n>/2; zero on self-shrinkers."""
    H = discrete_mean_curvature(mesh, "R3") if H is None else H
    return H - 0.5 * np.einsum("ij,ij->i", mesh.vertices, mesh.normals)


def _fd_weights(offsets, order):
    o = np.asarray(offsets, dtype=float)
    A = np.vander(o, increasing=True).T
    rhs = np.zeros(len(o))
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


def _fd_axis0(P, h, order, width=7):
    """Derivative along axis 0 with 7-point stencils, one-sided near the ends."""
    n = P.shape[0]
    if n < width:
        raise GeometryError("too few rings for the finite-difference stencil")
    out = np.empty_like(P)
    half = width // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        offs = np.arange(lo, lo + width) - i
        w = _fd_weights(offs, order)
        out[i] = np.tensordot(w, P[lo:lo + width], axes=(0, 0))
    return out / h ** order


def _spectral_axis1(P, order):
    n = P.shape[1]
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0 and order % 2 == 1:
        k[n // 2] = 0.0
    F = np.fft.fft(P, axis=1)
    mult = (1j * k) ** order
    return np.real(np.fft.ifft(F * mult[None, :, None], axis=1))


def grid_mean_curvature(points, ds, normals=None):
    """Mean curvature of a structured (s, theta) surface grid, periodic in theta.

    theta derivatives are spectral and s derivatives use 7-point stencils, so the
    error does not scale with the curvature of the bridge waist the way the
    cotangent formula does. Returns (H, n) with n oriented like `normals` if given.
    """
    P = np.asarray(points, dtype=float)
    Ps = _fd_axis0(P, ds, 1)
    Pss = _fd_axis0(P, ds, 2)
    Pt = _spectral_axis1(P, 1)
    Ptt = _spectral_axis1(P, 2)
    Pst = _fd_axis0(Pt, ds, 1)
    if P.shape[-1] == 3:
        n = np.cross(Ps, Pt)
    else:
        n = cross4(P, Ps, Pt)
    n /= np.linalg.norm(n, axis=-1)[..., None]
    if normals is not None:
        sgn = np.sign(np.einsum("...i,...i->...", n, normals))
        n *= sgn[..., None]
    E = np.einsum("...i,...i->...", Ps, Ps)
    F = np.einsum("...i,...i->...", Ps, Pt)
    G = np.einsum("...i,...i->...", Pt, Pt)
    Lc = np.einsum("...i,...i->...", Pss, n)
    Mc = np.einsum("...i,...i->...", Pst, n)
    Nc = np.einsum("...i,...i->...", Ptt, n)
    H = -(G * Lc - 2.0 * F * Mc + E * Nc) / (E * G - F * F)
    return H, n


def bridge_curvature(chart, tau, tilt=None, alpha=ALPHA_DEFAULT, ds=RING_STEP, n_theta=None,
                     residual="none"):
    """Structured-grid mean curvature on a bridge.

    residual "shrinker" returns H - <x, n>/2 instead of H. The normal points
    toward the axis at the waist, matching bridge_mesh.
    """
    g = bridge_grid(chart, tau, tilt, alpha, ds, n_theta)
    # reference orientation: -(X_s x X_theta) direction is fixed by the mesh convention
    mesh = SurfaceMesh(g.points.reshape(-1, g.points.shape[-1]),
                       grid_triangles(len(g.s), len(g.theta), flip=True),
                       np.full(g.points.shape[0] * g.points.shape[1], REGION_TAGS.index("bridge")))
    mesh.compute_normals()
    ref = mesh.normals.reshape(g.points.shape)
    H, n = grid_mean_curvature(g.points, g.s[1] - g.s[0], ref)
    if residual == "shrinker":
        H = H - 0.5 * np.einsum("...i,...i->...", g.points, n)
    return g, H


def first_harmonic(values):
    """Amplitude of the cos/sin theta component on each ring of an (s, theta) array."""
    F = np.fft.rfft(np.asarray(values, dtype=float), axis=1) / values.shape[1]
    return 2.0 * np.abs(F[:, 1])


# ---------------------------------------------------------------------------
# reference meshes


def icosphere(radius=1.0, subdivisions=5) -> SurfaceMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    V = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t),
         (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    F = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=float) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        cache = {}
        out = []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = out
    X = radius * np.array(V)
    mesh = SurfaceMesh(X, np.array(F, dtype=np.int64), np.full(len(X), REGION_TAGS.index("graph+")))
    mesh.compute_normals()
    return mesh


def catenoid_mesh(tau=1.0, s_max=2.0, ds=RING_STEP, n_theta=None) -> SurfaceMesh:
    return bridge_mesh(PlaneChart(), tau, None, ds=ds, n_theta=n_theta, s_max=s_max)


# ---------------------------------------------------------------------------
# export


def write_obj(mesh: SurfaceMesh, path):
    """ASCII OBJ with v/vn/f records and one group per region tag; R^4 meshes keep all coordinates."""
    if mesh.normals is None:
        mesh.compute_normals()
    lines = [f"# ldforge mesh: {mesh.n_vertices} vertices, {len(mesh.triangles)} triangles"]
    if mesh.meta.get("background"):
        lines.append(f"# background: {mesh.meta['background']}")
    fmt = lambda row: " ".join(repr(float(v)) for v in row)
    lines += ["v " + fmt(v) for v in mesh.vertices]
    lines += ["vn " + fmt(n) for n in mesh.normals]
    # a triangle belongs to the group of its first vertex
    tri_tag = mesh.tags[mesh.triangles[:, 0]]
    for t, name in enumerate(REGION_TAGS):
        sel = mesh.triangles[tri_tag == t]
        if len(sel) == 0:
            continue
        lines.append(f"g {name}")
        lines += [f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}" for a, b, c in sel]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> SurfaceMesh:
    V, N, T, G = [], [], [], []
    group = 0
    meta = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#" and len(parts) == 3 and parts[1] == "background:":
                meta["background"] = parts[2]
            elif parts[0] == "v":
                V.append([float(v) for v in parts[1:]])
            elif parts[0] == "vn":
                N.append([float(v) for v in parts[1:]])
            elif parts[0] == "g":
                group = REGION_TAGS.index(parts[1])
            elif parts[0] == "f":
                ids = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                T.append(ids)
                G.append(group)
    V = np.array(V)
    T = np.array(T, dtype=np.int64)
    tags = np.zeros(len(V), dtype=int)
    tags[T[:, 0]] = G
    return SurfaceMesh(V, T, tags, np.array(N) if N else None, meta)


def curvature_csv(mesh: SurfaceMesh, H, residual, path):
    names = mesh.tag_names()
    with open(path, "w") as fh:
        fh.write("vertex_id,tag,H,residual\n")
        for i in range(mesh.n_vertices):
            fh.write(f"{i},{names[i]},{float(H[i])!r},{float(residual[i])!r}\n")


# ---------------------------------------------------------------------------
# initial surfaces


@dataclass
class SingularPoint:
    """A bridge site: tangent-plane affine part c + gx x + gy y of phi - tau log(2r/tau)."""
    theta: float
    s: float
    tau: float
    affine: tuple = (0.0, 0.0, 0.0)
    # points of one class are images of each other under frame-preserving isometries fixing phi
    symmetry_class: int = -1


@dataclass
class GluingData:
    """What the mesher needs from an LD solution."""
    background: Background
    points: list
    height: object  # (theta, s) -> physical phi
    average: object = None  # s -> (phi_avg, phi_avg') with right-hand slopes
    last_circle: float = 0.0
    symmetry_order: int = 1
    grid_height: object = None  # (theta 1d, s 1d) -> phi of shape (len(s), len(theta))

    @property
    def taus(self):
        return np.array([p.tau for p in self.points])


def gluing_data_from_ld(ld) -> GluingData:
    """Singular points, strengths and affine mismatch of an LD solution on a rotational background."""
    from .ld_fourier import mismatch
    cfg = ld.config
    bg = cfg.background
    mis = mismatch(ld, "formula")
    pts = []
    for sidx, sub in enumerate(cfg.sublattices()):
        i = sub.circle
        tau_p = cfg.tau1 * sub.strength
        th_rep, _ = cfg.representative(i)
        # the second sublattice of an alternating circle is the mirror image in theta
        mirrored = not math.isclose(math.remainder(sub.theta0 - th_rep, 2 * math.pi / cfg.m), 0.0,
                                    abs_tol=1e-12)
        for th, s in sub.points():
            lam = math.exp(-float(bg.omega(s)))
            c = tau_p * float(mis.mu[i])
            gy = lam * tau_p * float(mis.m_abs[i] * mis.mu_prime[i]) * (1.0 if s >= 0 else -1.0)
            gx = lam * tau_p * float(mis.mu_circ[i]) * (-1.0 if mirrored else 1.0)
            # rotations by 2 pi / m carry the frame at p to the frame at the next point
            pts.append(SingularPoint(float(th), float(s), tau_p, (c, gx, gy), 2 * sidx + int(s < 0)))

    def avg(s):
        v, dv = ld.average(np.abs(np.asarray(s, dtype=float)))
        return cfg.tau1 * v, cfg.tau1 * dv

    return GluingData(bg, pts, ld.field, avg, float(np.max(cfg.s)), cfg.m)


def gluing_data_from_clifford(cfg, field_=None) -> GluingData:
    """Single-lattice Clifford data: phi = tau Phi with Phi from the exact mode series."""
    from .clifford import TorusField, clifford_mismatch
    if cfg.lattice != "single":
        raise GeometryError("meshes are built for the single Clifford lattice")
    bg = make_background(BackgroundId.CLIFFORD_TORUS)
    fld = field_ or TorusField(cfg.k, cfg.m)
    mis = clifford_mismatch(cfg)
    tau = float(cfg.tau)
    q = math.sqrt(2.0)
    pts = [SingularPoint(q * j * cfg.period_y, q * i * cfg.period_x, tau, (float(mis["mu"]), 0.0, 0.0), 0)
           for i in range(cfg.k) for j in range(cfg.m)]

    def height(theta, s):
        return tau * fld(np.asarray(s, dtype=float) / q, np.asarray(theta, dtype=float) / q)

    def grid_height(theta, s):
        return tau * fld.grid(np.asarray(s, dtype=float) / q, np.asarray(theta, dtype=float) / q)

    return GluingData(bg, pts, height, None, 0.0, cfg.m, grid_height)


def _wrap(a):
    return (np.asarray(a, dtype=float) + math.pi) % (2.0 * math.pi) - math.pi


def _approx_distance(bg, p, q):
    """Conformal estimate of the distance between two surface points (theta, s)."""
    dth = abs(float(_wrap(p[0] - q[0])))
    ds = float(_wrap(p[1] - q[1])) if bg.id is BackgroundId.CLIFFORD_TORUS else p[1] - q[1]
    sm = 0.5 * (p[1] + q[1])
    return math.exp(float(bg.omega(sm))) * math.hypot(dth, ds)


def _cap_extent(bg):
    if bg.id in (BackgroundId.SPHERE_IN_S3, BackgroundId.SPHERICAL_SHRINKER):
        return 4.0
    return math.inf


def admissible_alpha(data: GluingData, floor=ALPHA_DEFAULT, margin=1.5):
    """Smallest alpha >= floor for which the closed disks D_p(3 tau_p^alpha) are pairwise disjoint."""
    pts = data.points
    alpha = floor
    for i, p in enumerate(pts):
        dmin = math.inf
        for q in pts:
            if q is p:
                continue
            dmin = min(dmin, _approx_distance(data.background, (p.theta, p.s), (q.theta, q.s)))
        if math.isfinite(dmin):
            # 3 tau^alpha (p) + 3 tau^alpha (q) < dmin with the smaller tau bounding both
            need = math.log(dmin / (6.0 * margin)) / math.log(p.tau)
            alpha = max(alpha, need)
    return math.ceil(alpha * 1000.0) / 1000.0


class _Builder:
    def __init__(self, dim):
        self.V = []
        self.T = []
        self.G = []
        self.n = 0
        self.dim = dim

    def add(self, pts, tag):
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        ids = np.arange(self.n, self.n + len(pts))
        self.V.append(pts)
        self.G.append(np.full(len(pts), REGION_TAGS.index(tag)))
        self.n += len(pts)
        return ids

    def tri(self, T):
        T = np.asarray(T, dtype=np.int64).reshape(-1, 3)
        if len(T):
            self.T.append(T)

    def mesh(self):
        return SurfaceMesh(np.concatenate(self.V), np.concatenate(self.T), np.concatenate(self.G))


def _grid_tris(ids, periodic_rows, periodic_cols, keep=None, flip=False):
    """Triangles of an index grid ids[row, col]; cells with any dropped vertex are skipped."""
    nr, nc = ids.shape
    rows = np.arange(nr if periodic_rows else nr - 1)
    cols = np.arange(nc if periodic_cols else nc - 1)
    r0, c0 = np.meshgrid(rows, cols, indexing="ij")
    r1, c1 = (r0 + 1) % nr, (c0 + 1) % nc
    a, b, e, d = ids[r0, c0], ids[r0, c1], ids[r1, c1], ids[r1, c0]
    if keep is not None:
        ok = keep[r0, c0] & keep[r0, c1] & keep[r1, c1] & keep[r1, c0]
        a, b, e, d = a[ok], b[ok], e[ok], d[ok]
    T = np.concatenate([np.stack([a, b, e], -1).reshape(-1, 3), np.stack([a, e, d], -1).reshape(-1, 3)])
    return T[:, ::-1] if flip else T


def _inside_polygon(px, py, poly):
    """Even-odd rule for points (px, py) against a closed polygon (n, 2)."""
    inside = np.zeros(px.shape, dtype=bool)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for a, b, c, d in zip(x0, y0, x1, y1):
        cond = (b > py) != (d > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a + (py - b) * (c - a) / (d - b)
        inside ^= cond & (px < xc)
    return inside


def boundary_loops(T):
    """All boundary loops of a triangle set, each as an ordered vertex array."""
    e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = e[cnt[inv.ravel()] == 1]
    nxt = {}
    for a, b in bnd:
        if int(a) in nxt:
            raise GeometryError("boundary is not a union of simple loops")
        nxt[int(a)] = int(b)
    loops = []
    seen = set()
    for start in nxt:
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        while True:
            v = nxt[loop[-1]]
            if v == start:
                break
            loop.append(v)
            seen.add(v)
        loops.append(np.array(loop))
    return loops


def _ccw(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]) > 0


def _zip(inner, inner_pos, outer, outer_pos):
    """Triangulate the band between two counterclockwise loops given planar positions.

    Advances along whichever loop keeps the new triangle counterclockwise, and by
    angle when both or neither choice does.
    """
    ia = np.arctan2(inner_pos[:, 1], inner_pos[:, 0])
    ib = np.arctan2(outer_pos[:, 1], outer_pos[:, 0])
    i0, j0 = int(np.argmin(ia)), int(np.argmin(ib))
    A, PA = np.roll(inner, -i0), np.roll(inner_pos, -i0, axis=0)
    B, PB = np.roll(outer, -j0), np.roll(outer_pos, -j0, axis=0)
    a_ang = np.unwrap(np.roll(ia, -i0))
    b_ang = np.unwrap(np.roll(ib, -j0))
    na, nb = len(A), len(B)
    a_ang = np.append(a_ang, a_ang[0] + 2 * math.pi)
    b_ang = np.append(b_ang, b_ang[0] + 2 * math.pi)
    i = j = 0
    tris = []
    while i < na or j < nb:
        okA = i < na and _ccw(PA[i % na], PB[j % nb], PA[(i + 1) % na])
        okB = j < nb and _ccw(PA[i % na], PB[j % nb], PB[(j + 1) % nb])
        byA = j >= nb or (i < na and a_ang[i + 1] <= b_ang[j + 1])
        takeA = byA if okA == okB else okA
        if takeA:
            tris.append((A[i % na], B[j % nb], A[(i + 1) % na]))
            i += 1
        else:
            tris.append((A[i % na], B[j % nb], B[(j + 1) % nb]))
            j += 1
    return np.array(tris, dtype=np.int64)


def _end_profile(avg, s_k, sheet):
    """(a, b) of the vertical-axis catenoid rho = a cosh((z - b)/a) through the last circle's graph."""
    v, dv = avg(s_k)
    v, dv = float(v), float(dv)
    ch, sh = math.cosh(s_k), math.sinh(s_k)
    rho = ch + sheet * v / ch
    z = s_k - sheet * v * sh / ch
    # d/ds of (cosh s + f/cosh s, s - f tanh s) with f = sheet * phi_avg
    f, df = sheet * v, sheet * dv
    drho = sh + df / ch - f * sh / ch ** 2
    dz = 1.0 - df * sh / ch - f / ch ** 2
    t = drho / dz
    a = rho / math.sqrt(1.0 + t * t)
    b = z - a * math.asinh(t)
    return a, b


def _end_height(a, b, s, sheet, guess):
    """Normal offset f with X(s) + sheet f nu(s) on the end profile, by Newton."""
    s = np.asarray(s, dtype=float)
    f = np.full(s.shape, float(guess))
    ch, th = np.cosh(s), np.tanh(s)
    for _ in range(60):
        rho = ch + sheet * f / ch
        z = s - sheet * f * th
        g = rho - a * np.cosh((z - b) / a)
        dg = sheet / ch + np.sinh((z - b) / a) * sheet * th
        step = g / dg
        f = f - step
        if np.max(np.abs(step)) < 1e-14:
            break
    return f


def build_initial_surface(data, tilts=None, alpha=None, n_theta=None, ds=RING_STEP,
                          bridge_theta=None, jobs=1) -> SurfaceMesh:
    """Two graph sheets +-phi^gl over the surface minus the gluing disks, joined by bridges.

    data: GluingData, an LdSolution or a single-lattice CliffordConfig.
    tilts: None (kappa = 0 everywhere), "mismatch" (kappa = the affine mismatch) or a list of TiltData.
    On [2 delta', 2.5 delta'] each sheet blends the tilted catenoid graph into phi + v, v being the
    affine offset matching phi's mismatch to the tilt; on [2.5 delta', 3 delta'] v is faded out.
    """
    if not isinstance(data, GluingData):
        data = gluing_data_from_clifford(data) if hasattr(data, "lattice") else gluing_data_from_ld(data)
    bg = data.background
    pts = data.points
    if tilts is None:
        tilts = [TiltData() for _ in pts]
    elif isinstance(tilts, str):
        if tilts != "mismatch":
            raise GeometryError("tilts must be None, 'mismatch' or a list of TiltData")
        tilts = [TiltData(p.affine[0], (p.affine[1], p.affine[2])) for p in pts]
    if len(tilts) != len(pts):
        raise GeometryError("one tilt per singular point is required")
    alpha = admissible_alpha(data) if alpha is None else float(alpha)
    periodic_s = bg.id is BackgroundId.CLIFFORD_TORUS
    cap = _cap_extent(bg)
    deltas = np.array([p.tau ** alpha for p in pts])

    # admissibility
    for p, t, d in zip(pts, tilts, deltas):
        if not t.admissible(p.tau, alpha):
            raise GeometryError(f"non-graphical tilt: |kappa| = {t.norm:.3g} >= tau^(1+alpha/6) = "
                                f"{p.tau ** (1 + alpha / 6):.3g}")
        if 3.0 * d <= 9.0 * p.tau:
            raise GeometryError("gluing annulus does not clear the 9 tau disk")
    for i, p in enumerate(pts):
        for j in range(i):
            q = pts[j]
            if _approx_distance(bg, (p.theta, p.s), (q.theta, q.s)) <= 3.0 * (deltas[i] + deltas[j]):
                raise GeometryError(f"gluing disks overlap (alpha = {alpha}); increase alpha")

    # base grid, conformal squares in (theta, s)
    dmin = float(np.min(deltas))
    smax_pt = max(abs(p.s) for p in pts)
    h_target = dmin / 2.0
    if n_theta is None:
        lam = math.exp(float(np.max(bg.omega(np.array([p.s for p in pts])))))
        n_theta = int(math.ceil(2 * math.pi * lam / h_target))
        n_theta = min(max(n_theta, 64), 1024)
        n_theta += (-n_theta) % (4 * max(1, data.symmetry_order))
    hth = 2 * math.pi / n_theta
    theta = hth * np.arange(n_theta)
    if periodic_s:
        s = hth * np.arange(n_theta) + 0.0
    else:
        if math.isfinite(bg.half_length):
            s_hi = bg.half_length
        elif bg.id is BackgroundId.CATENOID:
            s_hi = math.asinh(math.sinh(data.last_circle) + 2.5)
        else:
            s_hi = cap
        n_s = int(math.ceil(2 * s_hi / hth)) + 1
        s = np.linspace(-s_hi, s_hi, n_s)
    TH, S = np.meshgrid(theta, s)

    # removal of the disks D_p(3 delta' + margin) from the grid
    keep = np.ones(TH.shape, dtype=bool)
    charts, hole_polys = [], []
    for p, d in zip(pts, deltas):
        if not periodic_s and abs(p.s) + 3.5 * d * math.exp(-float(bg.omega(p.s))) > s[-1]:
            raise GeometryError("gluing disk leaves the meshed part of the surface")
        ch = NormalChart(bg, p.theta, p.s)
        charts.append(ch)
        ang = np.linspace(0.0, 2 * math.pi, 97)[:-1]
        rr = 3.0 * d + 0.75 * math.exp(float(bg.omega(p.s))) * hth
        pth, ps = ch.tangent(rr * np.cos(ang), rr * np.sin(ang))
        poly = np.stack([_wrap(pth - p.theta), ps - p.s if not periodic_s else _wrap(ps - p.s)], -1)
        hole_polys.append(poly)
        dth = _wrap(TH - p.theta)
        dss = _wrap(S - p.s) if periodic_s else S - p.s
        box = (np.abs(dth) < 1.5 * np.max(np.abs(poly[:, 0])) + hth) & \
              (np.abs(dss) < 1.5 * np.max(np.abs(poly[:, 1])) + hth)
        inside = np.zeros_like(keep)
        inside[box] = _inside_polygon(dth[box], dss[box], poly)
        if not inside.any():
            k = np.argmin(dth ** 2 + dss ** 2)
            inside.ravel()[k] = True
        keep &= ~inside
    # a vertex is kept only if it still belongs to a kept cell
    nr, nc = keep.shape
    cell_ok = keep & np.roll(keep, -1, 1)
    cell_ok = cell_ok & np.roll(cell_ok, -1, 0)
    if not periodic_s:
        cell_ok[-1] = False
    used = cell_ok | np.roll(cell_ok, 1, 1)
    used = used | np.roll(used, 1, 0)
    keep &= used

    # sheet heights over the grid
    with np.errstate(all="ignore"):
        phi = np.asarray(data.grid_height(theta, s) if data.grid_height is not None
                         else data.height(TH, S), dtype=float)
    # singular values sit on removed vertices
    phi[~keep] = 0.0
    up = phi.copy()
    lo = -phi.copy()
    end_mask = np.zeros(TH.shape, dtype=bool)
    if bg.id is BackgroundId.CATENOID and data.average is not None:
        sk = data.last_circle
        dist = np.sinh(np.abs(S)) - math.sinh(sk)
        end_mask = dist > 1.0
        for sheet, arr in ((1, up), (-1, lo)):
            a, b = _end_profile(data.average, sk, sheet)
            sel = dist > 1.0
            f_end = _end_height(a, b, np.abs(S[sel]), sheet, float(data.average(sk)[0]))
            arr[sel] = transition(1.0, 2.0, dist[sel], sheet * phi[sel], sheet * f_end)

    b = _Builder(4 if bg.id in (BackgroundId.SPHERE_IN_S3, BackgroundId.CLIFFORD_TORUS) else 3)
    sheets = {}
    for sheet, arr in ((1, up), (-1, lo)):
        tag = "graph+" if sheet > 0 else "graph-"
        P = normal_point(bg, TH, S, arr)
        ids = np.full(TH.shape, -1, dtype=np.int64)
        sel_graph = keep & ~end_mask
        ids[sel_graph] = b.add(P[sel_graph], tag)
        sel_end = keep & end_mask
        if sel_end.any():
            ids[sel_end] = b.add(P[sel_end], "end")
        T_grid = _grid_tris(ids, periodic_s, True, keep, flip=sheet < 0)
        b.tri(T_grid)
        flat_ids = ids.ravel()
        sheets[sheet] = (ids, boundary_loops(T_grid),
                         {int(v): i for i, v in enumerate(flat_ids) if v >= 0})
        if np.isfinite(cap) and not periodic_s:
            # polar caps: one vertex per pole, height from the last ring
            for row, sgn in ((-1, 1.0), (0, -1.0)):
                hp = float(np.mean(arr[row]))
                pole = normal_point(bg, np.array(0.0), np.array(sgn * 40.0), np.array(hp))
                pid = b.add(pole, tag)[0]
                ring = ids[row]
                nxt = np.roll(ring, -1)
                fan = np.stack([ring, nxt, np.full(nc, pid)], -1) if sgn > 0 else \
                    np.stack([nxt, ring, np.full(nc, pid)], -1)
                b.tri(fan[:, ::-1] if sheet < 0 else fan)

    # per point: bridge, gluing annuli, zips into the holes
    th_all = TH.ravel()
    s_all = S.ravel()

    cache = {}

    def fragment(k):
        p, t, d, ch = pts[k], tilts[k], deltas[k], charts[k]
        g = bridge_grid(ch, p.tau, t, alpha, ds, bridge_theta)
        c0, gx, gy = p.affine
        rings = max(4, int(math.ceil(d / (2 * math.pi * 2 * d / len(g.theta)) / 4)))
        r = np.linspace(2 * d, 3 * d, rings + 1)[1:]
        ang = g.theta
        X = r[:, None] * np.cos(ang)[None, :]
        Y = r[:, None] * np.sin(ang)[None, :]
        pth, ps = ch.tangent(X, Y)
        key = (p.symmetry_class, p.tau, X.shape)
        if p.symmetry_class >= 0 and key in cache:
            phv = cache[key]
        else:
            phv = np.asarray(data.height(pth, ps), dtype=float)
            cache[key] = phv
        out = {"bridge": g, "x": X, "y": Y, "outer": (pth[-1], ps[-1])}
        for sheet in (1, -1):
            hc = tilted_catenoid_graph(p.tau, t, X, Y, sheet)
            # phi + v with v = kappa - M on the upper sheet and kappa + M on the lower one
            lin = c0 + gx * X + gy * Y
            offset = t.value(X, Y) - sheet * lin
            rr = np.hypot(X, Y)
            # blend into phi + v on the inner half, then fade v out on the outer half
            h = transition(2 * d, 2.5 * d, rr, hc, sheet * phv + offset) - cutoff(2.5 * d, 3 * d, rr) * offset
            out[sheet] = ch(X, Y, h)
        return out

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as ex:
            frags = list(ex.map(fragment, range(len(pts))))
    else:
        frags = [fragment(k) for k in range(len(pts))]

    for k, fr in enumerate(frags):
        p, d = pts[k], deltas[k]
        g = fr["bridge"]
        n_s, n_t = g.points.shape[:2]
        bid = b.add(g.points.reshape(n_s * n_t, -1), "bridge").reshape(n_s, n_t)
        b.tri(_grid_tris(bid, False, True, flip=True))
        for sheet in (1, -1):
            tag = "gluing+" if sheet > 0 else "gluing-"
            ring0 = bid[-1] if sheet > 0 else bid[0]
            ann = b.add(fr[sheet].reshape(-1, b.dim), tag).reshape(fr[sheet].shape[:2])
            ids = np.vstack([ring0[None, :], ann])
            b.tri(_grid_tris(ids, False, True, flip=sheet > 0))
            # zip the outer annulus ring to the hole left in the sheet
            sid, loops, loc = sheets[sheet]
            lam = math.exp(float(bg.omega(p.s)))
            best = None
            for loop in loops:
                li = np.array([loc.get(int(v), -1) for v in loop])
                if np.any(li < 0):
                    continue
                dth = _wrap(th_all[li] - p.theta)
                dss = _wrap(s_all[li] - p.s) if periodic_s else s_all[li] - p.s
                rad = float(np.max(np.hypot(dth, dss)))
                if best is None or rad < best[0]:
                    best = (rad, loop, np.stack([lam * dth, lam * dss], -1))
            if best is None or best[0] * lam > 6.0 * d + 4 * lam * hth:
                raise GeometryError("could not locate the hole around a singular point")
            _, loop, l_pos = best
            # a hole boundary runs clockwise on the upward-oriented sheet
            if sheet > 0:
                loop, l_pos = loop[::-1], l_pos[::-1]
            oth, osr = fr["outer"]
            o_pos = np.stack([lam * _wrap(oth - p.theta),
                              lam * (_wrap(osr - p.s) if periodic_s else osr - p.s)], -1)
            z = _zip(ann[-1], o_pos, loop, l_pos)
            b.tri(z[:, ::-1] if sheet < 0 else z)
    mesh = b.mesh()
    mesh.compute_normals()
    mesh.meta.update(background=bg.name, alpha=alpha, n_points=len(pts), taus=data.taus.tolist(),
                     n_theta=n_theta)
    return mesh


def graph_vertices_clear(mesh: SurfaceMesh, data: GluingData, factor=9.0):
    """Minimum over graph vertices and points p of (distance to p) / (factor tau_p), via the ambient chord."""
    bg = data.background
    sel = mesh.mask("graph+") | mesh.mask("graph-")
    worst = math.inf
    for p in data.points:
        X0 = embedding(bg, np.array(p.s), np.array(p.theta))[0]
        chord = np.linalg.norm(mesh.vertices[sel] - X0, axis=1)
        worst = min(worst, float(np.min(chord)) / (factor * p.tau))
    return worst
