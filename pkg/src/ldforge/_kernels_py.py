"""Pure-Python reference implementations of the compiled kernels."""

import numpy as np


def torus_mode_sum(d, t, mu0, beta, coef, h):
    """sum_n [coef_n (e^(-beta_n d) + e^(-beta_n (2h - d))) + e^(-n mu0 d) / n] cos(n t), pointwise."""
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros(d.shape)
    n = np.arange(1, len(beta) + 1, dtype=float)
    chunk = max(1, 2_000_000 // max(len(beta), 1))
    for lo in range(0, d.size, chunk):
        dd = d.ravel()[lo:lo + chunk, None]
        tt = t.ravel()[lo:lo + chunk, None]
        w = coef * (np.exp(-beta * dd) + np.exp(-beta * (2.0 * h - dd))) + np.exp(-n * mu0 * dd) / n
        out.ravel()[lo:lo + chunk] = np.sum(w * np.cos(n * tt), axis=1)
    return out


def rk4_linear(V, h, y0, dy0):
    """Fixed-step RK4 for y'' + V y = 0; V sampled at half steps (length 2n + 1)."""
    V = np.asarray(V, dtype=float)
    n = (len(V) - 1) // 2
    y = np.empty(n + 1)
    dy = np.empty(n + 1)
    y[0], dy[0] = y0, dy0
    a, b = y0, dy0
    for i in range(n):
        v0, v1, v2 = V[2 * i], V[2 * i + 1], V[2 * i + 2]
        k1a, k1b = b, -v0 * a
        k2a, k2b = b + 0.5 * h * k1b, -v1 * (a + 0.5 * h * k1a)
        k3a, k3b = b + 0.5 * h * k2b, -v1 * (a + 0.5 * h * k2a)
        k4a, k4b = b + h * k3b, -v2 * (a + h * k3a)
        a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        y[i + 1], dy[i + 1] = a, b
    return y, dy


def cotan_laplacian(vertices, triangles):
    """Cotangent Laplacian of the embedding and mixed Voronoi areas.

    Returns (L, area) with L_i = 1/2 sum_j (cot a_ij + cot b_ij)(x_j - x_i).
    """
    X = np.asarray(vertices, dtype=float)
    T = np.asarray(triangles, dtype=np.int64)
    L = np.zeros_like(X)
    area = np.zeros(len(X))
    for c in range(3):
        i, j, k = T[:, c], T[:, (c + 1) % 3], T[:, (c + 2) % 3]
        u = X[j] - X[i]
        v = X[k] - X[i]
        cr = np.einsum("ij,ij->i", u, u) * np.einsum("ij,ij->i", v, v) - np.einsum("ij,ij->i", u, v) ** 2
        dbl = np.sqrt(np.maximum(cr, 0.0))
        cot = np.einsum("ij,ij->i", u, v) / dbl
        # angle at i weighs the opposite edge (j, k)
        e = X[k] - X[j]
        np.add.at(L, j, 0.5 * cot[:, None] * e)
        np.add.at(L, k, -0.5 * cot[:, None] * e)
    P = X[T]
    # l2[:, c] is the squared length of the edge opposite vertex c, cots[:, c] the cotangent at c
    edges = [P[:, (c + 2) % 3] - P[:, (c + 1) % 3] for c in range(3)]
    l2 = np.stack([np.einsum("ij,ij->i", e, e) for e in edges], axis=1)
    dots = np.stack([np.einsum("ij,ij->i", P[:, (c + 1) % 3] - P[:, c], P[:, (c + 2) % 3] - P[:, c])
                     for c in range(3)], axis=1)
    A = 0.5 * np.sqrt(np.maximum(l2[:, 1] * l2[:, 2] - dots[:, 0] ** 2, 0.0))
    cots = dots / (2.0 * A[:, None])
    obtuse = dots < 0
    acute = ~obtuse.any(axis=1)
    for c in range(3):
        vor = (l2[:, (c + 1) % 3] * cots[:, (c + 1) % 3] + l2[:, (c + 2) % 3] * cots[:, (c + 2) % 3]) / 8.0
        share = np.where(acute, vor, np.where(obtuse[:, c], A / 2.0, A / 4.0))
        np.add.at(area, T[:, c], share)
    return L, area
