# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see _kernels_py for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin, sqrt

cnp.import_array()


def torus_mode_sum(d, t, double mu0, beta, coef, double h):
    cdef cnp.ndarray[double, ndim=1] dd = np.ascontiguousarray(np.ravel(d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] tt = np.ascontiguousarray(np.ravel(t), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] bb = np.ascontiguousarray(beta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] cc = np.ascontiguousarray(coef, dtype=np.float64)
    cdef Py_ssize_t P = dd.shape[0], N = bb.shape[0], p, n
    cdef cnp.ndarray[double, ndim=1] out = np.empty(P)
    cdef double x, s, c1, s1, cn, sn, tmp, q, qn, w
    for p in range(P):
        x = dd[p]
        c1 = cos(tt[p])
        s1 = sin(tt[p])
        cn = 1.0
        sn = 0.0
        q = exp(-mu0 * x)
        qn = 1.0
        s = 0.0
        for n in range(N):
            # rotate (cos, sin) by t; resynchronise every 64 steps
            if (n + 1) % 64 == 0:
                cn = cos((n + 1) * tt[p])
                sn = sin((n + 1) * tt[p])
            else:
                tmp = cn * c1 - sn * s1
                sn = sn * c1 + cn * s1
                cn = tmp
            qn = qn * q
            w = cc[n] * (exp(-bb[n] * x) + exp(-bb[n] * (2.0 * h - x))) + qn / (n + 1)
            s += w * cn
        out[p] = s
    return out.reshape(np.shape(d))


def rk4_linear(V, double h, double y0, double dy0):
    cdef cnp.ndarray[double, ndim=1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef Py_ssize_t n = (v.shape[0] - 1) // 2, i
    cdef cnp.ndarray[double, ndim=1] y = np.empty(n + 1)
    cdef cnp.ndarray[double, ndim=1] dy = np.empty(n + 1)
    cdef double a = y0, b = dy0, v0, v1, v2
    cdef double k1a, k1b, k2a, k2b, k3a, k3b, k4a, k4b
    y[0] = a
    dy[0] = b
    for i in range(n):
        v0 = v[2 * i]
        v1 = v[2 * i + 1]
        v2 = v[2 * i + 2]
        k1a = b
        k1b = -v0 * a
        k2a = b + 0.5 * h * k1b
        k2b = -v1 * (a + 0.5 * h * k1a)
        k3a = b + 0.5 * h * k2b
        k3b = -v1 * (a + 0.5 * h * k2a)
        k4a = b + h * k3b
        k4b = -v2 * (a + h * k3a)
        a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        y[i + 1] = a
        dy[i + 1] = b
    return y, dy


def cotan_laplacian(vertices, triangles):
    cdef cnp.ndarray[double, ndim=2] X = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef cnp.ndarray[long long, ndim=2] T = np.ascontiguousarray(triangles, dtype=np.int64)
    cdef Py_ssize_t nv = X.shape[0], dim = X.shape[1], nt = T.shape[0]
    cdef cnp.ndarray[double, ndim=2] L = np.zeros((nv, dim))
    cdef cnp.ndarray[double, ndim=1] area = np.zeros(nv)
    cdef Py_ssize_t t, c, a, ia, ib, ic
    cdef int obtuse
    cdef double uu, vv, uv, A, e
    cdef double cots[3]
    cdef double l2[3]
    for t in range(nt):
        obtuse = -1
        A = 0.0
        for c in range(3):
            ia = T[t, c]
            ib = T[t, (c + 1) % 3]
            ic = T[t, (c + 2) % 3]
            uu = 0.0
            vv = 0.0
            uv = 0.0
            for a in range(dim):
                uu += (X[ib, a] - X[ia, a]) * (X[ib, a] - X[ia, a])
                vv += (X[ic, a] - X[ia, a]) * (X[ic, a] - X[ia, a])
                uv += (X[ib, a] - X[ia, a]) * (X[ic, a] - X[ia, a])
            if c == 0:
                A = 0.5 * sqrt(max(uu * vv - uv * uv, 0.0))
            cots[c] = uv / (2.0 * A)
            if uv < 0:
                obtuse = c
            l2[(c + 1) % 3] = vv
            l2[(c + 2) % 3] = uu
        for c in range(3):
            ib = T[t, (c + 1) % 3]
            ic = T[t, (c + 2) % 3]
            for a in range(dim):
                e = X[ic, a] - X[ib, a]
                L[ib, a] += 0.5 * cots[c] * e
                L[ic, a] -= 0.5 * cots[c] * e
        for c in range(3):
            ia = T[t, c]
            if obtuse < 0:
                area[ia] += (l2[(c + 1) % 3] * cots[(c + 1) % 3] + l2[(c + 2) % 3] * cots[(c + 2) % 3]) / 8.0
            elif c == obtuse:
                area[ia] += A / 2.0
            else:
                area[ia] += A / 4.0
    return L, area
