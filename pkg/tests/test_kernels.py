import math

import numpy as np
import pytest

from ldforge import _kernels_py, kernels
from ldforge.geometry import catenoid_mesh, icosphere

compiled = pytest.mark.skipif(not kernels.COMPILED, reason="extension not built")


@compiled
def test_torus_mode_sum_matches_python():
    rng = np.random.default_rng(0)
    d, t = rng.uniform(0, 0.5, 500), rng.uniform(-3, 3, 500)
    mu0 = 2 * math.pi / 0.2
    n = np.arange(1, 40)
    beta = np.sqrt((n * mu0) ** 2 - 4.0)
    coef = -mu0 / (beta * -np.expm1(-2 * beta * 0.4))
    a = kernels.torus_mode_sum(d, t, mu0, beta, coef, 0.4)
    b = _kernels_py.torus_mode_sum(d, t, mu0, beta, coef, 0.4)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


@compiled
def test_rk4_matches_python():
    V = 2 / np.cosh(np.linspace(0, 3, 2001)) ** 2
    a = kernels.rk4_linear(V, 3.0 / 1000, 1.0, 0.0)
    b = _kernels_py.rk4_linear(V, 3.0 / 1000, 1.0, 0.0)
    assert np.allclose(a[0], b[0], rtol=1e-14) and np.allclose(a[1], b[1], rtol=1e-14)


@compiled
def test_cotan_matches_python():
    m = catenoid_mesh(1.0, 1.0)
    La, Aa = kernels.cotan_laplacian(m.vertices, m.triangles)
    Lb, Ab = _kernels_py.cotan_laplacian(m.vertices, m.triangles)
    assert np.allclose(La, Lb, atol=1e-13) and np.allclose(Aa, Ab, rtol=1e-13)


def test_rk4_fourth_order():
    # error against 1 - s tanh s drops by about 16 when the step halves
    errs = []
    for n in (100, 200):
        s = np.linspace(0, 2, 2 * n + 1)
        y, _ = _kernels_py.rk4_linear(2 / np.cosh(s) ** 2, 2.0 / n, 1.0, 0.0)
        errs.append(abs(y[-1] - (1 - 2 * math.tanh(2))))
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.1)


def test_cotan_laplacian_of_linear_function_vanishes():
    # the cotangent Laplacian is exact on linear functions of a flat mesh
    from scipy.spatial import Delaunay
    rng = np.random.default_rng(2)
    P = np.vstack([rng.uniform(-1, 1, (300, 2)), [[-1.5, -1.5], [1.5, -1.5], [1.5, 1.5], [-1.5, 1.5]]])
    T = Delaunay(P).simplices.astype(np.int64)
    X = np.column_stack([P, 0.3 * P[:, 0] - 0.7 * P[:, 1]])
    L, A = _kernels_py.cotan_laplacian(X, T)
    inner = np.all(np.abs(P) < 0.9, axis=1)
    assert np.max(np.abs(L[inner])) < 1e-10


def test_vertex_areas_partition_surface():
    sph = icosphere(1.0, 2)
    _, A = _kernels_py.cotan_laplacian(sph.vertices, sph.triangles)
    tri = sph.vertices[sph.triangles]
    total = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1).sum()
    assert np.all(A > 0)
    assert A.sum() == pytest.approx(total, rel=1e-12)
