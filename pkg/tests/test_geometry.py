import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldforge.backgrounds import embedding, make_background
from ldforge.geometry import (GeometryError, NormalChart, PlaneChart, TiltData, bridge_curvature, bridge_grid,
                              bridge_mesh, build_initial_surface, catenoid_mesh, discrete_mean_curvature,
                              exp_map, first_harmonic, gluing_data_from_ld, graph_vertices_clear, icosphere,
                              read_obj, shrinker_residual, tilt_rotation, tilted_catenoid,
                              tilted_catenoid_graph, varphi_cat, varphi_cat_deriv, write_obj)
from ldforge.ld_fourier import build_ld
from ldforge.rld import smooth_at_ends


@pytest.fixture(scope="module")
def sphere_data():
    bg = make_background("sphere")
    ld = build_ld(bg, smooth_at_ends(bg, None, 2), (8,))
    return gluing_data_from_ld(ld)


@pytest.fixture(scope="module")
def sphere_surface(sphere_data):
    return build_initial_surface(sphere_data, ds=0.4)


def test_varphi_cat_values():
    assert varphi_cat(0.3, 0.3) == 0.0
    assert varphi_cat(1.0, math.cosh(1.0)) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(GeometryError):
        varphi_cat(1.0, 0.5)
    with pytest.raises(GeometryError):
        varphi_cat_deriv(1.0, 1.0)


def test_varphi_cat_derivative_vs_differences():
    r, h = np.array([1.5, 3.0, 10.0]), 1e-6
    fd = (varphi_cat(1.0, r + h) - varphi_cat(1.0, r - h)) / (2 * h)
    assert np.allclose(varphi_cat_deriv(1.0, r), fd, rtol=1e-8)


def test_varphi_cat_log_asymptotics():
    tau = 1e-3
    r = np.geomspace(9 * tau, 100 * tau, 12)
    err = np.abs(varphi_cat(tau, r) - tau * np.log(2 * r / tau))
    assert np.all(err <= tau ** 3 / r ** 2)
    slope = np.polyfit(np.log(r), np.log(err), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.05)


def test_tilt_rotation_identity_and_axis():
    assert np.array_equal(tilt_rotation((0.0, 0.0)), np.eye(3))
    t = TiltData(0.0, (0.3, -0.2))
    R = tilt_rotation(t)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert np.allclose(R @ t.axis, t.axis, atol=1e-14)


@given(k1=st.floats(-0.5, 0.5), k2=st.floats(-0.5, 0.5), a=st.floats(-2, 2))
@settings(max_examples=30, deadline=None)
def test_rotated_plane_is_graph_of_tilt(k1, k2, a):
    t = TiltData(0.0, (k1, k2))
    if t.slope_norm < 1e-6:
        return
    # a point p along the gradient of kappa maps to height kappa(p) over its image
    R = tilt_rotation(t)
    q = R @ (a * t.coaxis)
    assert q[2] == pytest.approx(k1 * q[0] + k2 * q[1], abs=1e-12)


def test_euclidean_bridge_is_catenoid():
    tau = 0.2
    mesh = bridge_mesh(PlaneChart(), tau, s_max=2.0)
    X = mesh.vertices
    assert np.allclose(X[:, 0] ** 2 + X[:, 1] ** 2, tau ** 2 * np.cosh(X[:, 2] / tau) ** 2, atol=1e-10)
    g = bridge_grid(PlaneChart(), tau, s_max=2.0, ds=0.1)
    waist = g.points[np.argmin(np.abs(g.s))]
    assert np.allclose(np.hypot(waist[:, 0], waist[:, 1]), tau)


def test_tilted_bridge_height_formula():
    tau = 0.1
    t = TiltData(0.0, (0.2, 0.1))
    th = np.linspace(0, 2 * math.pi, 9)[None, :]
    s = np.linspace(-2, 2, 7)[:, None]
    P = tilted_catenoid(tau, t, th, s)
    # theta measured from the rotation axis
    phase = th - math.atan2(t.axis[1], t.axis[0])
    # the tilt rotates the horizontal radius tau cosh s into the vertical
    z = tau * (math.cos(t.angle) * s + np.cosh(s) * math.sin(t.angle) * np.sin(phase))
    assert np.allclose(P[..., 2], z, atol=1e-13)


def test_normal_offset_shifts_waist():
    tau = 0.1
    base = tilted_catenoid(tau, TiltData(), np.linspace(0, 6, 5), 0.0)
    moved = tilted_catenoid(tau, TiltData(0.03, (0.0, 0.0)), np.linspace(0, 6, 5), 0.0)
    assert np.allclose(moved - base, [0.0, 0.0, 0.03])


def test_tilted_graph_matches_parametrization():
    tau, t = 0.05, TiltData(0.002, (0.03, -0.02))
    P = tilted_catenoid(tau, t, np.linspace(0, 2 * math.pi, 17), 3.0)
    z = tilted_catenoid_graph(tau, t, P[:, 0], P[:, 1], sheet=1)
    assert np.allclose(z, P[:, 2], atol=1e-12)


def test_tilted_graph_asymptotics():
    # graph minus (tau log(2r/tau) + kappa) decays like r^-2 on the outer annulus
    tau, t = 1e-3, TiltData(0.0, (2e-4, 0.0))
    r = np.geomspace(9 * tau, 0.5, 10)
    ang = 0.7
    x, y = r * math.cos(ang), r * math.sin(ang)
    dev = np.abs(tilted_catenoid_graph(tau, t, x, y) - tau * np.log(2 * r / tau) - t.value(x, y))
    assert np.max(dev * r ** 2) < 10 * (t.norm + tau) ** 3
    assert dev[-1] < dev[0]


def test_exp_map_round_sphere_oracle():
    # on the unit S^2 a geodesic of length L from p makes angle L at the centre
    bg = make_background("sphere")
    x, y = np.array([0.3, 0.0, 0.5]), np.array([0.0, 0.4, -0.2])
    th, s = exp_map(bg, 0.2, 0.3, x, y)
    P0 = embedding(bg, np.array(0.3), np.array(0.2))[0]
    P = embedding(bg, s, th)[0]
    ang = np.arccos(np.clip(P @ P0, -1, 1))
    assert np.allclose(ang, np.hypot(x, y), atol=1e-9)


def test_normal_chart_round_matches_exp_map():
    ch = NormalChart("sphere", 0.4, 0.2)
    x, y = np.array([0.1, -0.2]), np.array([0.05, 0.3])
    th, s = exp_map(ch.bg, 0.4, 0.2, x, y)
    P = embedding(ch.bg, s, th)[0]
    Q = ch(x, y, 0.0)
    assert np.allclose(P, Q, atol=1e-9)


def test_chart_validity():
    ch = NormalChart("sphere")
    with pytest.raises(GeometryError):
        ch(np.array([4.0]), np.array([0.0]), 0.0)


def test_icosphere_curvature_and_shrinker_residual():
    sph = icosphere(2.0, 4)
    H = discrete_mean_curvature(sph)
    assert np.max(np.abs(H - 1.0)) < 1e-2
    assert np.max(np.abs(shrinker_residual(sph, H))) < 1e-2


def test_catenoid_mesh_minimal():
    cat = catenoid_mesh(1.0, 2.0)
    H = discrete_mean_curvature(cat)
    assert np.max(np.abs(H[~cat.boundary_vertices()])) < 5e-3


def test_curvature_rejects_wrong_ambient():
    with pytest.raises(GeometryError):
        discrete_mean_curvature(catenoid_mesh(1.0, 1.0), "S3")


def test_bridge_curvature_scaling_and_harmonic():
    # rho^2 (H - <x, n>/2) on a shrinker bridge decays with tau
    ch = NormalChart("shrinker")
    peaks, harm = [], []
    for tau in (1e-2, 5e-3):
        g, R = bridge_curvature(ch, tau, alpha=0.01, residual="shrinker")
        rho2 = g.radius[:, None] ** 2
        peaks.append(np.max(np.abs(rho2 * R)))
        harm.append(np.max(first_harmonic(rho2 * R)))
    assert peaks[1] < 0.7 * peaks[0]
    # the round background is symmetric about every point, so the first harmonic vanishes
    assert max(harm) < 1e-10 * min(peaks)


def test_bridge_first_harmonic_on_catenoid():
    # off the waist of the catenoid the first harmonic is present, below the peak, and decays
    ch = NormalChart("catenoid", 0.0, 0.5)
    peaks, harm = [], []
    for tau in (1e-2, 5e-3):
        g, H = bridge_curvature(ch, tau, alpha=0.01)
        rho2 = g.radius[:, None] ** 2
        peaks.append(np.max(np.abs(rho2 * H)))
        harm.append(np.max(first_harmonic(rho2 * H)))
    assert harm[0] < peaks[0] and harm[1] < peaks[1]
    assert harm[1] < 0.7 * harm[0]


def test_initial_surface_topology(sphere_surface, sphere_data):
    L = len(sphere_data.points)
    assert sphere_surface.euler_characteristic() == 2 - 2 * (L - 1)
    V = sphere_surface.n_vertices
    E = len(np.unique(np.sort(sphere_surface.edges(), axis=1), axis=0))
    F = len(sphere_surface.triangles)
    assert V - E + F == sphere_surface.euler_characteristic()
    assert sphere_surface.orientation_consistent()
    assert sphere_surface.normals_aligned()
    assert len(sphere_surface.boundary_edges()) == 0


def test_graph_vertices_clear_of_bridges(sphere_surface, sphere_data):
    assert graph_vertices_clear(sphere_surface, sphere_data) > 1.0


def test_initial_surface_on_unit_sphere(sphere_surface):
    assert sphere_surface.ambient_dim == 4
    assert np.allclose(np.linalg.norm(sphere_surface.vertices, axis=1), 1.0, atol=1e-10)


def test_large_tilts_rejected(sphere_data):
    with pytest.raises(GeometryError):
        build_initial_surface(sphere_data, tilts="mismatch", ds=0.4)
    with pytest.raises(GeometryError):
        build_initial_surface(sphere_data, tilts=[TiltData()], ds=0.4)


def test_obj_roundtrip(tmp_path, sphere_surface):
    path = tmp_path / "m.obj"
    write_obj(sphere_surface, path)
    back = read_obj(path)
    assert np.array_equal(back.vertices, sphere_surface.vertices)
    assert np.array_equal(np.sort(back.triangles, axis=0), np.sort(sphere_surface.triangles, axis=0))
    assert back.meta["background"] == sphere_surface.meta["background"]
    assert set(back.tag_names()) <= set(sphere_surface.tag_names())
