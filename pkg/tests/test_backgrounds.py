import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldforge.backgrounds import (BackgroundError, BackgroundId, EndKind, critical_basis, critical_root,
                                 embedding, fermi_chart, load_custom, make_background)

SMOOTH = ("catenoid", "sphere", "shrinker")
ALL = SMOOTH + ("critical-catenoid", "clifford")


def test_potential_values():
    assert make_background("catenoid").V(0.0) == pytest.approx(2.0)
    assert make_background(BackgroundId.SPHERICAL_SHRINKER).V(0.0) == pytest.approx(4.0)
    assert make_background("catenoid").V(1.0) == pytest.approx(2.0 / math.cosh(1.0) ** 2, abs=1e-14)
    assert make_background("catenoid").V(1.0) == pytest.approx(0.83995, abs=1e-5)


def test_unknown_background_rejected():
    with pytest.raises(BackgroundError):
        make_background("torus-of-doom")


@pytest.mark.parametrize("name", ALL)
@given(s=st.floats(0.0, 1.15))
@settings(max_examples=30, deadline=None)
def test_potential_even_and_positive(name, s):
    bg = make_background(name)
    assert float(bg.V(s)) > 0
    assert float(bg.V(s)) == pytest.approx(float(bg.V(-s)), rel=1e-14)


@pytest.mark.parametrize("name", SMOOTH)
def test_potential_decay_band(name):
    bg = make_background(name)
    s = np.linspace(2.0, 10.0, 81)
    band = bg.V(s) * np.exp(2 * s)
    assert band.min() > 0.1 and band.max() < 20.0


def _ode_residual(fn, V, s, h=1e-3):
    # fourth-order second difference of the closed form
    f = lambda x: fn(x)[0]
    d2 = (-f(s + 2 * h) + 16 * f(s + h) - 30 * f(s) + 16 * f(s - h) - f(s - 2 * h)) / (12 * h * h)
    return np.abs(d2 + V(s) * f(s))


@pytest.mark.parametrize("name", ("catenoid", "sphere", "critical-catenoid", "clifford"))
def test_closed_basis_solves_ode(name):
    bg = make_background(name)
    s = np.linspace(0.05, min(3.0, bg.half_length - 0.01), 100)
    for fn in (bg.closed_basis.even_solution, bg.closed_basis.end_solution):
        # the difference stencil limits the check, not the closed form
        assert _ode_residual(fn, bg.V, s).max() < 1e-8


def test_catenoid_basis_closed_forms():
    bg = make_background("catenoid")
    s = np.linspace(-3, 3, 13)
    assert np.allclose(bg.closed_basis.even_solution(s)[0], 1 - s * np.tanh(s), atol=1e-15)
    assert np.allclose(bg.closed_basis.end_solution(s)[0], np.tanh(s), atol=1e-15)


def test_critical_root_and_robin_condition():
    r = critical_root()
    assert abs(r - 1.1997) < 1e-3
    assert abs(1 - r * math.tanh(r)) < 1e-12
    phi, dphi = critical_basis(r)
    assert r * float(dphi) / float(phi) == pytest.approx(1.0, abs=1e-8)
    bg = make_background("critical-catenoid")
    assert bg.half_length == r
    assert bg.end_condition.kind is EndKind.ROBIN


def test_shrinker_embedding_is_radius_two_sphere():
    bg = make_background("shrinker")
    s, th = np.meshgrid(np.linspace(-3, 3, 7), np.linspace(0, 6, 5))
    X, nu = embedding(bg, s, th)
    assert np.allclose(np.linalg.norm(X, axis=-1), 2.0)
    assert np.allclose(nu, X / 2.0)
    # conformal factor e^{2 omega} = (4/e) sech^2 s
    assert np.allclose(np.exp(2 * bg.omega(s)), 4 / math.e / np.cosh(s) ** 2)


def test_embedding_conformal_factor_matches_metric():
    for name in ("catenoid", "sphere", "shrinker", "clifford"):
        bg = make_background(name)
        s, th, h = 0.4, 0.7, 1e-6
        Xs = (embedding(bg, s + h, th)[0] - embedding(bg, s - h, th)[0]) / (2 * h)
        Xt = (embedding(bg, s, th + h)[0] - embedding(bg, s, th - h)[0]) / (2 * h)
        e2w = math.exp(2 * float(bg.omega(s)))
        if name == "shrinker":
            # the shrinker factor carries the Gaussian weight e^{-|x|^2/4} = e^{-1}
            e2w *= math.e
        assert np.dot(Xs, Xs) == pytest.approx(e2w, rel=1e-7)
        assert np.dot(Xt, Xt) == pytest.approx(e2w, rel=1e-7)
        assert abs(np.dot(Xs, Xt)) < 1e-8


def test_fermi_chart_base_points():
    sph = fermi_chart(BackgroundId.SPHERE_IN_S3)
    assert np.allclose(sph.map(0.0, 0.0, 0.0), (0, 0, 1, 0))
    cl = fermi_chart(BackgroundId.CLIFFORD_TORUS)
    p = cl.map(0.0, 0.0, 0.0)
    # (1/sqrt2, 1/sqrt2) in C^2
    assert np.allclose(p, (1 / math.sqrt(2), 0, 1 / math.sqrt(2), 0))


def test_sphere_chart_on_unit_sphere():
    rng = np.random.default_rng(1)
    r, th, z = rng.uniform(-3, 3, (3, 1000))
    P = fermi_chart(BackgroundId.SPHERE_IN_S3).map(r, th, z)
    assert np.max(np.abs(np.linalg.norm(P, axis=-1) - 1)) < 1e-12


def test_sphere_chart_gauss_lemma():
    # metric cos^2 z (dr^2 + sin^2 r dtheta^2) + dz^2
    ch = fermi_chart(BackgroundId.SPHERE_IN_S3)
    r, th, z, h = 0.3, 1.1, 0.2, 1e-6
    d = lambda i: (ch.map(*(np.array([r, th, z]) + h * np.eye(3)[i])) -
                   ch.map(*(np.array([r, th, z]) - h * np.eye(3)[i]))) / (2 * h)
    Er, Et, Ez = d(0), d(1), d(2)
    assert np.dot(Er, Er) == pytest.approx(math.cos(z) ** 2, rel=1e-8)
    assert np.dot(Et, Et) == pytest.approx((math.cos(z) * math.sin(r)) ** 2, rel=1e-8)
    assert np.dot(Ez, Ez) == pytest.approx(1.0, rel=1e-8)
    assert abs(np.dot(Er, Ez)) < 1e-8


def test_clifford_chart_metric():
    # (1 + sin 2z) dx^2 + (1 - sin 2z) dy^2 + dz^2
    ch = fermi_chart(BackgroundId.CLIFFORD_TORUS)
    x, y, z, h = 0.2, 0.5, 0.1, 1e-6
    d = lambda i: (ch.map(*(np.array([x, y, z]) + h * np.eye(3)[i])) -
                   ch.map(*(np.array([x, y, z]) - h * np.eye(3)[i]))) / (2 * h)
    Ex, Ey, Ez = d(0), d(1), d(2)
    assert np.dot(Ex, Ex) == pytest.approx(1 + math.sin(2 * z), rel=1e-8)
    assert np.dot(Ey, Ey) == pytest.approx(1 - math.sin(2 * z), rel=1e-8)
    assert np.dot(Ez, Ez) == pytest.approx(1.0, rel=1e-8)


def _custom_json(tmp_path, V_fn):
    s = np.arange(0.0, 6.0 + 1e-9, 1e-3)
    samples = [[float(a), float(V_fn(a)), float(math.log(math.cosh(a)))] for a in s]
    path = tmp_path / "bg.json"
    path.write_text(json.dumps({"samples": samples, "half_length": None, "end_condition": "SmoothEnds"}))
    return path


def test_custom_background_matches_catenoid(tmp_path):
    bg = load_custom(_custom_json(tmp_path, lambda a: 2.0 / math.cosh(a) ** 2))
    s = np.linspace(0, 5, 11)
    assert np.allclose(bg.V(s), 2 / np.cosh(s) ** 2, atol=1e-10)


def test_custom_background_rejects_nonpositive(tmp_path):
    with pytest.raises(BackgroundError):
        load_custom(_custom_json(tmp_path, lambda a: 1.0 - a))
