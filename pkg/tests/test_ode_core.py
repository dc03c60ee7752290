import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rk4_profile
from ldforge import ode_core
from ldforge.backgrounds import make_background
from ldforge.ode_core import (Side, flux, flux_identity_residual, h_flux_derivatives, h_solution,
                              integrate, j_bar, phi_bar, phi_end, phi_even, profile_root)


def test_zero_profile(catenoid):
    p = integrate(catenoid, 0.0, 0.0, 0.0, 3.0)
    assert np.all(p.phi(np.linspace(0, 3, 7)) == 0.0)


def test_integrate_matches_closed_even(catenoid):
    p = integrate(catenoid, 0.0, 1.0, 0.0, 3.0)
    s = np.linspace(0, 3, 31)
    assert np.max(np.abs(p.phi(s) - (1 - s * np.tanh(s)))) < 1e-8


def test_integrate_tanh_from_three(catenoid):
    p = integrate(catenoid, 3.0, math.tanh(3.0), 1 / math.cosh(3.0) ** 2, -2.0)
    s = np.linspace(-2, 3, 26)
    assert np.max(np.abs(p.phi(s) - np.tanh(s))) < 1e-8


@pytest.mark.parametrize("name", ("catenoid", "shrinker", "sphere"))
def test_integrate_matches_rk4_oracle(name):
    bg = make_background(name)
    s, y, dy = rk4_profile(bg, 0.2, 0.7, -0.4, 2.5, h=1e-4)
    p = integrate(bg, 0.2, 0.7, -0.4, 2.5)
    assert np.max(np.abs(p.phi(s) - y)) < 1e-9
    assert np.max(np.abs(p.dphi(s) - dy)) < 1e-9


@given(c=st.floats(0.1, 10.0), s_bar=st.floats(0.0, 1.0))
@settings(max_examples=20, deadline=None)
def test_flux_scale_invariance(c, s_bar):
    bg = make_background("catenoid")
    p = integrate(bg, 0.0, 1.0, 0.0, 1.1)
    q = integrate(bg, 0.0, c, 0.0, 1.1)
    assert flux(q, s_bar, Side.PLUS).value == pytest.approx(flux(p, s_bar, Side.PLUS).value, rel=1e-9, abs=1e-12)


def test_flux_sign_convention(catenoid):
    p = phi_even(catenoid)
    s = 0.5
    fp = flux(p, s, "Plus").value
    fm = flux(p, s, "Minus").value
    assert fp == pytest.approx(-fm)
    assert fp == pytest.approx(float(p.dphi(s) / p.phi(s)))


def test_flux_at_root_raises(catenoid):
    r = profile_root(phi_even(catenoid), 0.0, 3.0)
    assert r == pytest.approx(1.19968, abs=1e-5)
    assert abs(flux(phi_even(catenoid), r, "Plus").value) > 1e6
    with pytest.raises(ode_core.PoleError):
        flux(j_bar(catenoid, 1.0, 0.5, span=1.0), 0.5, "Plus")


def test_critical_flux_at_root():
    bg = make_background("critical-catenoid")
    p = ode_core.end_solution(bg)
    r = bg.half_length
    assert flux(p, r, "Plus").value == pytest.approx(1.0 / r, rel=1e-8)


def test_h_solution_reproduces_even(catenoid):
    h = h_solution(catenoid, 0.0, 0.0)
    s = np.linspace(0, 1.1, 12)
    assert np.max(np.abs(h.phi(s) - (1 - s * np.tanh(s)))) < 1e-8
    # terminated at the first root
    assert h.hi == pytest.approx(1.19968, abs=1e-5)


@pytest.mark.parametrize("name", ("catenoid", "shrinker", "clifford"))
def test_h_flux_derivatives_vs_differences(name):
    bg = make_background(name)
    F, sb, s, eps = 0.3, 0.2, 0.6, 1e-5
    d_sb, d_F = h_flux_derivatives(bg, F, sb, s, tol=1e-12)
    fp = lambda F_, sb_: flux(h_solution(bg, F_, sb_, tol=1e-12), s, "Plus").value
    fd_sb = (fp(F, sb + eps) - fp(F, sb - eps)) / (2 * eps)
    fd_F = (fp(F + eps, sb) - fp(F - eps, sb)) / (2 * eps)
    assert d_sb == pytest.approx(fd_sb, rel=1e-6)
    assert d_F == pytest.approx(fd_F, rel=1e-6)


@given(a1=st.floats(-2, 2), b1=st.floats(-2, 2), a2=st.floats(-2, 2), b2=st.floats(-2, 2))
@settings(max_examples=10, deadline=None)
def test_phi_bar_linear(a1, b1, a2, b2):
    bg = make_background("shrinker")
    s = np.linspace(-1.5, 2.5, 9)
    p1, p2 = phi_bar(bg, a1, b1, 0.5, span=2.0), phi_bar(bg, a2, b2, 0.5, span=2.0)
    p12 = phi_bar(bg, a1 + a2, b1 + b2, 0.5, span=2.0)
    assert np.allclose(p12.phi(s), p1.phi(s) + p2.phi(s), atol=1e-8)


def test_j_bar_kink(catenoid):
    j = j_bar(catenoid, 1.0, 0.5, span=1.0)
    assert float(j.phi(0.5)) == 0.0
    # one-sided outward derivatives both equal c
    assert float(j.dphi(0.5 + 1e-9)) == pytest.approx(1.0, abs=1e-6)
    assert float(j.dphi(0.5 - 1e-9)) == pytest.approx(-1.0, abs=1e-6)
    # symmetric about s_bar to first order
    assert float(j.phi(0.51)) == pytest.approx(float(j.phi(0.49)), abs=1e-4)


@pytest.mark.parametrize("name", ("catenoid", "shrinker"))
def test_phi_end_tends_to_one_and_solves(name):
    bg = make_background(name)
    p = phi_end(bg)
    assert float(p.phi(30.0)) == pytest.approx(1.0, abs=1e-8)
    s, y, dy = rk4_profile(bg, 3.0, float(p.phi(3.0)), float(p.dphi(3.0)), 0.5, h=1e-4)
    assert np.max(np.abs(p.phi(s) - y)) < 1e-8


def test_phi_end_catenoid_is_tanh(catenoid):
    s = np.linspace(0, 5, 11)
    assert np.allclose(phi_end(catenoid).phi(s), np.tanh(s), atol=1e-14)


def test_end_flux_decreasing(shrinker):
    # F_+' = -(V + F_+^2) < 0 away from roots
    p = phi_end(shrinker)
    r = profile_root(p, 0.0, 3.0)
    s = np.linspace(r + 0.05, 5, 40)
    Fp = p.dphi(s) / p.phi(s)
    assert np.all(np.diff(Fp) < 0)


@given(a=st.floats(0.0, 0.5), b=st.floats(0.55, 1.1))
@settings(max_examples=15, deadline=None)
def test_flux_identity(a, b):
    bg = make_background("catenoid")
    assert abs(flux_identity_residual(bg, phi_even(bg), a, b)) < 1e-8


def test_tol_range_enforced(catenoid):
    with pytest.raises(ValueError):
        integrate(catenoid, 0, 1, 0, 1, tol=1e-15)
    with pytest.raises(ValueError):
        integrate(catenoid, 0, 1, 0, 1, tol=1e-3)


def test_tol_env_override(monkeypatch):
    monkeypatch.setenv("LDFORGE_TOL", "1e-8")
    assert ode_core.default_tol() == 1e-8
    monkeypatch.setenv("LDFORGE_TOL", "1e-2")
    with pytest.raises(ValueError):
        integrate(make_background("catenoid"), 0, 1, 0, 1)


def test_domain_check_on_finite_background():
    bg = make_background("critical-catenoid")
    with pytest.raises(ode_core.DomainError):
        integrate(bg, 0.0, 1.0, 0.0, bg.half_length + 0.5)


def test_closed_form_values(catenoid):
    assert float(integrate(catenoid, 0.0, 1.0, 0.0, 2.0).phi(2.0)) == pytest.approx(1 - 2 * math.tanh(2), abs=1e-9)
    assert float(integrate(catenoid, 0.0, 0.0, 1.0, 3.0).phi(3.0)) == pytest.approx(0.99505, abs=1e-5)


def test_h_solution_is_phi_bar(catenoid):
    s = np.linspace(0.3, 1.0, 8)
    h = h_solution(catenoid, 0.4, 0.3)
    p = phi_bar(catenoid, 1.0, 0.4, 0.3)
    assert np.allclose(h.phi(s), p.phi(s), atol=1e-9)


def test_shrinker_end_solution_signs(shrinker):
    p = phi_end(shrinker)
    assert float(p.phi(0.0)) < 0
    assert float(p.dphi(8.0)) / float(p.phi(8.0)) < 1e-5


def test_catenoid_end_residual_on_long_interval(catenoid):
    s, y, _ = rk4_profile(catenoid, 0.0, 0.0, 1.0, 10.0, h=1e-3)
    assert np.max(np.abs(y - np.tanh(s))) < 1e-8


def test_j_bar_scaled_limit():
    # j[m; s_bar] - |s_hat| on |s_hat| <= 1 shrinks like 1/m^2
    bg = make_background("catenoid")
    sb = 0.6
    errs = []
    ms = (20, 40, 80)
    for m in ms:
        j = j_bar(bg, float(m), sb, span=1.0)
        sh = np.linspace(-1, 1, 41)
        errs.append(np.max(np.abs(j.phi(sb + sh / m) - np.abs(sh))))
    slope = np.polyfit(np.log(ms), np.log(errs), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.1)
