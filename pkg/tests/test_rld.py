import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rk4_profile, rk4_shoot
from ldforge.backgrounds import catenoid_even, catenoid_odd, make_background
from ldforge.rld import (FluxRatios, Infeasible, TooFewCircles, ab_coefficients, balanced_sigma, build_rld,
                         catenoid_a_family, end_flux_residual, jump_derivatives, kcirc_min, rebuild_with,
                         rld_critical_catenoid, smooth_at_ends)


def test_flux_ratios_validation():
    with pytest.raises(ValueError):
        FluxRatios((0.0,), (0.0, 1.0))
    with pytest.raises(ValueError):
        FluxRatios((), (0.0, 0.0))
    r = FluxRatios.from_lists([0.1], None, k=3)
    assert r.sigma == (0.1, 0.0) and r.xi == (0.0, 0.0, 0.0)
    assert r.weight(2) == pytest.approx(math.exp(0.1))


def test_balanced_sigma():
    r = balanced_sigma([4, 8, -16])
    assert r.sigma == pytest.approx((math.log(2), math.log(2)))
    with pytest.raises(ValueError):
        balanced_sigma([3, 0])


def test_second_jump_value(catenoid):
    # first flux equal to the inverse root of the even solution
    sol = build_rld(catenoid, 1.0 / 1.1996786402577337, FluxRatios.zeros(2), max_jumps=2)
    assert sol.s[1] == pytest.approx(2.414, abs=1e-3)


def test_build_deterministic(catenoid):
    a = build_rld(catenoid, 0.4, FluxRatios.zeros(3), max_jumps=3).to_dict()
    b = build_rld(catenoid, 0.4, FluxRatios.zeros(3), max_jumps=3).to_dict()
    assert a == b


@pytest.mark.parametrize("sigma,xi", [((0.0,), (0.0, 0.0)), ((0.2,), (0.1, -0.2))])
def test_shrinker_matches_rk4_shooter(shrinker, sigma, xi):
    ratios = FluxRatios(sigma, xi)
    sol = build_rld(shrinker, 0.5, ratios, max_jumps=2)
    ref = rk4_shoot(shrinker, 0.5, ratios, 2)
    assert np.max(np.abs(sol.s - ref)) < 1e-4


def test_smooth_at_ends_catenoid_oracle(catenoid):
    sol = smooth_at_ends(catenoid, FluxRatios.zeros(2), 4)
    assert end_flux_residual(sol) < 1e-9
    ref = rk4_shoot(catenoid, float(sol.Fminus[0]), FluxRatios.zeros(2), 2)
    assert np.max(np.abs(sol.s - ref)) < 1e-4
    # last interval is a multiple of tanh
    s = np.linspace(sol.s[-1] + 0.1, 6, 20)
    ratio = sol.phi(s) / np.tanh(s)
    assert np.ptp(ratio) < 1e-9 * abs(ratio[0])


@pytest.mark.parametrize("name,kcirc", [("catenoid", 4), ("shrinker", 3), ("sphere", 5), ("catenoid", 3)])
def test_smooth_at_ends_properties(name, kcirc):
    bg = make_background(name)
    sol = smooth_at_ends(bg, None, kcirc)
    assert sol.kcirc == kcirc
    assert end_flux_residual(sol) < 1e-9
    s = np.linspace(0, 8, 400)
    assert np.all(sol.phi(s) > 0)
    assert np.all(np.diff(sol.s) > 0)


def test_kcirc_min_values(catenoid, shrinker):
    assert kcirc_min(catenoid) == 2
    assert kcirc_min(shrinker) == 2
    with pytest.raises(Infeasible):
        smooth_at_ends(shrinker, None, 1)


def test_catenoid_single_circle_not_admissible(catenoid):
    with pytest.raises((Infeasible, TooFewCircles)):
        smooth_at_ends(catenoid, None, 1)


@given(sig=st.floats(-0.3, 0.3), x1=st.floats(-0.3, 0.3), x2=st.floats(-0.3, 0.3))
@settings(max_examples=15, deadline=None)
def test_realized_ratios_reproduce_input(sig, x1, x2):
    bg = make_background("catenoid")
    ratios = FluxRatios((sig,), (x1, x2))
    sol = build_rld(bg, 0.5, ratios, max_jumps=2)
    if sol.k < 2:
        return
    rs, rx = sol.realized_ratios()
    assert rs == pytest.approx([sig], abs=1e-9)
    assert rx == pytest.approx([x1, x2], abs=1e-9)


def test_continuity_across_circles(catenoid):
    sol = smooth_at_ends(catenoid, FluxRatios((0.1,), (0.05, -0.05)), 4)
    for si in sol.s:
        assert float(sol.phi(si - 1e-10)) == pytest.approx(float(sol.phi(si + 1e-10)), abs=1e-8)


def test_jump_derivative_single_circle(catenoid):
    # k = 1: ds/dF = (1 - xi) / (V + F_-^2)
    sol = build_rld(catenoid, 0.5, FluxRatios.zeros(1), max_jumps=1)
    D = jump_derivatives(sol)
    s1 = sol.s[0]
    assert D[0, 0] == pytest.approx(1.0 / (2 / math.cosh(s1) ** 2 + 0.25), rel=1e-12)
    assert D[0, 0] > 0


def test_jump_derivatives_vs_differences(shrinker):
    ratios = FluxRatios((0.1,), (0.05, 0.0))
    sol = build_rld(shrinker, 0.5 * 0.95, ratios, max_jumps=2)
    D = jump_derivatives(sol)
    h = 1e-6
    up = rebuild_with(sol, sol.F1 + h, ratios).s
    dn = rebuild_with(sol, sol.F1 - h, ratios).s
    assert np.allclose(D[:, 0], (up - dn) / (2 * h), rtol=1e-4)
    rp = FluxRatios((0.1 + h,), (0.05, 0.0))
    rm = FluxRatios((0.1 - h,), (0.05, 0.0))
    fd = (rebuild_with(sol, sol.F1, rp).s - rebuild_with(sol, sol.F1, rm).s) / (2 * h)
    assert np.allclose(D[:, 1], fd, rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("F", [0.9, 0.966, 1.0])
def test_critical_odd_shooting_closed_form(F):
    # phi = 1 - s tanh s + F tanh s on [0, s1]; s1 is where F_- reaches F
    from scipy.optimize import brentq
    from ldforge.backgrounds import critical_basis
    bg = make_background("critical-catenoid")
    phi = lambda s: 1 - s * math.tanh(s) + F * math.tanh(s)
    dphi = lambda s: -math.tanh(s) - s / math.cosh(s) ** 2 + F / math.cosh(s) ** 2
    s1 = brentq(lambda s: -dphi(s) / phi(s) - F, 0.1, bg.half_length)
    sol = build_rld(bg, F, FluxRatios.zeros(2), "odd", max_jumps=2)
    assert sol.s[1] == pytest.approx(s1, abs=1e-9)
    e, de = (float(v) for v in critical_basis(s1))
    assert de / e > 0


def test_critical_catenoid_kcirc2():
    sol = rld_critical_catenoid(None, 2)
    bg = sol.background
    r = bg.half_length
    assert 0.7 < sol.s[0] < 0.8
    assert r * float(sol.dphi(r)) / float(sol.phi(r)) == pytest.approx(1.0, abs=1e-8)


def test_critical_catenoid_rejects_large_kcirc():
    with pytest.raises(Infeasible):
        rld_critical_catenoid(None, 5)


def test_a_family_zero_reproduces_smooth(catenoid):
    a = catenoid_a_family(None, 4, 0.0)
    b = smooth_at_ends(catenoid, None, 4)
    assert np.allclose(a.s, b.s, atol=1e-9)


def test_a_family_nonzero(catenoid):
    sol = catenoid_a_family(None, 4, -0.1)
    A, B = ab_coefficients(sol, sol.k - 1)
    assert A == pytest.approx(-0.1, abs=1e-8)
    # coefficients via the Wronskian agree with a direct 2x2 solve
    sk = float(sol.s[-1])
    M = np.array([[float(catenoid_even(sk)[0]), float(catenoid_odd(sk)[0])],
                  [float(catenoid_even(sk)[1]), float(catenoid_odd(sk)[1])]])
    rhs = np.array([sol.phi_at[-1], sol.Fplus[-1] * sol.phi_at[-1]])
    assert np.allclose(np.linalg.solve(M, rhs), [A, B], atol=1e-10)


def test_a_family_window(catenoid):
    with pytest.raises(Infeasible):
        catenoid_a_family(None, 4, 0.1)
    with pytest.raises(Infeasible):
        catenoid_a_family(None, 4, -0.6)


@pytest.mark.parametrize("kcirc", [8, 16, 32])
def test_large_kcirc_flux_scale(catenoid, kcirc):
    # F1 shrinks roughly like 1/kcirc
    sol = smooth_at_ends(catenoid, None, kcirc)
    assert 0.2 < sol.F1 * kcirc < 5.0
    assert np.all(sol.phi_at > 0)


def test_critical_kcirc2_window():
    from ldforge.backgrounds import critical_basis
    from ldforge.ode_core import profile_root, end_solution
    sol = rld_critical_catenoid(FluxRatios((), (0.0,)), 2)
    bg = sol.background
    crit_root = profile_root(end_solution(bg), 0.0, bg.half_length)
    assert crit_root < sol.s[0] < bg.half_length


def test_jump_derivatives_positive(catenoid):
    sol = smooth_at_ends(catenoid, None, 8)
    D = jump_derivatives(sol)
    assert np.all(D[:, 0] > 0)


def test_a_family_slope_scales_with_k(catenoid):
    # dA_k/dF at the smooth solution is negative and its size grows with k
    slopes = []
    for k in (2, 3, 4):
        sol = smooth_at_ends(catenoid, None, 2 * k)
        h = 1e-6
        A = lambda F: ab_coefficients(build_rld(catenoid, F, FluxRatios.zeros(k), max_jumps=k), k - 1)[0]
        slopes.append((A(sol.F1 + h) - A(sol.F1 - h)) / (2 * h))
    assert all(v < 0 for v in slopes)
    assert abs(slopes[0]) < abs(slopes[1]) < abs(slopes[2])
    ratio = np.array(slopes) / np.array([2, 3, 4])
    assert np.ptp(ratio) < 0.5 * np.mean(np.abs(ratio))
