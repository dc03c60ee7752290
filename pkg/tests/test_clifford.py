import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldforge.clifford import (CliffordConfig, CliffordError, SpectralPhiPrime, TorusField, angle_g,
                              clifford_eigenvalue, clifford_F, clifford_mismatch, clifford_phi,
                              clifford_phi_avg, clifford_phi_avg_slope, inverse_eigenvalue_bound)

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def field():
    return TorusField(4, 16)


def test_flux_value():
    assert clifford_F(4) == pytest.approx(SQRT2 * math.tan(SQRT2 * math.pi / 4), rel=1e-15)
    # the quoted reference 2.8487 is a rounded evaluation; the closed form gives 2.85387
    assert clifford_F(4) == pytest.approx(2.8487, abs=1e-2)
    assert clifford_F(2) < 0
    assert clifford_F(3) > 0


@pytest.mark.parametrize("k", [1, 2, 2.5])
def test_small_k_rejected(k):
    with pytest.raises(CliffordError):
        CliffordConfig(k, 16)


def test_config_validation():
    with pytest.raises(CliffordError):
        CliffordConfig(4, 3)
    with pytest.raises(CliffordError):
        CliffordConfig(4, 16, lattice="hex")
    with pytest.raises(CliffordError):
        CliffordConfig(3, 64, lattice="triple")


def test_tau_formula():
    cfg = CliffordConfig(4, 16, zeta=0.2)
    assert cfg.tau == pytest.approx(math.exp(0.2) * math.exp(-16 / (2 * clifford_F(4))) / 16, rel=1e-14)
    tri = CliffordConfig(4, 16, lattice="triple")
    assert tri.tau == pytest.approx(math.exp(-3 * 4 * 16 / (4 * math.pi)) / 16, rel=1e-14)


def test_average_closed_form():
    k, m = 5, 20
    g = angle_g(k)
    assert clifford_phi_avg(k, m, 0.0) == pytest.approx(m / (2 * SQRT2 * math.sin(g)) * math.cos(g))
    # u'' + 4u = 0
    d, h = 0.1, 1e-4
    u = lambda x: clifford_phi_avg(k, m, x)
    assert (u(d + h) - 2 * u(d) + u(d - h)) / h ** 2 + 4 * u(d) == pytest.approx(0.0, abs=1e-5)
    # symmetric about the midline, so zero slope there
    assert (u(0.5 * g) - u(0.5 * g - h)) / h == pytest.approx(0.0, abs=1e-2)
    with pytest.raises(CliffordError):
        clifford_phi_avg(k, m, g)


def test_average_jump_matches_point_density():
    # total jump of the average = 2 pi x (points per unit circle length) = sqrt2 m
    k, m = 4, 32
    assert 2 * clifford_phi_avg_slope(k, m) == pytest.approx(SQRT2 * m, rel=1e-14)


def test_field_y_average_is_closed_form(field):
    n = 2048
    y = field.Ly * np.arange(n) / n
    for d in (0.02, 0.1, 0.3, 0.5):
        assert np.mean(field(np.full(n, d), y)) == pytest.approx(clifford_phi_avg(4, 16, d), abs=1e-9)


def test_field_solves_equation(field):
    # fourth-order stencil for (Delta + 4) Phi = 0 off the lattice
    h = 2e-3
    w = np.array([-1, 16, -30, 16, -1]) / 12.0
    o = np.arange(-2, 3) * h
    for x, y in ((0.1, 0.03), (0.2, 0.07), (0.4, 0.1)):
        lap = sum(wt * (field(x + dx, y) + field(x, y + dx)) for wt, dx in zip(w, o)) / h ** 2
        assert abs(float(lap) + 4 * float(field(x, y))) < 1e-5 * abs(float(field(x, y))) + 1e-4


def test_field_periodic_and_symmetric(field):
    rng = np.random.default_rng(3)
    x, y = rng.uniform(0.01, 0.5, 20), rng.uniform(0.01, 0.2, 20)
    base = field(x, y)
    assert np.allclose(field(x + field.Lx, y), base, atol=1e-10)
    assert np.allclose(field(x, y + field.Ly), base, atol=1e-10)
    assert np.allclose(field(-x, y), base, atol=1e-12)
    assert np.allclose(field(x, -y), base, atol=1e-12)


def test_grid_matches_pointwise(field):
    x = np.linspace(0.01, 0.5, 7)
    y = np.linspace(0.0, field.Ly / 2, 5)
    X, Y = np.meshgrid(x, y, indexing="ij")
    assert np.allclose(field.grid(x, y), field(X, Y), atol=1e-10)


def test_regular_value_two_routes(field):
    series = clifford_mismatch(CliffordConfig(4, 16), "series")
    ext = clifford_mismatch(CliffordConfig(4, 16), "circle_extraction")
    assert series["regular_value"] == pytest.approx(ext["regular_value"], abs=1e-9)
    assert abs(series["identity_residual"]) < 1e-6
    assert abs(ext["identity_residual"]) < 1e-6


def test_log_singularity(field):
    r = np.array([1e-4, 1e-5])
    vals = field(r, 0.0) - np.log(r)
    assert np.allclose(vals, field.regular_value(), atol=1e-6)


def test_eigenvalue_bound_brute_force():
    k, m = 4, 32
    ell, n = np.meshgrid(np.arange(0, 60), np.arange(1, 60))
    lam = clifford_eigenvalue(k, m, ell, n)
    assert np.all(lam < 0)
    assert inverse_eigenvalue_bound(k, m) == pytest.approx(np.max(1 / np.abs(lam)), rel=1e-14)


def test_operator_residual(field):
    x = np.array([0.1, 0.25, 0.4])
    y = np.array([0.02, 0.05, 0.1])
    assert np.max(np.abs(field.operator_residual(x, y))) < 1e-6


@given(zeta=st.floats(-1, 1))
@settings(max_examples=10, deadline=None)
def test_mismatch_expansion_tracks_zeta(zeta):
    res = clifford_mismatch(CliffordConfig(4, 16, zeta=zeta))
    assert res["tau"] == pytest.approx(math.exp(zeta - 16 / (2 * clifford_F(4))) / 16)
    assert res["zeta_gap"] == pytest.approx(-res["phi_prime_p"] - math.log(50.0) - res["identity_residual"],
                                            abs=1e-9)


def test_triple_lattice_two_routes():
    res = clifford_mismatch(CliffordConfig(4, 16, lattice="triple", sigma=(0.1, -0.05)))
    assert np.allclose(res["mu"], res["mu_formula"], atol=1e-10)
    assert len(res["Z"]) == 3


def test_triple_sigma_response():
    # sigma shifts the weights, so Z moves; the unweighted sum of sigmas is zero
    base = clifford_mismatch(CliffordConfig(4, 16, lattice="triple"))
    moved = clifford_mismatch(CliffordConfig(4, 16, lattice="triple", sigma=(0.05, 0.0)))
    assert not np.allclose(base["Z"], moved["Z"])
    assert sum(CliffordConfig(4, 16, sigma=(0.3, -0.1)).sigmas) == pytest.approx(0.0)


def test_clifford_phi_grid_and_spectral():
    gaps = []
    for kappa in (8.0, 16.0):
        res = clifford_phi(4, 16, kappa=kappa)
        P, S = res["Phi_prime"], res["Phi_prime_spectral"]
        assert np.all(np.isfinite(P))
        X, Y = np.meshgrid(res["x"], res["y"], indexing="ij")
        far = np.hypot(X, Y) > 3.0 / 16
        # direct and spectral routes agree away from the point
        assert np.max(np.abs(P - S)[far]) < 1e-4 * np.max(np.abs(P))
        gaps.append(np.max(np.abs(P - S)))
    # near the point the spectral route converges with its resolution
    assert gaps[1] < 0.5 * gaps[0]


def test_e_prime_vanishes_near_lattice(field):
    r = 1.9 * field.delta * np.sqrt(np.random.default_rng(0).uniform(0, 1, 200))
    t = np.random.default_rng(1).uniform(0, 2 * math.pi, 200)
    assert np.all(field.e_prime(r * np.cos(t), r * np.sin(t)) == 0.0)


def test_triple_split_has_no_km_term():
    # the km/4pi scale would give slope about 3k/4pi ~ 0.95 in m
    ms = np.array([8, 16, 24])
    splits = [clifford_mismatch(CliffordConfig(4, int(m), lattice="triple"))["split_2"] for m in ms]
    slope = np.polyfit(ms, splits, 1)[0]
    assert abs(slope) < 0.1
