"""Acceptance suite: reproduction of reference numbers plus independent-oracle checks.

Each check returns a ``CheckResult``; ``run_all`` drives them for the CLI and tests.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .backgrounds import BackgroundId, make_background
from .ode_core import (default_tol, end_solution, flux_identity_residual, h_flux_derivatives,
                       h_solution, integrate, phi_even, profile_root)
from .rld import FluxRatios, build_rld, jump_derivatives, smooth_at_ends

SEED = 20240611
FLUX_BACKGROUNDS = (BackgroundId.CATENOID, BackgroundId.SPHERE_IN_S3, BackgroundId.SPHERICAL_SHRINKER,
                    BackgroundId.CRITICAL_CATENOID, BackgroundId.CLIFFORD_TORUS)


@dataclass
class CheckResult:
    id: int
    name: str
    measured: Dict[str, float]
    target: str
    passed: bool
    runtime: float
    budget: Optional[float] = None
    notes: str = ""
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def within_budget(self):
        return self.budget is None or self.runtime < self.budget

    def line(self):
        status = "PASS" if self.passed and self.within_budget else "FAIL"
        meas = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        budget = f" (budget {self.budget:g} s)" if self.budget is not None else ""
        return f"[{status}] {self.id:2d} {self.name}: {meas} | target {self.target} | {self.runtime:.2f} s{budget}"

    def to_dict(self):
        d = asdict(self)
        d["within_budget"] = self.within_budget
        d["status"] = "PASS" if self.passed and self.within_budget else "FAIL"
        return d


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    try:
        return f"{float(v):.6g}"
    except (TypeError, ValueError):
        return str(v)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# 1-3: reference values from the shooting problem


def check_root_of_even():
    bg = make_background(BackgroundId.CATENOID)
    # numerical profile, not the closed form, so the root is a genuine shooting output
    root, dt = _timed(lambda: profile_root(integrate(bg, 0.0, 1.0, 0.0, 3.0), 0.0, 3.0))
    err = abs(root - 1.1997)
    return CheckResult(1, "catenoid even-solution root", {"s_root": root, "abs_err": err},
                       "|s_root - 1.1997| < 1e-3", err < 1e-3, dt, 0.1)


def critical_table():
    """Rows (F, s_1, F_+ of the critical solution at s_1) for phi_even + F phi_odd."""
    bg = make_background(BackgroundId.CRITICAL_CATENOID)
    e = end_solution(bg)
    rows = []
    for F in (0.9, 1.0):
        sol = build_rld(bg, F, FluxRatios.zeros(2), "odd", max_jumps=2)
        s1 = float(sol.s[1])
        rows.append((F, s1, float(e.dphi(s1)) / float(e.phi(s1))))
    return rows


def check_critical_table():
    rows, dt = _timed(critical_table)
    ref = {0.9: (1.109, 1.152), 1.0: (1.157, 0.902)}
    measured, ok = {}, True
    for F, s1, Fc in rows:
        rs, rf = ref[F]
        measured[f"s1(F={F:g})"] = s1
        measured[f"F+crit(F={F:g})"] = Fc
        ok &= abs(s1 - rs) < 1e-2 and abs(Fc - rf) < 1e-2
    return CheckResult(2, "critical-catenoid shooting table", measured,
                       "F=0.9: 1.109, 1.152; F=1: 1.157, 0.902 (each +-1e-2)", ok, dt, 1.0)


def check_second_jump():
    bg = make_background(BackgroundId.CATENOID)

    def run():
        root = profile_root(phi_even(bg), 0.0, 3.0)
        return build_rld(bg, 1.0 / root, FluxRatios.zeros(2), "even", max_jumps=2)

    sol, dt = _timed(run)
    s2 = float(sol.s[1]) if sol.k > 1 else math.nan
    err = abs(s2 - 2.414)
    return CheckResult(3, "catenoid second jump latitude", {"s2": s2, "abs_err": err},
                       "|s2 - 2.414| < 1e-2", err < 1e-2, dt, 1.0)


# ---------------------------------------------------------------------------
# 4-6: identities checked against independent routes


WRONSKIAN_TOL = 1e-12


def wronskian_error(n=200, tol=WRONSKIAN_TOL):
    # the identity is checked at 1e-10, so the integrator runs two digits tighter
    bg = make_background(BackgroundId.CATENOID)
    ev = integrate(bg, 0.0, 1.0, 0.0, 10.0, tol=tol)
    od = integrate(bg, 0.0, 0.0, 1.0, 10.0, tol=tol)
    s = np.linspace(0.0, 10.0, n)
    W = ev.phi(s) * od.dphi(s) - ev.dphi(s) * od.phi(s)
    return float(np.max(np.abs(W - 1.0)))


def _positive_window(bg, F, s_bar):
    h = h_solution(bg, F, s_bar)
    return h, s_bar, s_bar + 0.9 * (h.hi - s_bar)


def flux_identity_errors(n=20, seed=SEED):
    rng = np.random.default_rng(seed)
    out = {}
    for bid in FLUX_BACKGROUNDS:
        bg = make_background(bid)
        worst = 0.0
        for _ in range(n):
            F = rng.uniform(-0.5, 1.0)
            s_bar = rng.uniform(0.0, 0.8)
            h, lo, hi = _positive_window(bg, F, s_bar)
            hi = min(hi, lo + 6.0)
            a, b = np.sort(rng.uniform(lo, hi, 2))
            worst = max(worst, abs(flux_identity_residual(bg, h, a, b)))
        out[bid.value] = worst
    return out


def check_wronskian_flux():
    def run():
        return wronskian_error(), flux_identity_errors()

    (w, fl), dt = _timed(run)
    worst = max(fl.values())
    ok = w < 1e-10 and worst < 1e-6
    return CheckResult(4, "Wronskian and flux identity", {"wronskian_err": w, "flux_identity_err": worst},
                       "Wronskian 1e-10, flux identity 1e-6", ok, dt, 5.0, details={"per_background": fl})


def h_derivative_errors(n=20, seed=SEED + 1, step=1e-5):
    """Worst relative error of the closed-form H derivatives against central differences."""
    rng = np.random.default_rng(seed)
    out = {}
    for bid in FLUX_BACKGROUNDS:
        bg = make_background(bid)
        worst = 0.0
        for _ in range(n):
            F = rng.uniform(-0.3, 1.0)
            s_bar = rng.uniform(0.1, 0.8)
            h = h_solution(bg, F, s_bar)
            s = s_bar + rng.uniform(0.2, 0.7) * min(h.hi - s_bar, 6.0)

            def Fplus(Fv, sb):
                p = h_solution(bg, Fv, sb)
                return float(p.dphi(s)) / float(p.phi(s))

            fd_s = (Fplus(F, s_bar + step) - Fplus(F, s_bar - step)) / (2 * step)
            fd_F = (Fplus(F + step, s_bar) - Fplus(F - step, s_bar)) / (2 * step)
            d_s, d_F = h_flux_derivatives(bg, F, s_bar, s)
            worst = max(worst, abs(d_s - fd_s) / abs(fd_s), abs(d_F - fd_F) / abs(fd_F))
        out[bid.value] = worst
    return out


def check_h_derivatives():
    errs, dt = _timed(h_derivative_errors)
    worst = max(errs.values())
    return CheckResult(5, "H-solution flux derivatives vs finite differences", {"max_rel_err": worst},
                       "relative error < 1e-4", worst < 1e-4, dt, 5.0, details={"per_background": errs})


SDERIV_CASES = (("even", 2), ("even", 3), ("odd", 2), ("odd", 3))


def _ratios_for(parity, k):
    sigma = (0.1, -0.05)[:k - 1]
    xi = (0.05 if parity == "even" else 0.0, -0.1, 0.07)[:k]
    return FluxRatios(sigma, xi)


def jump_derivative_error(bid, parity, k, F1=0.3, step=1e-6):
    """Relative error of the recursive jump derivatives against finite-difference shooting."""
    bg = make_background(bid)
    rat = _ratios_for(parity, k)

    def s_of(F, r):
        start = (1.0 - r.xi[0]) * F if parity == "even" else F
        sol = build_rld(bg, start, r, parity, max_jumps=k)
        return sol.s

    start = (1.0 - rat.xi[0]) * F1 if parity == "even" else F1
    sol = build_rld(bg, start, rat, parity, max_jumps=k)
    D = jump_derivatives(sol)
    fd = np.zeros_like(D)
    fd[:, 0] = (s_of(F1 + step, rat) - s_of(F1 - step, rat)) / (2 * step)
    for j in range(k - 1):
        sp, sm = list(rat.sigma), list(rat.sigma)
        sp[j] += step
        sm[j] -= step
        fd[:, 1 + j] = (s_of(F1, FluxRatios(sp, rat.xi)) - s_of(F1, FluxRatios(sm, rat.xi))) / (2 * step)
    for j in range(k):
        if parity == "odd" and j == 0:
            continue
        xp, xm = list(rat.xi), list(rat.xi)
        xp[j] += step
        xm[j] -= step
        fd[:, k + j] = (s_of(F1, FluxRatios(rat.sigma, xp)) - s_of(F1, FluxRatios(rat.sigma, xm))) / (2 * step)
    scale = np.max(np.abs(fd))
    # entries that vanish structurally are compared against the overall scale
    denom = np.maximum(np.abs(fd), 1e-3 * scale)
    return float(np.max(np.abs(D - fd) / denom))


def check_jump_derivatives():
    def run():
        return {f"{bid.value}/{p}/k={k}": jump_derivative_error(bid, p, k)
                for bid in (BackgroundId.CATENOID, BackgroundId.SPHERICAL_SHRINKER) for p, k in SDERIV_CASES}

    errs, dt = _timed(run)
    worst = max(errs.values())
    return CheckResult(6, "jump-latitude derivative recursion vs finite differences", {"max_rel_err": worst},
                       "relative error < 1e-3", worst < 1e-3, dt, 10.0, details=errs)


# ---------------------------------------------------------------------------
# 7-9: LD synthesis and mismatch


def _catenoid_rld():
    bg = make_background(BackgroundId.CATENOID)
    return bg, smooth_at_ends(bg, FluxRatios.zeros(1), 2)


def check_balancing():
    from .ld_fourier import build_ld

    cases = []
    bg, rld = _catenoid_rld()
    cases.append(("catenoid k=2", bg, rld, (64,)))
    sh = make_background(BackgroundId.SPHERICAL_SHRINKER)
    cases.append(("shrinker k=3", sh, smooth_at_ends(sh, FluxRatios.zeros(2), 3), (64, -64)))
    sp = make_background(BackgroundId.SPHERE_IN_S3)
    cases.append(("sphere k=4", sp, smooth_at_ends(sp, FluxRatios.zeros(2), 4), (64, 64)))
    measured, times, ok = {}, {}, True
    for name, b, r, mv in cases:
        ld, dt = _timed(lambda: build_ld(b, r, mv))
        res = ld.balancing_residual()
        measured[name] = res
        times[name] = dt
        ok &= res < 1e-8
    worst_t = max(times.values())
    return CheckResult(7, "vertical balancing residual", measured, "relative residual < 1e-8 per solve", ok,
                       worst_t, 5.0, notes="runtime is the slowest single solve at m = 64",
                       details={"solve_times": times})


def green_second_derivative(h=1e-3):
    from .ld_fourier import green_limit

    # fourth-order central difference in theta at (pi, 0)
    f = lambda t: green_limit(t, 0.0)
    x = math.pi
    return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)


def check_green_limit():
    from .ld_fourier import green_average_quadrature, green_limit_average, green_limit_error

    def run():
        sh = np.array([-2.0, -1.0, -0.3, 0.2, 0.7, 1.5, 3.0])
        avg_err = max(abs(green_average_quadrature(v) - green_limit_average(v)) for v in sh)
        d2 = green_second_derivative()
        bg = make_background(BackgroundId.CATENOID)
        errs = [green_limit_error(bg, m) for m in (16, 32, 64)]
        return avg_err, d2, errs

    (avg_err, d2, errs), dt = _timed(run)
    dec = all(b < a for a, b in zip(errs, errs[1:]))
    ok = avg_err < 1e-8 and abs(d2 + 0.25) < 1e-8 and dec
    return CheckResult(8, "Green's-function limit", {"avg_err": avg_err, "d2_theta": d2, "err_m16": errs[0],
                                                      "err_m32": errs[1], "err_m64": errs[2]},
                       "average 1e-8, d2 = -0.25 +- 1e-8, errors decreasing in m", ok, dt)


def check_mismatch():
    from .ld_fourier import build_ld, mismatch

    def run():
        bg, rld = _catenoid_rld()
        ld = build_ld(bg, rld, (64,))
        a = mismatch(ld, "formula")
        b = mismatch(ld, "circle_extraction")
        agree = float(max(np.max(np.abs(a.mu - b.mu)), np.max(np.abs(a.mu_prime - b.mu_prime))))
        m, xi = 128, 0.02
        vals = []
        for x in (xi, -xi):
            ldx = build_ld(bg, rld, (-2 * m,), xi_circ=(x,), m=m)
            vals.append(float(mismatch(ldx, "formula").mu_circ[0]))
        slope = (vals[0] - vals[1]) / (2 * xi)
        return agree, slope, m

    (agree, slope, m), dt = _timed(run)
    pred = -m / 4.0
    rel = abs(slope - pred) / abs(pred)
    ok = agree < 1e-4 and rel < 0.2
    return CheckResult(9, "mismatch cross-validation", {"route_gap": agree, "mu_circ_slope": slope,
                                                         "predicted": pred, "slope_rel_err": rel},
                       "routes agree to 1e-4; slope within 20% of -m/4", ok, dt)


# ---------------------------------------------------------------------------
# 10-12: Clifford torus, meshes, uniformity


def clifford_average_at_circle(k, m, nodes=4096):
    """Phi_avg on the lattice circles from y-averages of the full field away from them.

    The y-average solves u'' + 4u = 0 between circles, so two samples fix it.
    """
    from .clifford import TorusField

    f = TorusField(k, m)
    y = f.Ly * np.arange(nodes) / nodes
    ds = np.array([0.25, 0.5, 0.75, 1.0]) * f.h
    avgs = np.array([np.mean(f(np.full(nodes, d), y)) for d in ds])
    M = np.column_stack([np.cos(2 * ds), np.sin(2 * ds)])
    coef, *_ = np.linalg.lstsq(M, avgs, rcond=None)
    return float(coef[0])


def check_clifford():
    from .clifford import (CliffordConfig, SpectralPhiPrime, TorusField, angle_g, clifford_mismatch,
                           mean_value_decomposition)

    k, m = 4, 32

    def run():
        avg = clifford_average_at_circle(k, m)
        closed = m / (2 * math.sqrt(2) * math.tan(angle_g(k)))
        ident = clifford_mismatch(CliffordConfig(k, m), method="circle_extraction")["identity_residual"]
        f = TorusField(k, m)
        mv = mean_value_decomposition(f, SpectralPhiPrime(f))
        return avg, closed, ident, mv

    (avg, closed, ident, mv), dt = _timed(run)
    avg_err = abs(avg - closed)
    mean_rel = abs(mv["total"] - mv["expected"]) / mv["expected"]
    ok = avg_err < 1e-8 * max(1.0, abs(closed)) and abs(ident) < 1e-6 and mean_rel < 1e-3
    return CheckResult(10, "Clifford closed forms", {"avg_on_circle": avg, "closed_form": closed,
                                                      "identity_residual": ident, "mean_rel_err": mean_rel},
                       "average exact (1e-8), identity 1e-6, mean 1e-3 relative", ok, dt, 30.0)


SHRINKER_TAUS = (1e-2, 5e-3, 2.5e-3)


def shrinker_bridge_residuals(taus=SHRINKER_TAUS, alpha=0.01):
    from .geometry import NormalChart, bridge_curvature

    chart = NormalChart("shrinker", 0.0, 0.0)
    out = []
    for t in taus:
        _, R = bridge_curvature(chart, t, alpha=alpha, residual="shrinker")
        out.append(float(np.max(np.abs(R))))
    return out


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def check_meshes():
    from .geometry import catenoid_mesh, discrete_mean_curvature, icosphere

    def run():
        sph = icosphere(2.0, 5)
        Hs = discrete_mean_curvature(sph)
        sph_err = float(np.max(np.abs(Hs - 1.0)))
        cat = catenoid_mesh(1.0, 2.0)
        Hc = discrete_mean_curvature(cat)
        interior = ~cat.boundary_vertices()
        cat_max = float(np.max(np.abs(Hc[interior])))
        res = shrinker_bridge_residuals()
        return sph_err, cat_max, res

    (sph_err, cat_max, res), dt = _timed(run)
    taus = np.array(SHRINKER_TAUS)
    slope = loglog_slope(taus, res)
    pred = loglog_slope(taus, taus * np.abs(np.log(taus)))
    ok = sph_err < 1e-2 and cat_max < 5e-3 and all(b < a for a, b in zip(res, res[1:])) and abs(slope - pred) < 0.3
    measured = {"sphere_H_err": sph_err, "catenoid_max_H": cat_max, "shrinker_slope": slope,
                "predicted_slope": pred}
    measured.update({f"shrinker_res(tau={t:g})": r for t, r in zip(SHRINKER_TAUS, res)})
    return CheckResult(11, "mesh curvature diagnostics", measured,
                       "sphere 1e-2, catenoid 5e-3, shrinker slope within 0.3", ok, dt, 120.0)


def check_uniformity():
    from . import clifford
    from .ld_fourier import build_ld, sup_phi_prime

    def run():
        bg, rld = _catenoid_rld()
        cat = [sup_phi_prime(build_ld(bg, rld, (m,))) for m in (32, 64, 128)]
        cl = [clifford.sup_phi_prime(4, m) for m in (32, 64, 128)]
        return cat, cl

    (cat, cl), dt = _timed(run)
    spread = lambda v: (max(v) - min(v)) / min(v)
    ok = spread(cat) < 0.25 and spread(cl) < 0.25
    measured = {f"catenoid_m{m}": v for m, v in zip((32, 64, 128), cat)}
    measured.update({f"clifford_m{m}": v for m, v in zip((32, 64, 128), cl)})
    measured.update({"catenoid_spread": spread(cat), "clifford_spread": spread(cl)})
    return CheckResult(12, "sup |Phi'| uniformity in m", measured, "spread < 25%", ok, dt)


CHECKS: Dict[int, Callable[[], CheckResult]] = {
    1: check_root_of_even,
    2: check_critical_table,
    3: check_second_jump,
    4: check_wronskian_flux,
    5: check_h_derivatives,
    6: check_jump_derivatives,
    7: check_balancing,
    8: check_green_limit,
    9: check_mismatch,
    10: check_clifford,
    11: check_meshes,
    12: check_uniformity,
}


def run_check(i) -> CheckResult:
    try:
        return CHECKS[i]()
    except Exception as exc:  # a crash is reported as a failure, never hidden
        return CheckResult(i, CHECKS[i].__name__, {}, "", False, 0.0, notes=f"{type(exc).__name__}: {exc}")


def run_all(ids=None, echo=None) -> List[CheckResult]:
    out = []
    for i in ids or sorted(CHECKS):
        r = run_check(i)
        if echo:
            echo(r.line())
        out.append(r)
    return out


def report(results: List[CheckResult]):
    return {"tolerance": default_tol(), "passed": all(r.passed and r.within_budget for r in results),
            "criteria": [r.to_dict() for r in results]}
