import math

import numpy as np
import pytest

from ldforge import kernels
from ldforge.backgrounds import make_background


def rk4_profile(bg, s0, phi0, dphi0, s1, h=1e-4):
    """Fixed-step RK4 oracle on [s0, s1]; returns (s, phi, dphi)."""
    n = max(1, int(round(abs(s1 - s0) / h)))
    step = (s1 - s0) / n
    half = s0 + 0.5 * step * np.arange(2 * n + 1)
    y, dy = kernels.rk4_linear(bg.V(half), step, phi0, dphi0)
    return s0 + step * np.arange(n + 1), np.asarray(y), np.asarray(dy)


def rk4_shoot(bg, F1, ratios, k, h=1e-5, span=6.0):
    """Dense-grid shooter for even parity: march, stop where F_- reaches each target, apply the jump."""
    Fmean = F1 / (1.0 - ratios.xi[0])
    s0, phi, dphi = 0.0, 1.0, 0.0
    out = []
    for i in range(k):
        w = math.exp(sum(ratios.sigma[:i]))
        target = (1.0 - ratios.xi[i]) * w * Fmean
        s, y, dy = rk4_profile(bg, s0, phi, dphi, s0 + span, h)
        Fm = -dy / y
        ok = np.nonzero((Fm >= target) | (y <= 0))[0]
        j = ok[0]
        if y[j] <= 0:
            break
        # linear interpolation of F_- between grid points
        a = (target - Fm[j - 1]) / (Fm[j] - Fm[j - 1])
        si = s[j - 1] + a * (s[j] - s[j - 1])
        phi_i = y[j - 1] + a * (y[j] - y[j - 1])
        out.append(si)
        Fplus = (1.0 + ratios.xi[i]) * w * Fmean
        s0, phi, dphi = si, phi_i, Fplus * phi_i
    return np.array(out)


@pytest.fixture(scope="session")
def catenoid():
    return make_background("catenoid")


@pytest.fixture(scope="session")
def shrinker():
    return make_background("shrinker")
