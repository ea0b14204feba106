"""Independent reference implementations used only by the tests.

These deliberately avoid the code paths they are checking: dn(u, k) comes
from a Jacobi theta-function series with the quarter periods taken from
scipy's complete elliptic integrals, and the transcendental flux equation
is solved by plain interval bisection.
"""

import numpy as np
from scipy.special import ellipk


def theta_series_dn(u, k, terms=24):
    """dn(u, k) from theta functions: dn = (t4(0) t3(z)) / (t3(0) t4(z))."""
    m = k * k
    if m == 0.0:
        return np.ones_like(np.asarray(u, dtype=float))
    big_k = ellipk(m)
    big_kp = ellipk(1.0 - m)
    q = np.exp(-np.pi * big_kp / big_k)
    z = np.pi * np.asarray(u, dtype=float) / (2.0 * big_k)

    n = np.arange(1, terms + 1)
    qn2 = q ** (n * n)
    t3_0 = 1.0 + 2.0 * np.sum(qn2)
    t4_0 = 1.0 + 2.0 * np.sum(((-1.0) ** n) * qn2)
    cos_t = np.cos(2.0 * np.outer(z, n))
    t3_z = 1.0 + 2.0 * cos_t @ qn2
    t4_z = 1.0 + 2.0 * cos_t @ (((-1.0) ** n) * qn2)
    return (t4_0 / t3_0) * (t3_z / t4_z)


def bisect_phi_dc(phi_ext, beta_l, tol=1e-13):
    """Flux transcendental solved by bisection only."""
    lo, hi = phi_ext - beta_l, phi_ext + beta_l
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid + beta_l * np.sin(mid) < phi_ext:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def lc_line_wavenumber(f, l_cell, c_cell):
    """Textbook discrete LC line dispersion, k*a = 2 asin(w sqrt(LC)/2)."""
    return 2.0 * np.arcsin(np.pi * f * np.sqrt(l_cell * c_cell))
