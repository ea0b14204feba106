"""Fixed-step RK4 integration kernels for the nonlinear time-domain engine.

Unit-cell state: (phi, nu, i_j) with phi the junction phase, nu = dphi/dt,
and i_j the junction-branch current. Chain state per cell j: additionally
the series branch current ib[j] and the shunt-node voltage v[j].

The drive envelopes are raised-cosine ramps so that a lossless chain is
excited quasi-adiabatically. All loops are written for numba.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _env(t, t0, ramp):
    if t <= t0:
        return 0.0
    if ramp <= 0.0 or t >= t0 + ramp:
        return 1.0
    return 0.5 - 0.5 * np.cos(np.pi * (t - t0) / ramp)


@njit(cache=True, nogil=True, inline="always")
def _denv(t, t0, ramp):
    if t <= t0 or ramp <= 0.0 or t >= t0 + ramp:
        return 0.0
    return 0.5 * np.pi / ramp * np.sin(np.pi * (t - t0) / ramp)


@njit(cache=True, nogil=True)
def _cell_drive(t, i_dc, dc_ramp, w, amp, ph, ac_t0, ac_ramp):
    """Drive current and its time derivative for the unit cell."""
    i = i_dc * _env(t, 0.0, dc_ramp)
    di = i_dc * _denv(t, 0.0, dc_ramp)
    for m in range(w.size):
        e = _env(t, ac_t0, ac_ramp)
        de = _denv(t, ac_t0, ac_ramp)
        c = np.cos(w[m] * t + ph[m])
        s = np.sin(w[m] * t + ph[m])
        i += amp[m] * e * c
        di += amp[m] * (de * c - e * w[m] * s)
    return i, di


@njit(cache=True, nogil=True)
def integrate_cell(y, t0, dt, nsteps,
                   ic, cj, lm, lps, gj, phi0,
                   i_dc, dc_ramp, w, amp, ph, ac_t0, ac_ramp,
                   rec_phi, rec_nu, rec_ijj, record):
    """Advance the driven unit cell by nsteps; optionally record each step.

    y = [phi, nu, ijj]. Records the state at the *start* of every step so a
    window of nsteps covers exactly nsteps samples of the period.
    """
    inv_lmlps = 1.0 / (lm + lps)
    inv_cjphi0 = 1.0 / (cj * phi0)
    k = np.empty((4, 3))
    yt = np.empty(3)
    for n in range(nsteps):
        t = t0 + n * dt
        if record:
            rec_phi[n] = y[0]
            rec_nu[n] = y[1]
            rec_ijj[n] = y[2]
        for stage in range(4):
            if stage == 0:
                ts = t
                for q in range(3):
                    yt[q] = y[q]
            elif stage == 1 or stage == 2:
                ts = t + 0.5 * dt
                for q in range(3):
                    yt[q] = y[q] + 0.5 * dt * k[stage - 1, q]
            else:
                ts = t + dt
                for q in range(3):
                    yt[q] = y[q] + dt * k[2, q]
            _, di = _cell_drive(ts, i_dc, dc_ramp, w, amp, ph, ac_t0, ac_ramp)
            k[stage, 0] = yt[1]
            k[stage, 1] = (yt[2] - ic * np.sin(yt[0]) - phi0 * yt[1] * gj) * inv_cjphi0
            k[stage, 2] = (lm * di - phi0 * yt[1]) * inv_lmlps
        for q in range(3):
            y[q] += dt / 6.0 * (k[0, q] + 2.0 * k[1, q] + 2.0 * k[2, q] + k[3, q])
    return t0 + nsteps * dt


@njit(cache=True, nogil=True, inline="always")
def _port_current(t, w, amp, ph, ramp):
    i = 0.0
    for m in range(w.size):
        i += amp[m] * _env(t, 0.0, ramp) * np.cos(w[m] * t + ph[m])
    return i


@njit(cache=True, nogil=True)
def _chain_rhs(t, phi, nu, ijj, ib, v,
               dphi, dnu, dijj, dib, dv,
               caps, ic_cells, phi0, inv_cjphi0, lm, inv_lmlps, inv_lser,
               kappa_phi0, gj, z0, r_esr,
               w1, a1, p1, w2, a2, p2, ramp):
    # v[j] is the internal capacitor voltage; the node voltage adds the
    # ESR drop of the capacitor branch current (KCL net current).
    n = phi.size
    i1 = _port_current(t, w1, a1, p1, ramp)
    i2 = _port_current(t, w2, a2, p2, ramp)
    for j in range(n - 1):
        dv[j] = (ib[j] - ib[j + 1]) / caps[j]
    # node N carries the load and the output source; its capacitor current
    # depends on the node voltage itself, solved in closed form.
    vn_node = (v[n - 1] + r_esr * (ib[n - 1] + i2)) / (1.0 + r_esr / z0)
    dv[n - 1] = (ib[n - 1] + i2 - vn_node / z0) / caps[n - 1]
    v0 = z0 * (i1 - ib[0])
    for j in range(n):
        vl = v0 if j == 0 else v[j - 1] + r_esr * caps[j - 1] * dv[j - 1]
        vr = vn_node if j == n - 1 else v[j] + r_esr * caps[j] * dv[j]
        dib[j] = (vl - vr - kappa_phi0 * nu[j]) * inv_lser
        dijj[j] = (lm * dib[j] - phi0 * nu[j]) * inv_lmlps
        dnu[j] = (ijj[j] - ic_cells[j] * np.sin(phi[j]) - phi0 * nu[j] * gj) * inv_cjphi0
        dphi[j] = nu[j]


@njit(cache=True, nogil=True)
def integrate_chain(phi, nu, ijj, ib, v,
                    t0, dt, nsteps,
                    caps, ic_cells, cj, lm, lps, lw, gj, z0, r_esr, phi0,
                    w1, a1, p1, w2, a2, p2, ramp,
                    rec_v0, rec_ib1, rec_vn, record):
    """Advance the N-cell chain by nsteps with classic RK4.

    The series inductance per branch is lw + lm*lps/(lm+lps); the meander
    carries the remaining voltage, kappa = lm/(lm+lps). Port traces are
    recorded at the start of every step when ``record`` is set.
    """
    n = phi.size
    inv_cjphi0 = 1.0 / (cj * phi0)
    inv_lmlps = 1.0 / (lm + lps)
    lser = lw + lm * lps * inv_lmlps
    inv_lser = 1.0 / lser
    kappa_phi0 = lm * inv_lmlps * phi0

    k_phi = np.empty((4, n)); k_nu = np.empty((4, n)); k_ijj = np.empty((4, n))
    k_ib = np.empty((4, n)); k_v = np.empty((4, n))
    t_phi = np.empty(n); t_nu = np.empty(n); t_ijj = np.empty(n)
    t_ib = np.empty(n); t_v = np.empty(n)

    for step in range(nsteps):
        t = t0 + step * dt
        if record:
            i1 = _port_current(t, w1, a1, p1, ramp)
            i2 = _port_current(t, w2, a2, p2, ramp)
            rec_v0[step] = z0 * (i1 - ib[0])
            rec_ib1[step] = ib[0]
            rec_vn[step] = (v[n - 1] + r_esr * (ib[n - 1] + i2)) / (1.0 + r_esr / z0)
        for stage in range(4):
            if stage == 0:
                ts = t
                for j in range(n):
                    t_phi[j] = phi[j]; t_nu[j] = nu[j]; t_ijj[j] = ijj[j]
                    t_ib[j] = ib[j]; t_v[j] = v[j]
            else:
                h = 0.5 * dt if stage < 3 else dt
                ts = t + h
                src = stage - 1
                for j in range(n):
                    t_phi[j] = phi[j] + h * k_phi[src, j]
                    t_nu[j] = nu[j] + h * k_nu[src, j]
                    t_ijj[j] = ijj[j] + h * k_ijj[src, j]
                    t_ib[j] = ib[j] + h * k_ib[src, j]
                    t_v[j] = v[j] + h * k_v[src, j]
            _chain_rhs(ts, t_phi, t_nu, t_ijj, t_ib, t_v,
                       k_phi[stage], k_nu[stage], k_ijj[stage],
                       k_ib[stage], k_v[stage],
                       caps, ic_cells, phi0, inv_cjphi0, lm, inv_lmlps, inv_lser,
                       kappa_phi0, gj, z0, r_esr,
                       w1, a1, p1, w2, a2, p2, ramp)
        for j in range(n):
            phi[j] += dt / 6.0 * (k_phi[0, j] + 2.0 * (k_phi[1, j] + k_phi[2, j]) + k_phi[3, j])
            nu[j] += dt / 6.0 * (k_nu[0, j] + 2.0 * (k_nu[1, j] + k_nu[2, j]) + k_nu[3, j])
            ijj[j] += dt / 6.0 * (k_ijj[0, j] + 2.0 * (k_ijj[1, j] + k_ijj[2, j]) + k_ijj[3, j])
            ib[j] += dt / 6.0 * (k_ib[0, j] + 2.0 * (k_ib[1, j] + k_ib[2, j]) + k_ib[3, j])
            v[j] += dt / 6.0 * (k_v[0, j] + 2.0 * (k_v[1, j] + k_v[2, j]) + k_v[3, j])
    return t0 + nsteps * dt
