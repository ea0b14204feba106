"""Closed-form three-wave-mixing gain, pump-depletion saturation, compression.

Wavenumber convention: ``k_p`` is the Bloch wavenumber times the cell pitch,
i.e. rad per cell, so the gain exponent is per cell and multiplies the cell
count ``n`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import PHI0_BAR
from .units import db_from_ratio, dbm_to_watt

_SECH_GUARD = 1.0 - 1e-12  # above this modulus dn(u,k) is sech(u) to < 1e-12


@dataclass(frozen=True)
class PumpConfig:
    """Pump drive: frequency [Hz] and incident power [W]."""

    f_p: float
    p_p: float

    @classmethod
    def from_dbm(cls, f_p: float, p_p_dbm: float) -> "PumpConfig":
        return cls(f_p=f_p, p_p=float(dbm_to_watt(p_p_dbm)))

    def phase_amplitude(self, z: float, l_sq: float) -> float:
        """Pump phase-oscillation amplitude for a line of impedance z."""
        return pump_phase_amplitude(self.p_p, z, l_sq)


@dataclass(frozen=True)
class SaturationResult:
    """Small-signal gain and 1-dB compression point."""

    g0_db: float
    p1db_dbm: float
    mode: str


def pump_phase_amplitude(p_p: float, z: float, l_sq: float) -> float:
    """Pump phase-oscillation amplitude phi_p = L_SQ * I_p / phi0 [rad].

    The pump current follows from the incident power, P_p = 0.5 * I_p^2 * Z.
    """
    if p_p < 0.0:
        raise ValueError(f"p_p must be >= 0, got {p_p}")
    if not z > 0.0 or not l_sq > 0.0:
        raise ValueError("z and l_sq must be > 0")
    i_p = np.sqrt(2.0 * p_p / z)
    return float(l_sq * i_p / PHI0_BAR)


def gain_coefficient(beta: float, k_p_per_cell: float, phi_p: float,
                     f_s: float, f_p: float) -> float:
    """Exponential 3WM gain coefficient per cell.

    g = (1/4) |beta| k_p phi_p sqrt(1 - delta^2), with the dimensionless
    detuning delta = |f_s - f_p/2| / (f_p/2). Zero outside the gain band
    (delta >= 1).
    """
    delta = abs(f_s - 0.5 * f_p) / (0.5 * f_p)
    if delta >= 1.0:
        return 0.0
    return 0.25 * abs(beta) * k_p_per_cell * phi_p * np.sqrt(1.0 - delta * delta)


def small_signal_gain(beta: float, k_p_per_cell: float, phi_p: float, n: int,
                      f_s: float, f_p: float,
                      delta_k_per_cell: float | None = None) -> float:
    """Undepleted signal power gain of an n-cell 3WM amplifier.

    Phase matched (``delta_k_per_cell`` omitted or 0): G = cosh^2(g*n).
    With a residual mismatch the standard coupled-mode correction applies:
    G = |cosh(g'n) + (i dk/2g') sinh(g'n)|^2 with g' = sqrt(g^2 - (dk/2)^2).
    """
    g = gain_coefficient(beta, k_p_per_cell, phi_p, f_s, f_p)
    if g == 0.0 and not delta_k_per_cell:
        return 1.0
    if not delta_k_per_cell:
        return float(np.cosh(g * n) ** 2)
    half_dk = 0.5 * delta_k_per_cell
    gp = np.sqrt(complex(g * g - half_dk * half_dk))
    x = gp * n
    if abs(x) < 1e-6:
        # g' -> 0 limit: cosh -> 1 + x^2/2, sinh(x)/x -> 1 + x^2/6
        amp = (1.0 + 0.5 * x * x) + 1j * half_dk * n * (1.0 + x * x / 6.0)
    else:
        amp = np.cosh(x) + 1j * half_dk / gp * np.sinh(x)
    return float(abs(amp) ** 2)


def jacobi_dn(u, modulus_k: float):
    """Jacobi elliptic function dn(u, k) for real u and modulus 0 <= k <= 1.

    Evaluated by the descending arithmetic-geometric-mean (Landen)
    transformation. Near the degenerate modulus (k > 1 - 1e-12) the
    sech asymptote is used instead. Accepts scalar or array ``u``.
    """
    k = float(modulus_k)
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"modulus k must be in [0, 1], got {k}")
    u_arr = np.asarray(u, dtype=float)
    scalar = u_arr.ndim == 0
    uu = np.atleast_1d(u_arr).astype(float)

    if k == 0.0:
        out = np.ones_like(uu)
        return float(out[0]) if scalar else out.reshape(u_arr.shape)
    if k > _SECH_GUARD:
        out = 1.0 / np.cosh(uu)
        return float(out[0]) if scalar else out.reshape(u_arr.shape)

    # dn is even and 2K-periodic; reduce the argument to improve accuracy
    # of the descending phase recursion for large |u|.
    a_list = [1.0]
    b = np.sqrt(1.0 - k * k)
    c_list = [k]
    while c_list[-1] > 1e-16 * a_list[-1]:
        a_n, b_n = a_list[-1], b
        a_list.append(0.5 * (a_n + b_n))
        b = np.sqrt(a_n * b_n)
        c_list.append(0.5 * (a_n - b_n))
        if len(a_list) > 40:  # quadratic convergence; never reached in practice
            break
    n_iter = len(a_list) - 1
    quarter_k = 0.5 * np.pi / a_list[-1]  # complete integral K(k) via the AGM

    uu = np.abs(uu)
    uu = np.mod(uu, 2.0 * quarter_k)

    phi = (2.0 ** n_iter) * a_list[-1] * uu
    phi_prev = phi
    for idx in range(n_iter, 0, -1):
        phi_prev = phi
        s = np.clip(c_list[idx] / a_list[idx] * np.sin(phi), -1.0, 1.0)
        phi = 0.5 * (phi + np.arcsin(s))
    dn = np.cos(phi) / np.cos(phi_prev - phi)
    dn = np.clip(dn, 0.0, 1.0)
    return float(dn[0]) if scalar else dn.reshape(u_arr.shape)


def depleted_gain(p_s_in: float, p_p_in: float, f_s: float, f_p: float,
                  g_n: float, method: str = "exact") -> float:
    """Signal power gain including pump depletion.

    ``method='exact'`` evaluates G = 1/dn^2(g_n, k) with the elliptic
    modulus k = 1/sqrt(1 + f_p P_s / (f_s P_p)); ``method='approx'`` uses
    the large-gain expansion
    G = G0 / (1 + G0 fp Ps / (2 fs Pp) + (G0 fp Ps / (4 fs Pp))^2).
    """
    if p_s_in < 0.0:
        raise ValueError(f"p_s_in must be >= 0, got {p_s_in}")
    if not p_p_in > 0.0:
        raise ValueError(f"p_p_in must be > 0, got {p_p_in}")
    if not g_n > 0.0:
        raise ValueError(f"g_n must be > 0, got {g_n}")
    ratio = f_p * p_s_in / (f_s * p_p_in)
    if method == "exact":
        k = 1.0 / np.sqrt(1.0 + ratio)
        return float(1.0 / jacobi_dn(g_n, k) ** 2)
    if method == "approx":
        g0 = np.cosh(g_n) ** 2
        return float(g0 / (1.0 + 0.5 * g0 * ratio + (0.25 * g0 * ratio) ** 2))
    raise ValueError(f"method must be 'exact' or 'approx', got {method!r}")


def compression_point(p_p_dbm: float, g0_db: float, mode: str = "3wm") -> SaturationResult:
    """Input-referred 1-dB compression point.

    Pump depletion alone (3WM): P1dB = Pp - G0 - 6 dB. With the extra
    signal-induced SPM/XPM mismatch of a Kerr amplifier (4WM):
    P1dB = Pp - G0 - 9 dB.
    """
    if not g0_db > 0.0:
        raise ValueError(f"g0_db must be > 0, got {g0_db}")
    if mode == "3wm":
        p1db = p_p_dbm - g0_db - 6.0
    elif mode == "4wm":
        p1db = p_p_dbm - g0_db - 9.0
    else:
        raise ValueError(f"mode must be '3wm' or '4wm', got {mode!r}")
    return SaturationResult(g0_db=g0_db, p1db_dbm=p1db, mode=mode)


def gain_to_db(g: float) -> float:
    """Power gain ratio -> dB."""
    return float(db_from_ratio(g))
