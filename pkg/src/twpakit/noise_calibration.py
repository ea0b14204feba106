"""Quantum-noise bookkeeping: Y-factor fits, noise breakdown, SNR improvement.

Noise is counted in photons at the signal frequency. A variable-temperature
matched load sets the input noise through its Johnson-Nyquist occupation;
sweeping its temperature and fitting the measured output noise power yields
the system gain and the excess noise above the standard quantum limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import H, K_B
from .units import db_from_ratio, dbm_to_watt, ratio_from_db

N_VAC = 0.5  # vacuum noise, photons

# Measurement uncertainties propagated through the fits (worst-case corners):
# spectrum-analyzer level, load temperature, and the assumed gain asymmetry.
LEVEL_UNCERTAINTY_DB = 0.1
TEMPERATURE_UNCERTAINTY_K = 3e-3
GAIN_RATIO_UNCERTAINTY_DB = 1.0


class NoiseFitError(RuntimeError):
    """Y-factor fit rejected: bad data or a nonphysical result."""


def planck_noise(f, t):
    """Thermal occupation of a matched load in photons, 0.5*coth(hf/2kT).

    Symmetrized convention: approaches the vacuum value 0.5 as T -> 0 and
    the Rayleigh-Jeans limit kT/hf for kT >> hf. Accepts arrays.
    """
    f = np.asarray(f, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(f <= 0.0):
        raise ValueError("frequency must be > 0")
    if np.any(t < 0.0):
        raise ValueError("temperature must be >= 0")
    with np.errstate(divide="ignore", over="ignore"):
        x = np.where(t > 0.0, H * f / (2.0 * K_B * np.maximum(t, 1e-300)), np.inf)
        n = np.where(np.isinf(x), N_VAC, 0.5 / np.tanh(np.minimum(x, 700.0)))
    if n.ndim == 0:
        return float(n)
    return n


def photons_from_power(p, f, b):
    """Noise power in bandwidth ``b`` expressed as photons: N = P/(h f b)."""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0.0):
        raise ValueError("bandwidth must be > 0")
    n = np.asarray(p, dtype=float) / (H * np.asarray(f, dtype=float) * b)
    return float(n) if n.ndim == 0 else n


@dataclass
class NoiseSweep:
    """Y-factor records: output noise power vs load temperature per frequency."""

    freq: np.ndarray      # Hz
    temp: np.ndarray      # K
    pout_dbm: np.ndarray  # dBm in the resolution bandwidth
    rbw: np.ndarray       # Hz

    def __post_init__(self):
        self.freq = np.asarray(self.freq, dtype=float)
        self.temp = np.asarray(self.temp, dtype=float)
        self.pout_dbm = np.asarray(self.pout_dbm, dtype=float)
        self.rbw = np.asarray(self.rbw, dtype=float)
        n = self.freq.size
        if not (self.temp.size == self.pout_dbm.size == self.rbw.size == n):
            raise ValueError("all sweep columns must have equal length")
        if np.any(self.temp <= 0.0):
            raise ValueError("load temperatures must be > 0")
        if np.any(self.rbw <= 0.0):
            raise ValueError("resolution bandwidth must be > 0")

    def frequencies(self) -> np.ndarray:
        return np.unique(self.freq)

    def at_frequency(self, f: float):
        sel = self.freq == f
        return self.temp[sel], self.pout_dbm[sel], self.rbw[sel]


@dataclass
class NoiseFit:
    """Two-mode Y-factor fit at one frequency."""

    freq: float
    g_sys_db: float
    n_sys_exc: float
    residual_photons: float
    g_sys_db_bounds: tuple | None = None
    n_sys_exc_bounds: tuple | None = None
    nonphysical: bool = False


@dataclass
class SingleModeFit:
    """Single-mode (TWPA bypassed) Y-factor fit at one frequency."""

    freq: float
    g2_db: float
    n2: float
    residual_photons: float
    g2_db_bounds: tuple | None = None
    n2_bounds: tuple | None = None


@dataclass
class NoiseBreakdown:
    """Input-referred decomposition of the total system noise [photons]."""

    quantum_limit: float
    pre_twpa: float
    twpa_excess: float
    post_twpa: float

    @property
    def total(self) -> float:
        return self.quantum_limit + self.pre_twpa + self.twpa_excess + self.post_twpa


def _linear_noise_fit(x, n_out):
    """Least squares of N_out = G*x + C in linear power units."""
    a = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a, n_out, rcond=None)
    g, c = float(coef[0]), float(coef[1])
    resid = float(np.sqrt(np.mean((a @ coef - n_out) ** 2)))
    return g, c, resid


def _two_mode_single(temp, n_out, f_s, f_i, ratio):
    x = planck_noise(f_s, temp) + ratio * planck_noise(f_i, temp)
    g, c, resid = _linear_noise_fit(x, n_out)
    if g <= 0.0:
        raise NoiseFitError(f"fitted system gain is not positive ({g:.3g})")
    return g, c / g, resid


def fit_two_mode(sweep: NoiseSweep, f_p: float, gain_ratio_db: float = 0.0,
                 uncertainties: bool = True):
    """Fit the two-mode noise model per frequency.

    N_out(T) = G_sys [N_in_s(T) + (G_si/G_ss) N_in_i(T) + N_sys_exc]

    with the idler at f_i = f_p - f_s and a fixed supplied gain asymmetry
    (0 dB by default). Linear in (G_sys, G_sys*N_sys_exc), so solved
    exactly by least squares. Uncertainty bounds come from worst-case
    corners of the analyzer level, load temperature and gain-ratio errors.
    """
    results = []
    ratio0 = float(ratio_from_db(gain_ratio_db))
    for f_s in sweep.frequencies():
        temp, pout_dbm, rbw = sweep.at_frequency(f_s)
        if np.unique(temp).size < 2:
            raise NoiseFitError(
                f"need >= 2 distinct load temperatures at {f_s:.4g} Hz")
        f_i = f_p - f_s
        if f_i <= 0.0:
            raise NoiseFitError(f"idler frequency not positive at f_s={f_s:.4g} Hz")
        n_out = photons_from_power(dbm_to_watt(pout_dbm), f_s, rbw)
        g, n_exc, resid = _two_mode_single(temp, n_out, f_s, f_i, ratio0)

        bounds_g = bounds_n = None
        if uncertainties:
            gs, ns = [], []
            for dlev in (-LEVEL_UNCERTAINTY_DB, LEVEL_UNCERTAINTY_DB):
                for dtemp in (-TEMPERATURE_UNCERTAINTY_K, TEMPERATURE_UNCERTAINTY_K):
                    for drat in (-GAIN_RATIO_UNCERTAINTY_DB, GAIN_RATIO_UNCERTAINTY_DB):
                        try:
                            gc, nc, _ = _two_mode_single(
                                np.maximum(temp + dtemp, 1e-4),
                                n_out * float(ratio_from_db(dlev)),
                                f_s, f_i,
                                float(ratio_from_db(gain_ratio_db + drat)))
                        except NoiseFitError:
                            continue
                        gs.append(gc)
                        ns.append(nc)
            if gs:
                bounds_g = (db_from_ratio(min(gs)), db_from_ratio(max(gs)))
                bounds_n = (min(ns), max(ns))

        results.append(NoiseFit(
            freq=float(f_s), g_sys_db=float(db_from_ratio(g)), n_sys_exc=n_exc,
            residual_photons=resid, g_sys_db_bounds=bounds_g,
            n_sys_exc_bounds=bounds_n, nonphysical=n_exc < 0.0))
    return results


def fit_single_mode(sweep: NoiseSweep, eta1: float, uncertainties: bool = True):
    """Fit the single-mode chain model per frequency.

    N_out(T) = eta1 G2 [N_in(T) + (1-eta1)/eta1 N_vac + N2/eta1]

    ``eta1`` is the measured transmission efficiency in front of the
    reference plane. Returns the chain gain G2 and the noise N2 referred
    behind that plane.
    """
    if not 0.0 < eta1 <= 1.0:
        raise ValueError(f"eta1 must be in (0, 1], got {eta1}")

    def solve(temp, n_out, eta):
        x = planck_noise(f_s, temp)
        a, c, resid = _linear_noise_fit(eta * x, n_out)
        if a <= 0.0:
            raise NoiseFitError(f"fitted chain gain is not positive ({a:.3g})")
        g2 = a
        n2 = c / g2 - (1.0 - eta) * N_VAC
        return g2, n2, resid

    results = []
    for f_s in sweep.frequencies():
        temp, pout_dbm, rbw = sweep.at_frequency(f_s)
        if np.unique(temp).size < 2:
            raise NoiseFitError(
                f"need >= 2 distinct load temperatures at {f_s:.4g} Hz")
        n_out = photons_from_power(dbm_to_watt(pout_dbm), f_s, rbw)
        g2, n2, resid = solve(temp, n_out, eta1)

        bounds_g = bounds_n = None
        if uncertainties:
            gs, ns = [], []
            for dlev in (-LEVEL_UNCERTAINTY_DB, LEVEL_UNCERTAINTY_DB):
                for dtemp in (-TEMPERATURE_UNCERTAINTY_K, TEMPERATURE_UNCERTAINTY_K):
                    try:
                        gc, nc, _ = solve(np.maximum(temp + dtemp, 1e-4),
                                          n_out * float(ratio_from_db(dlev)), eta1)
                    except NoiseFitError:
                        continue
                    gs.append(gc)
                    ns.append(nc)
            if gs:
                bounds_g = (db_from_ratio(min(gs)), db_from_ratio(max(gs)))
                bounds_n = (min(ns), max(ns))

        results.append(SingleModeFit(
            freq=float(f_s), g2_db=float(db_from_ratio(g2)), n2=n2,
            residual_photons=resid, g2_db_bounds=bounds_g, n2_bounds=bounds_n))
    return results


def system_noise_breakdown(eta1: float, n_t_exc: float, n2: float,
                           g_ss_db: float) -> NoiseBreakdown:
    """Decompose the total system noise for unit gain asymmetry.

    N_sys = 2 N_vac + 2 (1-eta1)/eta1 N_vac + N_T_exc/eta1 + N2/(eta1 G_ss)

    The first term is the standard quantum limit of one photon; the rest
    are losses before the TWPA, the TWPA's own excess noise, and the
    gain-suppressed contribution of everything after it.
    """
    if not 0.0 < eta1 <= 1.0:
        raise ValueError(f"eta1 must be in (0, 1], got {eta1}")
    g_ss = float(ratio_from_db(g_ss_db))
    return NoiseBreakdown(
        quantum_limit=2.0 * N_VAC,
        pre_twpa=2.0 * (1.0 - eta1) / eta1 * N_VAC,
        twpa_excess=n_t_exc / eta1,
        post_twpa=n2 / (eta1 * g_ss))


def insertion_loss_calibration(freq_g2, g2_db, freq_roundtrip, s21_roundtrip_db):
    """Input-line insertion loss IL = G2_dB - S21_roundtrip_dB per frequency.

    Both measurements must share the same frequency grid.
    """
    freq_g2 = np.asarray(freq_g2, dtype=float)
    freq_roundtrip = np.asarray(freq_roundtrip, dtype=float)
    if freq_g2.shape != freq_roundtrip.shape or not np.allclose(
            freq_g2, freq_roundtrip, rtol=0.0, atol=1e-6):
        raise ValueError("frequency grids of the two measurements differ")
    return np.asarray(g2_db, dtype=float) - np.asarray(s21_roundtrip_db, dtype=float)


def delta_snr(n_in: float, eta_t: float, n2: float, n_t: float,
              g_ss_db: float) -> float:
    """SNR improvement from switching the pump on (linear power ratio).

    delta_SNR = [N_in + (1-eta_T)/eta_T N_vac + N2/eta_T]
              / [N_in + N_T + N2/G_ss]

    ``eta_t`` is the pump-off transmission efficiency of the TWPA and
    ``n_t`` its added noise including the vacuum half photon.
    """
    if not 0.0 < eta_t <= 1.0:
        raise ValueError(f"eta_t must be in (0, 1], got {eta_t}")
    if n_t < N_VAC:
        raise ValueError(f"n_t must be >= {N_VAC} photons, got {n_t}")
    g_ss = float(ratio_from_db(g_ss_db))
    num = n_in + (1.0 - eta_t) / eta_t * N_VAC + n2 / eta_t
    den = n_in + n_t + n2 / g_ss
    return float(num / den)
