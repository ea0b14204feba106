"""Linear wave propagation through the full TWPA chain.

Cascaded 2x2 ABCD matrices give S-parameters against real terminations;
the super-period transfer matrix gives the Bloch dispersion and stopbands
of the periodically loaded line. Fits recover the cell inductance from
transmission spectra and the rf-SQUID element values from the flux
dependence of the cell inductance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .constants import PHI0_BAR
from . import squid_core
from .squid_core import FluxPoint, SquidParams

_PROCESSES = ("3wm", "up_conversion", "shg")
_DB_FLOOR = -400.0


class FitConvergenceError(RuntimeError):
    """A least-squares fit failed to converge or the data are degenerate."""


@dataclass(frozen=True)
class CapacitancePattern:
    """Multiperiodic ground-capacitance pattern.

    ``values`` holds one capacitance per group, ``group_len`` the number of
    consecutive identical cells per group. The super-period is
    ``group_len * len(values)`` cells.
    """

    values: tuple
    group_len: int

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("pattern needs at least one group")
        if any(v <= 0.0 for v in self.values):
            raise ValueError("all capacitances must be > 0")
        if self.group_len < 1:
            raise ValueError(f"group_len must be >= 1, got {self.group_len}")

    @property
    def period(self) -> int:
        """Cells per super-period."""
        return self.group_len * len(self.values)

    def cell_values(self) -> np.ndarray:
        """Per-cell capacitances over one super-period [F]."""
        return np.repeat(np.asarray(self.values, dtype=float), self.group_len)

    @property
    def mean(self) -> float:
        """Average ground capacitance [F]."""
        return float(np.mean(self.cell_values()))


def build_pattern(c1: float, c2: float, c3: float, group_len: int = 6,
                  ordering=("c1", "c2", "c1", "c3")) -> CapacitancePattern:
    """Assemble the three-valued pattern from a group ordering.

    The default ordering [c1, c2, c1, c3] with groups of six cells gives the
    24-cell super-period used throughout.
    """
    if len(ordering) == 0:
        raise ValueError("ordering must not be empty")
    lookup = {"c1": c1, "c2": c2, "c3": c3}
    try:
        values = tuple(lookup[name] for name in ordering)
    except KeyError as exc:
        raise ValueError(f"unknown group label {exc.args[0]!r} in ordering") from exc
    return CapacitancePattern(values=values, group_len=group_len)


def uniform_pattern(c: float) -> CapacitancePattern:
    """Unmodulated line: a single capacitance group of one cell."""
    return CapacitancePattern(values=(c,), group_len=1)


@dataclass
class ChainSpec:
    """Complete linear description of the TWPA chain.

    ``taper_cells`` > 0 apodizes the capacitance modulation over that many
    cells at each end (raised-cosine weight toward the mean capacitance),
    which suppresses stopband-edge reflections of a finite chain.
    """

    n_cells: int
    pitch: float
    squid: SquidParams
    flux: FluxPoint
    pattern: CapacitancePattern
    z_term: float = 50.0
    loss_tangent: float = 0.0
    taper_cells: int = 0

    def __post_init__(self):
        if self.n_cells < 0:
            raise ValueError(f"n_cells must be >= 0, got {self.n_cells}")
        if not self.z_term > 0.0:
            raise ValueError(f"z_term must be > 0, got {self.z_term}")
        if self.loss_tangent < 0.0:
            raise ValueError(f"loss_tangent must be >= 0, got {self.loss_tangent}")
        if self.taper_cells < 0 or 2 * self.taper_cells > self.n_cells:
            raise ValueError("taper_cells must be in [0, n_cells/2]")

    def l_cell(self, model: str = "non_ideal") -> float:
        """Cell inductance at the chain's flux bias [H]."""
        return squid_core.cell_inductance(self.squid, self.flux.phi_dc, model=model)

    def cell_caps(self) -> np.ndarray:
        """Per-cell ground capacitances over the whole chain [F]."""
        caps = np.resize(self.pattern.cell_values(), self.n_cells)
        t = self.taper_cells
        if t > 0:
            w = 0.5 - 0.5 * np.cos(np.pi * (np.arange(t) + 0.5) / t)
            mean = self.pattern.mean
            caps = caps.copy()
            caps[:t] = mean + (caps[:t] - mean) * w
            caps[-t:] = mean + (caps[-t:] - mean) * w[::-1]
        return caps

    def cutoff_frequency(self, l_cell: float | None = None) -> float:
        """Cell cutoff 1/(pi*sqrt(L_cell*Cg_mean)) [Hz]."""
        if l_cell is None:
            l_cell = self.l_cell()
        return 1.0 / (np.pi * np.sqrt(l_cell * self.pattern.mean))


@dataclass
class DispersionResult:
    """Bloch dispersion on a frequency grid with identified stopbands."""

    freq: np.ndarray
    k_bloch: np.ndarray              # complex, rad/cell
    stopbands: list                  # [(f_lo, f_hi)], Hz
    period: int

    def k_at(self, f: float) -> complex:
        """Interpolated Bloch wavenumber at ``f`` [rad/cell]."""
        if f < self.freq[0] or f > self.freq[-1]:
            raise ValueError(f"frequency {f:.4g} Hz outside the dispersion grid")
        re = np.interp(f, self.freq, self.k_bloch.real)
        im = np.interp(f, self.freq, self.k_bloch.imag)
        return complex(re, im)

    def in_stopband(self, f: float) -> bool:
        return any(lo <= f <= hi for lo, hi in self.stopbands)


@dataclass
class S21Spectrum:
    """Complex transmission on a frequency grid, with optional tags."""

    freq: np.ndarray
    s21: np.ndarray
    flux_phi0: float | None = None
    power_dbm: float | None = None
    valid: np.ndarray | None = None  # False where above the engine validity cap

    def magnitude_db(self) -> np.ndarray:
        mag = np.abs(self.s21)
        floor = 10.0 ** (_DB_FLOOR / 20.0)
        return 20.0 * np.log10(np.maximum(mag, floor))


@dataclass(frozen=True)
class PhaseMismatch:
    """Per-cell phase mismatch of a mixing process."""

    process: str
    delta_k_per_cell: float
    evanescent: bool
    im_k_per_cell: dict = field(default_factory=dict)


@dataclass
class CellInductanceFit:
    """Result of a one-parameter CTM transmission fit."""

    flux_phi0: float | None
    l_cell: float | None
    residual_db: float | None
    error: str | None = None


@dataclass
class FluxModelFit:
    """rf-SQUID element values recovered from L_cell vs flux."""

    ic: float
    lm: float
    lw: float
    l_parasitic: float  # lp + lj0l, tied to ic through the large-junction ratio
    residual: float
    covariance: np.ndarray | None


# ---------------------------------------------------------------------------
# ABCD machinery


def _mat2_mul(a, b):
    """Product of (nf,2,2) matrix stacks."""
    out = np.empty_like(a)
    out[:, 0, 0] = a[:, 0, 0] * b[:, 0, 0] + a[:, 0, 1] * b[:, 1, 0]
    out[:, 0, 1] = a[:, 0, 0] * b[:, 0, 1] + a[:, 0, 1] * b[:, 1, 1]
    out[:, 1, 0] = a[:, 1, 0] * b[:, 0, 0] + a[:, 1, 1] * b[:, 1, 0]
    out[:, 1, 1] = a[:, 1, 0] * b[:, 0, 1] + a[:, 1, 1] * b[:, 1, 1]
    return out


def _identity_stack(nf):
    out = np.zeros((nf, 2, 2), dtype=complex)
    out[:, 0, 0] = 1.0
    out[:, 1, 1] = 1.0
    return out


def _cells_abcd(freq, l_cell, caps, loss_tangent):
    """Cascade of unit cells (series L then shunt C) for each frequency.

    Returns the (nf,2,2) product over the given per-cell capacitances.
    """
    w = 2.0 * np.pi * np.asarray(freq, dtype=float)
    zs = 1j * w * l_cell
    total = _identity_stack(w.size)
    cell = np.empty((w.size, 2, 2), dtype=complex)
    for c in caps:
        y = 1j * w * c * (1.0 - 1j * loss_tangent)
        cell[:, 0, 0] = 1.0 + zs * y
        cell[:, 0, 1] = zs
        cell[:, 1, 0] = y
        cell[:, 1, 1] = 1.0
        total = _mat2_mul(total, cell)
    return total


def _matrix_power_scaled(m, n):
    """(m^n, log_scale) by binary exponentiation with magnitude extraction.

    Deep stopbands make matrix entries grow like exp(alpha*N); pulling out
    the largest magnitude at every multiply keeps everything in range.
    The true matrix is ``result * exp(log_scale[:, None, None])``.
    """
    nf = m.shape[0]
    result = _identity_stack(nf)
    log_scale = np.zeros(nf)
    base = m.copy()
    base_log = np.zeros(nf)

    def _normalize(mat, log):
        s = np.max(np.abs(mat), axis=(1, 2))
        s = np.where(s > 0.0, s, 1.0)
        return mat / s[:, None, None], log + np.log(s)

    while n > 0:
        if n & 1:
            result = _mat2_mul(result, base)
            log_scale += base_log
            result, log_scale = _normalize(result, log_scale)
        n >>= 1
        if n:
            base = _mat2_mul(base, base)
            base_log = 2.0 * base_log
            base, base_log = _normalize(base, base_log)
    return result, log_scale


def _abcd_to_s(m, log_scale, z0):
    """ABCD stack (with factored-out scale) -> (s11, s21) against real z0."""
    a = m[:, 0, 0]
    b = m[:, 0, 1]
    c = m[:, 1, 0]
    d = m[:, 1, 1]
    den = a + b / z0 + c * z0 + d
    s11 = (a + b / z0 - c * z0 - d) / den
    with np.errstate(under="ignore"):
        s21 = 2.0 / den * np.exp(-log_scale)
    return s11, s21


def ctm_s21(l_cell: float, pattern: CapacitancePattern, n_cells: int,
            z_term: float, freq, loss_tangent: float = 0.0,
            with_s11: bool = False):
    """Transmission of an n-cell chain with explicit cell inductance.

    The chain is the pattern repeated cyclically; the super-period matrix is
    raised to the integer power and any remainder cells are cascaded on the
    output side. ``n_cells = 0`` returns unity transmission.
    """
    freq = np.atleast_1d(np.asarray(freq, dtype=float))
    caps = pattern.cell_values()
    period = pattern.period
    n_full, n_rem = divmod(n_cells, period)

    if n_cells == 0:
        total = _identity_stack(freq.size)
        logs = np.zeros(freq.size)
    else:
        super_m = _cells_abcd(freq, l_cell, caps, loss_tangent)
        total, logs = _matrix_power_scaled(super_m, n_full) if n_full else (
            _identity_stack(freq.size), np.zeros(freq.size))
        if n_rem:
            rem = _cells_abcd(freq, l_cell, caps[:n_rem], loss_tangent)
            total = _mat2_mul(total, rem)
    s11, s21 = _abcd_to_s(total, logs, z_term)
    if with_s11:
        return s11, s21
    return s21


def ctm_s21_cells(l_cell: float, caps, z_term: float, freq,
                  loss_tangent: float = 0.0, cap_esr: float = 0.0,
                  with_s11: bool = False):
    """Transmission of a chain with explicit per-cell capacitances.

    Used for tapered (apodized) chains where the super-period shortcut does
    not apply. ``cap_esr`` puts the same series resistance in every shunt
    capacitor that the time-domain engine uses, Y = iwC/(1 + iwRC).
    """
    freq = np.atleast_1d(np.asarray(freq, dtype=float))
    w = 2.0 * np.pi * freq
    zs = 1j * w * l_cell
    total = _identity_stack(w.size)
    cell = np.empty((w.size, 2, 2), dtype=complex)
    for c in caps:
        y = 1j * w * c * (1.0 - 1j * loss_tangent)
        if cap_esr > 0.0:
            y = y / (1.0 + 1j * w * c * cap_esr)
        cell[:, 0, 0] = 1.0 + zs * y
        cell[:, 0, 1] = zs
        cell[:, 1, 0] = y
        cell[:, 1, 1] = 1.0
        total = _mat2_mul(total, cell)
    s11, s21 = _abcd_to_s(total, np.zeros(w.size), z_term)
    if with_s11:
        return s11, s21
    return s21


def s21_spectrum(chain: ChainSpec, freq, cap_esr: float = 0.0) -> S21Spectrum:
    """Transmission spectrum of the chain at its flux bias.

    Frequencies above 0.9x the cell cutoff are computed anyway but flagged
    invalid in the result.
    """
    freq = np.atleast_1d(np.asarray(freq, dtype=float))
    l_cell = chain.l_cell()
    if chain.taper_cells > 0 or cap_esr > 0.0:
        s21 = ctm_s21_cells(l_cell, chain.cell_caps(), chain.z_term, freq,
                            chain.loss_tangent, cap_esr)
    else:
        s21 = ctm_s21(l_cell, chain.pattern, chain.n_cells, chain.z_term,
                      freq, chain.loss_tangent)
    valid = freq <= 0.9 * chain.cutoff_frequency(l_cell)
    return S21Spectrum(freq=freq, s21=s21,
                       flux_phi0=chain.flux.phi_ext / (2.0 * np.pi),
                       valid=valid)


# ---------------------------------------------------------------------------
# Bloch dispersion


def _supercell_trace_half(freq, l_cell, pattern):
    m = _cells_abcd(freq, l_cell, pattern.cell_values(), 0.0)
    return 0.5 * (m[:, 0, 0] + m[:, 1, 1]).real


def bloch_dispersion_lc(l_cell: float, pattern: CapacitancePattern, freq) -> DispersionResult:
    """Bloch dispersion of the lossless periodically loaded line.

    The Bloch phase per super-period satisfies cos(K*P*a) = trace/2 of the
    super-period ABCD matrix. The arccos branch is unwrapped so Re(K) is
    continuous and non-decreasing with frequency; inside stopbands
    (|trace/2| > 1) Re(K) stays pinned at the band-edge value and
    Im(K) = arccosh(|trace/2|)/P. Stopband edges are refined by bisection.
    """
    freq = np.atleast_1d(np.asarray(freq, dtype=float))
    if freq.size < 2:
        raise ValueError("frequency grid needs at least two points")
    period = pattern.period
    c = _supercell_trace_half(freq, l_cell, pattern)

    in_band = np.abs(c) <= 1.0
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    k = np.zeros(freq.size, dtype=complex)

    band_idx = 0
    prev_in_band = True
    for i in range(freq.size):
        if in_band[i]:
            if not prev_in_band:
                band_idx += 1
            phase = band_idx * np.pi + theta[i] if band_idx % 2 == 0 \
                else (band_idx + 1) * np.pi - theta[i]
            k[i] = phase / period
        else:
            pinned = (band_idx + 1) * np.pi
            k[i] = (pinned + 1j * np.arccosh(abs(c[i]))) / period
        prev_in_band = in_band[i]

    stopbands = _stopband_intervals(freq, in_band, l_cell, pattern)
    return DispersionResult(freq=freq, k_bloch=k, stopbands=stopbands, period=period)


def _stopband_intervals(freq, in_band, l_cell, pattern):
    """Contiguous |trace/2| > 1 regions, edges refined by root bisection."""

    def trace_half_scalar(f):
        return float(_supercell_trace_half(np.array([f]), l_cell, pattern)[0])

    def refine(f_in, f_out):
        # root of |c| - 1 between a passband point and a stopband point
        target = np.sign(trace_half_scalar(f_out))

        def g(f):
            return trace_half_scalar(f) - target

        try:
            return float(optimize.brentq(g, min(f_in, f_out), max(f_in, f_out),
                                         xtol=1e-3, rtol=1e-14))
        except ValueError:
            return 0.5 * (f_in + f_out)

    intervals = []
    i = 0
    n = freq.size
    while i < n:
        if not in_band[i]:
            j = i
            while j + 1 < n and not in_band[j + 1]:
                j += 1
            f_lo = refine(freq[i - 1], freq[i]) if i > 0 else freq[0]
            f_hi = refine(freq[j + 1], freq[j]) if j + 1 < n else freq[-1]
            intervals.append((f_lo, f_hi))
            i = j + 1
        else:
            i += 1
    return intervals


def bloch_dispersion(chain: ChainSpec, freq) -> DispersionResult:
    """Bloch dispersion of the chain at its flux bias (loss ignored)."""
    return bloch_dispersion_lc(chain.l_cell(), chain.pattern, freq)


def phase_mismatch(dispersion: DispersionResult, f_p: float, f_s: float,
                   process: str = "3wm") -> PhaseMismatch:
    """Per-cell phase mismatch of a pump/signal mixing process.

    3wm:           dk = k_p - k_s - k_i, idler at f_p - f_s
    up_conversion: dk = k_(p+s) - k_p - k_s
    shg:           dk = k_(2p) - 2 k_p

    If any participating tone falls inside a stopband the result carries the
    evanescent flag together with the per-tone Im(k).
    """
    if process not in _PROCESSES:
        raise ValueError(f"process must be one of {_PROCESSES}, got {process!r}")
    if process == "3wm":
        if f_s >= f_p:
            raise ValueError("3wm requires f_s < f_p")
        tones = {"p": f_p, "s": f_s, "i": f_p - f_s}
        signs = {"p": +1.0, "s": -1.0, "i": -1.0}
    elif process == "up_conversion":
        tones = {"p+s": f_p + f_s, "p": f_p, "s": f_s}
        signs = {"p+s": +1.0, "p": -1.0, "s": -1.0}
    else:
        tones = {"2p": 2.0 * f_p, "p": f_p}
        signs = {"2p": +1.0, "p": -2.0}

    k = {name: dispersion.k_at(f) for name, f in tones.items()}
    delta = sum(signs[name] * k[name].real for name in tones)
    im_k = {name: k[name].imag for name in tones
            if dispersion.in_stopband(tones[name])}
    return PhaseMismatch(process=process, delta_k_per_cell=float(delta),
                         evanescent=bool(im_k), im_k_per_cell=im_k)


# ---------------------------------------------------------------------------
# Fits


def _detrended_misfit(data_db, model_db, fn):
    """Misfit after removing the best quadratic background in frequency."""
    x = np.column_stack([np.ones_like(fn), fn, fn * fn])
    resid = data_db - model_db
    coef, *_ = np.linalg.lstsq(x, resid, rcond=None)
    return resid - x @ coef


def _stopband_center_guess(freq, data_db, pattern):
    """Initial L_cell from the Bragg condition at the transmission dip."""
    span = float(np.ptp(freq))
    fn = (freq - freq.mean()) / (span if span > 0 else 1.0)
    flat = _detrended_misfit(data_db, np.zeros_like(data_db), fn)
    f_dip = freq[np.argmin(flat)]
    # K*P*a = pi at the first-stopband center: 2*pi*f*sqrt(L*Cmean)*P = pi
    return 1.0 / (2.0 * pattern.period * f_dip) ** 2 / pattern.mean


def fit_cell_inductance(spectra, template: ChainSpec,
                        max_iter: int = 500) -> list:
    """Fit the cell inductance to each tagged transmission spectrum.

    A one-parameter Nelder-Mead search matches the CTM |S21| in dB to the
    data after both are normalized by a fitted quadratic background,
    mimicking a through-reference calibration. Spectra without an
    identifiable stopband feature produce a per-entry error record instead
    of aborting the batch.
    """
    results = []
    for spec in spectra:
        freq = np.asarray(spec.freq, dtype=float)
        data_db = spec.magnitude_db()
        span = float(np.ptp(freq))
        fn = (freq - freq.mean()) / (span if span > 0 else 1.0)

        depth = np.min(_detrended_misfit(data_db, np.zeros_like(data_db), fn))
        if depth > -3.0:
            results.append(CellInductanceFit(
                flux_phi0=spec.flux_phi0, l_cell=None, residual_db=None,
                error="no stopband feature in the fit window"))
            continue

        l0 = _stopband_center_guess(freq, data_db, template.pattern)

        def misfit(x):
            if x[0] <= 0.0:
                return 1e12
            s21 = ctm_s21(x[0] * l0, template.pattern, template.n_cells,
                          template.z_term, freq, template.loss_tangent)
            model_db = 20.0 * np.log10(np.maximum(np.abs(s21), 1e-20))
            r = _detrended_misfit(data_db, model_db, fn)
            return float(np.sqrt(np.mean(r * r)))

        res = optimize.minimize(misfit, x0=[1.0], method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-12,
                                         "maxiter": max_iter})
        if not res.success and res.status != 2:  # status 2: maxiter reached
            results.append(CellInductanceFit(
                flux_phi0=spec.flux_phi0, l_cell=None, residual_db=None,
                error=f"fit did not converge: {res.message}"))
            continue
        results.append(CellInductanceFit(
            flux_phi0=spec.flux_phi0, l_cell=float(res.x[0] * l0),
            residual_db=float(res.fun)))
    return results


def _flux_model(phi_ext_rad, ic, lm, lw, large_junction_ratio):
    """L_cell(phi_ext) of the non-ideal cell with the via-junction tie.

    The large via junction contributes l_parasitic = phi0/(ratio*ic); a free
    fourth inductance would be degenerate with (lm, lw) because only three
    combinations (offset, modulation amplitude, beta_L) are observable.
    """
    lps = PHI0_BAR / (large_junction_ratio * ic)
    beta_l = ic * (lm + lps) / PHI0_BAR
    if not 0.0 <= beta_l < squid_core.BETA_L_MAX:
        return None
    phi_dc = squid_core.solve_phi_dc(phi_ext_rad, beta_l)
    cosp = np.cos(phi_dc)
    alpha_p = lps / (lps + lm)
    l_sq = lm * (1.0 + alpha_p * beta_l * cosp) / (1.0 + beta_l * cosp)
    return lw + l_sq


def fit_flux_model(lcell_vs_flux, large_junction_ratio: float = 40.0,
                   lw: float | None = None) -> FluxModelFit:
    """Recover (ic, lm, lw, lp+lj0l) from the flux dependence of L_cell.

    ``lcell_vs_flux`` is a sequence of (phi_ext in flux quanta, L_cell in H).
    Solved by damped least squares with numerically differenced Jacobian.

    Only three combinations of the four element values are observable in
    the curve, so the parasitic branch inductance is tied to the critical
    current through the large-junction area ratio (default 40). Even then
    the (ic, lm, lw) triple has one sloppy direction that amplifies
    measurement noise about thirtyfold; when the wire inductance is known
    from the layout, passing ``lw`` pins it and conditions the fit well.
    """
    pts = np.asarray(lcell_vs_flux, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 8:
        raise ValueError("need at least 8 (flux, L_cell) points")
    phi_phi0 = pts[:, 0]
    l_data = pts[:, 1]
    if np.ptp(phi_phi0) < 0.5:
        raise ValueError("flux points must span at least half a flux quantum")
    if np.ptp(l_data) < 1e-6 * np.mean(l_data):
        raise FitConvergenceError("degenerate data: L_cell does not modulate with flux")

    phi_rad = 2.0 * np.pi * phi_phi0
    l_max, l_min = float(l_data.max()), float(l_data.min())
    lw_fixed = lw

    def residuals(x):
        if lw_fixed is None:
            ic, lm, lw_val = x
        else:
            ic, lm = x
            lw_val = lw_fixed
        if ic <= 0.0 or lm <= 0.0 or lw_val < 0.0:
            return np.full(l_data.size, 1e3)
        model = _flux_model(phi_rad, ic, lm, lw_val, large_junction_ratio)
        if model is None:
            return np.full(l_data.size, 1e3)
        return (model - l_data) / np.mean(l_data)

    # Seeds from the curve extrema: modulation depth fixes beta_L, the
    # offset fixes lw. Several starts guard against shallow local minima.
    best = None
    lw_fracs = (0.1, 0.3, 0.5) if lw_fixed is None else (None,)
    for lw_frac in lw_fracs:
        lw0 = lw_fixed if lw_fixed is not None else lw_frac * l_min
        lm0 = 0.5 * (l_max + l_min) - lw0
        depth = (l_max - l_min) / max(l_max + l_min - 2.0 * lw0, 1e-15)
        beta0 = float(np.clip(depth, 0.02, 0.9))
        ic0 = beta0 * PHI0_BAR / (1.1 * lm0)
        x0 = [ic0, lm0] if lw_fixed is not None else [ic0, lm0, lw0]
        try:
            sol = optimize.least_squares(
                residuals, x0=x0, method="lm",
                xtol=1e-12, ftol=1e-12, max_nfev=500 * len(x0))
        except Exception:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitConvergenceError("flux-model fit did not converge")

    if lw_fixed is None:
        ic, lm, lw_out = (float(v) for v in best.x)
    else:
        ic, lm = (float(v) for v in best.x)
        lw_out = float(lw_fixed)
    resid_rms = float(np.sqrt(np.mean(best.fun ** 2)))
    if resid_rms > 0.05:
        raise FitConvergenceError(
            f"flux-model fit residual too large ({resid_rms:.3g} relative)")
    try:
        jac = best.jac
        cov = np.linalg.inv(jac.T @ jac) * resid_rms ** 2
    except np.linalg.LinAlgError:
        cov = None
    return FluxModelFit(
        ic=ic, lm=lm, lw=lw_out,
        l_parasitic=float(PHI0_BAR / (large_junction_ratio * ic)),
        residual=resid_rms, covariance=cov)
