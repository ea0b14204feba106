"""Nonlinear time-domain engine for rf-SQUID cells and chains.

Replaces a SPICE-style transient simulator for this circuit family:
fixed-step RK4 over the exact sin(phi) junction dynamics, coherent
windowing (every drive tone snapped to an integer multiple of the window
rate) and Fourier projection of steady-state harmonics. Port quantities
are decomposed into incident/outgoing power waves against the resistive
terminations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .chain_model import ChainSpec
from .constants import PHI0_BAR
from .gain_analytics import PumpConfig
from .squid_core import FluxPoint, SquidParams, solve_phi_dc
from .units import db_from_ratio


class SteadyStateError(RuntimeError):
    """Periodic steady state not reached within the window budget."""


class InstabilityError(RuntimeError):
    """State diverged during integration."""


class ProbeNonlinearityError(RuntimeError):
    """Conversion-gain probe left the linear-response regime."""


@dataclass(frozen=True)
class Tone:
    """One drive tone: current-source amplitude [A] behind the termination."""

    freq: float
    amp: float
    phase: float = 0.0
    port: str = "input"

    def __post_init__(self):
        if not self.freq > 0.0:
            raise ValueError(f"tone frequency must be > 0, got {self.freq}")
        if self.port not in ("input", "output"):
            raise ValueError(f"port must be 'input' or 'output', got {self.port!r}")


def tone_from_power(freq: float, p_w: float, z0: float, phase: float = 0.0,
                    port: str = "input") -> Tone:
    """Tone whose incident wave carries average power ``p_w`` on a z0 line."""
    return Tone(freq=freq, amp=float(np.sqrt(8.0 * p_w / z0)), phase=phase, port=port)


@dataclass(frozen=True)
class DriveSpec:
    """Bias current plus the set of ac drive tones."""

    i_dc: float = 0.0
    tones: tuple = ()


@dataclass(frozen=True)
class SimConfig:
    """Integration plan: coherent window, settle budget, step control.

    ``record_time`` fixes the base frequency 1/record_time; every tone is
    snapped onto that grid so all mixing products fall on FFT bins.
    """

    record_time: float
    settle_time: float
    dt: float | None = None
    f_max: float | None = None
    ss_rel_tol: float = 1e-6
    max_windows: int = 12
    cap_esr: float = 0.0
    ic_spread: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.record_time > 0.0:
            raise ValueError("record_time must be > 0")
        if self.settle_time < 0.0:
            raise ValueError("settle_time must be >= 0")
        if self.cap_esr < 0.0:
            raise ValueError("cap_esr must be >= 0")
        if not 0.0 <= self.ic_spread < 0.5:
            raise ValueError("ic_spread must be in [0, 0.5)")


def sim_config_for_pump(f_p: float, bins_per_pump: int = 48,
                        settle_windows: int = 3, f_max_factor: float = 3.6,
                        **kwargs) -> SimConfig:
    """Convenience plan for pump-driven chain runs.

    The window holds ``bins_per_pump`` pump periods so that f_p/2 and all
    mixing products up to ``f_max_factor * f_p`` are exact FFT bins.
    """
    record = bins_per_pump / f_p
    return SimConfig(record_time=record, settle_time=settle_windows * record,
                     f_max=f_max_factor * f_p, **kwargs)


@dataclass
class PortWaves:
    """Incident/outgoing wave amplitudes [sqrt(W), peak] at both ports."""

    freq: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray


def _snap_tones(tones, f_base):
    snapped = []
    for tone in tones:
        n = round(tone.freq / f_base)
        if n < 1:
            raise ValueError(
                f"tone at {tone.freq:.4g} Hz is below the window rate {f_base:.4g} Hz")
        snapped.append(replace(tone, freq=n * f_base))
    return tuple(snapped)


def _auto_dt(cfg: SimConfig, squid: SquidParams, tones, l_series: float,
             c_min: float | None):
    if cfg.dt is not None:
        return cfg.dt
    f_max = cfg.f_max or (3.6 * max((t.freq for t in tones), default=1e9))
    dt = 1.0 / (200.0 * f_max)
    if squid.cj > 0.0:
        t_plasma = 2.0 * np.pi * np.sqrt(PHI0_BAR * squid.cj / squid.ic)
        dt = min(dt, t_plasma / 50.0)
    if c_min is not None and l_series > 0.0:
        t_node = 2.0 * np.pi * np.sqrt(l_series * c_min)
        dt = min(dt, t_node / 30.0)
    return dt


def _plan(cfg: SimConfig, squid: SquidParams, tones, l_series=0.0, c_min=None):
    """Snap tones, fix the step to divide the window, align the settle."""
    f_base = 1.0 / cfg.record_time
    tones = _snap_tones(tones, f_base)
    dt_target = _auto_dt(cfg, squid, tones, l_series, c_min)
    nsamp = max(int(np.ceil(cfg.record_time / dt_target)), 64)
    dt = cfg.record_time / nsamp
    settle_windows = int(np.ceil(cfg.settle_time / cfg.record_time - 1e-9))
    return tones, dt, nsamp, settle_windows


def _project_bins(trace, bins):
    """Peak complex amplitudes (cos-referenced) at the given FFT bins."""
    m = trace.size
    spec = np.fft.rfft(trace)
    out = np.empty(len(bins), dtype=complex)
    for i, b in enumerate(bins):
        out[i] = spec[b] / m if b == 0 else 2.0 * spec[b] / m
    return out


def _converged(prev, cur, tol):
    # per-bin relative change; bins far below the dominant watched bin are
    # floored so decaying incommensurate leftovers cannot stall convergence
    if prev is None:
        return False, np.inf
    scale = max(np.max(np.abs(cur)), 1e-30)
    rel = float(np.max(np.abs(cur - prev) / (np.abs(cur) + 1e-6 * scale)))
    return rel < tol, rel


# ---------------------------------------------------------------------------
# Unit cell


@dataclass
class CellRecord:
    """Steady-state window of the driven unit cell."""

    squid: SquidParams
    drive: DriveSpec
    dt: float
    window_time: float
    t_start: float          # global time at the first recorded sample
    phi: np.ndarray
    nu: np.ndarray
    ijj: np.ndarray
    windows_used: int
    rel_change: float

    @property
    def t(self) -> np.ndarray:
        """Global time axis of the recorded window."""
        return self.t_start + self.dt * np.arange(self.phi.size)

    def drive_current(self):
        """Analytic drive current and its derivative over the window."""
        t = self.t
        i = np.full(t.size, self.drive.i_dc)
        di = np.zeros(t.size)
        for tone in self.drive.tones:
            w = 2.0 * np.pi * tone.freq
            i += tone.amp * np.cos(w * t + tone.phase)
            di += -tone.amp * w * np.sin(w * t + tone.phase)
        return i, di

    def v_squid(self) -> np.ndarray:
        """Voltage across the rf-SQUID (meander parallel junction branch)."""
        p = self.squid
        _, di = self.drive_current()
        lps = p.l_parasitic
        return p.lm * (lps * di + PHI0_BAR * self.nu) / (p.lm + lps)


def simulate_unit_cell(squid: SquidParams, flux: FluxPoint | None,
                       drive: DriveSpec, cfg: SimConfig) -> CellRecord:
    """Integrate one current-driven rf-SQUID cell to periodic steady state.

    The dc bias is ramped from zero, so the cell settles onto the flux
    branch fixed by Phi_ext = lm * i_dc without being told phi_dc. If the
    drive carries no dc but a flux point is given, the equivalent bias
    current is derived from it.
    """
    if squid.cj <= 0.0:
        raise ValueError("time-domain engine needs cj > 0")
    i_dc = drive.i_dc
    if i_dc == 0.0 and flux is not None:
        i_dc = flux.phi_ext * PHI0_BAR / squid.lm

    tones, dt, nsamp, settle_windows = _plan(cfg, squid, drive.tones)
    drive = DriveSpec(i_dc=i_dc, tones=tones)

    w = np.array([2.0 * np.pi * t.freq for t in tones])
    amp = np.array([t.amp for t in tones])
    ph = np.array([t.phase for t in tones])

    settle = max(settle_windows, 1) * cfg.record_time
    dc_ramp = 0.35 * settle
    ac_t0 = 0.40 * settle
    ac_ramp = 0.30 * settle

    gj = 0.0 if squid.rshunt is None else 1.0 / squid.rshunt
    y = np.zeros(3)
    n_settle = max(settle_windows, 1) * nsamp
    dummy = np.empty(0)
    t_now = _kernels.integrate_cell(
        y, 0.0, dt, n_settle, squid.ic, squid.cj, squid.lm, squid.l_parasitic,
        gj, PHI0_BAR, i_dc, dc_ramp, w, amp, ph, ac_t0, ac_ramp,
        dummy, dummy, dummy, False)

    rec_phi = np.empty(nsamp)
    rec_nu = np.empty(nsamp)
    rec_ijj = np.empty(nsamp)
    bins = sorted({0} | {round(t.freq * cfg.record_time) for t in tones})

    prev = None
    for window in range(cfg.max_windows):
        t_start = t_now
        t_now = _kernels.integrate_cell(
            y, t_now, dt, nsamp, squid.ic, squid.cj, squid.lm,
            squid.l_parasitic, gj, PHI0_BAR, i_dc, dc_ramp, w, amp, ph,
            ac_t0, ac_ramp, rec_phi, rec_nu, rec_ijj, True)
        if not np.all(np.isfinite(y)):
            raise InstabilityError("unit-cell state diverged")
        cur = _project_bins(rec_phi, bins)
        ok, rel = _converged(prev, cur, cfg.ss_rel_tol)
        prev = cur
        if ok:
            return CellRecord(squid=squid, drive=drive, dt=dt,
                              window_time=cfg.record_time, t_start=t_start,
                              phi=rec_phi.copy(), nu=rec_nu.copy(),
                              ijj=rec_ijj.copy(), windows_used=window + 1,
                              rel_change=rel)
    raise SteadyStateError(
        f"no periodic steady state after {cfg.max_windows} windows "
        f"(last relative change {rel:.3g}, tol {cfg.ss_rel_tol:.3g}); "
        "increase settle_time or add junction damping (rshunt)")


@dataclass
class ImpedanceResult:
    """Fundamental-harmonic impedance of the driven cell."""

    freq: float
    z_cell: complex
    l_cell: float
    r_cell: float
    drive_power_w: float


def extract_impedance(record: CellRecord, f: float,
                      z_ref: float = 50.0) -> ImpedanceResult:
    """Cell impedance Z = V/I from the fundamental of the recorded window.

    The window must hold an integer number of periods of ``f``. The wire
    inductance acts in series with the SQUID and is added analytically.
    The power tag is the incident power a current of this amplitude would
    carry on a matched line of impedance ``z_ref``.
    """
    cycles = f * record.window_time
    if abs(cycles - round(cycles)) > 1e-6 or round(cycles) < 1:
        raise ValueError(
            f"window of {record.window_time:.4g} s is not coherent with {f:.6g} Hz")
    nbin = round(cycles)
    i, _ = record.drive_current()
    v_sq = record.v_squid()
    i_ac = _project_bins(i, [nbin])[0]
    v_ac = _project_bins(v_sq, [nbin])[0]
    if abs(i_ac) == 0.0:
        raise ValueError(f"no drive component at {f:.6g} Hz")
    w = 2.0 * np.pi * f
    z = v_ac / i_ac + 1j * w * record.squid.lw
    return ImpedanceResult(freq=f, z_cell=complex(z),
                           l_cell=float(z.imag / w), r_cell=float(z.real),
                           drive_power_w=float(0.5 * abs(i_ac) ** 2 * z_ref))


# ---------------------------------------------------------------------------
# Full chain


@dataclass
class ChainRun:
    """Steady-state record of a chain simulation.

    Holds the last coherent window of the port traces plus the full
    rfft wave spectra at both ports.
    """

    chain: ChainSpec
    tones: tuple
    dt: float
    window_time: float
    t_start: float
    freq: np.ndarray           # rfft bin frequencies
    a1: np.ndarray
    b1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    v0: np.ndarray
    ib1: np.ndarray
    vn: np.ndarray
    windows_used: int
    rel_change: float
    node_t: np.ndarray | None = None
    node_v: np.ndarray | None = None

    def _bin(self, f: float) -> int:
        b = round(f * self.window_time)
        if not 0 <= b < self.freq.size:
            raise ValueError(f"{f:.4g} Hz is outside the resolved spectrum")
        if abs(f * self.window_time - b) > 1e-6:
            raise ValueError(f"{f:.4g} Hz is not on the simulation frequency grid")
        return b

    def wave(self, port: int, f: float, kind: str) -> complex:
        """Complex wave amplitude: port 1 or 2, kind 'a' (incident) or 'b'."""
        arr = {(1, "a"): self.a1, (1, "b"): self.b1,
               (2, "a"): self.a2, (2, "b"): self.b2}[(port, kind)]
        return complex(arr[self._bin(f)])

    def port_waves(self, freqs) -> PortWaves:
        idx = [self._bin(f) for f in freqs]
        return PortWaves(freq=np.asarray(freqs, dtype=float),
                         a1=self.a1[idx], b1=self.b1[idx],
                         a2=self.a2[idx], b2=self.b2[idx])

    def power_balance(self):
        """(incident, outgoing) average power summed over all ac bins [W]."""
        p_in = 0.5 * (np.sum(np.abs(self.a1[1:]) ** 2)
                      + np.sum(np.abs(self.a2[1:]) ** 2))
        p_out = 0.5 * (np.sum(np.abs(self.b1[1:]) ** 2)
                       + np.sum(np.abs(self.b2[1:]) ** 2))
        return float(p_in), float(p_out)


def _chain_arrays(chain: ChainSpec):
    return chain.cell_caps()


def simulate_chain(chain: ChainSpec, drive: DriveSpec, cfg: SimConfig,
                   watch_freqs=(), record_nodes: bool = False) -> ChainRun:
    """Integrate the N-cell ladder to periodic steady state.

    The flux bias enters parametrically: every cell starts at the dc
    operating point of ``chain.flux`` with the matching circulating
    current, which is the rf-equivalent of biasing through the line.
    Tones are injected as current sources behind the ``z_term``
    terminations at either port.
    """
    squid = chain.squid
    if squid.cj <= 0.0:
        raise ValueError("time-domain engine needs cj > 0")
    if drive.i_dc != 0.0:
        raise ValueError("chain flux bias is set via ChainSpec.flux, not i_dc")
    if chain.loss_tangent != 0.0:
        raise ValueError("time-domain chain engine is lossless (loss_tangent=0)")
    if chain.n_cells < 1:
        raise ValueError("chain needs at least one cell")

    caps = _chain_arrays(chain)
    ic_cells = np.full(chain.n_cells, squid.ic)
    if cfg.ic_spread > 0.0:
        rng = np.random.default_rng(cfg.seed)
        ic_cells *= 1.0 + cfg.ic_spread * rng.standard_normal(chain.n_cells)
    lps = squid.l_parasitic
    l_series = squid.lw + squid.lm * lps / (squid.lm + lps)
    tones, dt, nsamp, settle_windows = _plan(
        cfg, squid, drive.tones, l_series=l_series, c_min=float(np.min(caps)))

    def port_arrays(port):
        sel = [t for t in tones if t.port == port]
        return (np.array([2.0 * np.pi * t.freq for t in sel]),
                np.array([t.amp for t in sel]),
                np.array([t.phase for t in sel]))

    w1, a1_amp, p1 = port_arrays("input")
    w2, a2_amp, p2 = port_arrays("output")

    phi_dc = chain.flux.phi_dc
    n = chain.n_cells
    phi = np.full(n, phi_dc)
    nu = np.zeros(n)
    ijj = np.full(n, squid.ic * np.sin(phi_dc))
    ib = np.zeros(n)
    v = np.zeros(n)

    gj = 0.0 if squid.rshunt is None else 1.0 / squid.rshunt
    settle = max(settle_windows, 1) * cfg.record_time
    ramp = 0.6 * settle
    z0 = chain.z_term

    dummy = np.empty(0)
    t_now = 0.0
    for _ in range(max(settle_windows, 1)):
        t_now = _kernels.integrate_chain(
            phi, nu, ijj, ib, v, t_now, dt, nsamp, caps,
            ic_cells, squid.cj, squid.lm, lps, squid.lw, gj, z0, cfg.cap_esr,
            PHI0_BAR, w1, a1_amp, p1, w2, a2_amp, p2, ramp,
            dummy, dummy, dummy, False)
        _check_finite(phi, nu, v)

    rec_v0 = np.empty(nsamp)
    rec_ib1 = np.empty(nsamp)
    rec_vn = np.empty(nsamp)
    f_base = 1.0 / cfg.record_time
    # steady-state is certified on the caller's measurement bins; probe
    # tones that land in stopbands leave only a tiny output residue whose
    # relative wobble would otherwise stall convergence
    if watch_freqs:
        watch = sorted({round(f / f_base) for f in watch_freqs})
    else:
        watch = sorted({round(t.freq / f_base) for t in tones})

    prev = None
    for window in range(cfg.max_windows):
        t_start = t_now
        t_now = _kernels.integrate_chain(
            phi, nu, ijj, ib, v, t_now, dt, nsamp, caps,
            ic_cells, squid.cj, squid.lm, lps, squid.lw, gj, z0, cfg.cap_esr,
            PHI0_BAR, w1, a1_amp, p1, w2, a2_amp, p2, ramp,
            rec_v0, rec_ib1, rec_vn, True)
        _check_finite(phi, nu, v)
        spec_v0 = np.fft.rfft(rec_v0) / nsamp * 2.0
        spec_ib1 = np.fft.rfft(rec_ib1) / nsamp * 2.0
        spec_vn = np.fft.rfft(rec_vn) / nsamp * 2.0
        # converge on the output-node spectrum: the input node carries the
        # incident drive plus backscatter of decaying transients, which
        # wobbles long after the transmitted quantities are steady
        ok, rel = _converged(prev, spec_vn[watch], cfg.ss_rel_tol)
        prev = spec_vn[watch]
        if ok:
            break
    else:
        raise SteadyStateError(
            f"chain not steady after {cfg.max_windows} windows "
            f"(last relative change {rel:.3g}, tol {cfg.ss_rel_tol:.3g})")

    # wave decomposition against the resistive terminations
    i2_spec = np.zeros(spec_v0.size, dtype=complex)
    for tone in tones:
        if tone.port == "output":
            i2_spec[round(tone.freq / f_base)] += tone.amp * np.exp(1j * tone.phase)
    root_z = np.sqrt(z0)
    a1 = (spec_v0 + z0 * spec_ib1) / (2.0 * root_z)
    b1 = (spec_v0 - z0 * spec_ib1) / (2.0 * root_z)
    a2 = i2_spec * root_z / 2.0
    b2 = (2.0 * spec_vn - z0 * i2_spec) / (2.0 * root_z)
    freq = np.arange(spec_v0.size) * f_base

    node_t = node_v = None
    if record_nodes:
        node_t, node_v = _record_nodes(
            phi, nu, ijj, ib, v, t_now, dt, nsamp, caps, ic_cells, squid,
            gj, z0, cfg.cap_esr, w1, a1_amp, p1, w2, a2_amp, p2, ramp)

    return ChainRun(chain=chain, tones=tones, dt=dt,
                    window_time=cfg.record_time, t_start=t_start, freq=freq,
                    a1=a1, b1=b1, a2=a2, b2=b2,
                    v0=rec_v0.copy(), ib1=rec_ib1.copy(), vn=rec_vn.copy(),
                    windows_used=window + 1, rel_change=rel,
                    node_t=node_t, node_v=node_v)


def _check_finite(phi, nu, v):
    for name, arr in (("phi", phi), ("nu", nu), ("v", v)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise InstabilityError(
                f"state '{name}' diverged first at cell {int(bad[0])}")


def _record_nodes(phi, nu, ijj, ib, v, t_now, dt, nsamp, caps, ic_cells, squid,
                  gj, z0, r_esr, w1, a1_amp, p1, w2, a2_amp, p2, ramp,
                  stride: int = 32):
    """One extra window integrated in chunks, snapshotting node voltages."""
    dummy = np.empty(0)
    snaps = []
    times = []
    steps_left = nsamp
    while steps_left > 0:
        chunk = min(stride, steps_left)
        times.append(t_now)
        snaps.append(v.copy())
        t_now = _kernels.integrate_chain(
            phi, nu, ijj, ib, v, t_now, dt, chunk, caps,
            ic_cells, squid.cj, squid.lm, squid.l_parasitic, squid.lw, gj,
            z0, r_esr, PHI0_BAR, w1, a1_amp, p1, w2, a2_amp, p2, ramp,
            dummy, dummy, dummy, False)
        steps_left -= chunk
    return np.asarray(times), np.asarray(snaps)


# ---------------------------------------------------------------------------
# Conversion gains and sideband noise


def sideband_labels(orders: int):
    """Probe labels {s, i, p+s, p+i, 2p+s, ...} up to the given pump order."""
    labels = ["s", "i", "p+s"]
    for n in range(2, orders + 1):
        labels.append(f"{n - 1}p+i" if n > 2 else "p+i")
        labels.append(f"{n}p+s")
    return labels[:1 + 2 * orders]


def sideband_frequency(label: str, f_p: float, f_s: float) -> float:
    """Frequency of a sideband label: n*f_p - f_s for the idler family
    (i, p+i, 2p+i, ...) and n*f_p + f_s for the up-converted family."""
    if label == "s":
        return f_s
    if label.endswith("+i"):
        head = label[:-2]
        n = 1 if head in ("", "p") else int(head.rstrip("p"))
        return (n + 1) * f_p - f_s
    if label == "i":
        return f_p - f_s
    if label.endswith("+s"):
        head = label[:-2]
        n = 1 if head == "p" else int(head.rstrip("p"))
        return n * f_p + f_s
    raise ValueError(f"unknown sideband label {label!r}")


@dataclass
class ConversionGainResult:
    """Photon-normalized conversion gains G_{s,m} for one signal frequency."""

    f_p: float
    f_s: float
    labels: list
    freqs: dict
    forward: dict    # label -> power gain, input drive at f_m
    backward: dict   # label -> power gain, output drive at f_m

    @property
    def g_ss(self) -> float:
        return self.forward["s"]

    def margins_db(self) -> dict:
        """Suppression of each sideband below the signal gain [dB]."""
        out = {}
        for lab in self.labels:
            if lab in ("s", "i"):
                continue
            out[lab] = db_from_ratio(self.g_ss / self.forward[lab])
        return out


def _pump_tone(pump: PumpConfig, z0: float, phase: float = 0.0) -> Tone:
    return tone_from_power(pump.f_p, pump.p_p, z0, phase=phase, port="input")


def conversion_gains(chain: ChainSpec, pump: PumpConfig, f_s: float,
                     orders: int = 3, cfg: SimConfig | None = None,
                     probe_amp: float | None = None, threads: int = 1,
                     linearity_check: bool = True) -> ConversionGainResult:
    """Forward and backward photon-conversion gains around the pump.

    Each probed sideband m needs its own run: the respective port is driven
    at f_m (on top of the input pump) and the outgoing signal wave at f_s
    is read out, G = |b2_s|^2 / |a_m|^2 * f_m / f_s. The probe stays in the
    linear-response regime; this is verified by halving the signal-probe
    amplitude and requiring the gain to move by less than 0.1 dB.
    """
    if orders < 1:
        raise ValueError("orders must be >= 1")
    if cfg is None:
        cfg = sim_config_for_pump(pump.f_p, f_max_factor=float(orders) + 1.2)
    f_base = 1.0 / cfg.record_time
    f_p = round(pump.f_p / f_base) * f_base
    f_s = round(f_s / f_base) * f_base
    if f_s <= 0 or f_s >= f_p:
        raise ValueError("need 0 < f_s < f_p on the simulation grid")
    if abs(2.0 * f_s - f_p) < 0.5 * f_base:
        raise ValueError("f_s = f_p/2 is degenerate; use phase_sensitive_gain")

    pump_tone = _pump_tone(replace(pump, f_p=f_p), chain.z_term)
    if probe_amp is None:
        probe_amp = 1e-3 * pump_tone.amp

    labels = sideband_labels(orders)
    freqs = {lab: sideband_frequency(lab, f_p, f_s) for lab in labels}

    jobs = []
    for lab in labels:
        jobs.append((lab, "input", probe_amp))
        jobs.append((lab, "output", probe_amp))
    if linearity_check:
        jobs.append(("s", "input", 0.5 * probe_amp))

    def run(job):
        lab, port, amp = job
        f_m = freqs[lab]
        probe = Tone(freq=f_m, amp=amp, port=port)
        result = simulate_chain(chain, DriveSpec(tones=(pump_tone, probe)),
                                cfg, watch_freqs=(f_s, f_p))
        a = result.wave(1 if port == "input" else 2, f_m, "a")
        b_s = result.wave(2, f_s, "b")
        return abs(b_s) ** 2 / abs(a) ** 2 * (f_m / f_s)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            gains = list(pool.map(run, jobs))
    else:
        gains = [run(job) for job in jobs]

    forward = {}
    backward = {}
    for job, g in zip(jobs[:2 * len(labels)], gains[:2 * len(labels)]):
        lab, port, _ = job
        (forward if port == "input" else backward)[lab] = float(g)

    if linearity_check:
        g_half = gains[-1]
        drift = abs(db_from_ratio(g_half / forward["s"]))
        if drift > 0.1:
            raise ProbeNonlinearityError(
                f"signal gain moved {drift:.3f} dB when halving the probe; "
                "lower probe_amp")

    return ConversionGainResult(f_p=f_p, f_s=f_s, labels=labels, freqs=freqs,
                                forward=forward, backward=backward)


def sideband_excess_noise(gains: ConversionGainResult) -> float:
    """Excess photons referred to the input from sideband conversion.

    Half a photon of vacuum noise enters at every sideband on both ports;
    forward terms count all m above the idler, backward terms count every
    m including signal and idler, all normalized to the signal gain.
    """
    g_ss = gains.forward.get("s")
    if not g_ss or g_ss <= 0.0:
        raise ValueError("gain map must contain a positive forward signal gain")
    missing = [lab for lab in gains.labels
               if lab not in gains.forward or lab not in gains.backward]
    if missing:
        raise ValueError(f"gain map is missing entries for {missing}")
    fwd = sum(gains.forward[lab] for lab in gains.labels if lab not in ("s", "i"))
    bwd = sum(gains.backward[lab] for lab in gains.labels)
    return float(0.5 * (fwd + bwd) / g_ss)


# ---------------------------------------------------------------------------
# Phase-sensitive gain


@dataclass
class PhaseSensitiveScan:
    """Degenerate gain vs signal phase plus the phase-preserving reference."""

    f_s: float
    f_detuned: float
    phases: np.ndarray
    gain_db: np.ndarray
    preserving_gain_db: float
    preserving_gain_vs_phase_db: np.ndarray

    @property
    def max_gain_db(self) -> float:
        return float(np.max(self.gain_db))

    @property
    def min_gain_db(self) -> float:
        return float(np.min(self.gain_db))

    @property
    def extinction_db(self) -> float:
        return self.max_gain_db - self.min_gain_db


def phase_sensitive_gain(chain: ChainSpec, pump: PumpConfig, phase_grid,
                         cfg: SimConfig | None = None,
                         probe_amp: float | None = None,
                         f_s: float | None = None,
                         threads: int = 1) -> PhaseSensitiveScan:
    """Signal gain at the degenerate point f_p/2 versus signal phase.

    The pump is snapped to an even FFT bin so the signal sits exactly at
    f_p/2; a probe one bin away provides the phase-preserving reference in
    the same runs. Gains are on/off transmission ratios.
    """
    if cfg is None:
        cfg = sim_config_for_pump(pump.f_p, f_max_factor=3.2)
    f_base = 1.0 / cfg.record_time
    f_p = 2.0 * round(pump.f_p / f_base / 2.0) * f_base
    f_half = 0.5 * f_p
    if f_s is not None and abs(f_s - f_half) > 1e-6 * f_half:
        raise ValueError(f"phase-sensitive gain requires f_s = f_p/2 = {f_half:.6g} Hz")
    f_det = f_half + f_base

    pump_tone = _pump_tone(replace(pump, f_p=f_p), chain.z_term)
    if probe_amp is None:
        probe_amp = 1e-3 * pump_tone.amp
    watch = (f_half, f_det)

    def probes(theta):
        return (Tone(freq=f_half, amp=probe_amp, phase=theta),
                Tone(freq=f_det, amp=probe_amp, phase=theta))

    off = simulate_chain(chain, DriveSpec(tones=probes(0.0)), cfg,
                         watch_freqs=watch)
    b_off_s = abs(off.wave(2, f_half, "b"))
    b_off_det = abs(off.wave(2, f_det, "b"))

    phases = np.asarray(phase_grid, dtype=float)

    def run(theta):
        on = simulate_chain(chain,
                            DriveSpec(tones=(pump_tone,) + probes(theta)),
                            cfg, watch_freqs=watch)
        g_s = (abs(on.wave(2, f_half, "b")) / b_off_s) ** 2
        g_det = (abs(on.wave(2, f_det, "b")) / b_off_det) ** 2
        return g_s, g_det

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(run, phases))
    else:
        pairs = [run(theta) for theta in phases]

    gain = np.array([p[0] for p in pairs])
    preserving = np.array([p[1] for p in pairs])
    return PhaseSensitiveScan(
        f_s=f_half, f_detuned=f_det, phases=phases,
        gain_db=10.0 * np.log10(gain),
        preserving_gain_db=float(10.0 * np.log10(np.mean(preserving))),
        preserving_gain_vs_phase_db=10.0 * np.log10(preserving))
