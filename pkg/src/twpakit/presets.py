"""Reference device configurations.

``paper_device`` reproduces the fabricated 2393-cell amplifier from its
design values; ``desk_chain`` is a short benchtop-scale variant for the
time-domain engine, with the super-period shortened (groups of two) so the
pump wavenumber per cell is large enough to reach useful gain with a
moderate pump phase amplitude, apodization tapers to tame band-edge
reflections, and dielectric dissipation so that energy parametrically
scattered into high-frequency trapped bands is absorbed rather than
accumulated.
"""

from __future__ import annotations

import numpy as np

from .chain_model import ChainSpec, _cells_abcd, build_pattern, uniform_pattern
from .constants import PHI0_BAR
from .squid_core import FluxPoint, SquidParams, cell_inductance

# design values of the fabricated device
PAPER_IC = 0.9e-6
PAPER_LM = 60e-12
PAPER_LW = 37e-12
PAPER_C1 = 10.5e-15
PAPER_C2 = 68.2e-15
PAPER_C3 = 50.4e-15
PAPER_N_CELLS = 2393
PAPER_GROUP_LEN = 6
PAPER_PITCH = 10e-6          # nominal cell length; only scales k per meter
PAPER_FLUX_PHI0 = 0.33
PAPER_F_PUMP = 12.08e9
PAPER_P_PUMP_DBM = -56.0

# fitted element values (non-ideal cell model)
FITTED_IC = 0.93e-6
FITTED_LM = 58.6e-12
FITTED_LW = 37.0e-12
FITTED_LPS = 8.9e-12         # lp + lj0l, consistent with phi0/(40*ic)


def paper_squid(fitted: bool = False, rshunt: float | None = None) -> SquidParams:
    """SQUID of the fabricated device (design or fitted element values)."""
    if fitted:
        return SquidParams(ic=FITTED_IC, cj=50e-15, lm=FITTED_LM, lp=0.0,
                           lj0l=FITTED_LPS, lw=FITTED_LW, rshunt=rshunt)
    return SquidParams(ic=PAPER_IC, cj=50e-15, lm=PAPER_LM, lw=PAPER_LW,
                       rshunt=rshunt)


def paper_pattern(group_len: int = PAPER_GROUP_LEN):
    return build_pattern(PAPER_C1, PAPER_C2, PAPER_C3, group_len=group_len)


def paper_device(flux_phi0: float = PAPER_FLUX_PHI0, fitted: bool = False,
                 z_term: float = 50.0) -> ChainSpec:
    """Full 2393-cell chain at the standard operating flux."""
    squid = paper_squid(fitted=fitted)
    flux = FluxPoint.from_phi0_units(flux_phi0, squid.beta_l)
    return ChainSpec(n_cells=PAPER_N_CELLS, pitch=PAPER_PITCH, squid=squid,
                     flux=flux, pattern=paper_pattern(), z_term=z_term)


# ---------------------------------------------------------------------------
# Desk-scale time-domain chain

DESK_BETA_L = 0.8
DESK_LM = 60e-12
DESK_LW = 35.6e-12
DESK_CJ = 5e-15
DESK_RSHUNT = 1e4
DESK_PHI_DC = 1.45           # positive-Kerr side of the inductance minimum
DESK_GROUP_LEN = 2           # 8-cell super-period
DESK_N_CELLS = 720
DESK_TAPER_FRACTION = 1 / 15
DESK_CAP_ESR = 0.8           # ohms in series with every ground capacitor
# Slightly below the small-signal matching point: the pump's rectified
# inductance shift drags the mismatch positive with amplitude, so a small
# negative offset keeps the sweep matched on average.
DESK_F_PUMP = 37.45e9
DESK_PUMP_AMP_15DB = 5.8e-6  # source current giving ~15.5 dB at N=720


def desk_squid() -> SquidParams:
    ic = DESK_BETA_L * PHI0_BAR / DESK_LM
    return SquidParams(ic=ic, cj=DESK_CJ, lm=DESK_LM, lw=DESK_LW,
                       rshunt=DESK_RSHUNT)


def desk_flux(squid: SquidParams | None = None) -> FluxPoint:
    squid = squid or desk_squid()
    phi_ext = DESK_PHI_DC + squid.beta_l * np.sin(DESK_PHI_DC)
    return FluxPoint.from_phi_ext(phi_ext, squid.beta_l)


def _forward_bloch_impedance(l_cell, pattern, f):
    # in a passband both eigenvalues are unimodular; the forward branch is
    # the one with positive-real wave impedance
    m = _cells_abcd(np.array([f], dtype=float), l_cell, pattern.cell_values(), 0.0)
    a, b, d = m[0, 0, 0], m[0, 0, 1], m[0, 1, 1]
    tr = 0.5 * (a + d)
    disc = np.sqrt(complex(tr * tr - 1.0))
    z1 = b / (tr + disc - a)
    z2 = b / (tr - disc - a)
    return z1 if z1.real > 0 else z2


def desk_chain(n_cells: int = DESK_N_CELLS, uniform: bool = False) -> ChainSpec:
    """Benchtop chain for time-domain runs.

    The terminations match the real part of the signal-band Bloch impedance;
    the modulation is apodized at both ends. ``uniform=True`` swaps in the
    dispersion-free control line with the same mean capacitance.
    """
    squid = desk_squid()
    flux = desk_flux(squid)
    pattern = paper_pattern(group_len=DESK_GROUP_LEN)
    l_cell = cell_inductance(squid, flux.phi_dc)
    f_edge = desk_stopband_edge()
    z_term = float(_forward_bloch_impedance(l_cell, pattern, 0.48 * f_edge).real)
    taper = int(round(n_cells * DESK_TAPER_FRACTION / 8)) * 8
    if uniform:
        return ChainSpec(n_cells=n_cells, pitch=PAPER_PITCH, squid=squid,
                         flux=flux, pattern=uniform_pattern(pattern.mean),
                         z_term=z_term)
    return ChainSpec(n_cells=n_cells, pitch=PAPER_PITCH, squid=squid,
                     flux=flux, pattern=pattern, z_term=z_term,
                     taper_cells=taper)


def desk_stopband_edge() -> float:
    """Upper edge of the first stopband of the desk pattern [Hz]."""
    from .chain_model import bloch_dispersion_lc

    squid = desk_squid()
    flux = desk_flux(squid)
    pattern = paper_pattern(group_len=DESK_GROUP_LEN)
    l_cell = cell_inductance(squid, flux.phi_dc)
    freq = np.linspace(2e9, 60e9, 4000)
    disp = bloch_dispersion_lc(l_cell, pattern, freq)
    return disp.stopbands[0][1]


def desk_sim_config(ss_rel_tol: float = 1e-3, settle_windows: int = 5,
                    max_windows: int = 8, f_max_factor: float = 3.4,
                    bins_per_pump: int = 48):
    """Coherent-window plan matched to the desk pump."""
    from .timedomain_sim import sim_config_for_pump

    return sim_config_for_pump(
        DESK_F_PUMP, bins_per_pump=bins_per_pump,
        settle_windows=settle_windows, f_max_factor=f_max_factor,
        ss_rel_tol=ss_rel_tol, max_windows=max_windows,
        cap_esr=DESK_CAP_ESR)
