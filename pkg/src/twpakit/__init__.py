"""twpakit: rf-SQUID traveling-wave parametric amplifier toolkit.

Design (dispersion and stopbands), analytic 3WM gain and saturation,
nonlinear time-domain chain simulation, and quantum-noise calibration
fits for measured or synthetic data.
"""

from .squid_core import (
    FluxPoint,
    LineParams,
    NonlinearCoeffs,
    SquidParams,
    cell_inductance,
    line_parameters,
    nonlinear_coeffs,
    solve_phi_dc,
    squid_inductance,
)
from .chain_model import (
    CapacitancePattern,
    ChainSpec,
    DispersionResult,
    S21Spectrum,
    bloch_dispersion,
    build_pattern,
    ctm_s21,
    fit_cell_inductance,
    fit_flux_model,
    phase_mismatch,
    s21_spectrum,
    uniform_pattern,
)
from .gain_analytics import (
    PumpConfig,
    SaturationResult,
    compression_point,
    depleted_gain,
    jacobi_dn,
    pump_phase_amplitude,
    small_signal_gain,
)
from .timedomain_sim import (
    ChainRun,
    DriveSpec,
    SimConfig,
    Tone,
    conversion_gains,
    extract_impedance,
    phase_sensitive_gain,
    sideband_excess_noise,
    sim_config_for_pump,
    simulate_chain,
    simulate_unit_cell,
)
from .noise_calibration import (
    NoiseBreakdown,
    NoiseSweep,
    delta_snr,
    fit_single_mode,
    fit_two_mode,
    insertion_loss_calibration,
    photons_from_power,
    planck_noise,
    system_noise_breakdown,
)

__version__ = "0.1.0"
