"""Flux- and parameter-dependent physics of a single rf-SQUID unit cell.

The rf-SQUID is a meander inductor ``lm`` shunted by a Josephson junction
(critical current ``ic``, capacitance ``cj``). The practical cell adds a
parasitic series inductance ``lp`` in the junction branch, a large via
junction modeled as the fixed linear inductance ``lj0l``, and a wire
inductance ``lw`` connecting neighboring cells.

All quantities are SI. Phases are in radians; external flux is expressed
as ``phi_ext = Phi_ext / phi0`` with ``phi0`` the reduced flux quantum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import PHI0_BAR

# Screening parameters at or above 1 put the SQUID on the hysteretic branch.
BETA_L_MAX = 1.0 - 1e-9

_MODELS = ("ideal", "non_ideal")


class HystereticRegimeError(ValueError):
    """Screening parameter >= 1: multivalued flux response, out of scope."""


class SingularOperatingPointError(ValueError):
    """1 + beta_L*cos(phi_dc) <= 0: inductance diverges at this bias."""


@dataclass(frozen=True)
class SquidParams:
    """Element values of one rf-SQUID unit cell.

    Parameters
    ----------
    ic : float
        Critical current of the small junction [A].
    cj : float
        Junction capacitance [F]. Only the time-domain engine is sensitive
        to it; 50 fF is a typical value for a 1x1 um^2 Nb trilayer junction.
    lm : float
        Meander shunt inductance [H].
    lp : float
        Parasitic series inductance in the junction branch [H].
    lj0l : float
        Quasi-linear inductance of the large via junction [H].
    lw : float
        Wire inductance between neighboring cells [H].
    rshunt : float or None
        Junction subgap/shunt resistance [Ohm]; None means lossless.
        Used only as damping by the time-domain engine.
    """

    ic: float
    cj: float = 50e-15
    lm: float = 60e-12
    lp: float = 0.0
    lj0l: float = 0.0
    lw: float = 0.0
    rshunt: float | None = None

    def __post_init__(self):
        if not self.ic > 0.0:
            raise ValueError(f"ic must be > 0, got {self.ic}")
        for name in ("cj", "lm", "lp", "lj0l", "lw"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.rshunt is not None and not self.rshunt > 0.0:
            raise ValueError(f"rshunt must be > 0 or None, got {self.rshunt}")
        if not np.isfinite(self.beta_l):
            raise ValueError("screening parameter is not finite")

    @property
    def l_parasitic(self) -> float:
        """Total quasi-linear inductance in the junction branch, lp + lj0l [H]."""
        return self.lp + self.lj0l

    @property
    def l_loop(self) -> float:
        """Total loop inductance lm + lp + lj0l [H]."""
        return self.lm + self.lp + self.lj0l

    @property
    def beta_l(self) -> float:
        """Screening parameter ic * l_loop / phi0."""
        return self.ic * self.l_loop / PHI0_BAR

    @property
    def alpha_p(self) -> float:
        """Ratio of parasitic inductance to total loop inductance."""
        return self.l_parasitic / self.l_loop


@dataclass(frozen=True)
class FluxPoint:
    """External flux bias and the corresponding dc phase solution.

    ``phi_dc`` satisfies phi_dc + beta_L*sin(phi_dc) = phi_ext.
    Both angles are in radians (phi_ext = Phi_ext/phi0).
    """

    phi_ext: float
    phi_dc: float

    @classmethod
    def from_phi_ext(cls, phi_ext: float, beta_l: float) -> "FluxPoint":
        return cls(phi_ext=phi_ext, phi_dc=float(solve_phi_dc(phi_ext, beta_l)))

    @classmethod
    def from_phi0_units(cls, phi_ext_phi0: float, beta_l: float) -> "FluxPoint":
        """Construct from external flux given in units of the flux quantum."""
        return cls.from_phi_ext(2.0 * np.pi * phi_ext_phi0, beta_l)


@dataclass(frozen=True)
class NonlinearCoeffs:
    """Dimensionless nonlinearity coefficients at a given operating point."""

    beta_l: float
    alpha_p: float
    beta: float   # second-order coefficient
    gamma: float  # third-order (Kerr) coefficient


@dataclass(frozen=True)
class LineParams:
    """Low-frequency transmission-line parameters of the loaded cell."""

    l_cell: float          # total cell inductance [H]
    z: float               # characteristic impedance [Ohm]
    k_lin_per_cell: float  # linear wavenumber times cell pitch [rad/cell]
    pitch: float           # cell length a [m]
    l_sq: float | None = None  # rf-SQUID inductance if known [H]


def _check_beta_l(beta_l: float) -> float:
    beta_l = float(beta_l)
    if beta_l < 0.0:
        raise ValueError(f"beta_l must be >= 0, got {beta_l}")
    if beta_l >= BETA_L_MAX:
        raise HystereticRegimeError(
            f"beta_l = {beta_l:.6g} >= 1: hysteretic rf-SQUID out of scope"
        )
    return beta_l


def solve_phi_dc(phi_ext, beta_l: float):
    """Solve the flux transcendental equation for the dc junction phase.

    Finds phi_dc with phi_dc + beta_l*sin(phi_dc) = phi_ext. For
    beta_l < 1 the left side is strictly increasing, so the solution is
    unique; it is bracketed by phi_ext +- beta_l. Bisection narrows the
    bracket and a few Newton steps polish the root to < 1e-12 residual.

    Accepts scalar or array ``phi_ext`` and returns the matching shape.
    """
    beta_l = _check_beta_l(beta_l)
    phi_ext_arr = np.asarray(phi_ext, dtype=float)
    scalar = phi_ext_arr.ndim == 0
    x = np.atleast_1d(phi_ext_arr).astype(float)

    lo = x - beta_l
    hi = x + beta_l
    for _ in range(52):
        mid = 0.5 * (lo + hi)
        too_low = mid + beta_l * np.sin(mid) < x
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    phi = 0.5 * (lo + hi)
    for _ in range(3):
        resid = phi + beta_l * np.sin(phi) - x
        slope = 1.0 + beta_l * np.cos(phi)
        phi = phi - resid / slope

    return float(phi[0]) if scalar else phi.reshape(phi_ext_arr.shape)


def nonlinear_coeffs(params: SquidParams, phi_dc: float) -> NonlinearCoeffs:
    """Second- and third-order nonlinearity coefficients at ``phi_dc``.

    beta  = (beta_L/2) sin(phi_dc) / (1 + beta_L cos(phi_dc))
    gamma = (beta_L/6) cos(phi_dc) / (1 + beta_L cos(phi_dc))

    with the screening parameter formed from the full loop inductance
    lm + lp + lj0l.
    """
    beta_l = _check_beta_l(params.beta_l)
    den = 1.0 + beta_l * np.cos(phi_dc)
    if den <= 0.0:
        raise SingularOperatingPointError(
            f"1 + beta_l*cos(phi_dc) = {den:.3g} <= 0 at phi_dc = {phi_dc:.6g}"
        )
    beta = 0.5 * beta_l * np.sin(phi_dc) / den
    gamma = beta_l * np.cos(phi_dc) / (6.0 * den)
    return NonlinearCoeffs(
        beta_l=beta_l, alpha_p=params.alpha_p, beta=float(beta), gamma=float(gamma)
    )


def squid_inductance(params: SquidParams, phi_dc: float, model: str = "non_ideal") -> float:
    """Flux-dependent rf-SQUID inductance [H].

    ``model='ideal'`` ignores the parasitic branch inductance:
    L_SQ = lm / (1 + beta_L cos phi_dc). ``model='non_ideal'`` includes it:
    L_SQ = lm (1 + alpha_p beta_L cos phi_dc) / (1 + beta_L cos phi_dc),
    which is the parallel combination of lm with (lp + lj0l + phi0/(ic cos phi_dc)).
    Both coincide when lp + lj0l = 0.
    """
    if model not in _MODELS:
        raise ValueError(f"model must be one of {_MODELS}, got {model!r}")
    beta_l = _check_beta_l(params.beta_l)
    cos_phi = np.cos(phi_dc)
    den = 1.0 + beta_l * cos_phi
    if den <= 0.0:
        raise SingularOperatingPointError(
            f"1 + beta_l*cos(phi_dc) = {den:.3g} <= 0 at phi_dc = {phi_dc:.6g}"
        )
    if model == "ideal":
        return params.lm / den
    return params.lm * (1.0 + params.alpha_p * beta_l * cos_phi) / den


def cell_inductance(params: SquidParams, phi_dc: float, model: str = "non_ideal") -> float:
    """Total unit-cell inductance lw + L_SQ(phi_dc) [H]."""
    return params.lw + squid_inductance(params, phi_dc, model=model)


def line_parameters(l_cell: float, cg: float, a: float, f, l_sq: float | None = None) -> LineParams:
    """Characteristic impedance and linear wavenumber of the loaded line.

    Valid for frequencies well below the cell cutoff: Z = sqrt(L/C) and
    k_lin * a = omega * sqrt(L*C). ``f`` may be a scalar or an array.
    """
    if not l_cell > 0.0:
        raise ValueError(f"l_cell must be > 0, got {l_cell}")
    if not cg > 0.0:
        raise ValueError(f"cg must be > 0, got {cg}")
    if not a > 0.0:
        raise ValueError(f"pitch a must be > 0, got {a}")
    f_arr = np.asarray(f, dtype=float)
    if np.any(f_arr < 0.0):
        raise ValueError("frequency must be >= 0")
    k_lin = 2.0 * np.pi * f_arr * np.sqrt(l_cell * cg)
    return LineParams(
        l_cell=l_cell,
        z=float(np.sqrt(l_cell / cg)),
        k_lin_per_cell=float(k_lin) if f_arr.ndim == 0 else k_lin,
        pitch=a,
        l_sq=l_sq,
    )
