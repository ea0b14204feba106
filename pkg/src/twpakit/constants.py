"""Physical constants, exact 2019 SI values."""

import math

H = 6.62607015e-34          # Planck constant [J s]
K_B = 1.380649e-23          # Boltzmann constant [J/K]
E_CHARGE = 1.602176634e-19  # elementary charge [C]

PHI0 = H / (2.0 * E_CHARGE)          # magnetic flux quantum [Wb]
PHI0_BAR = PHI0 / (2.0 * math.pi)    # reduced flux quantum [Wb]
