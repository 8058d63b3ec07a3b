"""Physical constants (CODATA values via scipy) and unit factors."""

import math

from scipy import constants as _c

G = _c.G
HBAR = _c.hbar
C_LIGHT = _c.c
K_B = _c.k
R_GAS = _c.R
ATOMIC_MASS_UNIT = _c.atomic_mass

TORR = 133.322  # Pa
TWO_PI = 2.0 * math.pi
DAY = 86400.0
YEAR = 365.25 * DAY

# Standard atomic weights, u
ALUMINIUM_U = 26.9815385
OSMIUM_U = 190.23
