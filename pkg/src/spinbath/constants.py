"""Physical constants and unit helpers.

Internal convention: frequencies are angular (rad/s), lengths in metres,
densities in m^-3. Interfaces that talk to people use MHz, gauss and ppm.
"""
import numpy as np
from scipy import constants as _sc

HBAR = _sc.hbar
MU0 = _sc.mu_0
MU_B = _sc.physical_constants["Bohr magneton"][0]
G_FREE = -_sc.physical_constants["electron g factor"][0]

#: free-electron gyromagnetic ratio, rad s^-1 T^-1
GAMMA_E = G_FREE * MU_B / HBAR

#: diamond carbon site density used as the ppm reference, m^-3
CARBON_DENSITY = 1.76e29

#: nuclear gyromagnetic ratios, rad s^-1 T^-1
NUCLEAR_GAMMA = {
    "1H": 2 * np.pi * 42.577478e6,
    "2H": 2 * np.pi * 6.5359e6,
    "13C": 2 * np.pi * 10.7084e6,
    "14N": 2 * np.pi * 3.077e6,
    "15N": 2 * np.pi * -4.316e6,
}

NUCLEAR_SPIN = {"1H": 0.5, "2H": 1.0, "13C": 0.5, "14N": 1.0, "15N": 0.5}

TWO_PI = 2 * np.pi


def mhz_to_angular(f_mhz):
    return TWO_PI * 1e6 * np.asarray(f_mhz, dtype=float)


def angular_to_mhz(omega):
    return np.asarray(omega, dtype=float) / (TWO_PI * 1e6)


def gauss_to_tesla(b_gauss):
    return 1e-4 * b_gauss


def ppm_to_density(ppm, lattice_density=CARBON_DENSITY):
    """Convert parts-per-million of lattice sites to a number density (m^-3)."""
    return 1e-6 * lattice_density * np.asarray(ppm, dtype=float)


def density_to_ppm(n, lattice_density=CARBON_DENSITY):
    return np.asarray(n, dtype=float) / (1e-6 * lattice_density)


def dipolar_prefactor(gyro=GAMMA_E):
    """J0 = mu0 gamma^2 hbar / (4 pi), the like-spin dipolar strength in rad s^-1 m^3."""
    return MU0 * gyro**2 * HBAR / (4 * np.pi)
