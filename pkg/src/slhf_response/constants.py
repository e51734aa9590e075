"""Unit conversions and physical constants (atomic units internally)."""

HARTREE_EV = 27.211386          # 1 hartree in eV
BOHR2_MB = 28.00286             # 1 bohr^2 in megabarn
C_AU = 137.035999               # speed of light in atomic units


def ev_to_hartree(e):
    return e / HARTREE_EV


def hartree_to_ev(e):
    return e * HARTREE_EV
