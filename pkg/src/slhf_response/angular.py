"""Angular-momentum coefficients for the radial reduction of two-electron integrals.

Everything here is exact rational arithmetic converted to float at the end,
so coefficients can be trusted to machine precision for any l that occurs
in practice.
"""

from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt


@lru_cache(maxsize=None)
def wigner3j(j1, j2, j3, m1, m2, m3):
    """3j symbol for integer arguments via the Racah sum."""
    if m1 + m2 + m3 != 0:
        return 0.0
    if j3 < abs(j1 - j2) or j3 > j1 + j2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = factorial
    pref = Fraction(f(j1 + j2 - j3) * f(j1 - j2 + j3) * f(-j1 + j2 + j3),
                    f(j1 + j2 + j3 + 1))
    pref *= f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2) * f(j3 - m3) * f(j3 + m3)
    tmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    tmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    s = Fraction(0)
    for t in range(tmin, tmax + 1):
        den = (f(t) * f(j3 - j2 + t + m1) * f(j3 - j1 + t - m2)
               * f(j1 + j2 - j3 - t) * f(j1 - m1 - t) * f(j2 + m2 - t))
        s += Fraction((-1) ** t, den)
    return (-1) ** (j1 - j2 - m3) * float(s) * sqrt(float(pref))


@lru_cache(maxsize=None)
def threej000_squared(l1, l2, l3):
    """Squared 3j symbol with all projections zero; vanishes for odd l1+l2+l3."""
    J = l1 + l2 + l3
    if J % 2 or l3 < abs(l1 - l2) or l3 > l1 + l2:
        return 0.0
    g = J // 2
    f = factorial
    w = Fraction(f(J - 2 * l1) * f(J - 2 * l2) * f(J - 2 * l3), f(J + 1))
    t = Fraction(f(g), f(g - l1) * f(g - l2) * f(g - l3))
    return float(w * t * t)


@lru_cache(maxsize=None)
def cg_squared(l, lp, L):
    """|<l0 lp0 | L0>|^2, the dipole-channel weight of Eq.-(a-2) type sums."""
    return (2 * L + 1) * threej000_squared(l, lp, L)


@lru_cache(maxsize=None)
def same_orbital_multipole_fraction(l, k):
    """Fraction of the full-shell multipole-k pair weight carried by m=m' pairs.

    sum_m 3j(l,k,l;-m,0,m)^2; equals 1 for k=0 (the monopole couples only
    identical m), and the exchange-weight split between self and cross
    pairs for k>0.
    """
    return sum(wigner3j(l, k, l, -m, 0, m) ** 2 for m in range(-l, l + 1))


def open_shell_diagonal_coeff(l, k, w):
    """Pair-statistics coefficient for a subshell interacting with itself.

    Replaces the mean-field w^2*(3j)^2 weight by the exact average over
    occupied m-subsets: self pairs carry weight w (each electron has unit
    probability of pairing with itself), distinct pairs w(w-1)/(g(g-1)).
    Reduces to w^2*(3j)^2 for a full subshell and guarantees the k=0
    self-interaction weight equals w for any occupancy, which is what keeps
    the Slater-potential tail at -1/r for open-shell HOMOs.
    """
    ck = threej000_squared(l, l, k)
    g = 2 * l + 1
    sk = same_orbital_multipole_fraction(l, k)
    cross = (w * (w - 1) / (g * (g - 1))) if g > 1 else 0.0
    return g * g * ck * ((w / g) * sk + cross * (1.0 - sk))
