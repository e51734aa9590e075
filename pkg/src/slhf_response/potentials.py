"""Spin-dependent effective potential pieces: nuclear, Hartree, SLHF exchange,
optional LYP correlation, and the linear absorbing potential.

Densities are spherically averaged number densities rho(r) (per volume);
subshell radial functions R(r) contribute w * R^2 / (4 pi r^2). All potentials
are returned as samples over the full node set of the grid.
"""

from dataclasses import dataclass, field

import numpy as np

from .angular import open_shell_diagonal_coeff, threej000_squared
from .errors import ConfigurationError, ContractError, NumericalError
from .grid import integrate, slater_screening

DENSITY_FLOOR = 1e-15           # below this the exchange is continued as -1/r
NEGATIVE_DENSITY_TOL = -1e-12


@dataclass(frozen=True)
class EffectivePotential:
    """Assembled local potential for one spin channel."""

    spin: str
    nuclear_charge: float
    v_nuclear: np.ndarray
    v_hartree: np.ndarray
    v_exchange: np.ndarray
    v_correlation: np.ndarray

    @property
    def v_total(self):
        return self.v_nuclear + self.v_hartree + self.v_exchange + self.v_correlation


@dataclass(frozen=True)
class AbsorberSpec:
    """Linear complex absorber: zero below ``start``, ramping to -strength at r_max."""

    strength: float = 0.5
    start: float | None = None           # default 0.6 * r_max, resolved at build time
    overrides: dict = field(default_factory=dict)   # subshell label -> (strength, start)

    def for_orbital(self, label):
        if label in self.overrides:
            u0, ra = self.overrides[label]
            return AbsorberSpec(strength=u0, start=ra, overrides={})
        return self

    def resolved_start(self, r_max):
        return 0.6 * r_max if self.start is None else self.start

    def key(self, label, r_max):
        sub = self.for_orbital(label)
        return (float(sub.strength), float(sub.resolved_start(r_max)))


def nuclear_potential(grid, nuclear_charge):
    r = grid.nodes
    with np.errstate(divide="ignore"):
        return np.where(r > 0, -nuclear_charge / np.where(r > 0, r, 1.0), 0.0)


def compute_hartree(grid, total_density):
    """Hartree potential of a spherically averaged density rho(r).

    v_H(r) = (1/r) int_0^r q(t) dt + int_r^inf q(t)/t dt with q = 4 pi r^2 rho.
    """
    rho = np.asarray(total_density, dtype=float)
    if rho.shape != grid.nodes.shape:
        raise ContractError("density length does not match node count")
    if rho.min() < NEGATIVE_DENSITY_TOL:
        raise ContractError(f"density is negative beyond tolerance: min {rho.min():.3e}")
    q = 4.0 * np.pi * grid.nodes ** 2 * rho
    return slater_screening(grid, q, 0)


def hartree_from_radial_charge(grid, radial_charge):
    """Hartree potential from q(r) = sum_i w_i R_i(r)^2 (charge per unit r)."""
    return slater_screening(grid, np.asarray(radial_charge, dtype=float), 0)


def build_absorber(spec, grid):
    """Imaginary-part profile U(r) <= 0 of the absorbing potential."""
    r_max = grid.r_max
    ra = spec.resolved_start(r_max)
    if spec.strength <= 0:
        raise ConfigurationError("absorber strength must be positive")
    if not (0 <= ra < r_max):
        raise ConfigurationError(f"absorber start {ra} must lie in [0, r_max)")
    r = grid.nodes
    return np.where(r < ra, 0.0, -spec.strength * (r - ra) / (r_max - ra))


def _channels(orbitals, spin):
    if hasattr(orbitals, "occupied"):
        return list(orbitals.occupied(spin))
    return list(orbitals)


def compute_slhf_exchange(grid, orbitals, spin="up"):
    """Spin-dependent localized Hartree-Fock exchange potential.

    Slater term plus the two correction terms, with the correction scalar
    equation solved exactly (the potential enters its own matrix elements
    linearly, so no fixed-point iteration is needed). The pair involving the
    highest occupied subshell twice is excluded, which pins the gauge and
    gives the -1/r Slater asymptote.

    Subshell m-averaging uses mean-field pair weights w_a w_b, except the
    self-pair of the highest occupied subshell, which uses exact occupancy
    statistics so that open-shell (l > 0, w < 2l+1) HOMOs keep the correct
    self-interaction cancellation in the tail.
    """
    chans = _channels(orbitals, spin)
    r = grid.nodes
    with np.errstate(divide="ignore"):
        minus_inv_r = np.where(r > 0, -1.0 / np.where(r > 0, r, 1.0), 0.0)
    if not chans:
        return np.zeros_like(r)
    for ch in chans:
        norm = integrate(grid, np.asarray(ch.samples) ** 2)
        if abs(norm - 1.0) > 1e-6:
            raise ContractError(
                f"orbital {getattr(ch, 'label', ch)} is not normalized: {norm:.8f}")

    R = [np.asarray(ch.samples, dtype=float) for ch in chans]
    ell = [int(ch.l) for ch in chans]
    occ = [float(ch.occupancy) for ch in chans]
    nsh = len(chans)
    homo = max(range(nsh), key=lambda i: chans[i].energy)

    D = sum(w * Ra ** 2 for w, Ra in zip(occ, R))
    rho = np.where(r > 0, D / (4 * np.pi * np.where(r > 0, r, 1.0) ** 2), 0.0)
    mask = rho > DENSITY_FLOOR
    D_safe = np.where(mask, D, 1.0)

    slater_num = np.zeros_like(r)
    for a in range(nsh):
        for b in range(nsh):
            pair = R[a] * R[b]
            for k in range(abs(ell[a] - ell[b]), ell[a] + ell[b] + 1, 2):
                ck = threej000_squared(ell[a], ell[b], k)
                if ck == 0.0:
                    continue
                if a == b == homo:
                    coef = open_shell_diagonal_coeff(ell[a], k, occ[a])
                else:
                    coef = occ[a] * occ[b] * ck
                slater_num -= coef * pair * slater_screening(grid, pair, k)
    v_slater = np.where(mask, slater_num / D_safe, minus_inv_r)

    pairs = [(a, c) for a in range(nsh) for c in range(nsh)
             if ell[a] == ell[c] and not (a == homo and c == homo)]
    if not pairs:
        return np.where(mask, v_slater, minus_inv_r)

    prefs = np.array([occ[a] * occ[c] / (2 * ell[a] + 1) for a, c in pairs])
    basis = [R[a] * R[c] for a, c in pairs]

    # exchange-operator matrix elements sum_b w_b c_k <R_a R_b | y_k[R_b R_c]>
    m3 = np.zeros(len(pairs))
    for i, (a, c) in enumerate(pairs):
        tot = 0.0
        for b in range(nsh):
            for k in range(abs(ell[a] - ell[b]), ell[a] + ell[b] + 1, 2):
                ck = threej000_squared(ell[a], ell[b], k)
                if ck == 0.0:
                    continue
                ybc = slater_screening(grid, R[b] * R[c], k)
                tot += occ[b] * ck * integrate(grid, R[a] * R[b] * ybc)
        m3[i] = tot

    # potential matrix elements M2 solve a small linear system:
    # M2 = <basis|vS> + Q diag(pref) (M2 + M3)
    npair = len(pairs)
    t = np.array([integrate(grid, basis[i] * v_slater) for i in range(npair)])
    Q = np.empty((npair, npair))
    for i in range(npair):
        for j in range(npair):
            Q[i, j] = integrate(grid, np.where(mask, basis[i] * basis[j] / D_safe, 0.0))
    A = np.eye(npair) - Q * prefs[None, :]
    try:
        m2 = np.linalg.solve(A, t + (Q * prefs[None, :]) @ m3)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SLHF correction system is singular: {exc}",
                             history=list(t)) from exc

    corr_num = np.zeros_like(r)
    for i in range(npair):
        corr_num += prefs[i] * basis[i] * (m2[i] + m3[i])
    vx = v_slater + np.where(mask, corr_num / D_safe, 0.0)
    return np.where(mask, vx, minus_inv_r)


# ---------------------------------------------------------------------------
# LYP correlation (second-order gradient form)
# ---------------------------------------------------------------------------

_LYP_FUNCS = None


def _lyp_functions():
    """Lambdified LYP energy density and its partial derivatives.

    Built once from a single symbolic definition, so the potential is the
    exact functional derivative of the implemented energy expression.
    """
    global _LYP_FUNCS
    if _LYP_FUNCS is not None:
        return _LYP_FUNCS
    import sympy as sp

    ra, rb, gaa, gab, gbb = sp.symbols("ra rb gaa gab gbb", positive=True)
    a, b, c, d = 0.04918, 0.132, 0.2533, 0.349
    rho = ra + rb
    cbrt = rho ** sp.Rational(1, 3)
    denom = 1 + d / cbrt
    omega = sp.exp(-c / cbrt) / denom * rho ** sp.Rational(-11, 3)
    delta = c / cbrt + (d / cbrt) / denom
    cf = sp.Rational(3, 10) * (3 * sp.pi ** 2) ** sp.Rational(2, 3)
    gt = gaa + 2 * gab + gbb
    bracket = (ra * rb * (2 ** sp.Rational(11, 3) * cf * (ra ** sp.Rational(8, 3)
                                                          + rb ** sp.Rational(8, 3))
                          + (sp.Rational(47, 18) - 7 * delta / 18) * gt
                          - (sp.Rational(5, 2) - delta / 18) * (gaa + gbb)
                          - (delta - 11) / 9 * (ra * gaa + rb * gbb) / rho)
               - sp.Rational(2, 3) * rho ** 2 * gt
               + (sp.Rational(2, 3) * rho ** 2 - ra ** 2) * gbb
               + (sp.Rational(2, 3) * rho ** 2 - rb ** 2) * gaa)
    F = -4 * a / denom * ra * rb / rho - a * b * omega * bracket
    args = (ra, rb, gaa, gab, gbb)
    funcs = {"F": sp.lambdify(args, F, "numpy")}
    for name, sym in zip(("dra", "drb", "dgaa", "dgab", "dgbb"), args):
        funcs[name] = sp.lambdify(args, sp.diff(F, sym), "numpy")
    _LYP_FUNCS = funcs
    return funcs


def compute_lyp_correlation(grid, density_up, density_down, floor=1e-12):
    """LYP correlation potentials (per spin) and the correlation energy.

    Gradients are taken with the grid's spectral derivative matrix; the
    functional-derivative divergence term uses (1/r^2) d/dr (r^2 G).
    Returns (v_up, v_down, e_c).
    """
    fns = _lyp_functions()
    r = grid.nodes
    ra = np.clip(np.asarray(density_up, dtype=float), 0.0, None)
    rb = np.clip(np.asarray(density_down, dtype=float), 0.0, None)
    live = (ra + rb) > floor
    ra_s = np.where(live, np.maximum(ra, 1e-30), 1.0)
    rb_s = np.where(live, np.maximum(rb, 1e-30), 1.0)
    dra = grid.d1 @ ra
    drb = grid.d1 @ rb
    gaa, gab, gbb = dra * dra, dra * drb, drb * drb

    with np.errstate(all="ignore"):
        fvals = {k: np.where(live, np.nan_to_num(f(ra_s, rb_s, gaa, gab, gbb)), 0.0)
                 for k, f in fns.items()}
    e_c = integrate(grid, 4 * np.pi * r ** 2 * fvals["F"])

    def divergence(G):
        # (1/r^2) d/dr (r^2 G) = dG/dr + 2 G / r, r=0 handled by mask
        dG = grid.d1 @ G
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = np.where(r > 0, 2.0 * G / np.where(r > 0, r, 1.0), 0.0)
        return dG + extra

    v_up = fvals["dra"] - divergence(
        np.where(live, 2.0 * fvals["dgaa"] * dra + fvals["dgab"] * drb, 0.0))
    v_dn = fvals["drb"] - divergence(
        np.where(live, 2.0 * fvals["dgbb"] * drb + fvals["dgab"] * dra, 0.0))
    return np.where(live, v_up, 0.0), np.where(live, v_dn, 0.0), e_c
