"""Radial Green functions at complex energy.

Primary backend: direct dense solve of the discretized inhomogeneous radial
equation (optionally with the absorbing potential added to v_eff). A
factorized resolvent (eigendecomposition reused across energies) serves scans;
an ODE-based Wronskian construction is kept as an independent validation
backend for absorber-free energies.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import ContractError, NumericalError
from .potentials import AbsorberSpec, build_absorber


@dataclass(frozen=True)
class RadialGreenFunction:
    """Partial-wave Green function matrix over interior nodes at one (L, E)."""

    L: int
    energy: complex
    matrix: np.ndarray
    absorber: AbsorberSpec | None = None
    source_orbital: str | None = None


def _symmetric_hamiltonian(grid, v_eff, L, absorber_values=None):
    ri = grid.interior
    wi = grid.interior_weights
    sq = np.sqrt(wi)
    H = 0.5 * grid.stiffness[1:-1, 1:-1] / sq[:, None] / sq[None, :]
    H = H + np.diag(np.asarray(v_eff)[1:-1] + 0.5 * L * (L + 1) / ri ** 2)
    H = 0.5 * (H + H.T)
    if absorber_values is not None:
        H = H.astype(complex) + 1j * np.diag(np.asarray(absorber_values)[1:-1])
    scale = 1.0 / (ri * sq)
    return H, scale


def build_green(grid, v_eff, absorber_values, L, E,
                absorber_spec=None, source_orbital=None):
    """Direct solve of the discretized partial-wave resolvent at energy E.

    ``absorber_values`` are the (negative) imaginary-potential samples over all
    nodes, or None. E may be complex; with no absorber and real E exactly at a
    discrete eigenvalue the system is singular and a NumericalError suggests
    adding a small imaginary part or an absorber.
    """
    if np.imag(E) < 0:
        raise ContractError("E must have a nonnegative imaginary part")
    H, scale = _symmetric_hamiltonian(grid, v_eff, L, absorber_values)
    n = H.shape[0]
    A = np.eye(n) * complex(E) - H
    try:
        X = np.linalg.solve(A, np.eye(n, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "singular resolvent system; add a small imaginary part to E or "
            f"an absorber ({exc})") from exc
    resid = np.abs(A @ X - np.eye(n)).max()
    if not np.isfinite(resid) or resid > 1e-6:
        raise NumericalError(
            f"resolvent solve ill-conditioned at E={E}: residual {resid:.2e}; "
            "add a small imaginary part to E or an absorber")
    X = 0.5 * (X + X.T)
    G = scale[:, None] * X * scale[None, :]
    return RadialGreenFunction(L=int(L), energy=complex(E), matrix=G,
                               absorber=absorber_spec, source_orbital=source_orbital)


def operator_residual(grid, v_eff, absorber_values, gf):
    """Max deviation of the discretized operator applied to G from the discrete delta."""
    H, scale = _symmetric_hamiltonian(grid, v_eff, gf.L, absorber_values)
    n = H.shape[0]
    X = gf.matrix / scale[:, None] / scale[None, :]
    resid = (np.eye(n) * gf.energy - H) @ X - np.eye(n)
    return float(np.abs(resid).max())


class ResolventFactorization:
    """Eigendecomposition of one (L, spin, absorber) radial Hamiltonian.

    Factor once, then G(E) = S V diag(1/(E - lam)) V^{-1} S for any number of
    energies; used by the response scans where each frequency needs the same
    few operators at shifted energies. Falls back to per-energy direct solves
    if the eigenbasis is too ill-conditioned to reproduce the operator.
    """

    def __init__(self, grid, v_eff, L, absorber_values=None):
        H, scale = _symmetric_hamiltonian(grid, v_eff, L, absorber_values)
        self.L = int(L)
        self.scale = scale
        self._H = H
        self.direct = False
        if absorber_values is None:
            lam, V = np.linalg.eigh(H)
            Vinv = V.T
        else:
            lam, V = np.linalg.eig(H)
            try:
                Vinv = np.linalg.inv(V)
            except np.linalg.LinAlgError:
                self.direct = True
                Vinv = None
        if not self.direct:
            probe = np.linalg.norm(V @ (lam[:, None] * Vinv) - H) / max(np.linalg.norm(H), 1.0)
            if probe > 1e-9:
                self.direct = True
        self.eigenvalues = lam
        self._V = V
        self._Vinv = Vinv

    def green(self, E):
        """Interior-node Green matrix at (possibly complex) energy E."""
        if self.direct:
            n = self._H.shape[0]
            A = np.eye(n) * complex(E) - self._H
            X = np.linalg.solve(A, np.eye(n, dtype=complex))
        else:
            d = 1.0 / (complex(E) - self.eigenvalues)
            X = (self._V * d[None, :]) @ self._Vinv
        X = 0.5 * (X + X.T)
        return self.scale[:, None] * X * self.scale[None, :]


class GreenProvider:
    """Per-orbital Green-function source used by the susceptibility builder.

    Handles the absorber (with per-orbital overrides), caches one
    factorization per (spin, L, absorber variant), and applies the +i*eps
    prescription only when explicitly requested (``eps``).
    """

    def __init__(self, grid, potentials, absorber=None, eps=0.0):
        self.grid = grid
        self.potentials = potentials      # spin -> EffectivePotential
        self.absorber = absorber
        self.eps = float(eps)
        self._cache = {}

    def factorization(self, L, spin, source_label=None):
        if self.absorber is None:
            abs_key = None
            values = None
        else:
            abs_key = self.absorber.key(source_label, self.grid.r_max)
            values = build_absorber(self.absorber.for_orbital(source_label), self.grid)
        key = (spin, int(L), abs_key)
        if key not in self._cache:
            pot = self.potentials.get(spin)
            if pot is None:
                raise ContractError(f"no potential available for spin {spin!r}")
            self._cache[key] = ResolventFactorization(
                self.grid, pot.v_total, L, absorber_values=values)
        return self._cache[key]

    def matrix(self, L, E, spin, source_label=None):
        E = complex(E)
        if self.absorber is None and self.eps:
            E = E + 1j * self.eps
        return self.factorization(L, spin, source_label).green(E)


# ---------------------------------------------------------------------------
# Wronskian construction (validation backend)
# ---------------------------------------------------------------------------

def _spherical_h1(L, z):
    """Outgoing spherical Hankel function h_L^(1), complex-argument capable."""
    h0 = -1j * np.exp(1j * z) / z
    if L == 0:
        return h0
    h1 = -np.exp(1j * z) * (1.0 / z + 1j / z ** 2)
    if L == 1:
        return h1
    hm, h = h0, h1
    for ell in range(1, L):
        hm, h = h, (2 * ell + 1) / z * h - hm
    return h


def _spherical_h1_deriv(L, z):
    if L == 0:
        return -_spherical_h1(1, z)
    return _spherical_h1(L - 1, z) - (L + 1) / z * _spherical_h1(L, z)


def build_green_wronskian(grid, v_eff, L, E, r_start=None):
    """Green function from regular and outgoing homogeneous solutions.

    G(r, r') = (2 / W) phi(r_<) psi(r_>) / (r r') with phi ~ r^{L+1} at the
    origin, psi matching r * h_L^(1)(k r) at r_max, and W their Wronskian.
    ``v_eff`` may be a callable v(r) (preferred for oracle accuracy) or node
    samples, which are spline-interpolated via r * v(r).
    """
    if callable(v_eff):
        vfun = v_eff
    else:
        rv = np.asarray(v_eff) * grid.nodes
        spline = CubicSpline(grid.nodes, rv)
        vfun = lambda r: spline(r) / r      # noqa: E731

    k = np.sqrt(2.0 * complex(E))
    if k.imag < 0:
        k = -k

    def rhs(r, y):
        u, up = y
        return [up, (L * (L + 1) / r ** 2 + 2.0 * vfun(r) - 2.0 * complex(E)) * u]

    ri = grid.interior
    r0 = r_start if r_start is not None else min(1e-3, 0.1 * ri[0])
    rmax = grid.r_max

    phi0 = [r0 ** (L + 1), (L + 1) * r0 ** L]
    sol_phi = solve_ivp(rhs, (r0, rmax), np.array(phi0, dtype=complex),
                        t_eval=ri, rtol=1e-11, atol=1e-300, method="DOP853")
    if not sol_phi.success:
        raise NumericalError(f"outward integration failed: {sol_phi.message}")
    phi, dphi = sol_phi.y

    z = k * rmax
    psi_end = rmax * _spherical_h1(L, z)
    dpsi_end = _spherical_h1(L, z) + z * _spherical_h1_deriv(L, z)
    sol_psi = solve_ivp(rhs, (rmax, ri[0]), np.array([psi_end, dpsi_end], dtype=complex),
                        t_eval=ri[::-1], rtol=1e-11, atol=1e-300, method="DOP853")
    if not sol_psi.success:
        raise NumericalError(f"inward integration failed: {sol_psi.message}")
    psi = sol_psi.y[0][::-1]
    dpsi = sol_psi.y[1][::-1]

    wr = phi * dpsi - dphi * psi
    scale = np.abs(phi) * np.abs(dpsi) + np.abs(dphi) * np.abs(psi) + 1e-300
    good = np.abs(wr) > 1e-10 * scale
    if not np.any(good):
        raise NumericalError("Wronskian vanishes: E coincides with a bound eigenvalue")
    W = np.median(wr[good].real) + 1j * np.median(wr[good].imag)
    spread = np.abs(wr[good] - W).max() / abs(W)
    if spread > 1e-4:
        raise NumericalError(f"Wronskian not constant (spread {spread:.2e}); "
                             "integration accuracy insufficient")

    n = len(ri)
    G = np.empty((n, n), dtype=complex)
    for i in range(n):
        G[i, :i + 1] = phi[:i + 1] * psi[i]
        G[i, i + 1:] = phi[i] * psi[i + 1:]
    G *= 2.0 / W
    G /= np.outer(ri, ri)
    return RadialGreenFunction(L=int(L), energy=complex(E), matrix=G)


def wronskian_spread(grid, v_eff, L, E, r_start=None):
    """Relative spread of the Wronskian across nodes (consistency diagnostic)."""
    if callable(v_eff):
        vfun = v_eff
    else:
        rv = np.asarray(v_eff) * grid.nodes
        spline = CubicSpline(grid.nodes, rv)
        vfun = lambda r: spline(r) / r      # noqa: E731
    k = np.sqrt(2.0 * complex(E))
    if k.imag < 0:
        k = -k

    def rhs(r, y):
        u, up = y
        return [up, (L * (L + 1) / r ** 2 + 2.0 * vfun(r) - 2.0 * complex(E)) * u]

    ri = grid.interior
    r0 = r_start if r_start is not None else min(1e-3, 0.1 * ri[0])
    rmax = grid.r_max
    sol_phi = solve_ivp(rhs, (r0, rmax), np.array([r0 ** (L + 1), (L + 1) * r0 ** L],
                                                  dtype=complex),
                        t_eval=ri, rtol=1e-11, atol=1e-300, method="DOP853")
    z = k * rmax
    sol_psi = solve_ivp(rhs, (rmax, ri[0]),
                        np.array([rmax * _spherical_h1(L, z),
                                  _spherical_h1(L, z) + z * _spherical_h1_deriv(L, z)],
                                 dtype=complex),
                        t_eval=ri[::-1], rtol=1e-11, atol=1e-300, method="DOP853")
    phi, dphi = sol_phi.y
    psi = sol_psi.y[0][::-1]
    dpsi = sol_psi.y[1][::-1]
    wr = phi * dpsi - dphi * psi
    W = np.median(wr.real) + 1j * np.median(wr.imag)
    return float(np.abs(wr - W).max() / abs(W))
