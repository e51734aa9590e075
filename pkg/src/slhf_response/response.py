"""Dipole linear response: partial-wave susceptibilities, response kernels,
the self-consistent induced-density solve, polarizability and cross sections.

Conventions. All response matrices live on interior grid nodes. Integral
operators acting on f(r') with measure r'^2 dr' are folded with
mu_j = w_j r_j^2, so [I - N] acts on plain node-value vectors. The external
field couples through z = sqrt(4 pi / 3) r Y_10; only the (l=1, m=0) block of
the dipole response is needed.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .angular import cg_squared, threej000_squared
from .constants import BOHR2_MB, C_AU, HARTREE_EV
from .errors import ConfigurationError, ContractError, NumericalError
from .greens import GreenProvider
from .potentials import _lyp_functions
from .scf import SPINS

KERNEL_VARIANTS = ("none", "hartree-only", "hartree+alda-x", "hartree+alda-x+numeric-c",
                   "hartree+pgg-x", "hartree+pgg-x+numeric-c")


@dataclass(frozen=True)
class KernelOption:
    """Choice of response kernel K = Hartree + f_xc.

    ``none`` reproduces the independent-particle (TISLHF) limit exactly;
    ``alda-x`` is the adiabatic derivative of the spin-scaled local exchange
    potential; ``pgg-x`` the orbital-dependent exchange kernel
    -|gamma_sigma(r,r')|^2 / (rho_sigma rho_sigma' |r-r'|), exact for
    one-electron systems; ``numeric-c`` adds a finite-difference contact
    kernel from the LYP correlation potential.
    """

    variant: str = "hartree+alda-x"
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.variant not in KERNEL_VARIANTS:
            raise ConfigurationError(
                f"unknown kernel variant {self.variant!r}; choose from {KERNEL_VARIANTS}")

    @property
    def has_hartree(self):
        return self.variant != "none"

    @property
    def has_alda_x(self):
        return "alda-x" in self.variant

    @property
    def has_pgg_x(self):
        return "pgg-x" in self.variant

    @property
    def has_numeric_c(self):
        return "numeric-c" in self.variant


@dataclass(frozen=True)
class PartialWaveSusceptibility:
    spin: str
    l: int
    omega: float
    matrix: np.ndarray


@dataclass(frozen=True)
class ResponsePoint:
    omega: float                  # hartree
    omega_ev: float
    alpha: complex                # bohr^3
    sigma_mb: float
    mode: str                     # "td" | "ti"
    drho: dict | None = None      # spin -> complex interior array
    metadata: dict = field(default_factory=dict)
    ok: bool = True


@dataclass
class CrossSectionCurve:
    points: list
    configuration_label: str
    mode: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        om = [p.omega for p in self.points]
        if any(b <= a for a, b in zip(om, om[1:])):
            raise ContractError("curve frequencies must be strictly increasing")
        modes = {p.mode for p in self.points}
        if len(modes) > 1:
            raise ContractError("curve mixes TD and TI points")

    @property
    def omegas_ev(self):
        return np.array([p.omega_ev for p in self.points])

    @property
    def sigmas_mb(self):
        return np.array([p.sigma_mb for p in self.points])


def hartree_kernel_partialwave(grid, L):
    """Partial-wave Coulomb kernel K_L(r,r') = 4 pi/(2L+1) r_<^L / r_>^{L+1}."""
    if L < 0:
        raise ContractError("L must be nonnegative")
    r = grid.nodes
    r_small = np.minimum.outer(r, r)
    r_large = np.maximum.outer(r, r)
    safe = np.where(r_large > 0, r_large, 1.0)
    if L == 0:
        ratio = np.where(r_large > 0, 1.0 / safe, 0.0)
    else:
        ratio = np.where(r_large > 0, r_small ** L / safe ** (L + 1), 0.0)
    return 4.0 * np.pi / (2 * L + 1) * ratio


def xc_kernel(grid, densities, option):
    """Local (contact) xc kernel values f_{sigma sigma'}(r) on the full nodes.

    ``densities`` is (rho_up, rho_down). Returns a dict keyed by spin pairs.
    The PGG variant is not a contact kernel and is built separately by
    ``exchange_kernel_matrix``.
    """
    rho = {"up": np.asarray(densities[0], dtype=float),
           "down": np.asarray(densities[1], dtype=float)}
    out = {(s, sp): np.zeros_like(grid.nodes) for s in SPINS for sp in SPINS}
    if option.has_alda_x:
        coef = -(1.0 / 3.0) * (6.0 / np.pi) ** (1.0 / 3.0)
        for s in SPINS:
            f = np.zeros_like(grid.nodes)
            m = rho[s] > 1e-12
            f[m] = coef * rho[s][m] ** (-2.0 / 3.0)
            out[(s, s)] = out[(s, s)] + f
    if option.has_numeric_c:
        fns = _lyp_functions()
        h = option.fd_step
        d1 = grid.d1
        dra, drb = d1 @ rho["up"], d1 @ rho["down"]
        gaa, gab, gbb = dra * dra, dra * drb, drb * drb
        live = (rho["up"] + rho["down"]) > 1e-10

        def local_vc(which, ra, rb):
            with np.errstate(all="ignore"):
                v = fns[which](np.maximum(ra, 1e-30), np.maximum(rb, 1e-30),
                               gaa, gab, gbb)
            return np.where(live, np.nan_to_num(v), 0.0)

        for (s, sp) in [("up", "up"), ("up", "down"), ("down", "up"), ("down", "down")]:
            which = "dra" if s == "up" else "drb"
            ra, rb = rho["up"].copy(), rho["down"].copy()
            if sp == "up":
                fp = local_vc(which, ra + h, rb)
                fm = local_vc(which, np.clip(ra - h, 0, None), rb)
            else:
                fp = local_vc(which, ra, rb + h)
                fm = local_vc(which, ra, np.clip(rb - h, 0, None))
            out[(s, sp)] = out[(s, sp)] + (fp - fm) / (2 * h)
    return out


def exchange_kernel_matrix(grid, orbitals, spin, L):
    """Partial-wave L component of the PGG exchange kernel (interior nodes).

    f_x(r,r') = -|gamma_sigma(r,r')|^2 / (rho_sigma(r) rho_sigma(r') |r-r'|)
    reduced with the occupied density matrix of one spin channel.
    """
    chans = list(orbitals.occupied(spin)) if hasattr(orbitals, "occupied") else list(orbitals)
    ri = grid.interior
    n = len(ri)
    if not chans:
        return np.zeros((n, n))
    D = sum(ch.occupancy * np.asarray(ch.samples) ** 2 for ch in chans)[1:-1]
    out = np.zeros((n, n))
    r_small = np.minimum.outer(ri, ri)
    r_large = np.maximum.outer(ri, ri)
    for a in chans:
        for b in chans:
            la, lb = a.l, b.l
            pair = (np.asarray(a.samples) * np.asarray(b.samples))[1:-1]
            wab = a.occupancy * b.occupancy
            for k in range(0, la + lb + L + 1):
                ck = 0.0
                for g in range(abs(la - lb), la + lb + 1, 2):
                    ck += ((2 * g + 1) * threej000_squared(la, lb, g)
                           * (2 * L + 1) * threej000_squared(g, k, L))
                if ck == 0.0:
                    continue
                out -= wab * ck * np.outer(pair, pair) * (r_small ** k / r_large ** (k + 1))
    out /= np.outer(D, D)
    return 4.0 * np.pi / (2 * L + 1) * out


@dataclass(frozen=True)
class KernelBundle:
    """Pre-folded kernel operators for the l=1 induced-density solve."""

    option: KernelOption
    hartree_folded: np.ndarray | None          # diag(mu) K_1 diag(mu), interior
    contact: dict                               # (s,sp) -> interior f array
    exchange: dict                              # s -> interior matrix or None
    mu: np.ndarray                              # w_j r_j^2 on interior nodes
    z_weights: np.ndarray                       # w_j r_j^3 on interior nodes


def build_kernel_bundle(grid, orbital_set, option):
    mu = grid.interior_weights * grid.interior ** 2
    zw = grid.interior_weights * grid.interior ** 3
    if not option.has_hartree:
        return KernelBundle(option=option, hartree_folded=None, contact={},
                            exchange={}, mu=mu, z_weights=zw)
    k1 = hartree_kernel_partialwave(grid, 1)[1:-1, 1:-1]
    hart = mu[:, None] * k1 * mu[None, :]
    dens = (orbital_set.density("up", grid), orbital_set.density("down", grid))
    contact = {key: arr[1:-1] for key, arr in xc_kernel(grid, dens, option).items()}
    exchange = {}
    if option.has_pgg_x:
        for s in SPINS:
            if orbital_set.occupied(s):
                exchange[s] = mu[:, None] * exchange_kernel_matrix(
                    grid, orbital_set, s, 1) * mu[None, :]
    return KernelBundle(option=option, hartree_folded=hart, contact=contact,
                        exchange=exchange, mu=mu, z_weights=zw)


def build_chi_l(orbitals, greens_provider, l, omega, spin, shifts=None):
    """Partial-wave susceptibility chi_l for one spin from occupied orbitals.

    chi_l(r,r') = 1/(4 pi) sum_{n'l'} sum_L w |<l0 l'0|L0>|^2 (R/r)(R'/r')
                  [G_L(eps + w) + conj(G_L(eps - w))]

    ``shifts`` maps orbital labels to replacement energies (hartree) used in
    the Green-function arguments only (the S-variant hook).
    """
    grid = greens_provider.grid
    ri = grid.interior
    n = len(ri)
    chi = np.zeros((n, n), dtype=complex)
    for orb in orbitals.occupied(spin):
        eps = orb.energy
        if shifts and orb.label in shifts:
            eps = shifts[orb.label]
        envelope = orb.samples[1:-1] / ri
        weight = orb.occupancy / (4.0 * np.pi)
        for L in range(abs(l - orb.l), l + orb.l + 1):
            c = cg_squared(l, orb.l, L)
            if c == 0.0:
                continue
            gp = greens_provider.matrix(L, eps + omega, spin, orb.label)
            gm = greens_provider.matrix(L, eps - omega, spin, orb.label)
            chi += (weight * c) * envelope[:, None] * envelope[None, :] * (gp + np.conj(gm))
    return PartialWaveSusceptibility(spin=spin, l=l, omega=float(omega), matrix=chi)


def solve_induced_density(chis, kernels, omega, field_amplitude=1.0):
    """Solve [I - N] drho = E0 sqrt(4 pi/3) int chi r'^3 dr' for both spins.

    ``chis`` maps spin -> PartialWaveSusceptibility (or bare matrix) at l=1.
    Returns a dict spin -> complex interior array. With kernel variant none
    the right-hand side is returned unchanged (independent-particle limit).
    """
    spins = [s for s in SPINS if s in chis]
    if not spins:
        raise ContractError("no susceptibility channels supplied")
    mats = {}
    for s in spins:
        c = chis[s]
        mats[s] = c.matrix if hasattr(c, "matrix") else np.asarray(c)
    n = mats[spins[0]].shape[0]
    if any(m.shape != (n, n) for m in mats.values()) or kernels.mu.shape[0] != n:
        raise ContractError("susceptibility matrices have inconsistent shapes")
    return _solve(mats, kernels, spins, field_amplitude)


def _solve(mats, kernels, spins, field_amplitude):
    n = next(iter(mats.values())).shape[0]
    rhs = {s: field_amplitude * np.sqrt(4 * np.pi / 3) * (mats[s] @ kernels.z_weights)
           for s in spins}
    if kernels.hartree_folded is None:
        return dict(rhs)
    m = len(spins)
    A = np.eye(n * m, dtype=complex)
    for i, s in enumerate(spins):
        base = mats[s] @ kernels.hartree_folded
        if kernels.option.has_pgg_x and s in kernels.exchange:
            base = base + mats[s] @ kernels.exchange[s]
        for j, sp in enumerate(spins):
            block = base.copy()
            contact = kernels.contact.get((s, sp))
            if contact is not None and np.any(contact):
                block += mats[s] * (contact * kernels.mu)[None, :]
            A[i * n:(i + 1) * n, j * n:(j + 1) * n] -= block
    b = np.concatenate([rhs[s] for s in spins])
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"[I - N] solve is singular: {exc}") from exc
    return {s: sol[i * n:(i + 1) * n] for i, s in enumerate(spins)}


def polarizability_and_cross_section(drho, grid, omega, field_amplitude=1.0):
    """alpha(omega) and sigma(omega) in Mb from induced l=1 densities."""
    wz = grid.interior_weights * grid.interior ** 3
    total = sum(np.sum(wz * d) for d in drho.values())
    alpha = -np.sqrt(4 * np.pi / 3) / field_amplitude * total
    sigma = (4 * np.pi * omega / C_AU) * alpha.imag * BOHR2_MB
    return alpha, sigma


class ResponseEngine:
    """Reusable per-configuration response machinery for frequency scans."""

    def __init__(self, orbital_set, grid, kernel=None, absorber=None,
                 shifts=None, field_amplitude=1.0, mode="td", eps=0.0):
        if mode not in ("td", "ti"):
            raise ConfigurationError(f"mode must be 'td' or 'ti', got {mode!r}")
        self.orbital_set = orbital_set
        self.grid = grid
        self.mode = mode
        kernel = kernel or KernelOption()
        if mode == "ti":
            kernel = replace(kernel, variant="none")
        self.kernel = kernel
        self.shifts = dict(shifts or {})
        self.field_amplitude = float(field_amplitude)
        self.provider = GreenProvider(grid, orbital_set.potentials,
                                      absorber=absorber, eps=eps)
        self.bundle = build_kernel_bundle(grid, orbital_set, kernel)
        self.spins = [s for s in SPINS if orbital_set.occupied(s)]

    def susceptibilities(self, omega):
        return {s: build_chi_l(self.orbital_set, self.provider, 1, omega, s,
                               self.shifts) for s in self.spins}

    def point(self, omega, keep_density=False):
        omega = float(omega)
        chis = self.susceptibilities(omega)
        mats = {s: c.matrix for s, c in chis.items()}
        drho = _solve(mats, self.bundle, self.spins, self.field_amplitude)
        alpha, sigma = polarizability_and_cross_section(
            drho, self.grid, omega, self.field_amplitude)
        meta = dict(kernel=self.kernel.variant, shifts=dict(self.shifts))
        return ResponsePoint(omega=omega, omega_ev=omega * HARTREE_EV, alpha=alpha,
                             sigma_mb=sigma, mode=self.mode,
                             drho=drho if keep_density else None, metadata=meta)


def predicted_resonance_windows(orbital_set, omega_lo_ev, omega_hi_ev,
                                margin_ev=0.8):
    """Candidate resonance windows from dipole-allowed bound orbital differences."""
    windows = []
    for spin in SPINS:
        occ = orbital_set.occupied(spin)
        everything = orbital_set.all_orbitals(spin)
        for o in occ:
            for v in everything:
                if v.energy <= o.energy or v.energy >= 0:
                    continue
                if abs(v.l - o.l) != 1:
                    continue
                if v.occupancy >= 2 * v.l + 1:
                    continue
                de = (v.energy - o.energy) * HARTREE_EV
                if omega_lo_ev - margin_ev < de < omega_hi_ev + margin_ev:
                    windows.append((de - margin_ev, de + margin_ev, v.n))
    windows.sort()
    return windows


def scan_spectrum(orbital_set, grid, omegas_ev, mode="td", kernel=None,
                  absorber=None, shifts=None, field_amplitude=1.0, threads=1,
                  refine=False, fine_step_ev=2e-4, provenance=None):
    """Cross-section curve over the requested photon energies (eV).

    Failed frequency points are recorded as flagged gaps (sigma = nan,
    ok = False) rather than aborting the scan. With ``refine``, windows
    around predicted bound-bound resonances are re-scanned at ``fine_step_ev``
    (0.05 meV for principal quantum number >= 7) and merged in.
    """
    omegas_ev = np.asarray(sorted(set(float(w) for w in omegas_ev)))
    engine = ResponseEngine(orbital_set, grid, kernel=kernel, absorber=absorber,
                            shifts=shifts, field_amplitude=field_amplitude, mode=mode)

    all_omegas = list(omegas_ev)
    if refine and len(omegas_ev):
        for lo, hi, n_principal in predicted_resonance_windows(
                orbital_set, omegas_ev.min(), omegas_ev.max()):
            step = 5e-5 if n_principal >= 7 else fine_step_ev
            all_omegas.extend(np.arange(max(lo, omegas_ev.min()),
                                        min(hi, omegas_ev.max()), step))
        all_omegas = sorted(set(all_omegas))

    def work(w_ev):
        try:
            return engine.point(w_ev / HARTREE_EV)
        except NumericalError as exc:
            return ResponsePoint(omega=w_ev / HARTREE_EV, omega_ev=w_ev,
                                 alpha=complex("nan"), sigma_mb=float("nan"),
                                 mode=mode, metadata=dict(error=str(exc)), ok=False)

    if threads > 1 and len(all_omegas) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(work, all_omegas))
    else:
        points = [work(w) for w in all_omegas]

    prov = dict(provenance or {})
    prov.setdefault("mode", mode)
    prov.setdefault("kernel", engine.kernel.variant)
    return CrossSectionCurve(points=points,
                             configuration_label=orbital_set.configuration.label,
                             mode=mode, provenance=prov)


def write_curve(curve, path, extra_header=None):
    """Delimited-text export with a '#' provenance header block."""
    lines = []
    for key, val in {**curve.provenance, **(extra_header or {})}.items():
        lines.append(f"# {key}: {val}")
    lines.append(f"# configuration: {curve.configuration_label}")
    lines.append("# columns: omega_eV sigma_Mb re_alpha_au im_alpha_au")
    for p in curve.points:
        lines.append(f"{p.omega_ev:.9f} {p.sigma_mb:.9e} "
                     f"{p.alpha.real:.9e} {p.alpha.imag:.9e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
