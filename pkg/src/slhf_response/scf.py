"""Self-consistent solution of the radial KS equation with the SLHF potential.

Configurations are spin-resolved subshell occupations; excited configurations
(holes, non-aufbau) are held fixed by matching orbitals to (n, l) through
radial node counts rather than energy ordering, so root flipping during the
SCF cannot change the state.
"""

import re
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, ContractError, NumericalError
from .grid import build_grid, integrate
from .potentials import (EffectivePotential, compute_lyp_correlation,
                         compute_slhf_exchange, hartree_from_radial_charge,
                         nuclear_potential)

SPIN_UP = "up"
SPIN_DOWN = "down"
SPINS = (SPIN_DOWN, SPIN_UP)

_L_LETTERS = "spdfgh"
_UP_MARKS = "↑+u"
_DOWN_MARKS = "↓-d"
_SUPERSCRIPTS = {c: i + 1 for i, c in enumerate("¹²³⁴⁵⁶⁷⁸⁹")}
_TOKEN = re.compile(r"(\d+)([spdfgh])([↑↓+\-ud])((?:\d+(?:\.\d+)?)|[¹²³⁴-⁹]*)")

_AUFBAU = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (4, 0), (3, 2), (4, 1),
           (5, 0), (4, 2), (5, 1), (6, 0)]


@dataclass(frozen=True)
class Subshell:
    n: int
    l: int
    spin: str
    occupancy: float

    @property
    def label(self):
        occ = ""
        if self.occupancy != 1:
            occ = f"{self.occupancy:g}"
        mark = "+" if self.spin == SPIN_UP else "-"
        return f"{self.n}{_L_LETTERS[self.l]}{mark}{occ}"


@dataclass(frozen=True)
class ElectronConfiguration:
    """Spin-resolved subshell occupations defining the determinant."""

    nuclear_charge: int
    subshells: tuple
    label: str = ""

    def __post_init__(self):
        problems = []
        for s in self.subshells:
            if s.l < 0 or s.n <= s.l:
                problems.append(f"{s.label}: requires n > l >= 0")
            if not (0 < s.occupancy <= 2 * s.l + 1):
                problems.append(f"{s.label}: occupancy must lie in (0, {2 * s.l + 1}]")
            if s.spin not in SPINS:
                problems.append(f"{s.label}: unknown spin {s.spin!r}")
        seen = set()
        for s in self.subshells:
            key = (s.n, s.l, s.spin)
            if key in seen:
                problems.append(f"{s.label}: duplicate subshell")
            seen.add(key)
        if self.electron_count() > self.nuclear_charge + 1:
            problems.append("anions are out of scope: electron count exceeds Z+1")
        if problems:
            raise ConfigurationError("; ".join(problems))
        if not self.label:
            object.__setattr__(self, "label", self.canonical_label())

    def electron_count(self, spin=None):
        return sum(s.occupancy for s in self.subshells
                   if spin is None or s.spin == spin)

    def spin_subshells(self, spin):
        return tuple(s for s in self.subshells if s.spin == spin)

    def canonical_label(self):
        order = sorted(self.subshells, key=lambda s: (s.n, s.l, s.spin == SPIN_UP))
        return " ".join(s.label for s in order)

    @classmethod
    def from_label(cls, nuclear_charge, text):
        """Parse labels like ``1s+ 1s- 2p-3 2p+2 3s+`` (arrows also accepted)."""
        stripped = re.sub(r"\s", "", text)
        subshells = []
        pos = 0
        while pos < len(stripped):
            m = _TOKEN.match(stripped, pos)
            if not m:
                raise ConfigurationError(
                    f"cannot parse configuration label near {stripped[pos:pos+6]!r}")
            n, letter, mark, occ = m.groups()
            spin = SPIN_UP if mark in _UP_MARKS else SPIN_DOWN
            if occ == "":
                w = 1.0
            elif occ[0] in _SUPERSCRIPTS:
                w = float(sum(_SUPERSCRIPTS[c] * 10 ** (len(occ) - 1 - i)
                              for i, c in enumerate(occ)))
            else:
                w = float(occ)
            subshells.append(Subshell(int(n), _L_LETTERS.index(letter), spin, w))
            pos = m.end()
        return cls(nuclear_charge=nuclear_charge, subshells=tuple(subshells), label=text)

    @classmethod
    def ground_state(cls, nuclear_charge):
        """Neutral-atom aufbau filling (majority spin first within a subshell)."""
        remaining = nuclear_charge
        subshells = []
        for (n, l) in _AUFBAU:
            if remaining <= 0:
                break
            cap = 2 * l + 1
            up = min(remaining, cap)
            if up:
                subshells.append(Subshell(n, l, SPIN_UP, float(up)))
                remaining -= up
            down = min(remaining, cap)
            if down:
                subshells.append(Subshell(n, l, SPIN_DOWN, float(down)))
                remaining -= down
        if remaining > 0:
            raise ConfigurationError(f"no aufbau filling available for Z={nuclear_charge}")
        return cls(nuclear_charge=nuclear_charge, subshells=tuple(subshells))


@dataclass(frozen=True)
class RadialOrbital:
    n: int
    l: int
    spin: str
    occupancy: float
    energy: float
    samples: np.ndarray

    @property
    def label(self):
        mark = "+" if self.spin == SPIN_UP else "-"
        return f"{self.n}{_L_LETTERS[self.l]}{mark}"


@dataclass(frozen=True)
class SCFOptions:
    use_lyp: bool = False
    mixing: float = 0.4
    tol: float = 1e-8
    max_iterations: int = 300
    virtual_count: int = 12
    virtual_l_max: int | None = None

    def key(self):
        return (self.use_lyp, round(self.mixing, 12), self.tol, self.max_iterations,
                self.virtual_count, self.virtual_l_max)


@dataclass(frozen=True)
class SpinOrbitalSet:
    """Converged orbitals, densities and potentials of one SCF run."""

    configuration: ElectronConfiguration
    grid_key: tuple
    occupied_orbitals: dict      # spin -> tuple of RadialOrbital
    virtual_orbitals: dict       # spin -> tuple of RadialOrbital (occupancy 0)
    potentials: dict             # spin -> EffectivePotential
    iterations: int
    residual: float
    options: SCFOptions
    correlation_energy: float = 0.0

    def occupied(self, spin):
        return self.occupied_orbitals.get(spin, ())

    def all_orbitals(self, spin):
        return tuple(self.occupied_orbitals.get(spin, ())) + \
            tuple(self.virtual_orbitals.get(spin, ()))

    def orbital(self, label):
        """Look up by label like '2s+' or '3p-'; occupied first, then virtuals."""
        label = label.replace("↑", "+").replace("↓", "-").strip()
        for spin in SPINS:
            for orb in self.all_orbitals(spin):
                if orb.label == label:
                    return orb
        raise ContractError(f"orbital {label!r} not present in the converged set")

    def potential(self, spin):
        return self.potentials[spin]

    def radial_charge(self, spin, grid):
        q = np.zeros_like(grid.nodes)
        for orb in self.occupied(spin):
            q += orb.occupancy * orb.samples ** 2
        return q

    def density(self, spin, grid):
        """Spherically averaged number density rho_sigma(r)."""
        q = self.radial_charge(spin, grid)
        r = grid.nodes
        rho = np.zeros_like(q)
        rho[1:] = q[1:] / (4 * np.pi * r[1:] ** 2)
        origin = 0.0
        for orb in self.occupied(spin):
            if orb.l == 0:
                slope = (grid.d1 @ orb.samples)[0]
                origin += orb.occupancy * slope ** 2 / (4 * np.pi)
        rho[0] = origin
        return rho

    def to_dict(self):
        def orb_list(orbs):
            return [dict(n=o.n, l=o.l, spin=o.spin, occupancy=o.occupancy,
                         energy=o.energy, samples=o.samples.tolist()) for o in orbs]

        pots = {}
        for spin, p in self.potentials.items():
            pots[spin] = dict(nuclear_charge=p.nuclear_charge,
                              v_nuclear=p.v_nuclear.tolist(),
                              v_hartree=p.v_hartree.tolist(),
                              v_exchange=p.v_exchange.tolist(),
                              v_correlation=p.v_correlation.tolist())
        return dict(format_version=1,
                    nuclear_charge=self.configuration.nuclear_charge,
                    label=self.configuration.label,
                    grid_key=list(self.grid_key),
                    occupied={s: orb_list(v) for s, v in self.occupied_orbitals.items()},
                    virtuals={s: orb_list(v) for s, v in self.virtual_orbitals.items()},
                    potentials=pots,
                    iterations=self.iterations,
                    residual=self.residual,
                    correlation_energy=self.correlation_energy,
                    options=dict(use_lyp=self.options.use_lyp, mixing=self.options.mixing,
                                 tol=self.options.tol,
                                 max_iterations=self.options.max_iterations,
                                 virtual_count=self.options.virtual_count,
                                 virtual_l_max=self.options.virtual_l_max))

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != 1:
            raise ConfigurationError("unsupported cache format version")

        def orbs(lst):
            return tuple(RadialOrbital(n=d["n"], l=d["l"], spin=d["spin"],
                                       occupancy=d["occupancy"], energy=d["energy"],
                                       samples=np.array(d["samples"]))
                         for d in lst)

        pots = {}
        for spin, p in data["potentials"].items():
            pots[spin] = EffectivePotential(
                spin=spin, nuclear_charge=p["nuclear_charge"],
                v_nuclear=np.array(p["v_nuclear"]), v_hartree=np.array(p["v_hartree"]),
                v_exchange=np.array(p["v_exchange"]),
                v_correlation=np.array(p["v_correlation"]))
        config = ElectronConfiguration.from_label(data["nuclear_charge"], data["label"])
        opts = SCFOptions(**data["options"])
        return cls(configuration=config, grid_key=tuple(data["grid_key"]),
                   occupied_orbitals={s: orbs(v) for s, v in data["occupied"].items()},
                   virtual_orbitals={s: orbs(v) for s, v in data["virtuals"].items()},
                   potentials=pots, iterations=data["iterations"],
                   residual=data["residual"], options=opts,
                   correlation_energy=data.get("correlation_energy", 0.0))


def solve_radial_eigen(grid, v_eff, l, count):
    """Lowest ``count`` eigenpairs of -1/2 d^2/dr^2 + l(l+1)/2r^2 + v_eff.

    Uses the symmetric variational form of the kinetic operator; eigenvectors
    come out quadrature-orthonormal, i.e. int R_i R_j dr = delta_ij.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    v_eff = np.asarray(v_eff)
    ri = grid.interior
    if not np.all(np.isfinite(v_eff[1:-1])):
        raise ContractError("v_eff contains non-finite interior values")
    wi = grid.interior_weights
    sq = np.sqrt(wi)
    H = 0.5 * grid.stiffness[1:-1, 1:-1] / sq[:, None] / sq[None, :]
    H = H + np.diag(v_eff[1:-1] + 0.5 * l * (l + 1) / ri ** 2)
    H = 0.5 * (H + H.T)
    try:
        evals, evecs = sla.eigh(H, subset_by_index=(0, min(count, len(ri)) - 1))
    except sla.LinAlgError as exc:
        raise NumericalError(f"radial eigensolver failed: {exc}") from exc
    out = []
    for i in range(evals.shape[0]):
        R = np.zeros_like(grid.nodes)
        R[1:-1] = evecs[:, i] / sq
        peak = np.argmax(np.abs(R))
        if R[peak] < 0:
            R = -R
        out.append((float(evals[i]), R))
    return out


def radial_node_count(samples, rel_floor=1e-7):
    vals = samples[1:-1]
    big = np.abs(vals) > rel_floor * np.abs(vals).max()
    signs = np.sign(vals[big])
    return int(np.sum(signs[1:] != signs[:-1]))


def _match_by_nodes(solutions, n, l):
    want = n - l - 1
    for energy, R in solutions:
        if radial_node_count(R) == want:
            return energy, R
    raise NumericalError(
        f"no eigenstate with {want} radial nodes found for n={n}, l={l}")


def _initial_hxc(grid, nuclear_charge, n_electrons):
    r = grid.nodes
    screen = max(n_electrons - 1, 0)
    zeff = (nuclear_charge - screen) + screen * np.exp(-1.5 * r)
    with np.errstate(divide="ignore"):
        v0 = np.where(r > 0, -zeff / np.where(r > 0, r, 1.0), 0.0)
    return v0 - nuclear_potential(grid, nuclear_charge)


def run_scf(config, grid, options=None, initial=None):
    """Iterate the KS + SLHF loop for ``config`` to self-consistency."""
    options = options or SCFOptions()
    spins = [s for s in SPINS if config.spin_subshells(s)]
    if not spins:
        raise ConfigurationError("configuration has no electrons")
    v_nuc = nuclear_potential(grid, config.nuclear_charge)
    n_el = config.electron_count()
    if initial is not None:
        v_hxc = {}
        for s in SPINS:
            p = initial.potentials.get(s)
            v_hxc[s] = (p.v_total - p.v_nuclear) if p is not None \
                else _initial_hxc(grid, config.nuclear_charge, n_el)
    else:
        start = _initial_hxc(grid, config.nuclear_charge, n_el)
        v_hxc = {s: start.copy() for s in SPINS}

    beta = options.mixing
    history = []
    shells = {}
    v_new = {}
    lyp_energy = 0.0
    for iteration in range(options.max_iterations):
        charge_total = np.zeros_like(grid.nodes)
        shells = {}
        for s in spins:
            veff = v_nuc + v_hxc[s]
            per_l = {}
            for sub in config.spin_subshells(s):
                per_l.setdefault(sub.l, []).append(sub)
            lst = []
            for l, subs in per_l.items():
                count = max(sub.n - l for sub in subs) + 2
                sols = solve_radial_eigen(grid, veff, l, count)
                for sub in subs:
                    energy, R = _match_by_nodes(sols, sub.n, sub.l)
                    lst.append(RadialOrbital(n=sub.n, l=sub.l, spin=s,
                                             occupancy=sub.occupancy,
                                             energy=energy, samples=R))
                    charge_total += sub.occupancy * R ** 2
            shells[s] = sorted(lst, key=lambda o: o.energy)

        v_hartree = hartree_from_radial_charge(grid, charge_total)
        v_corr = {s: np.zeros_like(grid.nodes) for s in spins}
        if options.use_lyp:
            dens = {}
            for s in SPINS:
                if s in shells:
                    q = sum(o.occupancy * o.samples ** 2 for o in shells[s])
                    rho = np.zeros_like(q)
                    rho[1:] = q[1:] / (4 * np.pi * grid.nodes[1:] ** 2)
                    dens[s] = rho
                else:
                    dens[s] = np.zeros_like(grid.nodes)
            v_up, v_dn, lyp_energy = compute_lyp_correlation(
                grid, dens[SPIN_UP], dens[SPIN_DOWN])
            if SPIN_UP in v_corr:
                v_corr[SPIN_UP] = v_up
            if SPIN_DOWN in v_corr:
                v_corr[SPIN_DOWN] = v_dn

        v_new = {}
        for s in spins:
            v_x = compute_slhf_exchange(grid, shells[s], s)
            v_new[s] = v_hartree + v_x + v_corr[s]

        dv = max(np.max(np.abs((v_new[s] - v_hxc[s])[1:-1])) for s in spins)
        history.append(dv)
        if len(history) > 2 and history[-1] > history[-2] > history[-3]:
            beta = max(beta / 2, 0.05)
        for s in spins:
            v_hxc[s] = v_hxc[s] + beta * (v_new[s] - v_hxc[s])
        if dv < options.tol:
            break
    else:
        raise NumericalError(
            f"SCF did not converge in {options.max_iterations} iterations "
            f"(last residual {history[-1]:.3e})", history=history)

    return _finalize(config, grid, options, spins, shells, v_nuc, v_new, v_corr,
                     iteration, history[-1], lyp_energy)


def _finalize(config, grid, options, spins, shells, v_nuc, v_new, v_corr,
              iteration, residual, lyp_energy):
    charge_total = np.zeros_like(grid.nodes)
    for s in spins:
        for o in shells[s]:
            charge_total += o.occupancy * o.samples ** 2
    v_hartree = hartree_from_radial_charge(grid, charge_total)

    potentials = {}
    occupied = {}
    virtuals = {}
    for s in SPINS:
        if s in spins:
            v_x = v_new[s] - v_hartree - v_corr[s]
            pot = EffectivePotential(spin=s, nuclear_charge=config.nuclear_charge,
                                     v_nuclear=v_nuc, v_hartree=v_hartree,
                                     v_exchange=v_x, v_correlation=v_corr[s])
            occupied[s] = tuple(shells[s])
        else:
            pot = EffectivePotential(spin=s, nuclear_charge=config.nuclear_charge,
                                     v_nuclear=v_nuc, v_hartree=v_hartree,
                                     v_exchange=np.zeros_like(v_nuc),
                                     v_correlation=np.zeros_like(v_nuc))
            occupied[s] = ()
        potentials[s] = pot

        lmax = options.virtual_l_max
        if lmax is None:
            occ_l = [o.l for o in occupied[s]]
            lmax = max(max(occ_l, default=0) + 1, 2)
        virt = []
        if s in spins:
            veff = pot.v_total
            occ_keys = {(o.n, o.l) for o in occupied[s]}
            for l in range(lmax + 1):
                count = options.virtual_count + l + 1
                sols = solve_radial_eigen(grid, veff, l, count)
                for energy, R in sols:
                    n = l + 1 + radial_node_count(R)
                    if (n, l) in occ_keys:
                        continue
                    virt.append(RadialOrbital(n=n, l=l, spin=s, occupancy=0.0,
                                              energy=energy, samples=R))
        virtuals[s] = tuple(sorted(virt, key=lambda o: (o.l, o.energy)))

    return SpinOrbitalSet(configuration=config, grid_key=grid.key(),
                          occupied_orbitals=occupied, virtual_orbitals=virtuals,
                          potentials=potentials, iterations=iteration + 1,
                          residual=residual, options=options,
                          correlation_energy=lyp_energy)
