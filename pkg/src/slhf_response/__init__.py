"""Photoionization cross sections of atomic ground and excited states from
spin-dependent localized Hartree-Fock density-functional linear response."""

__version__ = "0.1.0"

from .constants import BOHR2_MB, C_AU, HARTREE_EV
from .errors import ConfigurationError, ContractError, NumericalError
from .grid import RadialGrid, build_grid, integrate
from .potentials import (AbsorberSpec, EffectivePotential, build_absorber,
                         compute_hartree, compute_lyp_correlation,
                         compute_slhf_exchange)
from .scf import (ElectronConfiguration, RadialOrbital, SCFOptions,
                  SpinOrbitalSet, Subshell, run_scf, solve_radial_eigen)
from .greens import (GreenProvider, RadialGreenFunction, ResolventFactorization,
                     build_green, build_green_wronskian)
from .response import (CrossSectionCurve, KernelOption, ResponseEngine,
                       ResponsePoint, build_chi_l, build_kernel_bundle,
                       hartree_kernel_partialwave, polarizability_and_cross_section,
                       scan_spectrum, solve_induced_density, write_curve, xc_kernel)
from .fano import (FanoFit, ResonancePeak, fano_profile, find_peaks, fit_fano,
                   unperturbed_difference)
from .pipeline import RunConfig, emit_config, load_or_run_scf, parse_config, run
