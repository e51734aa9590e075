"""Autoionization resonance detection and Fano-profile fitting.

The profile model is

    sigma(w) = sigma0 * [eta2 * (q + kappa)^2 / (1 + kappa^2) - eta2 + 1],
    kappa = 2 (w - E_r) / Gamma,

with sigma0 the uncorrelated background, Gamma the width, q the profile index
and eta2 in [0, 1] the correlation coefficient.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks as _scipy_find_peaks

from .constants import HARTREE_EV
from .errors import ContractError


def fano_profile(omega, sigma0, gamma, e_r, q, eta2):
    kappa = 2.0 * (np.asarray(omega) - e_r) / gamma
    return sigma0 * (eta2 * (q + kappa) ** 2 / (1.0 + kappa ** 2) - eta2 + 1.0)


def fano_jacobian(omega, sigma0, gamma, e_r, q, eta2):
    """Analytic Jacobian of fano_profile wrt (sigma0, gamma, e_r, q, eta2)."""
    w = np.asarray(omega)
    kappa = 2.0 * (w - e_r) / gamma
    denom = 1.0 + kappa ** 2
    shape = (q + kappa) ** 2 / denom
    dshape_dk = 2.0 * (q + kappa) * (1.0 - q * kappa) / denom ** 2
    dk_dgamma = -kappa / gamma
    dk_der = -2.0 / gamma
    J = np.empty(w.shape + (5,))
    J[:, 0] = eta2 * shape - eta2 + 1.0
    J[:, 1] = sigma0 * eta2 * dshape_dk * dk_dgamma
    J[:, 2] = sigma0 * eta2 * dshape_dk * dk_der
    J[:, 3] = sigma0 * eta2 * 2.0 * (q + kappa) / denom
    J[:, 4] = sigma0 * (shape - 1.0)
    return J


@dataclass(frozen=True)
class FanoFit:
    sigma0: float           # Mb
    gamma: float            # eV internally; gamma_mev property for reporting
    e_r: float              # eV
    q: float
    eta2: float
    window: tuple = (0.0, 0.0)
    residual: float = 0.0   # rms misfit, Mb
    converged: bool = False

    @property
    def gamma_mev(self):
        return self.gamma * 1e3

    def peak_position(self):
        """Photon energy of the profile maximum (kappa = 1/q extremum)."""
        return self.e_r + self.gamma / (2.0 * self.q)


@dataclass(frozen=True)
class ResonancePeak:
    position: float          # eV
    height: float            # Mb
    window: tuple
    assignment: str = ""


def find_peaks(curve, baseline_window=0.5):
    """Local extrema above 3x the local background fluctuation.

    ``curve`` is a CrossSectionCurve (or any object with omegas_ev/sigmas_mb).
    Returns ResonancePeak items with windows bracketing each profile;
    assignments are left empty for the caller.
    """
    w = np.asarray(curve.omegas_ev, dtype=float)
    s = np.asarray(curve.sigmas_mb, dtype=float)
    good = np.isfinite(s)
    w, s = w[good], s[good]
    if len(w) < 5:
        return []
    # running-median background over the requested energy window
    background = np.empty_like(s)
    for i in range(len(w)):
        sel = np.abs(w - w[i]) <= baseline_window / 2
        background[i] = np.median(s[sel])
    resid = s - background
    noise = 1.4826 * np.median(np.abs(resid - np.median(resid)))
    floor = max(3.0 * noise, 1e-12)
    idx, props = _scipy_find_peaks(resid, prominence=floor)
    peaks = []
    for j, i in enumerate(idx):
        lo = int(props["left_bases"][j])
        hi = int(props["right_bases"][j])
        peaks.append(ResonancePeak(position=float(w[i]), height=float(s[i]),
                                   window=(float(w[lo]), float(w[hi]))))
    return peaks


def initial_guess(omega, sigma):
    """Starting FanoFit from a window of samples (positions in eV)."""
    omega = np.asarray(omega, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imax = int(np.argmax(sigma))
    imin = int(np.argmin(sigma))
    e_r = 0.5 * (omega[imax] + omega[imin])
    gamma = max(abs(omega[imax] - omega[imin]), 2 * np.mean(np.diff(omega)))
    edge = np.concatenate([sigma[:max(3, len(sigma) // 10)],
                           sigma[-max(3, len(sigma) // 10):]])
    sigma0 = float(np.median(edge))
    q = -4.0 if omega[imax] < omega[imin] else 4.0
    return FanoFit(sigma0=sigma0, gamma=gamma, e_r=e_r, q=q, eta2=0.5,
                   window=(float(omega[0]), float(omega[-1])))


def fit_fano(omega, sigma, initial=None):
    """Nonlinear least squares of the Fano profile over one window.

    Damped trust-region least squares with the analytic Jacobian; bounds keep
    Gamma > 0 and eta2 in [0, 1]. Non-convergence returns the best point with
    ``converged`` False rather than raising. ``omega`` in eV, ``sigma`` in Mb.
    """
    omega = np.asarray(omega, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if len(omega) < 6:
        raise ContractError("fit window needs at least 6 samples")
    guess = initial or initial_guess(omega, sigma)
    p0 = np.array([max(guess.sigma0, 1e-6), max(guess.gamma, 1e-9),
                   guess.e_r, guess.q, min(max(guess.eta2, 1e-4), 1.0)])
    span = omega[-1] - omega[0]
    lower = [0.0, 1e-9, omega[0] - span, -1e3, 0.0]
    upper = [np.inf, 10 * span, omega[-1] + span, 1e3, 1.0]
    p0 = np.clip(p0, lower, upper)

    def resid(p):
        return fano_profile(omega, *p) - sigma

    def jac(p):
        return fano_jacobian(omega, *p)

    g0 = np.linalg.norm(jac(p0).T @ resid(p0))
    out = least_squares(resid, p0, jac=jac, bounds=(lower, upper),
                        method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                        max_nfev=2000)
    gradient = np.linalg.norm(out.jac.T @ out.fun)
    converged = bool(gradient <= 1e-10 * max(g0, 1e-300)) or bool(
        np.sqrt(np.mean(out.fun ** 2)) < 1e-10 * max(abs(sigma).max(), 1e-300))
    p = out.x
    return FanoFit(sigma0=float(p[0]), gamma=float(p[1]), e_r=float(p[2]),
                   q=float(p[3]), eta2=float(p[4]),
                   window=(float(omega[0]), float(omega[-1])),
                   residual=float(np.sqrt(np.mean(out.fun ** 2))),
                   converged=converged)


def unperturbed_difference(orbital_set, from_subshell, to_subshell):
    """Orbital-energy difference eps(to) - eps(from) in eV.

    Both labels refer to the same converged potential; the target may be an
    unoccupied eigenpair stored with the set.
    """
    a = orbital_set.orbital(from_subshell)
    b = orbital_set.orbital(to_subshell)
    return (b.energy - a.energy) * HARTREE_EV


def write_resonance_table(fits, path, extra_header=None, transitions=None):
    """Delimited-text resonance table with a '#' provenance header."""
    lines = []
    for key, val in (extra_header or {}).items():
        lines.append(f"# {key}: {val}")
    lines.append("# columns: transition E_r_eV sigma0_Mb Gamma_meV q eta2 residual_Mb")
    transitions = transitions or [""] * len(fits)
    for name, f in zip(transitions, fits):
        lines.append(f"{name or '-'} {f.e_r:.6f} {f.sigma0:.6f} "
                     f"{f.gamma_mev:.6f} {f.q:.6f} {f.eta2:.6f} {f.residual:.3e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
