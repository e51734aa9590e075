"""Run configuration, orchestration and output writing.

Config files are INI-style ``key = value`` sections, strict about unknown
keys. Internals work in hartree/bohr; the config and all outputs use eV/Mb.
"""

import configparser
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .constants import HARTREE_EV
from .errors import ConfigurationError, NumericalError
from .fano import (find_peaks, fit_fano, unperturbed_difference,
                   write_resonance_table)
from .grid import build_grid
from .potentials import AbsorberSpec
from .response import (KernelOption, scan_spectrum, write_curve)
from .scf import ElectronConfiguration, SCFOptions, SpinOrbitalSet, run_scf

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCF = 3
EXIT_RESPONSE = 4

_KNOWN_KEYS = {
    "atom": {"z", "configuration"},
    "grid": {"points", "r_max", "map_param"},
    "scf": {"use_lyp", "mixing", "tol", "max_iterations"},
    "absorber": None,            # strength, start, override.<label>
    "kernel": {"variant", "fd_step"},
    "scan": {"omega_min", "omega_max", "step", "mode", "refine"},
    "shifts": None,              # <label> = eV
    "output": {"directory", "curve", "orbitals", "resonances"},
    "cache": {"directory", "enabled"},
    "run": {"threads"},
}


@dataclass
class RunConfig:
    nuclear_charge: int = 1
    configuration: str = ""                  # empty -> aufbau ground state
    grid_points: int = 400
    r_max: float = 150.0
    map_param: float | None = None           # default r_max / 10
    use_lyp: bool = False
    mixing: float = 0.4
    scf_tol: float = 1e-8
    max_iterations: int = 300
    absorber_strength: float = 0.5
    absorber_start: float | None = None      # default 0.6 r_max
    absorber_overrides: dict = field(default_factory=dict)
    kernel_variant: str = "hartree+alda-x"
    kernel_fd_step: float = 1e-4
    omega_min_ev: float = 1.0
    omega_max_ev: float = 50.0
    omega_step_ev: float = 0.05
    mode: str = "td"
    refine: bool = True
    shifts_ev: dict = field(default_factory=dict)
    output_dir: str = "."
    curve_file: str = "curve.dat"
    orbitals_file: str = "orbitals.dat"
    resonances_file: str = "resonances.dat"
    cache_dir: str = ".slhf-cache"
    cache_enabled: bool = True
    threads: int = 1

    def resolved_map_param(self):
        return self.r_max / 10.0 if self.map_param is None else self.map_param

    def electron_configuration(self):
        if self.configuration.strip():
            return ElectronConfiguration.from_label(self.nuclear_charge,
                                                    self.configuration)
        return ElectronConfiguration.ground_state(self.nuclear_charge)

    def scf_options(self):
        return SCFOptions(use_lyp=self.use_lyp, mixing=self.mixing, tol=self.scf_tol,
                          max_iterations=self.max_iterations)

    def absorber(self):
        return AbsorberSpec(strength=self.absorber_strength,
                            start=self.absorber_start,
                            overrides=dict(self.absorber_overrides))

    def kernel(self):
        return KernelOption(variant=self.kernel_variant, fd_step=self.kernel_fd_step)

    def shifts_hartree(self):
        return {label: ev / HARTREE_EV for label, ev in self.shifts_ev.items()}


def _parse_bool(text, errors, where):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    errors.append(f"{where}: expected a boolean, got {text!r}")
    return False


def _parse_num(cast, text, errors, where):
    try:
        return cast(text)
    except ValueError:
        errors.append(f"{where}: cannot parse {text!r}")
        return None


def parse_config(text):
    """Parse config text into a validated RunConfig; collect every violation."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    errors = []
    for section in cp.sections():
        if section not in _KNOWN_KEYS:
            errors.append(f"unknown section [{section}]")
            continue
        known = _KNOWN_KEYS[section]
        if known is None:
            continue
        for key in cp[section]:
            if key not in known:
                errors.append(f"unknown key {section}.{key}")

    cfg = RunConfig()
    get = lambda sec, key, default=None: (cp.get(sec, key) if cp.has_option(sec, key)
                                          else default)                    # noqa: E731

    if (v := get("atom", "z")) is not None:
        cfg.nuclear_charge = _parse_num(int, v, errors, "atom.z") or cfg.nuclear_charge
    if (v := get("atom", "configuration")) is not None:
        cfg.configuration = v.strip()
    if (v := get("grid", "points")) is not None:
        cfg.grid_points = _parse_num(int, v, errors, "grid.points") or cfg.grid_points
    if (v := get("grid", "r_max")) is not None:
        cfg.r_max = _parse_num(float, v, errors, "grid.r_max") or cfg.r_max
    if (v := get("grid", "map_param")) is not None:
        cfg.map_param = _parse_num(float, v, errors, "grid.map_param")
    if (v := get("scf", "use_lyp")) is not None:
        cfg.use_lyp = _parse_bool(v, errors, "scf.use_lyp")
    if (v := get("scf", "mixing")) is not None:
        cfg.mixing = _parse_num(float, v, errors, "scf.mixing") or cfg.mixing
    if (v := get("scf", "tol")) is not None:
        cfg.scf_tol = _parse_num(float, v, errors, "scf.tol") or cfg.scf_tol
    if (v := get("scf", "max_iterations")) is not None:
        cfg.max_iterations = _parse_num(int, v, errors, "scf.max_iterations") \
            or cfg.max_iterations
    if cp.has_section("absorber"):
        for key in cp["absorber"]:
            val = cp.get("absorber", key)
            if key == "strength":
                cfg.absorber_strength = _parse_num(float, val, errors,
                                                   "absorber.strength") or 0.0
            elif key == "start":
                cfg.absorber_start = _parse_num(float, val, errors, "absorber.start")
            elif key.startswith("override."):
                label = key.split(".", 1)[1]
                parts = [p.strip() for p in val.split(",")]
                if len(parts) != 2:
                    errors.append(f"absorber.{key}: expected 'strength, start'")
                else:
                    u0 = _parse_num(float, parts[0], errors, f"absorber.{key}")
                    ra = _parse_num(float, parts[1], errors, f"absorber.{key}")
                    if u0 is not None and ra is not None:
                        cfg.absorber_overrides[label] = (u0, ra)
            else:
                errors.append(f"unknown key absorber.{key}")
    if (v := get("kernel", "variant")) is not None:
        cfg.kernel_variant = v.strip()
    if (v := get("kernel", "fd_step")) is not None:
        cfg.kernel_fd_step = _parse_num(float, v, errors, "kernel.fd_step") \
            or cfg.kernel_fd_step
    if (v := get("scan", "omega_min")) is not None:
        cfg.omega_min_ev = _parse_num(float, v, errors, "scan.omega_min")
    if (v := get("scan", "omega_max")) is not None:
        cfg.omega_max_ev = _parse_num(float, v, errors, "scan.omega_max")
    if (v := get("scan", "step")) is not None:
        cfg.omega_step_ev = _parse_num(float, v, errors, "scan.step")
    if (v := get("scan", "mode")) is not None:
        cfg.mode = v.strip().lower()
    if (v := get("scan", "refine")) is not None:
        cfg.refine = _parse_bool(v, errors, "scan.refine")
    if cp.has_section("shifts"):
        for label in cp["shifts"]:
            val = _parse_num(float, cp.get("shifts", label), errors, f"shifts.{label}")
            if val is not None:
                cfg.shifts_ev[label] = val
    if (v := get("output", "directory")) is not None:
        cfg.output_dir = v.strip()
    if (v := get("output", "curve")) is not None:
        cfg.curve_file = v.strip()
    if (v := get("output", "orbitals")) is not None:
        cfg.orbitals_file = v.strip()
    if (v := get("output", "resonances")) is not None:
        cfg.resonances_file = v.strip()
    if (v := get("cache", "directory")) is not None:
        cfg.cache_dir = v.strip()
    if (v := get("cache", "enabled")) is not None:
        cfg.cache_enabled = _parse_bool(v, errors, "cache.enabled")
    if (v := get("run", "threads")) is not None:
        cfg.threads = _parse_num(int, v, errors, "run.threads") or cfg.threads

    errors.extend(validate(cfg))
    if errors:
        raise ConfigurationError("; ".join(errors))
    return cfg


def validate(cfg):
    errors = []
    if cfg.nuclear_charge < 1:
        errors.append("atom.z: must be >= 1")
    if cfg.grid_points < 16:
        errors.append("grid.points: must be >= 16")
    if cfg.r_max <= 0:
        errors.append("grid.r_max: must be positive")
    if cfg.map_param is not None and not (0 < cfg.map_param < cfg.r_max):
        errors.append("grid.map_param: must satisfy 0 < map_param < r_max")
    if cfg.omega_step_ev is None or cfg.omega_step_ev <= 0:
        errors.append("scan.step: must be positive")
    if cfg.omega_min_ev is None or cfg.omega_max_ev is None \
            or cfg.omega_max_ev < cfg.omega_min_ev:
        errors.append("scan.omega_max: must be >= scan.omega_min")
    if cfg.mode not in ("td", "ti"):
        errors.append("scan.mode: must be 'td' or 'ti'")
    if cfg.kernel_variant:
        try:
            KernelOption(variant=cfg.kernel_variant, fd_step=cfg.kernel_fd_step)
        except ConfigurationError as exc:
            errors.append(f"kernel.variant: {exc}")
    if cfg.threads < 1:
        errors.append("run.threads: must be >= 1")
    if cfg.absorber_strength <= 0:
        errors.append("absorber.strength: must be positive")
    if cfg.absorber_start is not None and not (0 <= cfg.absorber_start < cfg.r_max):
        errors.append("absorber.start: must lie in [0, r_max)")
    # referenced orbital labels must exist in the configuration
    try:
        config = cfg.electron_configuration()
        labels = {s.label.rstrip("0123456789.") for s in config.subshells}
        labels |= {s.label for s in config.subshells}
        for label in list(cfg.shifts_ev) + list(cfg.absorber_overrides):
            norm = label.replace("↑", "+").replace("↓", "-")
            if norm not in labels:
                errors.append(f"referenced orbital {label!r} not in configuration")
    except ConfigurationError as exc:
        errors.append(str(exc))
    return errors


def emit_config(cfg):
    """Render a RunConfig back to config text (round-trips through parse_config)."""
    cp = configparser.ConfigParser()
    cp["atom"] = {"z": str(cfg.nuclear_charge)}
    if cfg.configuration:
        cp["atom"]["configuration"] = cfg.configuration
    cp["grid"] = {"points": str(cfg.grid_points), "r_max": repr(cfg.r_max)}
    if cfg.map_param is not None:
        cp["grid"]["map_param"] = repr(cfg.map_param)
    cp["scf"] = {"use_lyp": str(cfg.use_lyp).lower(), "mixing": repr(cfg.mixing),
                 "tol": repr(cfg.scf_tol), "max_iterations": str(cfg.max_iterations)}
    cp["absorber"] = {"strength": repr(cfg.absorber_strength)}
    if cfg.absorber_start is not None:
        cp["absorber"]["start"] = repr(cfg.absorber_start)
    for label, (u0, ra) in cfg.absorber_overrides.items():
        cp["absorber"][f"override.{label}"] = f"{u0!r}, {ra!r}"
    cp["kernel"] = {"variant": cfg.kernel_variant, "fd_step": repr(cfg.kernel_fd_step)}
    cp["scan"] = {"omega_min": repr(cfg.omega_min_ev), "omega_max": repr(cfg.omega_max_ev),
                  "step": repr(cfg.omega_step_ev), "mode": cfg.mode,
                  "refine": str(cfg.refine).lower()}
    if cfg.shifts_ev:
        cp["shifts"] = {k: repr(v) for k, v in cfg.shifts_ev.items()}
    cp["output"] = {"directory": cfg.output_dir, "curve": cfg.curve_file,
                    "orbitals": cfg.orbitals_file, "resonances": cfg.resonances_file}
    cp["cache"] = {"directory": cfg.cache_dir,
                   "enabled": str(cfg.cache_enabled).lower()}
    cp["run"] = {"threads": str(cfg.threads)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# SCF caching
# ---------------------------------------------------------------------------

def cache_key(cfg):
    config = cfg.electron_configuration()
    material = dict(z=cfg.nuclear_charge, label=config.canonical_label(),
                    grid=[cfg.grid_points, cfg.r_max, cfg.resolved_map_param()],
                    options=list(cfg.scf_options().key()))
    blob = json.dumps(material, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def load_or_run_scf(cfg, use_cache=True):
    grid = build_grid(cfg.grid_points, cfg.r_max, cfg.resolved_map_param())
    path = None
    if use_cache and cfg.cache_enabled and cfg.cache_dir:
        os.makedirs(cfg.cache_dir, exist_ok=True)
        path = os.path.join(cfg.cache_dir, f"slhf-{cache_key(cfg)}.json")
        if os.path.exists(path):
            with open(path) as fh:
                data = json.load(fh)
            try:
                cached = SpinOrbitalSet.from_dict(data)
                if tuple(cached.grid_key) == grid.key():
                    return cached, grid, True
            except (ConfigurationError, KeyError):
                pass                    # stale or corrupt: recompute
    result = run_scf(cfg.electron_configuration(), grid, cfg.scf_options())
    if path is not None:
        with open(path, "w") as fh:
            json.dump(result.to_dict(), fh)
    return result, grid, False


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------

def _provenance(cfg, timestamp=None):
    return {
        "generator": f"slhf-response {__version__}",
        "timestamp": timestamp if timestamp is not None
        else time.strftime("%Y-%m-%dT%H:%M:%S"),
        "atom_z": cfg.nuclear_charge,
        "configuration": cfg.electron_configuration().canonical_label(),
        "grid": f"points={cfg.grid_points} r_max={cfg.r_max} "
                f"map_param={cfg.resolved_map_param()}",
        "scf": f"use_lyp={cfg.use_lyp} mixing={cfg.mixing} tol={cfg.scf_tol}",
        "kernel": cfg.kernel_variant,
        "absorber": f"strength={cfg.absorber_strength} "
                    f"start={cfg.absorber().resolved_start(cfg.r_max)} "
                    f"overrides={sorted(cfg.absorber_overrides.items())}",
        "shifts_ev": sorted(cfg.shifts_ev.items()),
    }


def write_orbital_report(orbital_set, path, header):
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines.append(f"# iterations: {orbital_set.iterations} "
                 f"residual: {orbital_set.residual:.3e}")
    lines.append("# columns: orbital occupancy energy_hartree energy_eV")
    for spin in ("down", "up"):
        for orb in orbital_set.occupied(spin):
            lines.append(f"{orb.label} {orb.occupancy:g} {orb.energy:.9f} "
                         f"{orb.energy * HARTREE_EV:.6f}")
    lines.append("# lowest unoccupied eigenpairs")
    for spin in ("down", "up"):
        for orb in sorted(orbital_set.virtual_orbitals.get(spin, ()),
                          key=lambda o: o.energy)[:8]:
            lines.append(f"{orb.label} 0 {orb.energy:.9f} "
                         f"{orb.energy * HARTREE_EV:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run(cfg, mode=None, use_cache=True, timestamp=None):
    """Execute one pipeline mode; returns a process exit code.

    Modes: ``scf`` | ``scan-ti`` | ``scan-td`` | ``fit`` | ``tables``.
    Artifacts land in cfg.output_dir with provenance headers.
    """
    mode = mode or ("scan-" + cfg.mode)
    os.makedirs(cfg.output_dir, exist_ok=True)
    header = _provenance(cfg, timestamp)
    try:
        orbital_set, grid, from_cache = load_or_run_scf(cfg, use_cache)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"SCF failed: {exc}")
        return EXIT_SCF
    header["scf_cache_hit"] = from_cache

    orb_path = os.path.join(cfg.output_dir, cfg.orbitals_file)
    write_orbital_report(orbital_set, orb_path, header)
    if mode == "scf":
        return EXIT_OK

    scan_mode = {"scan-ti": "ti", "scan-td": "td"}.get(mode, cfg.mode)
    omegas = np.arange(cfg.omega_min_ev, cfg.omega_max_ev + 1e-12, cfg.omega_step_ev)
    curve_path = os.path.join(cfg.output_dir, cfg.curve_file)
    try:
        curve = scan_spectrum(orbital_set, grid, omegas, mode=scan_mode,
                              kernel=cfg.kernel(), absorber=cfg.absorber(),
                              shifts=cfg.shifts_hartree(), threads=cfg.threads,
                              refine=cfg.refine, provenance=header)
    except Exception as exc:       # flush nothing useful; report response failure
        print(f"response solve failed: {exc}")
        return EXIT_RESPONSE
    write_curve(curve, curve_path)
    bad = [p for p in curve.points if not p.ok]
    if bad:
        print(f"{len(bad)} frequency points failed; partial curve written")
        return EXIT_RESPONSE
    if mode in ("scan-ti", "scan-td"):
        return EXIT_OK

    peaks = find_peaks(curve)
    res_path = os.path.join(cfg.output_dir, cfg.resonances_file)
    if mode == "fit":
        fits, names = [], []
        w = curve.omegas_ev
        s = curve.sigmas_mb
        for pk in peaks:
            sel = (w >= pk.window[0]) & (w <= pk.window[1])
            if sel.sum() < 6:
                continue
            fits.append(fit_fano(w[sel], s[sel]))
            names.append(f"peak@{pk.position:.3f}")
        write_resonance_table(fits, res_path, extra_header=header, transitions=names)
        return EXIT_OK
    if mode == "tables":
        lines = [f"# {k}: {v}" for k, v in header.items()]
        lines.append("# columns: peak_eV height_Mb assignment unperturbed_eV shift_eV")
        assignments = _assign_peaks(orbital_set, peaks)
        for pk, assign in zip(peaks, assignments):
            if assign is None:
                lines.append(f"{pk.position:.4f} {pk.height:.4f} - - -")
            else:
                name, de = assign
                lines.append(f"{pk.position:.4f} {pk.height:.4f} {name} "
                             f"{de:.4f} {pk.position - de:+.4f}")
        with open(res_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return EXIT_OK
    print(f"unknown mode {mode!r}")
    return EXIT_CONFIG


def _assign_peaks(orbital_set, peaks, window_ev=1.5):
    """Label peaks with the closest dipole-allowed orbital-energy difference."""
    candidates = []
    for spin in ("up", "down"):
        for occ in orbital_set.occupied(spin):
            for virt in orbital_set.all_orbitals(spin):
                if virt.energy <= occ.energy or abs(virt.l - occ.l) != 1:
                    continue
                if virt.occupancy >= 2 * virt.l + 1:
                    continue
                de = (virt.energy - occ.energy) * HARTREE_EV
                candidates.append((de, f"{occ.label}->{virt.label}"))
    out = []
    for pk in peaks:
        best = None
        for de, name in candidates:
            dist = abs(de - pk.position)
            if dist < window_ev and (best is None or dist < abs(best[1] - pk.position)):
                best = (name, de)
        out.append(best)
    return out
