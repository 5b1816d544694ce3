"""Device, material and timing parameters of the simulated qubit array.

Profiles are read from a TOML document with typed sections.  Numeric keys
carry an explicit unit suffix (``_GHz``, ``_ns``, ``_ueV`` ...) and are
converted to SI on load; the in-memory profile is SI throughout.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np
import tomli_w
from scipy import constants as const

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

H = const.h
HBAR = const.hbar
E_CHARGE = const.e

ROLE_CODES = {"o": "monitor", "d": "data", "m": "measure"}
ROLE_CHARS = {v: k for k, v in ROLE_CODES.items()}


class ConfigError(ValueError):
    """Raised for schema or invariant violations in a device profile."""


# ---------------------------------------------------------------------------
# unit handling

_UNITS = {
    "GHz": ("frequency", 1e9),
    "MHz": ("frequency", 1e6),
    "kHz": ("frequency", 1e3),
    "Hz": ("frequency", 1.0),
    "ns": ("time", 1e-9),
    "us": ("time", 1e-6),
    "ms": ("time", 1e-3),
    "s": ("time", 1.0),
    "ueV": ("energy", 1e-6 * const.e),
    "meV": ("energy", 1e-3 * const.e),
    "GHzh": ("energy", 1e9 * const.h),
    "J": ("energy", 1.0),
    "nm": ("length", 1e-9),
    "um": ("length", 1e-6),
    "mm": ("length", 1e-3),
    "m": ("length", 1.0),
    "per_s": ("rate", 1.0),
    "per_ms": ("rate", 1e3),
    "per_us": ("rate", 1e6),
    "per_ns": ("rate", 1e9),
    "m_per_s": ("speed", 1.0),
    "kg_per_m3": ("density", 1.0),
    "kg_m_per_s": ("momentum", 1.0),
}


def split_unit(key: str) -> tuple[str, str | None]:
    """Split ``name_UNIT`` into ``(name, UNIT)``; longest suffix wins."""
    best = None
    for unit in _UNITS:
        suffix = "_" + unit
        if key.endswith(suffix) and (best is None or len(unit) > len(best)):
            best = unit
    if best is None:
        return key, None
    return key[: -len(best) - 1], best


def to_si(value, unit: str):
    scale = _UNITS[unit][1]
    if isinstance(value, list):
        return [to_si(v, unit) for v in value]
    return float(value) * scale


def from_si(value, unit: str):
    scale = _UNITS[unit][1]
    if isinstance(value, (list, tuple)):
        return [from_si(v, unit) for v in value]
    x = float(value)
    # prefer a short decimal, but only if it converts back to x bit-exactly
    for digits in (12, 15, 17):
        v = float(f"{x / scale:.{digits}g}")
        if v * scale == x:
            return v
    v = x / scale
    for direction in (np.inf, -np.inf):
        w = v
        for _ in range(4):
            w = float(np.nextafter(w, direction))
            if w * scale == x:
                return w
    return v


def _clean_float(x: float) -> float:
    return x


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class QubitParams:
    """Per-qubit parameters.  Energies in J, frequencies in Hz."""

    f_q: float
    delta_L: float
    delta_H: float
    flux: float = 0.0
    f_q_zero_flux: float | None = None

    def __post_init__(self):
        if self.f_q_zero_flux is None:
            c = abs(math.cos(math.pi * self.flux))
            object.__setattr__(self, "f_q_zero_flux", self.f_q / math.sqrt(c) if c > 0 else math.inf)

    @property
    def d_delta(self) -> float:
        return self.delta_H - self.delta_L

    @property
    def delta(self) -> float:
        """Mean gap (Delta_L + Delta_H)/2."""
        return 0.5 * (self.delta_L + self.delta_H)

    def check(self, index: int | None = None) -> None:
        where = f"qubit {index}: " if index is not None else ""
        if not (self.delta_H > self.delta_L > 0):
            raise ConfigError(f"{where}requires delta_H > delta_L > 0")
        if not self.d_delta > H * self.f_q:
            raise ConfigError(f"{where}gap difference must exceed h*f_q (d_delta/h = "
                              f"{self.d_delta / H / 1e9:.3f} GHz, f_q = {self.f_q / 1e9:.3f} GHz)")
        if self.f_q <= 0:
            raise ConfigError(f"{where}f_q must be positive")


@dataclass(frozen=True)
class MaterialParams:
    """Film constants entering the dirty-limit electron-phonon rate (SI)."""

    p_F: float = 1.8e-24
    u_t: float = 3.1e3
    rho_m: float = 2.7e3
    v_F: float = 2.0e6
    mean_free_path: float = 45e-9
    c_N: float = 1.0

    @property
    def diffusion(self) -> float:
        return self.v_F * self.mean_free_path / 3.0

    def check(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"material.{f.name} must be strictly positive")


@dataclass(frozen=True)
class TimingParams:
    """Gate and sequence durations (s)."""

    t_1q: float = 25e-9
    t_readout: float = 600e-9
    t_reset: float = 160e-9
    t_cz: float = 37e-9
    t_inter_hadamard: float = 74e-9
    qec_cycle: float = 944e-9
    t_dqlr: float = 60e-9
    assignment_fidelity: float = 0.99

    def check(self) -> None:
        for f in fields(self):
            if f.name == "assignment_fidelity":
                continue
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"timing.{f.name} must be positive")
        if not 0.5 < self.assignment_fidelity <= 1.0:
            raise ConfigError("timing.assignment_fidelity must lie in (0.5, 1]")
        if self.t_inter_hadamard < 2 * self.t_cz - 1e-15:
            raise ConfigError("timing: t_inter_hadamard must be >= 2 * t_cz")


@dataclass(frozen=True)
class GridLayout:
    rows: int
    cols: int
    pitch: float
    active_mask: tuple[tuple[bool, ...], ...]
    role_map: tuple[tuple[str | None, ...], ...]

    @classmethod
    def from_layout(cls, layout: Sequence[str], pitch: float) -> "GridLayout":
        rows = len(layout)
        cols = len(layout[0]) if rows else 0
        mask, roles = [], []
        for r, line in enumerate(layout):
            if len(line) != cols:
                raise ConfigError(f"grid.layout row {r} has {len(line)} sites, expected {cols}")
            mrow, rrow = [], []
            for c, ch in enumerate(line):
                if ch == ".":
                    mrow.append(False)
                    rrow.append(None)
                elif ch in ROLE_CODES:
                    mrow.append(True)
                    rrow.append(ROLE_CODES[ch])
                else:
                    raise ConfigError(f"grid.layout site ({r}, {c}) has unknown code {ch!r}")
            mask.append(tuple(mrow))
            roles.append(tuple(rrow))
        return cls(rows, cols, pitch, tuple(mask), tuple(roles))

    def layout_strings(self) -> list[str]:
        out = []
        for r in range(self.rows):
            out.append("".join(ROLE_CHARS[self.role_map[r][c]] if self.active_mask[r][c] else "."
                               for c in range(self.cols)))
        return out

    @property
    def active_sites(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols) if self.active_mask[r][c]]

    @property
    def n_active(self) -> int:
        return len(self.active_sites)

    def positions(self) -> np.ndarray:
        """(n_active, 2) coordinates of active qubits in metres."""
        return np.array(self.active_sites, dtype=float).reshape(-1, 2) * self.pitch

    def roles(self) -> list[str]:
        return [self.role_map[r][c] for r, c in self.active_sites]

    def indices_with_role(self, role: str) -> list[int]:
        return [i for i, rl in enumerate(self.roles()) if rl == role]

    def chain(self) -> list[int]:
        """Active indices of the repetition-code chain, ordered along the line.

        Chain sites (data/measure) must form a single row or column segment
        alternating data and measure, starting and ending on data.
        """
        idx = [i for i, rl in enumerate(self.roles()) if rl in ("data", "measure")]
        if not idx:
            return []
        sites = [self.active_sites[i] for i in idx]
        rows = {s[0] for s in sites}
        cols = {s[1] for s in sites}
        if len(rows) == 1:
            order = sorted(range(len(idx)), key=lambda k: sites[k][1])
            steps = np.diff([sites[k][1] for k in order])
        elif len(cols) == 1:
            order = sorted(range(len(idx)), key=lambda k: sites[k][0])
            steps = np.diff([sites[k][0] for k in order])
        else:
            raise ConfigError("grid: data/measure sites must lie on one row or column")
        if np.any(steps != 1):
            raise ConfigError("grid: data/measure chain must be contiguous")
        ordered = [idx[k] for k in order]
        rl = [self.roles()[i] for i in ordered]
        for k, role in enumerate(rl):
            if role != ("data" if k % 2 == 0 else "measure"):
                raise ConfigError("grid: chain must alternate data/measure and end on data")
        if rl[-1] != "data":
            raise ConfigError("grid: chain must end on a data qubit")
        return ordered

    def check(self) -> None:
        if self.rows <= 0 or self.cols <= 0:
            raise ConfigError("grid: rows and cols must be positive")
        if not self.pitch > 0:
            raise ConfigError("grid: pitch must be positive")
        for r in range(self.rows):
            for c in range(self.cols):
                if self.active_mask[r][c] != (self.role_map[r][c] is not None):
                    raise ConfigError(f"grid: site ({r}, {c}) role does not match active mask")
        self.chain()


@dataclass(frozen=True)
class NoiseParams:
    """Background error floors and fluctuation episodes.

    Floors are per-shot error probabilities before readout assignment error
    is composed on top.  Episodes are telegraph-like frequency excursions of
    a single qubit, or with probability ``episode_pair_fraction`` of a qubit
    and one lattice neighbour; they set the false-positive behaviour of the
    detector.
    """

    floor_R: float = 0.0374
    floor_E: float = 0.0238
    floor_T1: float = 0.0221
    floor_P1: float = 0.0034
    floor_RX: float = 0.0
    episode_rate: float = 0.04      # per qubit, 1/s
    episode_duration: float = 3e-3  # mean, s
    episode_shift: float = 1.0e6    # rms of the frequency excursion, Hz
    episode_pair_fraction: float = 0.1

    def check(self) -> None:
        for name in ("floor_R", "floor_E", "floor_T1", "floor_P1", "floor_RX"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.5:
                raise ConfigError(f"noise.{name} must lie in [0, 0.5)")
        if self.episode_rate < 0 or self.episode_duration <= 0 or self.episode_shift < 0:
            raise ConfigError("noise: episode parameters must be non-negative")
        if not 0.0 <= self.episode_pair_fraction <= 1.0:
            raise ConfigError("noise.episode_pair_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ImpactParams:
    """Generator defaults for radiation impacts."""

    rate: float = 1.0 / 71.0
    median_peak_shift: float = 2.0e6
    peak_shift_law: str = "power"    # "power" (bounded below) or "lognormal"
    peak_shift_exponent: float = 2.0  # tail exponent of the power law
    peak_shift_sigma_ln: float = 0.59
    spatial_scale: float = 1.15e-3
    recombination_rate: float = 1.0 / 88e-9
    t_T1_median: float = 35e-6
    t_T1_sigma_ln: float = 0.35
    t1_rate_peak: float = 4.0e6      # relaxation rate at the epicenter at t0, 1/s
    t1_reference_x: float = 3.0e-4   # density at which t1_rate_peak applies
    p1_rate_peak: float = 1.0e6
    e_rate_peak: float = 2.0e6       # non-echoable dephasing rate at t0, 1/s

    def check(self) -> None:
        if self.peak_shift_law not in ("power", "lognormal"):
            raise ConfigError("impacts.peak_shift_law must be 'power' or 'lognormal'")
        for f in fields(self):
            if f.name != "peak_shift_law" and not getattr(self, f.name) > 0:
                raise ConfigError(f"impacts.{f.name} must be positive")


@dataclass(frozen=True)
class DeviceProfile:
    qubits: tuple[QubitParams, ...]
    material: MaterialParams
    timing: TimingParams
    grid: GridLayout
    noise: NoiseParams = field(default_factory=NoiseParams)
    impacts: ImpactParams = field(default_factory=ImpactParams)
    all_f_q: tuple[float, ...] = ()  # per lattice site, row-major (kept for round trip)

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    @property
    def f_q(self) -> np.ndarray:
        return np.array([q.f_q for q in self.qubits])

    def profile_hash(self) -> str:
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()[:16]

    def with_grid(self, grid: GridLayout) -> "DeviceProfile":
        return _build_profile(self.all_f_q, self.qubits[0], grid, self.material, self.timing,
                              self.noise, self.impacts)


# ---------------------------------------------------------------------------
# loading / saving


def schema() -> dict:
    text = resources.files("qpburst.data").joinpath("profile_schema.json").read_text()
    return json.loads(text)


def _convert_section(section: Mapping[str, Any], name: str) -> dict:
    out = {}
    for key, value in section.items():
        base, unit = split_unit(key)
        if base in out:
            raise ConfigError(f"{name}.{base} given twice")
        out[base] = to_si(value, unit) if unit is not None else value
    return out


def _build_profile(all_f_q, q0: QubitParams, grid: GridLayout, material, timing, noise, impacts):
    qubits = []
    for r, c in grid.active_sites:
        qubits.append(QubitParams(f_q=all_f_q[r * grid.cols + c], delta_L=q0.delta_L,
                                  delta_H=q0.delta_H, flux=q0.flux))
    prof = DeviceProfile(tuple(qubits), material, timing, grid, noise, impacts, tuple(all_f_q))
    validate_profile(prof)
    return prof


def validate_profile(prof: DeviceProfile) -> None:
    prof.material.check()
    prof.timing.check()
    prof.grid.check()
    prof.noise.check()
    prof.impacts.check()
    for i, q in enumerate(prof.qubits):
        q.check(i)


def profile_from_dict(doc: Mapping[str, Any]) -> DeviceProfile:
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {path}: {exc.message}") from None
    dev = _convert_section(doc["device"], "device")
    for key in ("delta_L", "delta_H", "f_q"):
        if key not in dev:
            raise ConfigError(f"schema violation at device: missing {key}_<unit>")
    mat = _convert_section(doc.get("material", {}), "material")
    tim = _convert_section(doc.get("timing", {}), "timing")
    grd = _convert_section(doc["grid"], "grid")
    noi = _convert_section(doc.get("noise", {}), "noise")
    imp = _convert_section(doc.get("impacts", {}), "impacts")

    grid = GridLayout.from_layout(grd["layout"], grd["pitch"])
    n_sites = grid.rows * grid.cols
    fq = dev["f_q"]
    if isinstance(fq, list):
        flat = [v for row in fq for v in (row if isinstance(row, list) else [row])]
        if len(flat) != n_sites:
            raise ConfigError(f"device.f_q has {len(flat)} entries, grid has {n_sites} sites")
    else:
        flat = [fq] * n_sites
    q0 = QubitParams(f_q=flat[0], delta_L=dev["delta_L"], delta_H=dev["delta_H"],
                     flux=float(dev.get("flux", 0.0)))
    return _build_profile(tuple(float(v) for v in flat), q0, grid, MaterialParams(**mat),
                          TimingParams(**tim), NoiseParams(**noi), ImpactParams(**imp))


def loads_config(text: str) -> DeviceProfile:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"profile is not valid TOML: {exc}") from None
    return profile_from_dict(doc)


def load_config(path: str | Path) -> DeviceProfile:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"profile file not found: {path}")
    return loads_config(path.read_text())


def default_profile_text() -> str:
    return resources.files("qpburst.data").joinpath("default_profile.toml").read_text()


def default_profile() -> DeviceProfile:
    return loads_config(default_profile_text())


# canonical units used when writing a profile back out
_OUT_UNITS = {
    "device": {"delta_L": "GHzh", "delta_H": "GHzh", "f_q": "GHz"},
    "material": {"p_F": "kg_m_per_s", "u_t": "m_per_s", "rho_m": "kg_per_m3", "v_F": "m_per_s",
                 "mean_free_path": "nm"},
    "timing": {k: "ns" for k in ("t_1q", "t_readout", "t_reset", "t_cz", "t_inter_hadamard",
                                 "qec_cycle", "t_dqlr")},
    "grid": {"pitch": "mm"},
    "noise": {"episode_rate": "per_s", "episode_duration": "ms", "episode_shift": "kHz"},
    "impacts": {"rate": "per_s", "median_peak_shift": "MHz", "spatial_scale": "mm",
                "recombination_rate": "per_s", "t_T1_median": "us", "t1_rate_peak": "per_s",
                "p1_rate_peak": "per_s", "e_rate_peak": "per_s"},
}


def _section_out(obj, name: str, skip=()) -> dict:
    out = {}
    units = _OUT_UNITS.get(name, {})
    for f in fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        if f.name in units:
            out[f"{f.name}_{units[f.name]}"] = from_si(v, units[f.name])
        else:
            out[f.name] = _clean_float(v) if isinstance(v, float) else v
    return out


def profile_to_dict(prof: DeviceProfile) -> dict:
    g = prof.grid
    q0 = prof.qubits[0]
    fq = [from_si(list(prof.all_f_q[r * g.cols:(r + 1) * g.cols]), "GHz") for r in range(g.rows)]
    return {
        "device": {"delta_L_GHzh": from_si(q0.delta_L, "GHzh"),
                   "delta_H_GHzh": from_si(q0.delta_H, "GHzh"),
                   "flux": _clean_float(q0.flux), "f_q_GHz": fq},
        "material": _section_out(prof.material, "material"),
        "timing": _section_out(prof.timing, "timing"),
        "grid": {"pitch_mm": from_si(g.pitch, "mm"), "layout": g.layout_strings()},
        "noise": _section_out(prof.noise, "noise"),
        "impacts": _section_out(prof.impacts, "impacts"),
    }


def serialize_config(prof: DeviceProfile) -> str:
    return tomli_w.dumps(profile_to_dict(prof))


def save_config(prof: DeviceProfile, path: str | Path) -> None:
    Path(path).write_text(serialize_config(prof))


def mask_site(prof: DeviceProfile, row: int, col: int) -> DeviceProfile:
    """Return a copy of ``prof`` with one lattice site switched off."""
    g = prof.grid
    mask = [list(r) for r in g.active_mask]
    roles = [list(r) for r in g.role_map]
    mask[row][col] = False
    roles[row][col] = None
    grid = replace(g, active_mask=tuple(map(tuple, mask)), role_map=tuple(map(tuple, roles)))
    return prof.with_grid(grid)


# ---------------------------------------------------------------------------
# phonon emission in the normal state


def phonon_kernel_constant(mp: MaterialParams) -> float:
    """K such that the dirty-limit emission kernel is K*|E|^3, in 1/(J^4 s)."""
    return (mp.c_N / (5 * math.pi**2)) * mp.diffusion * mp.p_F**2 / (mp.rho_m * mp.u_t**5 * HBAR**5)


def normal_phonon_time(mp: MaterialParams, energy: float) -> float:
    """Normal-state phonon emission time at electron energy ``energy`` (J)."""
    if not energy > 0:
        raise ValueError("energy must be positive")
    return 1.0 / (phonon_kernel_constant(mp) * energy**4 / 4.0)


def gap_energy(freq_hz: float) -> float:
    """Energy h*f for a gap quoted as a frequency."""
    return H * freq_hz
