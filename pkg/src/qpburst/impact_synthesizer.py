"""Synthetic per-qubit measurement records with injected radiation impacts.

An impact raises the QP density around an epicenter, x(d) = x0 exp(-d/l),
which then decays by recombination.  The density shifts each qubit's
frequency; for a short hot window after the impact it also drives
relaxation, excitation and non-echoable dephasing.  Measurement sequences
(Ramsey, echo, T1, P1, tomography Ramsey pairs, code measurements) turn the
per-qubit state into error probabilities, and outcomes are drawn from
counter-based random streams so that any block of any record can be
regenerated independently.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize

from .device_model import DeviceProfile, ImpactParams, NoiseParams, TimingParams
from .junction_response import shift_coefficients
from .qp_spectral import duration_ratio_formula

KINDS = ("R", "E", "T1", "P1", "RX", "RY", "M")
EXPERIMENTS = ("scan_RET1", "tomography", "fast_T1", "excitation_P1", "interleaved_monitor")
_MAGIC = b"QPBGRID1"
BLOCK = 1 << 16


def _xor(p, q):
    """Probability that exactly one of two independent flips occurs."""
    return p + q - 2 * p * q


def _rng(*key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


# ---------------------------------------------------------------------------
# sequences and outcome model


@dataclass(frozen=True)
class SequenceSpec:
    kind: str
    free_time: float = 0.0
    wait: float = 0.0
    period: float | None = None
    expected_outcome: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if self.expected_outcome is None:
            object.__setattr__(self, "expected_outcome", 0 if self.kind in ("P1", "M") else 1)

    def duration(self, tm: TimingParams) -> float:
        k = self.kind
        tail = tm.t_readout + tm.t_reset
        if k in ("R", "RX", "RY"):
            return 2 * tm.t_1q + self.free_time + tail
        if k == "E":
            return 3 * tm.t_1q + self.free_time + tail
        if k == "T1":
            return tm.t_1q + self.wait + tail
        if k == "P1":
            return self.wait + tail
        return tail


@dataclass
class OutcomeState:
    delta_f: np.ndarray | float = 0.0
    gamma_10: np.ndarray | float = 0.0
    gamma_01: np.ndarray | float = 0.0
    gamma_phi: np.ndarray | float = 0.0
    background: float = 0.0
    readout_error: float = 0.0


def outcome_probability(seq: SequenceSpec, state: OutcomeState):
    """Error probability of one shot (for RY: probability of outcome 1).

    Ramsey-type: (1 - C cos phi)/2 with phi = 2 pi delta_f tau and C the
    contrast left by non-echoable dephasing; echo: the quasi-static phase
    cancels.  T1/P1: 1 - exp(-Gamma * wait).  Background and readout errors
    are composed as independent flips.
    """
    k = seq.kind
    df = np.asarray(state.delta_f, dtype=float)
    g10 = np.asarray(state.gamma_10, dtype=float)
    g01 = np.asarray(state.gamma_01, dtype=float)
    gphi = np.asarray(state.gamma_phi, dtype=float)
    bg, ro = state.background, state.readout_error
    if k in ("R", "RX", "RY", "E"):
        tau = seq.free_time
        contrast = np.exp(-gphi * tau)
        decay = 0.5 * (1 - np.exp(-g10 * tau))
        if k == "E":
            p = 0.5 * (1 - contrast)
        elif k == "RY":
            c = contrast * (1 - 2 * decay) * (1 - 2 * bg) * (1 - 2 * ro)
            return 0.5 * (1 - c * np.sin(2 * np.pi * df * tau))
        else:
            p = 0.5 * (1 - contrast * np.cos(2 * np.pi * df * tau))
        p = _xor(p, decay)
    elif k == "T1":
        p = 1 - np.exp(-g10 * seq.wait)
    elif k == "P1":
        p = 1 - np.exp(-g01 * seq.wait)
    else:
        p = np.zeros(np.broadcast(df, g10).shape)
    return _xor(_xor(p, bg), ro)


def tomography_estimate(rx_outcomes, ry_outcomes, tau: float, window: int = 10) -> float:
    """Frequency deviation from Ramsey pairs: atan2(1 - 2<RY>, 1 - 2<RX>) / (2 pi tau)."""
    rx = np.asarray(rx_outcomes, dtype=float)
    ry = np.asarray(ry_outcomes, dtype=float)
    if rx.size < window or ry.size < window:
        raise ValueError(f"need at least {window} outcomes of each kind")
    c = 1 - 2 * rx.mean()
    s = 1 - 2 * ry.mean()
    return math.atan2(s, c) / (2 * math.pi * tau)


def tomography_windows(rx, ry, window: int = 10):
    """Per-window (cos, sin) estimates along the last axis of outcome arrays."""
    rx = np.asarray(rx, dtype=float)
    ry = np.asarray(ry, dtype=float)
    n = rx.shape[-1] // window
    if n == 0:
        raise ValueError(f"need at least {window} outcomes")
    shp = rx.shape[:-1] + (n, window)
    c = 1 - 2 * rx[..., : n * window].reshape(shp).mean(-1)
    s = 1 - 2 * ry[..., : n * window].reshape(shp).mean(-1)
    return c, s


# ---------------------------------------------------------------------------
# impacts and episodes


@dataclass
class ImpactEvent:
    t0: float
    epicenter: tuple          # (x, y) in metres, same frame as GridLayout.positions
    peak_x_qp: float
    spatial_scale: float
    hot_fraction_timescales: tuple = (35e-6 / 22.6, 35e-6)   # (t_P1_end, t_T1_end)
    recombination_rate: float = 1 / 88e-9

    def __post_init__(self):
        if not self.peak_x_qp > 0:
            raise ValueError("peak_x_qp must be positive")
        tp, tt = self.hot_fraction_timescales
        if not 0 < tp < tt:
            raise ValueError("hot window requires 0 < t_P1_end < t_T1_end")

    def to_dict(self):
        d = asdict(self)
        d["epicenter"] = list(self.epicenter)
        d["hot_fraction_timescales"] = list(self.hot_fraction_timescales)
        return d


@dataclass
class Episode:
    """Single-qubit quasi-static frequency excursion (telegraph-like)."""

    qubit: int
    t_start: float
    duration: float
    shift: float


def _shift_coefficients(profile: DeviceProfile) -> np.ndarray:
    return np.array([shift_coefficients(q)[0] for q in profile.qubits])


def _unit_median_variate(ip: ImpactParams, u):
    """Peak-shift law with unit median, as a function of uniform u in (0, 1)."""
    if ip.peak_shift_law == "lognormal":
        from scipy.stats import norm
        return np.exp(ip.peak_shift_sigma_ln * norm.ppf(u))
    # Pareto tail, P(v > s) = s**-k / 2 for s >= 2**(-1/k)
    return (2.0 * (1.0 - u)) ** (-1.0 / ip.peak_shift_exponent)


@lru_cache(maxsize=32)
def _epicenter_correction(pitch: float, ip: ImpactParams) -> float:
    """Factor c with median(c v exp(-d/scale)) = 1 for v the unit-median peak-shift
    variate and d the distance from a uniform point of a pitch x pitch cell to its centre."""
    u = (np.arange(64) + 0.5) / 64 - 0.5
    d = np.hypot(*np.meshgrid(u, u)).ravel() * pitch / ip.spatial_scale
    v = _unit_median_variate(ip, (np.arange(256) + 0.5) / 256)
    return float(1.0 / np.median(v[:, None] * np.exp(-d[None, :])))


def sample_impacts(rate: float, duration: float, size_distribution: ImpactParams | None = None,
                   rng_seed: int = 0, profile: DeviceProfile | None = None) -> list:
    """Poisson impacts with random epicenters and long-tailed peak shifts.

    The default peak-shift law is a power law bounded below; a lognormal law is
    kept as an option. The median refers to the largest per-qubit shift of the event;
    the epicentral density is scaled up by the mean attenuation between a
    random point of a lattice cell and its qubit.
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    from .device_model import default_profile
    prof = profile or default_profile()
    ip = size_distribution or prof.impacts
    rng = _rng(rng_seed, 1)
    n = rng.poisson(rate * duration) if duration > 0 else 0
    if n == 0:
        return []
    t0 = np.sort(rng.uniform(0.0, duration, n))
    sites = prof.grid.positions()
    pick = rng.integers(0, len(sites), n)
    jitter = rng.uniform(-0.5, 0.5, (n, 2)) * prof.grid.pitch
    epi = sites[pick] + jitter
    corr = _epicenter_correction(prof.grid.pitch, ip)
    peak_shift = ip.median_peak_shift * corr * _unit_median_variate(ip, rng.random(n))
    coef = _shift_coefficients(prof)
    a_f = coef[pick] * prof.f_q[pick]
    x0 = peak_shift / a_f
    t_t1 = ip.t_T1_median * np.exp(ip.t_T1_sigma_ln * rng.standard_normal(n))
    q0 = prof.qubits[0]
    ratio = duration_ratio_formula(q0.d_delta, float(np.median(prof.f_q)))
    return [ImpactEvent(float(t0[i]), (float(epi[i, 0]), float(epi[i, 1])), float(x0[i]),
                        ip.spatial_scale, (float(t_t1[i] / ratio), float(t_t1[i])),
                        ip.recombination_rate) for i in range(n)]


def lattice_neighbours(grid) -> list:
    pos = grid.positions()
    d = np.hypot(pos[:, None, 0] - pos[None, :, 0], pos[:, None, 1] - pos[None, :, 1])
    return [np.nonzero((d[i] > 0) & (d[i] < 1.01 * grid.pitch))[0].tolist() for i in range(len(pos))]


def sample_episodes(noise: NoiseParams, n_qubits: int, duration: float, seed: int = 0,
                    neighbours: list | None = None) -> list:
    """Frequency excursions; a fraction of them also hits one random neighbour
    (same start and duration, independent shift)."""
    rng = _rng(seed, 2)
    out = []
    if noise.episode_rate <= 0 or duration <= 0:
        return out
    for q in range(n_qubits):
        k = rng.poisson(noise.episode_rate * duration)
        ts = np.sort(rng.uniform(0, duration, k))
        ds = rng.exponential(noise.episode_duration, k)
        sh = noise.episode_shift * rng.standard_normal((k, 2))
        pair = rng.random(k) < noise.episode_pair_fraction
        pick = rng.random(k)
        for i in range(k):
            out.append(Episode(q, float(ts[i]), float(ds[i]), float(sh[i, 0])))
            nb = neighbours[q] if neighbours is not None else []
            if pair[i] and nb:
                out.append(Episode(int(nb[int(pick[i] * len(nb))]), float(ts[i]), float(ds[i]),
                                   float(sh[i, 1])))
    out.sort(key=lambda e: (e.t_start, e.qubit))
    return out


def density_field(event: ImpactEvent, qubit_pos, t, r: float | None = None):
    """QP density at ``qubit_pos`` (metres) and time(s) ``t`` >= t0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < event.t0):
        raise ValueError("t must not precede the impact")
    pos = np.asarray(qubit_pos, dtype=float)
    d = np.hypot(pos[..., 0] - event.epicenter[0], pos[..., 1] - event.epicenter[1])
    x0 = event.peak_x_qp * np.exp(-d / event.spatial_scale)
    rate = event.recombination_rate if r is None else r
    return x0 / (1.0 + rate * x0 * (t - event.t0))


class QubitStateModel:
    """Per-qubit frequency shift and hot-QP rates from a list of impacts and episodes."""

    def __init__(self, profile: DeviceProfile, events=(), episodes=()):
        self.profile = profile
        self.events = list(events)
        self.episodes = list(episodes)
        self.pos = profile.grid.positions()
        self.af = _shift_coefficients(profile) * profile.f_q
        ip = profile.impacts
        self.ip = ip
        self._x0 = []
        for ev in self.events:
            d = np.hypot(self.pos[:, 0] - ev.epicenter[0], self.pos[:, 1] - ev.epicenter[1])
            self._x0.append(ev.peak_x_qp * np.exp(-d / ev.spatial_scale))

    def horizon(self, ev: ImpactEvent, min_shift: float = 2e3) -> float:
        """Time after t0 beyond which every qubit's shift is below ``min_shift``."""
        x_min = min_shift / float(np.max(self.af))
        return max(10 * ev.hot_fraction_timescales[1], 1.0 / (ev.recombination_rate * x_min))

    def _per_event(self, times, fn, qubits=None):
        times = np.asarray(times, dtype=float)
        sel = slice(None) if qubits is None else np.atleast_1d(qubits)
        nq = len(self.pos) if qubits is None else len(sel)
        out = np.zeros((nq, times.size))
        for ev, x0 in zip(self.events, self._x0):
            lo = np.searchsorted(times, ev.t0)
            if lo >= times.size:
                continue
            hi = np.searchsorted(times, ev.t0 + self.horizon(ev), side="right")
            if hi <= lo:
                continue
            dt = times[lo:hi] - ev.t0
            out[:, lo:hi] += fn(ev, x0[sel][:, None], dt[None, :])
        return out

    def density(self, times, qubits=None):
        return self._per_event(times, lambda ev, x0, dt: x0 / (1 + ev.recombination_rate * x0 * dt),
                               qubits)

    def shifts(self, times, qubits=None):
        times = np.asarray(times, dtype=float)
        qs = np.arange(len(self.pos)) if qubits is None else np.atleast_1d(qubits)
        out = -self.af[qs][:, None] * self.density(times, qs)
        row = {int(q): i for i, q in enumerate(qs)}
        for e in self.episodes:
            if e.qubit not in row:
                continue
            lo = np.searchsorted(times, e.t_start)
            hi = np.searchsorted(times, e.t_start + e.duration)
            out[row[e.qubit], lo:hi] += e.shift
        return out

    def _hot(self, times, peak, which, qubits):
        ip = self.ip
        return self._per_event(times, lambda ev, x0, dt: peak * (x0 / ip.t1_reference_x)
                               * np.exp(-dt / ev.hot_fraction_timescales[which]), qubits)

    def gamma_10(self, times, qubits=None):
        return self._hot(times, self.ip.t1_rate_peak, 1, qubits)

    def gamma_01(self, times, qubits=None):
        return self._hot(times, self.ip.p1_rate_peak, 0, qubits)

    def gamma_phi(self, times, qubits=None):
        return self._hot(times, self.ip.e_rate_peak, 1, qubits)

    def outcome_state(self, times, qubits=None, background=0.0, readout_error=0.0) -> OutcomeState:
        return OutcomeState(self.shifts(times, qubits), self.gamma_10(times, qubits),
                            self.gamma_01(times, qubits), self.gamma_phi(times, qubits),
                            background, readout_error)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class Slot:
    seq: SequenceSpec
    offset: float                     # sample time within the cycle
    qubits: np.ndarray | None = None  # None: all qubits


def _background(noise: NoiseParams, kind: str) -> float:
    return {"R": noise.floor_R, "E": noise.floor_E, "T1": noise.floor_T1, "P1": noise.floor_P1,
            "RX": noise.floor_RX, "RY": noise.floor_RX, "M": 0.0}[kind]


def experiment_layout(profile: DeviceProfile, experiment: str, tomo_tau: float = 100e-9):
    """(period, slots) for a named experiment; checks that the slots fit the period."""
    tm = profile.timing
    R = SequenceSpec("R", free_time=750e-9)
    T1 = SequenceSpec("T1", wait=1e-6)
    if experiment == "scan_RET1":
        period, seqs = 5e-6, [R, SequenceSpec("E", free_time=750e-9), T1]
    elif experiment == "tomography":
        period, seqs = 4.9e-6, [T1, SequenceSpec("RX", free_time=tomo_tau),
                                 SequenceSpec("RY", free_time=tomo_tau)]
    elif experiment == "fast_T1":
        period, seqs = 12.4e-6, [R] + [T1] * 6
    elif experiment == "excitation_P1":
        period, seqs = 12.2e-6, [R] + [SequenceSpec("P1", wait=1e-6), T1] * 3
    elif experiment == "interleaved_monitor":
        grid = profile.grid
        mon = np.array(grid.indices_with_role("monitor"))
        sites = np.array(grid.active_sites)
        even = (sites[mon].sum(axis=1) % 2) == 0
        meas = np.array(grid.indices_with_role("measure"))
        period = tm.qec_cycle
        slots = [Slot(SequenceSpec("R", free_time=74e-9, period=period), 0.5 * period, mon[even]),
                 Slot(SequenceSpec("T1", wait=92e-9, period=period), 0.5 * period, mon[~even]),
                 Slot(SequenceSpec("M", period=period), 0.5 * period, meas)]
        for s in slots:
            if s.seq.duration(tm) > period + 1e-15:
                raise ValueError(f"{s.seq.kind} does not fit the {period * 1e9:.0f} ns cycle")
        return period, slots
    else:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    slots, t = [], 0.0
    for s in seqs:
        d = s.duration(tm)
        # sample the state in the middle of the free evolution / wait
        slots.append(Slot(SequenceSpec(s.kind, s.free_time, s.wait, period), t + 0.5 * d))
        t += d
    if t > period + 1e-15:
        raise ValueError(f"{experiment}: sequences take {t * 1e6:.3f} us > period {period * 1e6:.3f} us")
    return period, slots


@dataclass
class GridSeries:
    """Binary per-qubit records: outcomes[slot, qubit, cycle] (1 = error, raw outcome for RY)."""

    kinds: list
    offsets: np.ndarray
    period: float
    outcomes: np.ndarray
    masks: np.ndarray
    t_start: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.uint8)
        self.masks = np.asarray(self.masks, dtype=bool)
        self.offsets = np.asarray(self.offsets, dtype=float)
        if self.outcomes.ndim != 3 or self.outcomes.shape[0] != len(self.kinds):
            raise ValueError("outcomes must be (slots, qubits, cycles)")
        if np.any(self.outcomes > 1):
            raise ValueError("outcomes must be binary")

    @property
    def n_cycles(self) -> int:
        return self.outcomes.shape[2]

    @property
    def n_qubits(self) -> int:
        return self.outcomes.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.period * np.arange(self.n_cycles)

    def slots_of(self, kind: str) -> list:
        return [i for i, k in enumerate(self.kinds) if k == kind]

    # binary container ------------------------------------------------------
    def to_bytes(self) -> bytes:
        header = {"kinds": list(self.kinds), "offsets": [float(x) for x in self.offsets],
                  "period": self.period, "t_start": self.t_start, "shape": list(self.outcomes.shape),
                  "masks": self.masks.astype(int).tolist(), "metadata": self.metadata}
        hb = json.dumps(header, sort_keys=True).encode()
        body = np.packbits(self.outcomes, axis=None).tobytes()
        return _MAGIC + len(hb).to_bytes(8, "little") + hb + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridSeries":
        if data[:8] != _MAGIC:
            raise ValueError("not a GridSeries container")
        n = int.from_bytes(data[8:16], "little")
        header = json.loads(data[16:16 + n].decode())
        shape = tuple(header["shape"])
        bits = np.unpackbits(np.frombuffer(data[16 + n:], dtype=np.uint8))[: int(np.prod(shape))]
        return cls(header["kinds"], np.array(header["offsets"]), header["period"],
                   bits.reshape(shape), np.array(header["masks"], dtype=bool), header["t_start"],
                   header["metadata"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridSeries":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, kind: str | None = None) -> str:
        """One row per (cycle, slot): time, kind, then one column per qubit."""
        buf = io.StringIO()
        buf.write("time_s,kind," + ",".join(f"q{i}" for i in range(self.n_qubits)) + "\n")
        slots = range(len(self.kinds)) if kind is None else self.slots_of(kind)
        rows = []
        for c in range(self.n_cycles):
            for s in slots:
                t = float(self.t_start + c * self.period + self.offsets[s])
                vals = ",".join(str(int(v)) for v in self.outcomes[s, :, c])
                rows.append(f"{t!r},{self.kinds[s]},{vals}\n")
        buf.write("".join(rows))
        return buf.getvalue()


@lru_cache(maxsize=8)
def _code_detection_table(variant: str, baseline: float):
    from . import repcode_sim as rc
    amps = np.linspace(0, 5e6, 21)
    spec = rc.CircuitSpec("X", variant, 3)
    _, p, _ = rc.sweep_detection_vs_shift(spec, -amps, trajectories=1000, baseline=baseline, seed=11)
    return amps, p


def _code_detection(df, g10, tm: TimingParams, variant="i", baseline=0.10):
    """Phenomenological code detection probability from the local shift and decay rate."""
    amps, p = _code_detection_table(variant, baseline)
    pd = np.interp(np.abs(df), amps, p)
    jump = 0.5 * (1 - np.exp(-g10 * tm.qec_cycle))
    return _xor(pd, 2 * jump * (1 - jump))


def _slot_probability(profile, model: QubitStateModel, slot: Slot, times, qubits, code_variant="i"):
    ts = times + slot.offset
    if slot.seq.kind == "M":
        return _code_detection(model.shifts(ts, qubits), model.gamma_10(ts, qubits), profile.timing,
                               code_variant)
    st = model.outcome_state(ts, qubits, _background(profile.noise, slot.seq.kind),
                             1 - profile.timing.assignment_fidelity)
    return outcome_probability(slot.seq, st)


def generate_dataset(profile: DeviceProfile, experiment: str, duration: float, seed: int = 0,
                     events: list | None = None, episodes: list | bool = True,
                     tomo_tau: float = 100e-9, code_variant: str = "i") -> GridSeries:
    """Full binary record of one experiment with impacts injected.

    ``events`` defaults to a Poisson sample at the profile's impact rate;
    ``episodes`` to the profile's single-qubit excursion model (pass False to
    disable).  Identical arguments give bit-identical output.
    """
    period, slots = experiment_layout(profile, experiment, tomo_tau)
    n_cycles = int(np.floor(duration / period * (1 + 1e-12)))
    if n_cycles < 1:
        raise ValueError("duration shorter than one cycle")
    nq = profile.n_qubits
    if events is None:
        events = sample_impacts(profile.impacts.rate, duration, profile.impacts, seed, profile)
    if episodes is True:
        episodes = sample_episodes(profile.noise, nq, duration, seed, lattice_neighbours(profile.grid))
    elif episodes is False:
        episodes = []
    model = QubitStateModel(profile, events, episodes)
    out = np.zeros((len(slots), nq, n_cycles), dtype=np.uint8)
    masks = np.zeros((len(slots), nq), dtype=bool)
    for si, slot in enumerate(slots):
        qubits = np.arange(nq) if slot.qubits is None else np.asarray(slot.qubits)
        masks[si, qubits] = True
        for b0 in range(0, n_cycles, BLOCK):
            b1 = min(n_cycles, b0 + BLOCK)
            times = period * np.arange(b0, b1)
            p = _slot_probability(profile, model, slot, times, qubits, code_variant)
            u = _rng(seed, 3, EXPERIMENTS.index(experiment), si, b0 // BLOCK).random((nq, BLOCK))
            out[si, qubits, b0:b1] = u[qubits, : b1 - b0] < p
    meta = {"experiment": experiment, "seed": seed, "duration": duration,
            "profile_hash": profile.profile_hash(),
            "sequences": [{"kind": s.seq.kind, "free_time": s.seq.free_time, "wait": s.seq.wait,
                           "offset": s.offset} for s in slots],
            "events": [e.to_dict() for e in events],
            "episodes": [asdict(e) for e in episodes]}
    return GridSeries([s.seq.kind for s in slots], np.array([s.offset for s in slots]), period,
                      out, masks, 0.0, meta)


# ---------------------------------------------------------------------------
# long campaigns: per-cycle error counts without storing the bit matrix


def campaign_counts(profile: DeviceProfile, duration: float, seed: int = 0, kind: str = "R",
                    events=None, episodes=None, block_duration: float = 4.0, period: float = 5e-6,
                    free_time: float = 750e-9):
    """Yield (first_cycle, counts) blocks of per-cycle error sums for one sequence kind.

    Unaffected qubits share one binomial draw per cycle; qubits touched by an
    impact or an episode inside a block get their own Bernoulli draws.
    """
    nq = profile.n_qubits
    if events is None:
        events = sample_impacts(profile.impacts.rate, duration, profile.impacts, seed, profile)
    if episodes is None:
        episodes = sample_episodes(profile.noise, nq, duration, seed, lattice_neighbours(profile.grid))
    model = QubitStateModel(profile, events, episodes)
    seq = SequenceSpec(kind, free_time=free_time, wait=1e-6 if kind in ("T1", "P1") else 0.0)
    ro = 1 - profile.timing.assignment_fidelity
    p_bg = float(outcome_probability(seq, OutcomeState(0.0, 0.0, 0.0, 0.0,
                                                       _background(profile.noise, kind), ro)))
    n_cycles = int(np.floor(duration / period * (1 + 1e-12)))
    per_block = int(round(block_duration / period))
    horizons = [(ev.t0, ev.t0 + model.horizon(ev)) for ev in events]
    for b, c0 in enumerate(range(0, n_cycles, per_block)):
        c1 = min(n_cycles, c0 + per_block)
        t0, t1 = c0 * period, c1 * period
        rng = _rng(seed, 4, b)
        special = {}

        def mark(q, ta, tb):
            lo = max(c0, int(ta // period))
            hi = min(c1, int(math.ceil(tb / period)) + 1)
            if q in special:
                a, z = special[q]
                lo, hi = min(a, lo), max(z, hi)
            special[q] = (lo, hi)

        for h0, h1 in horizons:
            if h0 < t1 and h1 > t0:
                for q in range(nq):
                    mark(q, h0, h1)
        for e in episodes:
            if e.t_start < t1 and e.t_start + e.duration > t0:
                mark(e.qubit, e.t_start, e.t_start + e.duration)
        n_quiet = np.full(c1 - c0, nq, dtype=np.int64)
        for q, (lo, hi) in special.items():
            n_quiet[lo - c0:hi - c0] -= 1
        counts = rng.binomial(n_quiet, p_bg).astype(np.int32)
        bgk = _background(profile.noise, kind)
        half = 0.5 * seq.duration(profile.timing)
        for q, (lo, hi) in sorted(special.items()):
            u = _rng(seed, 5, b, q).random(hi - lo)
            for s0 in range(lo, hi, BLOCK):
                s1 = min(hi, s0 + BLOCK)
                ts = period * np.arange(s0, s1) + half
                p = outcome_probability(seq, model.outcome_state(ts, [q], bgk, ro))[0]
                counts[s0 - c0:s1 - c0] += u[s0 - lo:s1 - lo] < p
        yield c0, counts


# ---------------------------------------------------------------------------
# tomography analysis


def fit_initial_shift(times, c, s, a_f: float, r: float, contrast: float | None = None,
                      grid_max: float = 12e6, tau: float = 100e-9) -> float:
    """Initial shift delta_f0 of a recovery trace seen through wrapped phases.

    Fits (cos, sin) window estimates to the hyperbolic law
    delta_f(t) = delta_f0 / (1 + t r |delta_f0| / (a f)); the trajectory through
    successive windows resolves phase wraps beyond 1/(2 tau).
    """
    times = np.asarray(times, dtype=float)
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    C = contrast if contrast is not None else max(0.2, float(np.sqrt(np.mean(c**2 + s**2))))

    def cost(df0):
        df = df0 / (1 + times * r * abs(df0) / a_f)
        ph = 2 * np.pi * df * tau
        return np.sum((c - C * np.cos(ph)) ** 2 + (s - C * np.sin(ph)) ** 2)

    grid = np.concatenate([np.linspace(1e6, -1e6, 201), -np.linspace(1e6, grid_max, 441)[1:]])
    dfg = grid[:, None] / (1 + times[None, :] * r * np.abs(grid)[:, None] / a_f)
    phg = 2 * np.pi * dfg * tau
    vals = np.sum((c - C * np.cos(phg)) ** 2 + (s - C * np.sin(phg)) ** 2, axis=1)
    i = int(np.argmin(vals))
    lo = grid[min(i + 1, grid.size - 1)]
    hi = grid[max(i - 1, 0)]
    if lo == hi:
        return float(grid[i])
    res = optimize.minimize_scalar(cost, bounds=(min(lo, hi), max(lo, hi)), method="bounded",
                                   options={"xatol": 1.0})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def fit_shift_recovery(times, c, s, a_f: float, r_guess: float, tau: float = 100e-9,
                       contrast: float | None = None):
    """Joint fit of (delta_f0, t_rec) of the hyperbolic law to (cos, sin) window estimates.

    Returns (delta_f0, t_rec, r) with r = a f / (t_rec |delta_f0|).
    """
    times = np.asarray(times, dtype=float)
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    C = contrast if contrast is not None else max(0.2, float(np.sqrt(np.mean(c**2 + s**2))))
    df0 = fit_initial_shift(times, c, s, a_f, r_guess, contrast=C, tau=tau)
    if df0 == 0:
        raise ValueError("no shift to fit")

    def resid(p):
        df = p[0] / (1 + times / np.exp(p[1]))
        ph = 2 * np.pi * df * tau
        return np.concatenate([c - C * np.cos(ph), s - C * np.sin(ph)])

    best = None
    t_rec0 = a_f / (r_guess * abs(df0))
    for k in (0.5, 1.0, 2.0):
        res = optimize.least_squares(resid, [df0, np.log(k * t_rec0)], x_scale=[abs(df0), 1.0])
        if best is None or res.cost < best.cost:
            best = res
    d0, t_rec = float(best.x[0]), float(np.exp(best.x[1]))
    return d0, t_rec, a_f / (t_rec * abs(d0))


def fit_event_recombination(times, c, s, a_f, r_guess: float, tau: float = 100e-9,
                            min_shift: float = 500e3, max_qubits: int = 8):
    """Common recombination rate r from the (cos, sin) traces of several qubits.

    ``c``, ``s`` are (qubits, windows); each qubit keeps its own delta_f0 while
    r is shared.  Qubits whose initial shift estimate is below ``min_shift``
    are ignored.  Returns (r, {qubit: delta_f0}).
    """
    times = np.asarray(times, dtype=float)
    c = np.atleast_2d(np.asarray(c, dtype=float))
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a_f = np.atleast_1d(np.asarray(a_f, dtype=float))
    est = np.array([fit_initial_shift(times, c[q], s[q], a_f[q], r_guess, tau=tau)
                    for q in range(c.shape[0])])
    order = np.argsort(-np.abs(est))
    use = [int(q) for q in order[:max_qubits] if abs(est[q]) > min_shift]
    if not use:
        raise ValueError("no qubit with a shift above min_shift")
    C = np.array([max(0.2, float(np.sqrt(np.mean(c[q] ** 2 + s[q] ** 2)))) for q in use])

    def resid(p):
        r = np.exp(p[0])
        out = []
        for k, q in enumerate(use):
            df = p[1 + k] / (1 + times * r * abs(p[1 + k]) / a_f[q])
            ph = 2 * np.pi * df * tau
            out += [c[q] - C[k] * np.cos(ph), s[q] - C[k] * np.sin(ph)]
        return np.concatenate(out)

    best = None
    for k in (0.5, 1.0, 2.0):
        p0 = np.concatenate([[np.log(k * r_guess)], est[use]])
        res = optimize.least_squares(resid, p0, x_scale=np.concatenate([[1.0], np.abs(est[use])]))
        if best is None or res.cost < best.cost:
            best = res
    return float(np.exp(best.x[0])), {q: float(v) for q, v in zip(use, best.x[1:])}


@dataclass
class TomographySection:
    event: ImpactEvent | None
    t0: float
    true_shift: np.ndarray      # per qubit, at t0
    est_shift: np.ndarray       # per qubit, fitted
    times: np.ndarray           # window centres relative to t0
    window_shift: np.ndarray    # (qubits, windows) single-window estimates


def tomography_section(profile: DeviceProfile, event: ImpactEvent | None, t0: float, seed: int,
                       span: float = 5e-3, window: int = 10, tau: float = 100e-9,
                       episodes=()) -> TomographySection:
    """Synthesize RX/RY records over ``span`` after ``t0`` and fit each qubit's initial shift."""
    period, slots = experiment_layout(profile, "tomography", tau)
    rx_slot, ry_slot = slots[1], slots[2]
    n = int(np.floor(span / period * (1 + 1e-12))) // window * window
    times = t0 + period * np.arange(n)
    events = [event] if event is not None else []
    model = QubitStateModel(profile, events, episodes)
    nq = profile.n_qubits
    key = int(round(t0 * 1e6)) % (2**31)
    p_rx = _slot_probability(profile, model, rx_slot, times, np.arange(nq))
    p_ry = _slot_probability(profile, model, ry_slot, times, np.arange(nq))
    rx = _rng(seed, 6, key, 0).random((nq, n)) < p_rx
    ry = _rng(seed, 6, key, 1).random((nq, n)) < p_ry
    c, s = tomography_windows(rx, ry, window)
    tw = (np.arange(c.shape[1]) * window + 0.5 * (window - 1)) * period
    r = profile.impacts.recombination_rate
    af = _shift_coefficients(profile) * profile.f_q
    est = np.array([fit_initial_shift(tw, c[q], s[q], af[q], r, tau=tau) for q in range(nq)])
    true = -af * model.density(np.array([t0]))[:, 0]
    wshift = np.arctan2(s, c) / (2 * np.pi * tau)
    return TomographySection(event, t0, true, est, tw, wshift)


def tomography_campaign(profile: DeviceProfile, duration: float, seed: int = 0, n_quiet: int = 4,
                        span: float = 5e-3, tau: float = 100e-9):
    """Per-event tomography sections for a Poisson impact sample.

    sigma_f is the rms of the fitted initial shift over quiet sections (no
    impact); returns (events, sections, sigma_f).
    """
    events = sample_impacts(profile.impacts.rate, duration, profile.impacts, seed, profile)
    quiet = [tomography_section(profile, None, 1.0 + 10.0 * k, seed + 7919, span, tau=tau)
             for k in range(n_quiet)]
    sigma_f = float(np.sqrt(np.mean(np.concatenate([q.est_shift for q in quiet]) ** 2)))
    sections = [tomography_section(profile, e, e.t0, seed, span, tau=tau) for e in events]
    return events, sections, sigma_f


def box_event_section(seed: int, dt: float = 944e-9, n_qubits: int = 4, plateau: float = 0.97,
                      length: float | None = None, baseline: float = 0.10, pre: float = 50e-3,
                      post: float = 500e-6):
    """Detection records with two adjacent qubits stuck near probability 1.

    Returns (pre_traces, traces) as (qubits, samples) uint8 arrays; the box
    starts 100 us into ``traces``.  ``length`` defaults to a uniform draw in
    [50, 250] us.
    """
    rng = _rng(seed, 20)
    length = rng.uniform(50e-6, 250e-6) if length is None else length
    n_pre, n = int(pre / dt), int((100e-6 + length + post) / dt)
    p = np.full((n_qubits, n), baseline)
    i0, i1 = int(100e-6 / dt), int((100e-6 + length) / dt)
    p[:2, i0:i1] = plateau
    pre_tr = (rng.random((n_qubits, n_pre)) < baseline).astype(np.uint8)
    return pre_tr, (rng.random((n_qubits, n)) < p).astype(np.uint8)


def decaying_burst_section(seed: int, dt: float = 944e-9, n_qubits: int = 4, baseline: float = 0.10,
                           tau: float | None = None, strength: float | None = None,
                           pre: float = 50e-3, post: float = 500e-6):
    """Detection records of an impact-like burst: probability rises towards the
    coherent-error cap 1/2 and fades, 1/2 (1 - exp(-G exp(-t/tau))) composed with the baseline."""
    rng = _rng(seed, 21)
    tau = rng.uniform(20e-6, 200e-6) if tau is None else tau
    g = rng.uniform(1.0, 20.0) if strength is None else strength
    n_pre, n = int(pre / dt), int((100e-6 + 6 * tau + post) / dt)
    t = np.arange(n) * dt - 100e-6
    fade = np.where(t >= 0, np.exp(-np.clip(t, 0, None) / tau), 0.0)
    weights = np.linspace(1.0, 0.3, n_qubits)[:, None]
    pb = 0.5 * -np.expm1(-g * weights * fade[None, :])
    p = _xor(pb, baseline)
    pre_tr = (rng.random((n_qubits, n_pre)) < baseline).astype(np.uint8)
    return pre_tr, (rng.random((n_qubits, n)) < p).astype(np.uint8)
