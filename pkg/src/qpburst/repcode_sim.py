"""State-vector trajectory simulator for small repetition codes under qubit
frequency shifts, with detuned single-qubit gates and phase accumulation
during two-qubit gate windows and idles.

Qubits are arranged as a line ``d0 m0 d1 m1 ... d_{n-1}``.  Each code cycle
is a fixed timeline (Hadamards, two CZ layers, measurement and reset of the
measure qubits, a leakage-removal slot, and a dynamical-decoupling pi pulse on
the data qubits).  Background errors are added as classical flips of the
measurement record, tuned so that the zero-shift detection probability equals
a configured baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .device_model import TimingParams

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


class NumericError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# gate model


def _ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _pulse_area(pulse: str) -> float:
    if pulse == "H":
        return math.pi / 2
    if pulse == "pi":
        return math.pi
    raise ValueError(f"unknown pulse {pulse!r}")


def ideal_gate(pulse: str) -> np.ndarray:
    """Target unitary: Hadamard = R_y(pi/2) after a virtual Z; pi = R_y(pi)."""
    if pulse == "H":
        return _ry(math.pi / 2) @ SZ
    return _ry(math.pi)


def detuned_1q_unitary(delta_f, pulse: str, t_pulse: float, n_steps: int = 200) -> np.ndarray:
    """Time-ordered propagator of H = pi*delta_f*sigma_z + Omega(t)/2*sigma_y.

    Omega(t) is a raised-cosine envelope (1 - cos 2 pi t / T) whose area gives
    the target rotation; the Hadamard carries an extra virtual Z before the
    pulse.  ``delta_f`` may be an array; the result then has shape (..., 2, 2).
    """
    if not t_pulse > 0:
        raise ValueError("t_pulse must be positive")
    if n_steps < 16:
        raise NumericError("need at least 16 steps for a 1e-10 unitarity budget")
    area = _pulse_area(pulse)
    df = np.asarray(delta_f, dtype=float)
    shape = df.shape
    df = df.reshape(-1)
    dt = t_pulse / n_steps
    ts = (np.arange(n_steps) + 0.5) * dt
    omega = area / t_pulse * (1.0 - np.cos(2 * np.pi * ts / t_pulse))
    a = np.pi * df[:, None] * np.ones_like(omega)[None, :]          # sigma_z coefficient
    b = 0.5 * omega[None, :] * np.ones_like(df)[:, None]          # sigma_y coefficient
    norm = np.sqrt(a * a + b * b)
    c = np.cos(norm * dt)
    s = np.where(norm > 0, np.sin(norm * dt) / np.where(norm > 0, norm, 1.0), dt)
    # exp(-i dt (a Z + b Y)) = c I - i s (a Z + b Y)
    steps = np.empty((df.size, n_steps, 2, 2), dtype=complex)
    steps[..., 0, 0] = c - 1j * s * a
    steps[..., 1, 1] = c + 1j * s * a
    steps[..., 0, 1] = -s * b
    steps[..., 1, 0] = s * b
    U = np.broadcast_to(np.eye(2, dtype=complex), (df.size, 2, 2)).copy()
    for k in range(n_steps):
        U = steps[:, k] @ U
    if pulse == "H":
        U = U @ SZ
    dev = np.max(np.abs(np.einsum("nij,nkj->nik", U, U.conj()) - np.eye(2)))
    if dev > 1e-10:
        raise NumericError(f"propagator not unitary to 1e-10 (deviation {dev:.2e})")
    return U.reshape(shape + (2, 2))


@lru_cache(maxsize=4096)
def _cached_gate(delta_f: float, pulse: str, t_pulse: float) -> np.ndarray:
    return detuned_1q_unitary(delta_f, pulse, t_pulse)


def average_gate_fidelity(U: np.ndarray, V: np.ndarray) -> float:
    """(2 + |Tr U^dag V|^2) / 6 for 2x2 unitaries."""
    tr = np.trace(U.conj().T @ V)
    return float((2 + abs(tr) ** 2) / 6)


def pi_pulse_fidelity_formula(delta_f: float, t_pulse: float) -> float:
    return 1.0 - (0.39 * 2 * math.pi * delta_f * t_pulse) ** 2 / 6


def hadamard_phase_coefficient(t_H: float, delta_f: float = 1e4) -> float:
    """Effective free-evolution fraction of a detuned Hadamard.

    A detuned pulse pair R_y(pi/2), R_y(-pi/2) acts like a free precession of
    phase 2 * 2 pi * delta_f * (alpha t_H); alpha is returned.
    """
    fwd = detuned_1q_unitary(delta_f, "H", t_H) @ SZ           # strip the virtual Z
    inv = ideal_gate("H") @ SZ
    # reverse pulse: R_y(-pi/2) detuned equals Y-conjugated forward pulse with -delta_f
    back = SX @ (detuned_1q_unitary(-delta_f, "H", t_H) @ SZ) @ SX
    psi = back @ fwd @ np.array([1, 0], dtype=complex)
    p1 = abs(psi[1]) ** 2
    phi = 2 * math.asin(math.sqrt(min(1.0, p1)))
    del inv
    return phi / (2 * 2 * math.pi * delta_f * t_H)


def phase_accumulation(delta_f, window: float, factor: float = 1.0) -> np.ndarray:
    """U_phi = exp(i phi sigma_z / 2) with phi = 2 pi delta_f window * factor."""
    if window < 0:
        raise ValueError("window must be non-negative")
    phi = 2 * math.pi * np.asarray(delta_f, dtype=float) * window * factor
    out = np.zeros(np.shape(phi) + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(0.5j * phi)
    out[..., 1, 1] = np.exp(-0.5j * phi)
    return out


def independence_check(p_meas: float) -> float:
    """Detection probability 2p(1-p) for i.i.d. per-cycle record flips."""
    if not 0 <= p_meas <= 1:
        raise ValueError("probability must lie in [0, 1]")
    return 2 * p_meas * (1 - p_meas)


def iid_flip_detection_rate(p: float, cycles: int, streams: int, seed: int = 0) -> float:
    """Monte-Carlo detection rate of independent flip streams (oracle for 2p(1-p))."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 14])))
    flips = rng.random((streams, cycles)) < p
    det = flips[:, 1:] ^ flips[:, :-1]
    return float(det.mean())


def background_flip_for_baseline(baseline: float) -> float:
    """Record-flip probability q with 2 q (1 - q) = baseline."""
    if not 0 <= baseline <= 0.5:
        raise ValueError("baseline must lie in [0, 0.5]")
    return 0.5 * (1 - math.sqrt(1 - 2 * baseline))


# ---------------------------------------------------------------------------
# circuit description


@dataclass
class TimelineEvent:
    name: str
    role: str          # "data", "measure", "all"
    start: float
    duration: float


@dataclass
class CircuitSpec:
    basis: str = "X"
    variant: str = "i"
    n_data: int = 3
    timing: TimingParams = field(default_factory=TimingParams)
    timeline: list = field(default_factory=list)
    dd_pulses: int = 3

    def __post_init__(self):
        self.basis = self.basis.upper()
        if self.basis == "X" and self.variant not in ("i", "ii", "iii"):
            raise ValueError("X-basis variants are i, ii, iii")
        if self.basis == "Z" and self.variant not in ("plain", "echo"):
            raise ValueError("Z-basis variants are plain, echo")
        if self.basis not in ("X", "Z"):
            raise ValueError("basis must be X or Z")
        if self.n_data < 2:
            raise ValueError("need at least two data qubits")
        if not self.timeline:
            self.timeline = self._build_timeline()
        self.check()

    # layout ------------------------------------------------------------
    @property
    def n_qubits(self) -> int:
        return 2 * self.n_data - 1

    @property
    def data_qubits(self):
        return list(range(0, self.n_qubits, 2))

    @property
    def measure_qubits(self):
        return list(range(1, self.n_qubits, 2))

    @property
    def echo_between_cz(self) -> bool:
        return self.variant in ("iii", "echo")

    @property
    def data_in_x(self) -> bool:
        return self.basis == "X"

    @property
    def t_cz(self) -> float:
        tm = self.timing
        if self.echo_between_cz:
            return (tm.t_inter_hadamard - tm.t_1q) / 2
        return tm.t_inter_hadamard / 2

    @property
    def dd_window(self) -> tuple[float, float] | None:
        """Interval decoupled by the data-qubit pi train (X basis only)."""
        if self.basis != "X":
            return None
        tm = self.timing
        t_open = 2 * tm.t_1q + tm.t_inter_hadamard
        if self.variant == "i":
            return t_open, t_open + tm.t_readout + tm.t_reset
        return t_open, tm.qec_cycle

    @property
    def dd_center(self) -> float | None:
        w = self.dd_window
        return None if w is None else 0.5 * (w[0] + w[1])

    def dd_centers(self) -> list:
        """CPMG-style pulse centers: equal spacing, half spacing at the window edges."""
        w = self.dd_window
        if w is None:
            return []
        L = w[1] - w[0]
        return [w[0] + (k + 0.5) * L / self.dd_pulses for k in range(self.dd_pulses)]

    def _build_timeline(self):
        tm = self.timing
        ev = []
        t = 0.0
        ev.append(TimelineEvent("H", "all" if self.data_in_x else "measure", t, tm.t_1q))
        t += tm.t_1q
        ev.append(TimelineEvent("CZ1", "all", t, self.t_cz))
        t += self.t_cz
        if self.echo_between_cz:
            ev.append(TimelineEvent("echo_pi", "measure", t, tm.t_1q))
            t += tm.t_1q
        ev.append(TimelineEvent("CZ2", "all", t, self.t_cz))
        t += self.t_cz
        ev.append(TimelineEvent("H", "all" if self.data_in_x else "measure", t, tm.t_1q))
        t += tm.t_1q
        ev.append(TimelineEvent("measure", "measure", t, tm.t_readout))
        t += tm.t_readout
        ev.append(TimelineEvent("reset", "measure", t, tm.t_reset))
        t += tm.t_reset
        ev.append(TimelineEvent("DQLR", "all", t, tm.t_dqlr))
        t += tm.t_dqlr
        for c in self.dd_centers():
            ev.append(TimelineEvent("dd_pi", "data", c - tm.t_1q / 2, tm.t_1q))
        return ev

    def check(self):
        serial = [e for e in self.timeline if e.name != "dd_pi"]
        end = 0.0
        for e in serial:
            if e.start < end - 1e-15:
                raise ValueError(f"timeline overlap at {e.name}")
            end = e.start + e.duration
        if abs(end - self.timing.qec_cycle) > 1e-12:
            raise ValueError(f"timeline sums to {end * 1e9:.1f} ns, cycle is "
                             f"{self.timing.qec_cycle * 1e9:.1f} ns")


@dataclass
class InjectionProfile:
    """Step-function frequency shift applied to all (or selected) qubits."""

    amplitude: float = -1e6
    start_cycle: int = 3
    n_cycles: int = 15
    uniform: bool = True
    cz_perception_factor: float = 1.0
    qubits: tuple | None = None
    roles: tuple | None = None       # restrict to "data" and/or "measure"

    def shifts(self, cycle: int, spec: CircuitSpec) -> np.ndarray:
        out = np.zeros(spec.n_qubits)
        if self.start_cycle <= cycle < self.start_cycle + self.n_cycles:
            sel = np.ones(spec.n_qubits, bool)
            if self.qubits is not None:
                sel[:] = False
                sel[list(self.qubits)] = True
            if self.roles is not None:
                keep = np.zeros(spec.n_qubits, bool)
                if "data" in self.roles:
                    keep[spec.data_qubits] = True
                if "measure" in self.roles:
                    keep[spec.measure_qubits] = True
                sel &= keep
            out[sel] = self.amplitude
        return out

    @property
    def total_cycles(self) -> int:
        return self.start_cycle + self.n_cycles + 2


@dataclass
class DetectionRecord:
    detections: np.ndarray        # (trajectories, cycles, measure qubits) bool
    outcomes: np.ndarray          # (trajectories, cycles, measure qubits) bool, with background flips
    probability: np.ndarray       # (cycles,) mean over trajectories and measure qubits
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# state-vector engine


class _State:
    def __init__(self, batch: int, n: int):
        self.n = n
        self.psi = np.zeros((batch, 2**n), dtype=complex)
        self.psi[:, 0] = 1.0

    def view(self, q):
        return self.psi.reshape(self.psi.shape[0], 2**q, 2, 2 ** (self.n - q - 1))

    def apply_1q(self, q, U):
        v = self.view(q)
        self.psi = np.einsum("ij,bljr->blir", U, v, optimize=False).reshape(self.psi.shape)

    def apply_diag(self, d):
        self.psi *= d[None, :]

    def prob1(self, q):
        v = self.view(q)
        return np.einsum("blr,blr->b", v[:, :, 1, :], v[:, :, 1, :].conj()).real

    def measure_reset(self, q, u):
        """Projective measurement of qubit q, then reset to |0>; returns outcomes."""
        p1 = np.clip(self.prob1(q), 0.0, 1.0)
        out = u < p1
        v = self.view(q)
        keep = np.where(out[:, None, None], v[:, :, 1, :], v[:, :, 0, :])
        norm = np.sqrt(np.where(out, p1, 1 - p1))
        norm = np.where(norm > 0, norm, 1.0)
        new = np.zeros_like(v)
        new[:, :, 0, :] = keep / norm[:, None, None]
        self.psi = new.reshape(self.psi.shape)
        return out

    def damp(self, q, p_decay, u):
        """Amplitude-damping trajectory step with decay probability p_decay."""
        if p_decay <= 0:
            return
        p1 = np.clip(self.prob1(q), 0.0, 1.0)
        jump = u < p1 * p_decay
        v = self.view(q).copy()
        new = np.empty_like(v)
        k = math.sqrt(1 - p_decay)
        new[:, :, 0, :] = np.where(jump[:, None, None], v[:, :, 1, :], v[:, :, 0, :])
        new[:, :, 1, :] = np.where(jump[:, None, None], 0.0, k * v[:, :, 1, :])
        nrm = np.sqrt(np.sum(np.abs(new) ** 2, axis=(1, 2, 3)))
        self.psi = (new / nrm[:, None, None, None]).reshape(self.psi.shape)

    def norm_error(self):
        return float(np.max(np.abs(np.sum(np.abs(self.psi) ** 2, axis=1) - 1.0)))


def _bit_table(n):
    idx = np.arange(2**n)
    return np.array([(idx >> (n - 1 - q)) & 1 for q in range(n)], dtype=np.int8)


def _phase_diag(bits, phis):
    """Diagonal of prod_q exp(-i phi_q sigma_z / 2): free precession under the
    same sigma_z term that detunes the pulses (phi = 2 pi delta_f t)."""
    z = 1 - 2 * bits.astype(float)
    return np.exp(-0.5j * (phis[:, None] * z).sum(axis=0))


def _cz_diag(bits, pairs):
    d = np.ones(bits.shape[1])
    for a, b in pairs:
        d = d * np.where((bits[a] & bits[b]) == 1, -1.0, 1.0)
    return d


class _CycleBuilder:
    """Per-cycle operator list for a circuit given per-qubit shifts and decay rates."""

    def __init__(self, spec: CircuitSpec, cz_factor: float = 1.0):
        self.spec = spec
        self.cz_factor = cz_factor
        n = spec.n_qubits
        self.bits = _bit_table(n)
        m = spec.measure_qubits
        self.layer1 = [(q, q - 1) for q in m]
        self.layer2 = [(q, q + 1) for q in m]
        self.cz1 = _cz_diag(self.bits, self.layer1)
        self.cz2 = _cz_diag(self.bits, self.layer2)
        self.in1 = np.zeros(n)
        self.in2 = np.zeros(n)
        for a, b in self.layer1:
            self.in1[[a, b]] = 1
        for a, b in self.layer2:
            self.in2[[a, b]] = 1

    def _window_phases(self, df, participation, t_cz, extra_idle):
        """Phase during one CZ slot: factor-scaled for participants, plain for idlers."""
        f = np.where(participation > 0, self.cz_factor, 1.0)
        return 2 * np.pi * df * (t_cz * f + extra_idle)

    def gates(self, df):
        spec = self.spec
        tm = spec.timing
        uniq, inv = np.unique(df, return_inverse=True)
        gH = np.stack([_cached_gate(float(x), "H", tm.t_1q) for x in uniq])[inv]
        gP = np.stack([_cached_gate(float(x), "pi", tm.t_1q) for x in uniq])[inv]
        return gH, gP


def _rng_for(seed: int, chunk: int, cycle: int, stream: int = 0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk, cycle, stream])))


def _run_chunk(spec, shift_fn, decay_fn, n_cycles, batch, seed, chunk, cz_factor, q_flip,
               norm_check=False):
    """Simulate one trajectory chunk; returns raw outcomes (batch, cycles, n_measure)."""
    tm = spec.timing
    n = spec.n_qubits
    st = _State(batch, n)
    cb = _CycleBuilder(spec, cz_factor)
    data, meas = spec.data_qubits, spec.measure_qubits
    # data start in the code basis
    if spec.data_in_x:
        for q in data:
            st.apply_1q(q, HADAMARD)
    outcomes = np.zeros((batch, n_cycles, len(meas)), dtype=bool)
    t_cz = spec.t_cz
    t_open = 2 * tm.t_1q + tm.t_inter_hadamard
    for c in range(n_cycles):
        df = np.asarray(shift_fn(c), dtype=float)
        gam = decay_fn(c) if decay_fn is not None else None
        rng = _rng_for(seed, chunk, c)
        gH, gP = cb.gates(df)
        h_targets = range(n) if spec.data_in_x else meas
        for q in h_targets:
            st.apply_1q(q, gH[q])
        # first CZ slot (+ idle of qubits not in layer 1)
        ph1 = cb._window_phases(df, cb.in1, t_cz, 0.0)
        if spec.echo_between_cz:
            # data qubits idle during the echo pulse; assign that to slot 1
            idle = np.zeros(n)
            idle[data] = tm.t_1q
            ph1 = ph1 + 2 * np.pi * df * idle
        st.apply_diag(cb.cz1 * _phase_diag(cb.bits, ph1))
        if spec.echo_between_cz:
            for q in meas:
                st.apply_1q(q, gP[q])
        ph2 = cb._window_phases(df, cb.in2, t_cz, 0.0)
        st.apply_diag(cb.cz2 * _phase_diag(cb.bits, ph2))
        if gam is not None:
            for q in meas:
                st.damp(q, 1 - math.exp(-gam[q] * (tm.t_inter_hadamard + tm.t_1q)), rng.random(batch))
        for q in h_targets:
            st.apply_1q(q, gH[q])
        u = rng.random((len(meas), batch))
        for k, q in enumerate(meas):
            outcomes[:, c, k] = st.measure_reset(q, u[k])
        # data qubits: free evolution from end of the second Hadamard to the cycle end
        if spec.data_in_x:
            t = t_open
            phis = np.zeros(n)
            for c in spec.dd_centers():
                phis[data] = 2 * np.pi * df[data] * (c - tm.t_1q / 2 - t)
                st.apply_diag(_phase_diag(cb.bits, phis))
                for q in data:
                    st.apply_1q(q, gP[q])
                t = c + tm.t_1q / 2
            phis[data] = 2 * np.pi * df[data] * (tm.qec_cycle - t)
            st.apply_diag(_phase_diag(cb.bits, phis))
        else:
            phis = np.zeros(n)
            phis[data] = 2 * np.pi * df[data] * (tm.qec_cycle - t_open)
            st.apply_diag(_phase_diag(cb.bits, phis))
        if gam is not None:
            for q in data:
                st.damp(q, 1 - math.exp(-gam[q] * (tm.qec_cycle - t_open)), rng.random(batch))
        if norm_check:
            err = st.norm_error()
            if err > 1e-8:
                raise NumericError(f"state norm drifted by {err:.2e}")
    if q_flip > 0:
        rng = _rng_for(seed, chunk, n_cycles, 1)
        outcomes ^= rng.random(outcomes.shape) < q_flip
    return outcomes


@lru_cache(maxsize=64)
def _reference(spec_key):
    basis, variant, n_data, timing_tuple, dd = spec_key
    spec = CircuitSpec(basis, variant, n_data, TimingParams(*timing_tuple), dd_pulses=dd)
    n_cycles = 4
    out = _run_chunk(spec, lambda c: np.zeros(spec.n_qubits), None, n_cycles, 1, 0, 0, 1.0, 0.0)
    return out[0]


def reference_record(spec: CircuitSpec, n_cycles: int) -> np.ndarray:
    """Noiseless, shift-free measurement record (deterministic for these circuits).

    The frame pattern has period two in cycles; it is tiled to ``n_cycles``.
    """
    key = (spec.basis, spec.variant, spec.n_data, tuple(vars(spec.timing).values()), spec.dd_pulses)
    base = _reference(key)
    reps = -(-n_cycles // 2)
    pattern = base[2:4]
    out = np.concatenate([base[:2]] + [pattern] * reps)[:n_cycles]
    return out


def detections_from_outcomes(outcomes: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Detection = m_t xor m_(t-1) after removing the noiseless frame; first cycle never detects."""
    frame = outcomes ^ ref[None]
    det = np.zeros_like(frame)
    det[:, 1:] = frame[:, 1:] ^ frame[:, :-1]
    return det


def run_trajectories(spec: CircuitSpec, profile: InjectionProfile, cycles: int | None = None,
                     trajectories: int = 1000, background_flip: float | None = None,
                     baseline: float = 0.10, seed: int = 0, chunk_size: int = 2000,
                     decay_fn=None, shift_fn=None, keep_records: bool = True,
                     norm_check: bool = False) -> DetectionRecord:
    """Sample code trajectories with a (step) frequency shift.

    ``background_flip`` is the total i.i.d. record-flip probability; when None
    it is derived from ``baseline`` so that the zero-shift detection
    probability equals ``baseline`` exactly.  Trajectories are processed in
    fixed chunks with independent RNG streams keyed by (seed, chunk, cycle),
    so results do not depend on how chunks are scheduled.
    """
    if spec.n_data not in (3, 5) and spec.n_data > 5:
        raise ValueError("state dimension too large")
    cycles = cycles or profile.total_cycles
    q = background_flip_for_baseline(baseline) if background_flip is None else background_flip
    sf = shift_fn or (lambda c: profile.shifts(c, spec))
    ref = reference_record(spec, cycles)
    n_chunks = -(-trajectories // chunk_size)
    det_sum = np.zeros(cycles)
    dets, outs = [], []
    for k in range(n_chunks):
        b = min(chunk_size, trajectories - k * chunk_size)
        out = _run_chunk(spec, sf, decay_fn, cycles, b, seed, k, profile.cz_perception_factor, q,
                         norm_check)
        det = detections_from_outcomes(out, ref)
        det_sum += det.sum(axis=(0, 2))
        if keep_records:
            dets.append(det)
            outs.append(out)
    prob = det_sum / (trajectories * len(spec.measure_qubits))
    meta = {"basis": spec.basis, "variant": spec.variant, "n_data": spec.n_data, "seed": seed,
            "trajectories": trajectories, "background_flip": q, "amplitude": profile.amplitude}
    if keep_records:
        return DetectionRecord(np.concatenate(dets), np.concatenate(outs), prob, meta)
    return DetectionRecord(np.zeros((0, cycles, 0), bool), np.zeros((0, cycles, 0), bool), prob, meta)


def step_excess(record: DetectionRecord, profile: InjectionProfile, baseline: float = 0.10) -> float:
    """Mean detection probability over the step (its first cycle excluded) minus the baseline."""
    s = profile.start_cycle + 1
    e = profile.start_cycle + profile.n_cycles
    return float(record.probability[s:e].mean() - baseline)


def sweep_detection_vs_shift(spec: CircuitSpec, amplitudes, trajectories: int = 20000,
                             n_cycles: int = 15, baseline: float = 0.10, seed: int = 0,
                             cz_perception_factor: float = 1.0, chunk_size: int = 4000):
    """Mean detection probability during the step for each amplitude (Hz).

    Returns (amplitudes, probability, standard error).
    """
    amps = np.asarray(amplitudes, dtype=float)
    probs, errs = [], []
    for j, a in enumerate(amps):
        prof = InjectionProfile(a, 2, n_cycles, cz_perception_factor=cz_perception_factor)
        rec = run_trajectories(spec, prof, trajectories=trajectories, baseline=baseline,
                               seed=seed + 7919 * j, chunk_size=chunk_size, keep_records=True)
        s, e = prof.start_cycle + 1, prof.start_cycle + prof.n_cycles
        per_traj = rec.detections[:, s:e].mean(axis=(1, 2))
        probs.append(float(per_traj.mean()))
        errs.append(float(per_traj.std(ddof=1) / math.sqrt(per_traj.size)))
    return amps, np.array(probs), np.array(errs)


def downturn_onset(amps, probs, half_width: int = 2) -> float:
    """Amplitude of the curve maximum, refined by a local quadratic fit."""
    amps = np.abs(np.asarray(amps, dtype=float))
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(amps)
    amps, probs = amps[order], probs[order]
    i = int(np.argmax(probs))
    lo, hi = max(0, i - half_width), min(amps.size, i + half_width + 1)
    if hi - lo < 3:
        return float(amps[i])
    c = np.polyfit(amps[lo:hi], probs[lo:hi], 2)
    if c[0] >= 0:
        return float(amps[i])
    return float(np.clip(-c[1] / (2 * c[0]), amps[lo], amps[hi - 1]))


# ---------------------------------------------------------------------------
# interleaved monitoring


@dataclass
class InterleavedResult:
    times: np.ndarray                 # cycle start times (s)
    qec_probability: np.ndarray       # detection probability per cycle
    r_errors: np.ndarray              # mean R error count per cycle across monitors
    t1_errors: np.ndarray             # mean T1 error count per cycle across monitors
    record: DetectionRecord
    series: object = None             # GridSeries of monitor outcomes (first realization)


def run_interleaved(spec: CircuitSpec, profile, event, duration: float, seed: int = 0,
                    trajectories: int = 64, pre_cycles: int = 50, r_tau: float = 74e-9,
                    t1_wait: float = 92e-9, baseline: float = 0.10) -> InterleavedResult:
    """Code cycles and monitor sequences driven by one shared impact event.

    ``profile`` is a DeviceProfile whose grid holds the code chain ('d'/'m')
    and monitor qubits ('o'); ``event`` is an impact_synthesizer.ImpactEvent
    whose ``t0`` is placed ``pre_cycles`` cycles into the run.  Trajectories
    are independent repetitions of the same impact.
    """
    from . import impact_synthesizer as isyn

    tm = profile.timing
    grid = profile.grid
    chain = grid.chain()
    if len(chain) < spec.n_qubits:
        raise ValueError("grid chain shorter than the circuit")
    chain = chain[:spec.n_qubits]
    n_cycles = int(round(duration / tm.qec_cycle))
    times = (np.arange(n_cycles) - pre_cycles) * tm.qec_cycle + event.t0
    model = isyn.QubitStateModel(profile, [event])
    shifts = model.shifts(times)                 # (n_qubits, n_cycles)
    g10 = model.gamma_10(times)
    q_chain = np.asarray(chain)

    def shift_fn(c):
        return shifts[q_chain, c]

    def decay_fn(c):
        return g10[q_chain, c]

    dummy = InjectionProfile(0.0, 0, 0)
    rec = run_trajectories(spec, dummy, cycles=n_cycles, trajectories=trajectories, baseline=baseline,
                           seed=seed, chunk_size=trajectories, decay_fn=decay_fn, shift_fn=shift_fn)
    monitors = grid.indices_with_role("monitor")
    r_q = [q for q in monitors if sum(grid.active_sites[q]) % 2 == 0]
    t1_q = [q for q in monitors if q not in r_q]
    ro = 1 - tm.assignment_fidelity
    st_r = isyn.OutcomeState(shifts[r_q], model.gamma_10(times)[r_q], 0.0,
                             model.gamma_phi(times)[r_q], profile.noise.floor_R, ro)
    p_r = isyn.outcome_probability(isyn.SequenceSpec("R", free_time=r_tau), st_r)
    st_t = isyn.OutcomeState(shifts[t1_q], g10[t1_q], 0.0, 0.0, profile.noise.floor_T1, ro)
    p_t = isyn.outcome_probability(isyn.SequenceSpec("T1", wait=t1_wait), st_t)
    rng = _rng_for(seed, 10**6, 0, 2)
    r_draw = rng.random((trajectories,) + p_r.shape) < p_r
    t_draw = rng.random((trajectories,) + p_t.shape) < p_t
    r_err = r_draw.sum(axis=1).mean(axis=0)
    t_err = t_draw.sum(axis=1).mean(axis=0)
    # first realization as a grid record: code detections on the measure qubits, monitors by kind
    nq = profile.n_qubits
    out = np.zeros((3, nq, n_cycles), dtype=np.uint8)
    masks = np.zeros((3, nq), dtype=bool)
    m_q = q_chain[spec.measure_qubits]
    out[0, m_q] = rec.detections[0].T
    out[1, r_q], out[2, t1_q] = r_draw[0], t_draw[0]
    masks[0, m_q], masks[1, r_q], masks[2, t1_q] = True, True, True
    series = isyn.GridSeries(["M", "R", "T1"], np.zeros(3), tm.qec_cycle, out, masks, float(times[0]),
                             {"experiment": "repcode_interleaved", "seed": seed, "variant": spec.variant,
                              "basis": spec.basis, "profile_hash": profile.profile_hash(),
                              "event": event.to_dict()})
    return InterleavedResult(times, rec.probability, r_err, t_err, rec, series)
