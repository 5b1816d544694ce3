import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpburst import repcode_sim as R
from qpburst.device_model import TimingParams, default_profile

TM = default_profile().timing


# gates ---------------------------------------------------------------------------

def test_zero_detuning_gives_ideal_gates():
    for pulse in ("pi", "H"):
        U = R.detuned_1q_unitary(0.0, pulse, TM.t_1q)
        assert R.average_gate_fidelity(R.ideal_gate(pulse), U) == pytest.approx(1.0, abs=1e-12)
    H = R.ideal_gate("H")
    psi = H @ np.array([1, 0])
    assert abs(psi[0]) ** 2 == pytest.approx(0.5)


@pytest.mark.parametrize("df", [1e6, 3e6])
def test_pi_pulse_infidelity_matches_closed_form(df):
    U = R.detuned_1q_unitary(df, "pi", TM.t_1q)
    num = 1 - R.average_gate_fidelity(R.ideal_gate("pi"), U)
    ref = 1 - R.pi_pulse_fidelity_formula(df, TM.t_1q)
    assert num == pytest.approx(ref, rel=0.05)


def test_pi_pulse_infidelity_at_3mhz():
    assert 1 - R.pi_pulse_fidelity_formula(3e6, 25e-9) == pytest.approx(5.6e-3, abs=1.2e-3)


def test_hadamard_coefficient():
    assert R.hadamard_phase_coefficient(TM.t_1q) == pytest.approx(0.58, abs=0.01)


def test_gate_errors():
    with pytest.raises(ValueError):
        R.detuned_1q_unitary(0.0, "T", 25e-9)
    with pytest.raises(ValueError):
        R.detuned_1q_unitary(0.0, "pi", 0.0)
    with pytest.raises(R.NumericError):
        R.detuned_1q_unitary(0.0, "pi", 25e-9, n_steps=4)
    with pytest.raises(ValueError):
        R.phase_accumulation(1e6, -1.0)


@given(st.lists(st.floats(-5e6, 5e6), min_size=1, max_size=8))
@settings(max_examples=30, deadline=None)
def test_vectorized_unitaries(dfs):
    U = R.detuned_1q_unitary(np.array(dfs), "pi", TM.t_1q)
    for k, df in enumerate(dfs):
        np.testing.assert_allclose(U[k], R.detuned_1q_unitary(df, "pi", TM.t_1q), atol=1e-12)


def test_phase_accumulation():
    U = R.phase_accumulation(1e6, 250e-9)
    assert np.angle(U[0, 0] / U[1, 1]) == pytest.approx(2 * math.pi * 0.25)


# background flips -----------------------------------------------------------------

@pytest.mark.parametrize("p", [0.01, 0.05, 0.2])
def test_independence_oracle(p):
    mc = R.iid_flip_detection_rate(p, 200, 2000, seed=1)
    assert mc == pytest.approx(R.independence_check(p), abs=0.005)


@given(st.floats(0.0, 0.5))
def test_background_for_baseline_round_trip(b):
    q = R.background_flip_for_baseline(b)
    assert R.independence_check(q) == pytest.approx(b, abs=1e-12)


def test_background_domain():
    with pytest.raises(ValueError):
        R.background_flip_for_baseline(0.6)
    with pytest.raises(ValueError):
        R.independence_check(1.5)


# circuits ---------------------------------------------------------------------------

@pytest.mark.parametrize("basis,variant", [("X", "i"), ("X", "ii"), ("X", "iii"), ("Z", "plain"), ("Z", "echo")])
def test_timeline_fits_cycle(basis, variant):
    s = R.CircuitSpec(basis, variant)
    serial = [e for e in s.timeline if e.name != "dd_pi"]
    end = serial[-1].start + serial[-1].duration
    assert end == pytest.approx(TM.qec_cycle, abs=1e-12)
    if basis == "X":
        lo, hi = s.dd_window
        assert all(lo < c < hi for c in s.dd_centers())
        assert len(s.dd_centers()) == 3
    else:
        assert s.dd_centers() == []


def test_variant_windows():
    i, ii = R.CircuitSpec("X", "i"), R.CircuitSpec("X", "ii")
    assert i.dd_window[1] < ii.dd_window[1] == pytest.approx(TM.qec_cycle)
    assert R.CircuitSpec("X", "iii").t_cz < i.t_cz


def test_circuit_errors():
    with pytest.raises(ValueError):
        R.CircuitSpec("X", "plain")
    with pytest.raises(ValueError):
        R.CircuitSpec("Y", "i")
    with pytest.raises(ValueError):
        R.CircuitSpec("X", "i", n_data=1)
    bad = TimingParams(**{**vars(TM), "t_readout": 700e-9})
    with pytest.raises(ValueError):
        R.CircuitSpec("X", "i", timing=bad)


def test_injection_profile_roles():
    s = R.CircuitSpec("X", "i")
    p = R.InjectionProfile(-1e6, 2, 3, roles=("data",))
    assert np.array_equal(p.shifts(2, s) != 0, np.isin(np.arange(5), s.data_qubits))
    assert not p.shifts(5, s).any()
    assert p.total_cycles == 7


def test_reference_record_is_noiseless_frame():
    s = R.CircuitSpec("X", "i")
    rec = R.run_trajectories(s, R.InjectionProfile(0.0, 0, 0), cycles=12, trajectories=20,
                             background_flip=0.0)
    assert not rec.detections.any()
    assert rec.outcomes.shape == (20, 12, 2)


# trajectories ------------------------------------------------------------------------

def test_baseline_is_exact_without_shift():
    s = R.CircuitSpec("X", "i")
    rec = R.run_trajectories(s, R.InjectionProfile(0.0, 2, 15), trajectories=4000, seed=3)
    assert rec.probability[1:].mean() == pytest.approx(0.10, abs=0.005)


def test_chunking_does_not_change_results():
    s = R.CircuitSpec("X", "ii")
    p = R.InjectionProfile(-1.5e6, 2, 6)
    a = R.run_trajectories(s, p, trajectories=300, seed=5, chunk_size=100)
    b = R.run_trajectories(s, p, trajectories=300, seed=5, chunk_size=100, norm_check=True)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    c = R.run_trajectories(s, p, trajectories=300, seed=6, chunk_size=100)
    assert not np.array_equal(a.outcomes, c.outcomes)


def test_shift_raises_detections_and_is_even():
    s = R.CircuitSpec("X", "i")
    _, p, e = R.sweep_detection_vs_shift(s, [-1e6, 1e6], trajectories=1500, n_cycles=8)
    assert p.min() > 0.2
    assert abs(p[0] - p[1]) < 4 * math.hypot(*e)


def test_echo_variant_suppresses_shift():
    _, p_i, _ = R.sweep_detection_vs_shift(R.CircuitSpec("X", "i"), [-1e6], trajectories=1500, n_cycles=8)
    _, p_iii, _ = R.sweep_detection_vs_shift(R.CircuitSpec("X", "iii"), [-1e6], trajectories=1500, n_cycles=8)
    assert p_iii[0] < 0.13 < p_i[0]


def test_z_basis_plain_vs_echo():
    _, pz, _ = R.sweep_detection_vs_shift(R.CircuitSpec("Z", "plain"), [-2e6], trajectories=1500, n_cycles=8)
    _, pe, _ = R.sweep_detection_vs_shift(R.CircuitSpec("Z", "echo"), [-2e6], trajectories=1500, n_cycles=8)
    assert pe[0] <= pz[0] + 0.02


def test_larger_code_same_per_stabilizer_response():
    _, p3, e3 = R.sweep_detection_vs_shift(R.CircuitSpec("X", "i"), [-1e6], trajectories=600, n_cycles=6)
    _, p5, e5 = R.sweep_detection_vs_shift(R.CircuitSpec("X", "i", n_data=5), [-1e6], trajectories=300,
                                           n_cycles=6)
    assert p5[0] == pytest.approx(p3[0], abs=4 * math.hypot(e3[0], e5[0]))


def test_step_excess_and_onset():
    s = R.CircuitSpec("X", "i")
    p = R.InjectionProfile(-1e6, 3, 10)
    rec = R.run_trajectories(s, p, trajectories=1000, seed=2)
    assert R.step_excess(rec, p) > 0.1
    amps = np.linspace(0, 4e6, 9)
    probs = 0.1 + 0.2 * np.sin(np.pi * amps / 5e6)
    assert R.downturn_onset(amps, probs) == pytest.approx(2.5e6, rel=0.05)
    assert R.downturn_onset([1.0, 2.0], [0.1, 0.2]) == 2.0


def test_run_interleaved_shapes():
    from qpburst import impact_synthesizer as S
    prof = default_profile()
    af = S._shift_coefficients(prof) * prof.f_q
    chain = prof.grid.chain()
    pos = prof.grid.positions()
    ev = S.ImpactEvent(1e-3, tuple(pos[chain[2]]), 3e6 / af[chain[2]], 1.15e-3, (10e-6 / 22.6, 10e-6))
    res = R.run_interleaved(R.CircuitSpec("X", "i"), prof, ev, 150e-6, seed=1, trajectories=16)
    n = int(round(150e-6 / prof.timing.qec_cycle))
    assert res.times.size == res.qec_probability.size == res.r_errors.size == n
    assert res.qec_probability[55:70].mean() > res.qec_probability[:45].mean()
    assert res.t1_errors[50:55].mean() > res.t1_errors[:45].mean()
