import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpburst import burst_pipeline as B
from qpburst import impact_synthesizer as S
from qpburst.device_model import ConfigError, default_profile


@pytest.fixture(scope="module")
def prof():
    return default_profile()


@pytest.fixture(scope="module")
def af(prof):
    return S._shift_coefficients(prof) * prof.f_q


def R(tau=750e-9):
    return S.SequenceSpec("R", free_time=tau)


# outcome model --------------------------------------------------------------------

def test_ramsey_limits():
    assert S.outcome_probability(R(), S.OutcomeState()) == 0.0
    assert S.outcome_probability(R(), S.OutcomeState(delta_f=1 / (2 * 750e-9))) == pytest.approx(1.0)


def test_simultaneous_errors_at_230khz():
    p = S.outcome_probability(R(), S.OutcomeState(delta_f=np.full(15, 230e3)))
    assert p.sum() == pytest.approx(4.0, abs=0.05)


@given(st.floats(-5e6, 5e6), st.floats(0, 1e7))
@settings(max_examples=100, deadline=None)
def test_echo_immunity(df, g10):
    st_ = S.OutcomeState(delta_f=df, readout_error=0.01)
    p = S.outcome_probability(S.SequenceSpec("E", free_time=750e-9), st_)
    assert p == 0.01


def test_relaxation_and_excitation():
    st_ = S.OutcomeState(gamma_10=2e5, gamma_01=5e4, background=0.0)
    assert S.outcome_probability(S.SequenceSpec("T1", wait=1e-6), st_) == pytest.approx(1 - math.exp(-0.2))
    assert S.outcome_probability(S.SequenceSpec("P1", wait=1e-6), st_) == pytest.approx(1 - math.exp(-0.05))
    p = S.outcome_probability(S.SequenceSpec("T1", wait=1e-6), S.OutcomeState(background=0.1, readout_error=0.01))
    assert p == pytest.approx(0.1 + 0.01 - 2 * 0.1 * 0.01)


def test_bad_kind():
    with pytest.raises(ValueError):
        S.SequenceSpec("X")


@given(st.sampled_from(S.KINDS), st.floats(-2e7, 2e7), st.floats(0, 1e8), st.floats(0, 1e8),
       st.floats(0, 1e8), st.floats(0, 0.5), st.floats(0, 0.5))
@settings(max_examples=200, deadline=None)
def test_probability_bounds(kind, df, g10, g01, gphi, bg, ro):
    seq = S.SequenceSpec(kind, free_time=500e-9, wait=1e-6)
    p = S.outcome_probability(seq, S.OutcomeState(df, g10, g01, gphi, bg, ro))
    assert 0.0 <= float(p) <= 1.0


# tomography estimator ----------------------------------------------------------------

def test_tomography_quadrant():
    assert S.tomography_estimate(np.full(10, 0.5), np.zeros(10), 100e-9) == pytest.approx(1 / (4 * 100e-9))
    assert S.tomography_estimate(np.zeros(10), np.full(10, 0.5), 100e-9) == 0.0
    with pytest.raises(ValueError):
        S.tomography_estimate(np.zeros(9), np.zeros(9), 100e-9)


def test_tomography_noiseless_inversion():
    st_ = S.OutcomeState(delta_f=-2.7e6)
    prx = S.outcome_probability(S.SequenceSpec("RX", free_time=100e-9), st_)
    pry = S.outcome_probability(S.SequenceSpec("RY", free_time=100e-9), st_)
    est = S.tomography_estimate(np.full(10, prx), np.full(10, pry), 100e-9)
    assert est == pytest.approx(-2.7e6, rel=1e-12)


# impacts ----------------------------------------------------------------------------

def test_impact_count_two_hours(prof):
    ev = S.sample_impacts(1 / 71, 7200, rng_seed=3, profile=prof)
    assert 81 <= len(ev) <= 121
    assert S.sample_impacts(1 / 71, 0.0, profile=prof) == []
    with pytest.raises(ValueError):
        S.sample_impacts(0.0, 10.0)


def test_impact_determinism(prof):
    a = S.sample_impacts(1 / 71, 3600, rng_seed=9, profile=prof)
    b = S.sample_impacts(1 / 71, 3600, rng_seed=9, profile=prof)
    assert [e.to_dict() for e in a] == [e.to_dict() for e in b]
    c = S.sample_impacts(1 / 71, 3600, rng_seed=10, profile=prof)
    assert [e.to_dict() for e in a] != [e.to_dict() for e in c]


def test_impact_calibration(prof, af):
    ev = S.sample_impacts(prof.impacts.rate, 50 * 3600, rng_seed=1, profile=prof)
    pos = prof.grid.positions()
    peak, size = [], []
    for e in ev:
        d = np.hypot(pos[:, 0] - e.epicenter[0], pos[:, 1] - e.epicenter[1])
        sh = af * e.peak_x_qp * np.exp(-d / e.spatial_scale)
        peak.append(sh.max())
        size.append(int((sh > 200e3).sum()))
    assert np.median(peak) == pytest.approx(2e6, rel=0.1)
    assert np.median(size) == pytest.approx(15, rel=0.2)
    # large bursts: about one per 22 minutes at one impact per 71 s
    assert np.mean(np.array(size) > 30) == pytest.approx(71 / (22 * 60), abs=0.03)
    for e in ev:
        assert e.hot_fraction_timescales[0] < e.hot_fraction_timescales[1]


def _peaks(prof, af, ev):
    pos = prof.grid.positions()
    return np.array([max(af * e.peak_x_qp * np.exp(-np.hypot(pos[:, 0] - e.epicenter[0],
                                                             pos[:, 1] - e.epicenter[1]) / e.spatial_scale))
                     for e in ev])


def test_peak_shift_laws(prof, af):
    power = _peaks(prof, af, S.sample_impacts(prof.impacts.rate, 20 * 3600, rng_seed=2, profile=prof))
    logn = replace(prof.impacts, peak_shift_law="lognormal")
    ln = _peaks(prof, af, S.sample_impacts(prof.impacts.rate, 20 * 3600, logn, rng_seed=2, profile=prof))
    assert np.median(ln) == pytest.approx(2e6, rel=0.1)
    # bounded power law: no sub-MHz tail, unlike the lognormal
    assert np.percentile(power, 5) > 1.0e6 > np.percentile(ln, 5)
    # tail exponent: P(peak > s) ~ s**-2 well above the median
    hi = np.sort(power)[::-1]
    assert np.mean(hi > 8e6) / np.mean(hi > 4e6) == pytest.approx(0.25, abs=0.12)
    with pytest.raises(ConfigError):
        replace(prof.impacts, peak_shift_law="flat").check()


def test_event_validation():
    with pytest.raises(ValueError):
        S.ImpactEvent(0.0, (0, 0), 0.0, 1e-3)
    with pytest.raises(ValueError):
        S.ImpactEvent(0.0, (0, 0), 1e-4, 1e-3, (2e-5, 1e-5))


def test_density_field_cases():
    ev = S.ImpactEvent(1.0, (0.0, 0.0), 3e-4, 1.15e-3, recombination_rate=1 / 88e-9)
    assert S.density_field(ev, (0.0, 0.0), 1.0) == pytest.approx(3e-4)
    assert S.density_field(ev, (1.15e-3, 0.0), 1.0) == pytest.approx(3e-4 / math.e)
    later = S.density_field(ev, (0.0, 0.0), 1.001)
    assert 3e-4 / later == pytest.approx(1 + 3e-4 * 1e-3 / 88e-9, rel=1e-12)
    with pytest.raises(ValueError):
        S.density_field(ev, (0.0, 0.0), 0.5)


@given(st.floats(0.0, 5e-3), st.floats(0.0, 5e-3), st.floats(1e-7, 1e-2), st.floats(0, 1e-4))
@settings(max_examples=100, deadline=None)
def test_spatial_monotonicity(d1, d2, x0, dt):
    ev = S.ImpactEvent(0.0, (0.0, 0.0), x0, 1.15e-3)
    near, far = sorted([d1, d2])
    xn = S.density_field(ev, (near, 0.0), dt)
    xf = S.density_field(ev, (far, 0.0), dt)
    assert xn >= xf


def test_ramsey_error_monotone_in_distance_below_wrap(prof, af):
    """R-error probability falls with distance while the Ramsey phase stays below pi."""
    pos = prof.grid.positions()
    q = 30
    x0 = 600e3 / af[q]
    ev = S.ImpactEvent(0.0, tuple(pos[q]), x0, prof.impacts.spatial_scale, (1e-6, 20e-6))
    m = S.QubitStateModel(prof, [ev])
    t = np.array([5e-6])
    st_ = m.outcome_state(t, None, 0.0, 0.0)
    p = S.outcome_probability(R(), st_)[:, 0]
    d = np.hypot(*(pos - pos[q]).T)
    order = np.argsort(d)
    # equal distances may differ through a_f; compare distinct distance shells only
    shells = np.unique(np.round(d[order], 9))
    pmax = [p[np.isclose(d, s)].max() for s in shells]
    pmin = [p[np.isclose(d, s)].min() for s in shells]
    assert all(pmin[i] >= pmax[i + 1] * 0.9 for i in range(len(shells) - 1))
    assert np.all(np.diff(m.density(t)[order, 0]) <= 1e-18)


def test_hot_window_ordering(prof):
    pos = prof.grid.positions()
    ev = S.ImpactEvent(0.0, tuple(pos[30]), 3e-4, 1.15e-3, (35e-6 / 22.6, 35e-6))
    m = S.QubitStateModel(prof, [ev])
    t = np.linspace(0, 400e-6, 4001)
    g01 = m.gamma_01(t, [30])[0]
    g10 = m.gamma_10(t, [30])[0]
    frac01, frac10 = g01 / g01[0], g10 / g10[0]
    t01 = t[np.argmax(frac01 < 1e-3)]
    t10 = t[np.argmax(frac10 < 1e-3)]
    assert t01 < t10


# episodes ---------------------------------------------------------------------------

def test_episodes_pairing(prof):
    nb = S.lattice_neighbours(prof.grid)
    eps = S.sample_episodes(prof.noise, prof.n_qubits, 3600, 2, nb)
    by_start = {}
    for e in eps:
        by_start.setdefault((e.t_start, e.duration), []).append(e.qubit)
    pairs = [v for v in by_start.values() if len(v) == 2]
    singles = [v for v in by_start.values() if len(v) == 1]
    frac = len(pairs) / (len(pairs) + len(singles))
    assert frac == pytest.approx(prof.noise.episode_pair_fraction, abs=0.03)
    for a, b in pairs:
        assert b in nb[a] or a in nb[b]
    expect = prof.noise.episode_rate * 3600 * prof.n_qubits
    assert len(singles) + len(pairs) == pytest.approx(expect, rel=0.1)


# datasets ---------------------------------------------------------------------------

def test_layouts_fit(prof):
    expect = {"scan_RET1": 5e-6, "tomography": 4.9e-6, "fast_T1": 12.4e-6, "excitation_P1": 12.2e-6,
              "interleaved_monitor": 944e-9}
    for name, period in expect.items():
        per, slots = S.experiment_layout(prof, name)
        assert per == pytest.approx(period)
        assert all(0 < s.offset < per for s in slots)
    _, slots = S.experiment_layout(prof, "fast_T1")
    assert [s.seq.kind for s in slots] == ["R"] + ["T1"] * 6
    with pytest.raises(ValueError):
        S.experiment_layout(prof, "nope")


def test_dataset_determinism(prof):
    a = S.generate_dataset(prof, "scan_RET1", 0.02, seed=5)
    b = S.generate_dataset(prof, "scan_RET1", 0.02, seed=5)
    assert a.to_bytes() == b.to_bytes()
    c = S.generate_dataset(prof, "scan_RET1", 0.02, seed=6)
    assert not np.array_equal(a.outcomes, c.outcomes)
    with pytest.raises(ValueError):
        S.generate_dataset(prof, "scan_RET1", 1e-6)


def test_grid_round_trip(prof, tmp_path):
    g = S.generate_dataset(prof, "interleaved_monitor", 2e-3, seed=1)
    back = S.GridSeries.from_bytes(g.to_bytes())
    np.testing.assert_array_equal(back.outcomes, g.outcomes)
    np.testing.assert_array_equal(back.masks, g.masks)
    assert back.kinds == g.kinds and back.metadata == g.metadata
    g.save(tmp_path / "g.bin")
    assert S.GridSeries.load(tmp_path / "g.bin").to_bytes() == g.to_bytes()
    with pytest.raises(ValueError):
        S.GridSeries.from_bytes(b"garbage" + g.to_bytes())
    csv = g.to_csv("R").splitlines()
    assert csv[0].startswith("time_s,kind,q0")
    assert len(csv) == 1 + g.n_cycles
    assert csv[1].split(",")[1] == "R"
    float(csv[1].split(",")[0])


@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 40), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_grid_bytes_round_trip_property(slots, nq, nc, seed):
    rng = np.random.default_rng(seed)
    g = S.GridSeries(["R"] * slots, np.zeros(slots), 1e-6, rng.integers(0, 2, (slots, nq, nc)),
                     np.ones((slots, nq), bool), 0.5, {"seed": seed})
    back = S.GridSeries.from_bytes(g.to_bytes())
    np.testing.assert_array_equal(back.outcomes, g.outcomes)
    assert back.t_start == 0.5


def test_scan_background_statistics(prof):
    g = S.generate_dataset(prof, "scan_RET1", 1.0, seed=1, events=[], episodes=False)
    _, sig = B.error_count_series(g, "R")
    assert sig.mean() == pytest.approx(2.8, abs=0.05)
    assert sig.std() == pytest.approx(1.6, abs=0.1)


def test_echo_errors_stay_at_floor_during_shift(prof, af):
    """Quasi-static shift only (hot window switched off): E stays at its floor, R does not."""
    import dataclasses
    ip = dataclasses.replace(prof.impacts, t1_rate_peak=0.0, p1_rate_peak=0.0, e_rate_peak=0.0)
    p2 = dataclasses.replace(prof, impacts=ip)
    pos = p2.grid.positions()
    ev = S.ImpactEvent(5e-3, tuple(pos[30]), 2e6 / af[30], 1.15e-3)
    m = S.QubitStateModel(p2, [ev])
    t = np.linspace(5e-3, 6e-3, 50)
    ro = 1 - p2.timing.assignment_fidelity
    pe = S.outcome_probability(S.SequenceSpec("E", free_time=750e-9), m.outcome_state(t, None, 0.0, ro))
    assert np.all(pe == ro)
    pr = S.outcome_probability(R(), m.outcome_state(t, None, 0.0, ro))
    assert pr.max() > 0.5


def test_tomography_closed_loop(prof, af):
    r_true = 1 / 105e-9
    pos = prof.grid.positions()
    per, sl = S.experiment_layout(prof, "tomography")
    errs = []
    for seed in range(20):
        ev = S.ImpactEvent(0.01, tuple(pos[30]), 2.7e6 / af[30], 1.15e-3, recombination_rate=r_true)
        n = int(5e-3 // per) // 10 * 10
        times = ev.t0 + per * np.arange(n)
        m = S.QubitStateModel(prof, [ev])
        qs = np.arange(prof.n_qubits)
        prx = S._slot_probability(prof, m, sl[1], times, qs)
        pry = S._slot_probability(prof, m, sl[2], times, qs)
        rng = np.random.default_rng(seed)
        c, s = S.tomography_windows(rng.random(prx.shape) < prx, rng.random(pry.shape) < pry)
        tw = (np.arange(c.shape[1]) * 10 + 4.5) * per
        r, d = S.fit_event_recombination(tw, c, s, af, 1 / 88e-9, min_shift=300e3, max_qubits=20)
        errs.append(r / r_true - 1)
    errs = np.array(errs)
    assert np.median(np.abs(errs)) < 0.15
    assert abs(errs.mean()) < 0.05


def test_tomography_section_sizes(prof):
    quiet = S.tomography_section(prof, None, 1.0, seed=1)
    sigma_f = float(np.std(quiet.est_shift))
    assert 40e3 < sigma_f < 150e3
    pos = prof.grid.positions()
    af = S._shift_coefficients(prof) * prof.f_q
    ev = S.ImpactEvent(2.0, tuple(pos[30]), 2.7e6 / af[30], prof.impacts.spatial_scale)
    sec = S.tomography_section(prof, ev, 2.0, seed=1)
    i = int(np.argmax(np.abs(sec.true_shift)))
    assert sec.est_shift[i] == pytest.approx(sec.true_shift[i], abs=3 * sigma_f)
    true_size = int((np.abs(sec.true_shift) > 200e3).sum())
    assert abs(B.burst_size(sec.est_shift, 67e3) - true_size) <= 4


def test_fast_t1_burst_duration(prof, af):
    pos = prof.grid.positions()
    ev = S.ImpactEvent(2e-3, tuple(pos[30]), 4e6 / af[30], 1.15e-3, (35e-6 / 22.6, 35e-6))
    g = S.generate_dataset(prof, "fast_T1", 4e-3, seed=1, events=[ev], episodes=False)
    tm, c = B.error_count_series(g, "T1")
    sel = (tm > 1.6e-3) & (tm < 2.6e-3)
    f = B.fit_t1_burst(tm[sel], c[sel], b=1.9)
    assert f.size >= 12
    assert 20e-6 <= f.t_T1 <= 50e-6


def test_campaign_counts(prof):
    a = list(S.campaign_counts(prof, 10.0, seed=3, block_duration=2.0))
    b = list(S.campaign_counts(prof, 10.0, seed=3, block_duration=2.0))
    assert all(x[0] == y[0] and np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    counts = np.concatenate([c for _, c in a])
    assert counts.size == round(10.0 / 5e-6)
    assert counts.mean() == pytest.approx(2.8, abs=0.1)


def test_campaign_counts_see_impact(prof, af):
    pos = prof.grid.positions()
    ev = S.ImpactEvent(1.0, tuple(pos[30]), 2e6 / af[30], prof.impacts.spatial_scale)
    blocks = list(S.campaign_counts(prof, 2.0, seed=1, events=[ev], episodes=[], block_duration=1.0))
    counts = np.concatenate([c for _, c in blocks])
    c0 = int(1.0 / 5e-6)
    assert counts[c0:c0 + 200].mean() > counts[:c0 - 1000].mean() + 3


def test_labeled_sections():
    pre, tr = S.box_event_section(0, length=150e-6)
    assert pre.shape[0] == tr.shape[0] == 4
    i0, i1 = int(100e-6 / 944e-9), int(250e-6 / 944e-9)
    assert tr[:2, i0:i1].mean() > 0.9
    assert tr[2:, i0:i1].mean() < 0.2
    pre, tr = S.decaying_burst_section(0, tau=100e-6, strength=20.0)
    i0 = int(100e-6 / 944e-9)
    assert tr[0, i0:i0 + 50].mean() < 0.62
