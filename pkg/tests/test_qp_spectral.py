import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from qpburst import qp_spectral as qs
from qpburst.device_model import H, MaterialParams, QubitParams, default_profile, normal_phonon_time

QP = QubitParams(6e9, 46e9 * H, 58e9 * H)
MP = default_profile().material
TAU = normal_phonon_time(MP, QP.delta_L)


@pytest.fixture(scope="module")
def sol():
    return qs.default_scaling_solution()


@pytest.fixture(scope="module")
def flat_run():
    ed = qs.log_cell_edges(1e-6, 10, 30)
    w, _ = qs.cell_weights(ed, "full")
    return qs.run_kinetic(w.copy(), ed, 1e7, kernel="full")


# phonon rate -----------------------------------------------------------------

@pytest.mark.parametrize("E", [1e-4, 1e-3, 5e-3, 1e-2])
def test_rate_asymptotics(E):
    eps = QP.delta_L * (1 + E)
    ratio = qs.qp_phonon_rate(eps, QP, MP) / qs.asymptotic_phonon_rate(eps, QP, MP)
    assert ratio == pytest.approx(1.0, abs=0.02)


def test_alpha_constant():
    assert qs.ALPHA_PH == pytest.approx(2.873, abs=1e-3)
    assert qs.quad_small_kernel() == pytest.approx(64 / 63, rel=1e-12)


def test_rate_power_law():
    r = qs.phonon_rate_reduced(2e-4) / qs.phonon_rate_reduced(1e-4)
    assert r == pytest.approx(2**4.5, rel=1e-3)


def test_rate_at_gap_scale_against_direct_quadrature():
    E = 1.0
    eps = 1 + E
    f = lambda ep: ep / math.sqrt(ep + 1) * (1 - 1 / (eps * ep)) * 4 * (eps - ep) ** 3
    oracle = integrate.quad(f, 1, eps, weight="alg", wvar=(-0.5, 0), epsrel=1e-12)[0]
    assert qs.phonon_rate_reduced(E) == pytest.approx(oracle, rel=1e-9)
    rate = qs.qp_phonon_rate(2 * QP.delta_L, QP, MP)
    assert 1 / 3 < rate * TAU < 3


def test_rate_domain():
    with pytest.raises(ValueError):
        qs.qp_phonon_rate(QP.delta_L, QP, MP)


# kinetic equation ----------------------------------------------------------------

def test_gap_edge_is_stationary():
    ed = qs.log_cell_edges(1e-4, 10, 30)
    N = np.zeros(ed.size - 1)
    N[0] = 1e-6
    d = qs.EnergyDistribution.from_reduced(ed, N, QP.delta_L)
    d2 = qs.evolve_kinetic(d, 10 * TAU, MP, QP)
    np.testing.assert_allclose(d2.occupation, d.occupation, rtol=1e-14, atol=0)


def test_conservation_and_energy_monotone_over_many_steps():
    d = qs.flat_distribution(QP, 1e-5)
    x0 = d.density()
    e_prev = d.mean_excess_energy()
    for k in range(10_000):
        d = qs.evolve_kinetic(d, 0.05 * TAU, MP, QP)
        if k % 500 == 0:
            e = d.mean_excess_energy()
            assert e <= e_prev * (1 + 1e-12)
            e_prev = e
    assert abs(d.density() / x0 - 1) < 1e-5
    assert d.mean_excess_energy() < 0.5 * qs.flat_distribution(QP, 1e-5).mean_excess_energy()


def test_single_step_conservation():
    d = qs.flat_distribution(QP, 1e-5)
    d2 = qs.evolve_kinetic(d, TAU, MP, QP)
    assert abs(d2.density() / d.density() - 1) < 1e-6


def test_explicit_step_size_guard():
    d = qs.flat_distribution(QP, 1e-5)
    with pytest.raises(qs.StepSizeError):
        qs.evolve_kinetic(d, 1.0 * TAU, MP, QP, method="explicit")
    small = qs.evolve_kinetic(d, 1e-5 * TAU, MP, QP, method="explicit")
    assert small.density() == pytest.approx(d.density(), rel=1e-12)


def test_resolution_guard():
    d = qs.flat_distribution(QP, 1e-5, per_decade=10)
    with pytest.raises(ValueError):
        qs.evolve_kinetic(d, TAU, MP, QP)


def test_mean_energy_power_law(flat_run):
    for lo in (1e3, 1e4, 1e5):
        slope = qs.loglog_slope(flat_run.times, flat_run.mean_energy, lo, 100 * lo)
        assert slope == pytest.approx(-2 / 9, abs=0.02)
    assert abs(flat_run.total[-1] / flat_run.total[0] - 1) < 1e-10


def test_different_initial_conditions_converge():
    ed = qs.log_cell_edges(1e-7, 10, 30)
    w, c = qs.cell_weights(ed, "small")
    t = 1e7
    a = qs.run_kinetic(w.copy(), ed, t, kernel="small", save_at=(t,))
    N_box = np.where((c > 1.0) & (c < 3.0), w, 0.0)
    b = qs.run_kinetic(N_box, ed, t, kernel="small", save_at=(t,))
    pa = qs.rescale(a.snapshots[t], ed, t)
    pb = qs.rescale(b.snapshots[t], ed, t)
    assert qs.profile_distance(pa, pb) < 0.05


# scaling solution ---------------------------------------------------------------

def test_scaling_normalization(sol):
    assert sol.normalization() == pytest.approx(1.0, abs=1e-3)


def test_scaling_self_similarity(sol):
    assert sol.convergence < 0.05
    assert sol.residual() < 0.02


def test_scaling_shape(sol):
    xs = np.array([0.0, 1e-3, 0.1, 1.0, 3.0, 6.0])
    phi = sol(xs)
    assert np.isfinite(phi[0]) and phi[0] > 0
    assert np.all(phi >= 0)
    assert phi[-1] < 1e-2 * phi[0]
    assert np.all(np.diff(sol.phi) <= 1e-12)


def test_energy_scale_at_tau():
    assert qs.ScalingSolution.energy_scale(TAU, TAU, QP.delta_L) == pytest.approx(QP.delta_L, rel=1e-14)


@given(st.floats(1e-9, 1e-3))
@settings(max_examples=30, deadline=None)
def test_energy_scale_law(t):
    e1 = qs.ScalingSolution.energy_scale(t, TAU, 1.0)
    e2 = qs.ScalingSolution.energy_scale(4 * t, TAU, 1.0)
    assert e2 / e1 == pytest.approx(4 ** (-2 / 9), rel=1e-12)


# structure factor -----------------------------------------------------------------

def box(lo, hi, amp):
    f = lambda e: amp if lo <= e <= hi else 0.0
    f.support = (lo, hi)
    f.breakpoints = [lo, hi]
    return f


def test_structure_factor_cold_is_gated():
    cold = box(QP.delta_L, QP.delta_L + 0.2 * QP.d_delta, 1e-3)
    assert qs.structure_factor(QP.f_q, cold, QP) == 0.0
    assert qs.structure_factor(-QP.f_q, cold, QP) == 0.0


def test_structure_factor_excitation_needs_hot():
    hot = box(QP.delta_L + 1.1 * QP.d_delta, QP.delta_L + 1.5 * QP.d_delta, 1e-3)
    assert qs.structure_factor(-QP.f_q, hot, QP) > 0
    assert qs.structure_factor(QP.f_q, hot, QP) > qs.structure_factor(-QP.f_q, hot, QP)


def test_structure_factor_linear_and_routes_agree():
    d = qs.flat_distribution(QP, 1e-5, e_top=1.0)
    s_cells = qs.structure_factor(-QP.f_q, d, QP)
    s_quad = qs.structure_factor(-QP.f_q, lambda e: d.occupation_at(e), QP)
    assert s_cells == pytest.approx(s_quad, rel=2e-3)
    assert qs.structure_factor(-QP.f_q, d.scaled(2.0), QP) == pytest.approx(2 * s_cells, rel=1e-12)
    g01, g10 = qs.transition_rates(d, QP)
    assert g01 == pytest.approx(4 * math.pi * QP.f_q * s_cells, rel=1e-12)
    assert g10 > g01 > 0


# burst curves ---------------------------------------------------------------------

T = np.geomspace(1e-9, 1e-3, 121)


def test_duration_ratio_formula():
    assert qs.duration_ratio_formula(12e9 * H, 6e9) == pytest.approx(2**4.5, abs=0.01)


def test_burst_curves_zero_density():
    p1, t1 = qs.burst_error_curves(0.0, 14e-9, 1e5, T, qp=QP)
    assert not p1.any() and not t1.any()


def test_burst_curves_ordering():
    p1, t1 = qs.burst_error_curves(1e-4, 14e-9, 1e5, T, qp=QP)
    assert qs.threshold_crossing(T, p1) < qs.threshold_crossing(T, t1)
    e, r = qs.kinetic_burst_curves(QP, np.geomspace(1e-1, 1e7, 81))
    tr = np.geomspace(1e-1, 1e7, 81)
    assert qs.threshold_crossing(tr, e) < qs.threshold_crossing(tr, r)


def test_kinetic_crossing_ratio():
    tr = np.geomspace(1e-1, 1e7, 81)
    e, r = qs.kinetic_burst_curves(QP, tr)
    ratio = qs.threshold_crossing(tr, r) / qs.threshold_crossing(tr, e)
    assert 15 <= ratio <= 30


def test_fit_tau_recovers_14ns():
    p1, t1 = qs.burst_error_curves(1e-4, 14e-9, 1e5, T, qp=QP)
    rng = np.random.default_rng(4)
    p1n = p1 * (1 + 0.05 * rng.standard_normal(p1.size))
    t1n = t1 * (1 + 0.05 * rng.standard_normal(t1.size))
    tau, nscale = qs.fit_tau_phN(T, p1n, t1n, 1e-4, QP)
    assert tau == pytest.approx(14e-9, rel=0.10)
    assert nscale == pytest.approx(1e5, rel=0.2)


# distribution type -------------------------------------------------------------------

def test_distribution_validation():
    with pytest.raises(ValueError):
        qs.EnergyDistribution(np.array([2.0, 1.0]), np.array([0.1, 0.1]), 0.5)
    with pytest.raises(ValueError):
        qs.EnergyDistribution(np.array([1.0, 2.0]), np.array([0.1, 1.5]), 0.5)
    d = qs.flat_distribution(QP, 3e-5)
    assert d.density() == pytest.approx(3e-5, rel=1e-12)
    assert d.occupation_at(QP.delta_L * 20) == 0.0
