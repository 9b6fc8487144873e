import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfd import kinetics as K
from netfd.errors import ConfigurationError, IntegrationError
from netfd.liouville import BOSON, FERMION
from netfd.perturbation import InteractionModel, ladder_model, transport_rate_direct
from netfd.renorm import distribution
from netfd.schedule import Curve

OMEGA = np.array([1.0, 2.0, 3.0])
CURVES = [Curve.constant(x) for x in OMEGA]


def pair_exchange_fermions(coupling=0.1, energies=(1.0, 2.0, 1.4, 1.6)):
    """``c0 c1 <-> c2 c3`` with antisymmetric vertex."""
    v = np.zeros((4,) * 4)
    for p, sp in [((0, 1), 1), ((1, 0), -1)]:
        for q, sq in [((2, 3), 1), ((3, 2), -1)]:
            v[p + q] = v[q + p] = sp * sq
    return InteractionModel(coupling, v, (FERMION,) * 4, tuple(energies))


@given(beta=st.floats(0.2, 5), mu=st.floats(-3, 0.9))
@settings(max_examples=40, deadline=None)
def test_bose_einstein_is_fixed_point(beta, mu):
    n = 1 / (np.exp(beta * (OMEGA - mu)) - 1)
    rate = K.markovian_collision(n, ladder_model(0.1), OMEGA, 0.05)
    assert np.max(np.abs(rate)) < 1e-12 * max(1.0, np.max(n) ** 3)


@given(beta=st.floats(0.2, 5), mu=st.floats(-2, 3))
@settings(max_examples=40, deadline=None)
def test_fermi_dirac_is_fixed_point(beta, mu):
    m = pair_exchange_fermions()
    om = np.array(m.energies)
    n = 1 / (np.exp(beta * (om - mu)) + 1)
    assert np.max(np.abs(K.markovian_collision(n, m, om, 0.05))) < 1e-12


@given(st.lists(st.floats(0, 3), min_size=3, max_size=3))
@settings(max_examples=40, deadline=None)
def test_collision_conserves_number_and_energy(n):
    rate = K.markovian_collision(np.array(n), ladder_model(0.1), OMEGA, 0.05)
    # gain and loss terms are quartic in n; the net rate is their small difference
    scale = (1 + max(n)) ** 4 / 0.05
    assert abs(rate.sum()) < 1e-14 * scale
    assert abs(rate @ OMEGA) < 1e-14 * scale


def test_relaxation_direction():
    # too many mode-2 quanta: 2 + 2 -> 1 + 3 dominates
    rate = K.markovian_collision(np.array([0.1, 1.0, 0.1]), ladder_model(0.1), OMEGA, 0.05)
    assert rate[1] < 0 < rate[0] and rate[2] > 0


def test_zero_coupling_and_bad_broadening():
    assert np.all(K.markovian_collision(np.array([0.3, 0.2, 0.1]), ladder_model(0.0), OMEGA, 0.05) == 0)
    with pytest.raises(ConfigurationError):
        K.markovian_collision(np.array([0.3, 0.2, 0.1]), ladder_model(0.1), OMEGA, 0.0)


def test_empty_history_rejected():
    with pytest.raises(ConfigurationError):
        K.transport_rhs(K.TransportState(), ladder_model(0.1), CURVES, 0.05)


def test_single_point_history_gives_zero():
    st_ = K.TransportState()
    st_.push(0.0, np.array([0.3, 0.2, 0.1]), np.zeros(3), ladder_model(0.1))
    assert np.all(K.transport_rhs(st_, ladder_model(0.1), CURVES, 0.05) == 0)


def test_switch_on_rate_matches_closed_form():
    m = ladder_model(0.05)
    n = np.array([0.3, 0.2, 0.1])
    detuned = [Curve.constant(x) for x in (1.0, 2.1, 3.0)]
    for T in (0.5, 2.0, 7.0):
        hist = K.constant_history(m, n, detuned, T, 1e-3, t=T)
        got = K.transport_rhs(hist, m, detuned, 0.0)
        ref = [transport_rate_direct(m, n, [1.0, 2.1, 3.0], j, T) for j in range(3)]
        assert np.allclose(got, ref, rtol=1e-6, atol=1e-12)


def test_memory_rhs_at_equilibrium_vanishes():
    m = ladder_model(0.1)
    n = distribution(OMEGA, 1.0)
    hist = K.constant_history(m, n, CURVES, K.default_memory(0.05), 0.05)
    assert np.max(np.abs(K.transport_rhs(hist, m, CURVES, 0.05, K.default_memory(0.05)))) < 1e-8


def test_long_frozen_history_recovers_markovian_rate():
    m = ladder_model(0.1)
    n = np.array([0.5, 0.1, 0.3])
    g = 0.05
    hist = K.constant_history(m, n, CURVES, 40 / g, 0.01)
    mem = K.transport_rhs(hist, m, CURVES, g, 40 / g)
    assert np.allclose(mem, K.markovian_collision(n, m, OMEGA, g), rtol=1e-3)


def test_tail_error_small_for_default_window():
    m = ladder_model(0.1)
    assert K.tail_error(m, np.array([0.5, 0.1, 0.3]), CURVES, 0.05, K.default_memory(0.05), 0.05) < 1e-4


def test_memory_mode_approaches_markovian_as_kernel_sharpens():
    m = ladder_model(0.005)
    n0 = np.array([0.5, 0.1, 0.3])
    rel = []
    for g in (0.05, 0.1, 0.2):
        mem = K.relax(m, n0, OMEGA, t_end=100, mode="memory", dt=0.1, broadening=g, output_every=5.0)
        mk = K.relax(m, n0, OMEGA, t_end=100, mode="markovian", broadening=g, output_every=5.0)
        diff = np.max(np.abs(mem.occupations - mk.occupations))
        rel.append(diff / np.max(np.abs(mk.occupations - n0)))
    assert rel[0] > rel[1] > rel[2]
    assert rel[2] < 0.01


def test_memory_mode_conserves_number_and_energy():
    m = ladder_model(0.005)
    tr = K.relax(m, [0.5, 0.1, 0.3], OMEGA, t_end=20, mode="memory", dt=0.1, broadening=0.1)
    assert np.max(np.abs(tr.occupations.sum(1) - 0.9)) < 1e-12
    assert np.max(np.abs(tr.occupations @ OMEGA - tr.occupations[0] @ OMEGA)) < 1e-12


def test_strong_coupling_memory_run_fails_loudly():
    with pytest.raises(IntegrationError, match="persistently"):
        K.relax(ladder_model(0.1), [0.5, 0.1, 0.3], OMEGA, t_end=20, mode="memory", dt=0.05,
                broadening=0.05)


@given(beta=st.floats(0.2, 5), mu=st.floats(-3, 0.9))
@settings(max_examples=40, deadline=None)
def test_fit_equilibrium_recovers_parameters(beta, mu):
    n = 1 / (np.exp(beta * (OMEGA - mu)) - 1)
    if True:
        eq = K.fit_equilibrium(n, OMEGA, BOSON)
        assert eq.beta == pytest.approx(beta, rel=1e-9)
        assert eq.mu == pytest.approx(mu, abs=1e-9)


def test_markovian_relaxation_reaches_fitted_equilibrium():
    tr = K.relax(ladder_model(0.1), [0.5, 0.1, 0.3], OMEGA, t_end=200, output_every=1.0)
    assert tr.asymptote_error() < 1e-4
    assert np.max(np.abs(tr.occupations.sum(1) - 0.9)) < 1e-9
    assert tr.equilibrium_gap[0] > 0.1


def test_bad_inputs():
    m = ladder_model(0.1)
    with pytest.raises(ConfigurationError):
        K.relax(m, [-0.1, 0.1, 0.1], OMEGA)
    with pytest.raises(ConfigurationError):
        K.relax(m, [0.1, 0.1, 0.1], OMEGA, mode="other")
    with pytest.raises(ConfigurationError):
        K.relax(m, [0.1, 0.1, 0.1], OMEGA, mode="memory", prehistory="other")
