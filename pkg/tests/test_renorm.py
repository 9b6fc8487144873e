import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfd import kinetics as K
from netfd import renorm as R
from netfd.errors import BracketError, ConfigurationError
from netfd.perturbation import InteractionModel, ladder_model
from netfd.schedule import Curve


def damped_kernel(w, a, kappa, gamma, sigma=1):
    def kern(t1, t2):
        e = np.exp(-1j * kappa * (t1 - t2) - gamma * abs(t1 - t2))
        out = np.zeros((2, 2), dtype=complex)
        if t1 >= t2:
            out[0, 0] = -1j * w * e
        if t2 >= t1:
            out[1, 1] = 1j * w * e
        out[0, 1] = 1j * sigma * a * e
        return out
    return kern


def test_transform_matches_frequency_space():
    w, a, kappa, gamma, omega = 0.3, 0.2, 0.7, 1.0, 1.3
    t = 20.0 / gamma
    grid = np.linspace(0, t, 20001)
    got = R.onshell_transform(damped_kernel(w, a, kappa, gamma), omega, t, t, grid=grid)
    assert got[0, 0] == pytest.approx(w / (omega - kappa + 1j * gamma), abs=1e-6)
    assert got[1, 1] == pytest.approx(np.conj(w / (omega - kappa + 1j * gamma)), abs=1e-6)
    assert got[0, 1] == pytest.approx(2j * np.pi * a * K.lorentzian(omega - kappa, gamma), abs=1e-6)
    assert got[1, 0] == 0


def test_zero_kernel():
    grid = np.linspace(0, 3, 31)
    got = R.onshell_transform(lambda t1, t2: np.zeros((2, 2)), 1.0, 3.0, 3.0, grid=grid)
    assert np.all(got == 0)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5))
@settings(max_examples=25, deadline=None)
def test_s12_is_twice_imaginary_part(seed, omega):
    # any kernel with S12(t, s) = -conj S12(s, t) gives a purely imaginary on-shell S12
    rng = np.random.default_rng(seed)
    grid = np.linspace(0, 2, 21)
    raw = rng.normal(size=(21, 21)) + 1j * rng.normal(size=(21, 21))
    s12 = raw - raw.conj().T

    def kern(t1, t2):
        out = np.zeros((2, 2), dtype=complex)
        out[0, 1] = s12[int(round(t1 * 10)), int(round(t2 * 10))]
        return out
    got = R.onshell_transform(kern, omega, 2.0, 2.0, grid=grid)
    assert abs(got[0, 1].real) < 1e-12


def test_reads_no_future_arguments():
    seen = []
    base = damped_kernel(0.3, 0.2, 0.7, 0.5)

    def kern(t1, t2):
        seen.append(max(t1, t2))
        return base(t1, t2)
    R.onshell_transform(kern, 1.0, 3.0, 3.0, grid=np.linspace(0, 6, 61))
    assert max(seen) <= 3.0


def test_insufficient_history():
    with pytest.raises(ConfigurationError, match="history"):
        R.onshell_transform(damped_kernel(1, 1, 1, 1), 1.0, 2.0, 5.0, grid=np.linspace(0, 2, 21))
    with pytest.raises(ConfigurationError):
        R.onshell_transform(damped_kernel(1, 1, 1, 1), 1.0, 2.0, 1.0)


def test_linear_root():
    def sampler(k0):
        return np.array([[2.0 - k0, 0], [0, 2.0 - k0]])
    assert R.equilibrium_onshell_solve(sampler, 1.7, 0.5) == pytest.approx(2.0, abs=1e-13)


def test_unbracketed_root_reports_scan():
    def sampler(k0):
        return np.array([[1.0 + k0**2, 0], [0, 0]])
    with pytest.raises(BracketError) as info:
        R.equilibrium_onshell_solve(sampler, 0.0, 1.0, points=11)
    xs, fs = info.value.scan
    assert xs.size == 11 and np.all(fs > 0)


def test_equilibrium_shift_is_second_order():
    lams = np.array([0.0025, 0.005, 0.01])
    base = ladder_model(0.0, energies=(1.0, 2.1, 3.0))
    shifts = np.array([R.equilibrium_shifts(base.with_coupling(x), 1.0, 0.05) - base.energies for x in lams])
    for j in range(3):
        assert abs(R.scaling_exponent(lams, shifts[:, j]) - 2) < 0.05
    # leading coefficient: Re sum_c w_c / (omega_j - kappa_c + i gamma)
    m = base.with_coupling(lams[0])
    n = R.distribution(np.array(m.energies), 1.0)
    for j in range(3):
        lead = sum(np.real(w / (m.energies[j] - ch.kappa(m.energies) + 0.05j))
                   for ch in m.channels(j) for w in [ch.weights(n, m.sigmas)[0]])
        assert shifts[0, j] == pytest.approx(lead, rel=1e-3)


def test_energy_condition_met_at_solution():
    m = ladder_model(0.02, energies=(1.0, 2.1, 3.0))
    n = R.distribution(np.array(m.energies), 1.0)
    w = R.equilibrium_shifts(m, 1.0, 0.05)
    for j in range(3):
        assert abs(R.loop_sampler(m, n, j, 0.05)(w[j])[0, 0].real) < 1e-10


@given(st.floats(0.3, 3))
@settings(max_examples=15, deadline=None)
def test_resonant_equilibrium_s12_vanishes(beta):
    m = ladder_model(0.02)
    n = R.distribution(np.array(m.energies), beta)
    for j in range(3):
        s = R.loop_sampler(m, n, j, 0.05)
        for k0 in (m.energies[j] - 0.1, m.energies[j], m.energies[j] + 0.3):
            assert abs(s(k0)[0, 1]) < 1e-12


def test_scaling_exponent():
    x = np.array([1.0, 2.0, 4.0])
    assert R.scaling_exponent(x, 3 * x**2) == pytest.approx(2.0)


def test_single_peak_gap_closes_with_width():
    gaps = []
    for width in (1e-1, 1e-2, 1e-3):
        grid = np.arange(0.2, 3.0, width / 20)
        sm = R.single_peak_model(1.0, width, 1.0, grid, shape="gaussian")
        gaps.append(R.diagonalization_inconsistency_demo(sm).gap)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-5


def test_satellite_gap_is_satellite_weight_times_occupation_jump():
    omega0, strength, ksat, beta = 2.1, 1e-4, 1.9, 1.0
    grid = np.arange(1.0, 3.1, 1e-4)
    sm = R.satellite_model(omega0, strength, ksat, beta, grid)
    rep = R.diagonalization_inconsistency_demo(sm, half_width=0.1)
    mid, rad = (omega0 + ksat) / 2, np.sqrt((omega0 - ksat) ** 2 + 4 * strength) / 2
    main, sat = mid + rad, mid - rad
    z_sat = (sat - ksat) / (sat - main)
    assert rep.omega == pytest.approx(main, abs=1e-6)
    expect = z_sat * abs(R.distribution(sat, beta) - R.distribution(main, beta))
    assert rep.gap == pytest.approx(expect, rel=1e-2)
    assert abs(rep.s12_onshell) < 1e-10
    assert abs(rep.re_s11_onshell) < 1e-10


def test_unnormalized_spectrum_rejected():
    grid = np.linspace(0, 3, 3001)
    sm = R.single_peak_model(1.0, 0.05, 1.0, grid)
    bad = R.SpectralModel(sm.kappa, sm.self_energy, 2 * sm.rho, sm.beta, sm.omega0)
    with pytest.raises(ConfigurationError, match="normalized"):
        bad.check()


def resonant_history(lam, n, steps=0, dt=0.1, broadening=0.05):
    m = ladder_model(lam)
    curves = [Curve.constant(x) for x in m.energies]
    t_mem = K.default_memory(broadening)
    state = K.constant_history(m, n, curves, t_mem, dt)
    for _ in range(steps):
        rate = K.transport_rhs(state, m, curves, broadening, t_mem)
        t = state.t + dt
        state.push(t, state.n + dt * rate, K.phase_of(curves, t, 0.0), m)
    return m, curves, state, t_mem


def test_new_condition_at_equilibrium():
    n = R.distribution(np.array([1.0, 2.0, 3.0]), 1.0)
    m, curves, state, t_mem = resonant_history(0.02, n)
    for j in range(3):
        r = R.new_renorm_step(state, m, curves, j, 0.05, t_mem)
        assert abs(r.ndot) < 1e-10
        assert r.omega == pytest.approx(m.energies[j], abs=1e-10)
        assert r.converged and r.s12_residual < 1e-12


def test_new_condition_ndot_equals_transport_rhs():
    m, curves, state, t_mem = resonant_history(0.02, np.array([0.5, 0.1, 0.3]), steps=10)
    assert R.ndot_identity_residual(state, m, curves, 0.05, t_mem) < 1e-12


def test_new_condition_without_coupling():
    m, curves, state, t_mem = resonant_history(0.0, np.array([0.5, 0.1, 0.3]))
    for j in range(3):
        r = R.new_renorm_step(state, m, curves, j, 0.05, t_mem)
        assert r.omega == m.energies[j] and r.ndot == 0 and r.converged


def test_nonequilibrium_history_solves_energy_condition():
    m, curves, state, t_mem = resonant_history(0.02, np.array([0.5, 0.1, 0.3]), steps=5)
    for j in range(3):
        r = R.new_renorm_step(state, m, curves, j, 0.05, t_mem)
        if r.converged:
            assert r.re_s11_residual < 1e-10
        assert abs(r.counterterm) < 1.0
