import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfd.errors import SingularityError
from netfd.liouville import BOSON, FERMION, ModeSpec, SuperState, build_basis, identity_superstate
from netfd.schedule import Curve, ThermalSchedule
from netfd.unperturbed import (
    build_Hu,
    conserved_combination_residual,
    evolve_lvn,
    evolve_q,
    geometric_distribution,
    geometric_residual,
    geometric_state,
    hermiticity_residual,
    m_matrix,
    mode_distribution,
    product_state,
    q_closed_form,
    q_norm2,
    q_vector,
    trace,
    zeta_from_rates,
)

CUT = 30


@pytest.fixture(scope="module")
def relaxing():
    basis = build_basis([ModeSpec.boson(1.0, CUT)])
    curve = Curve.relaxing(0.5, 0.25, 1.0, 0.0, 3.0)
    sched = ThermalSchedule((BOSON,), (curve,), (1.0,))
    return basis, curve, sched


@given(n=st.floats(0, 5), ndot=st.floats(-2, 2), gamma=st.floats(-1, 1), sigma=st.sampled_from([BOSON, FERMION]))
@settings(max_examples=60, deadline=None)
def test_zeta_constraints(n, ndot, gamma, sigma):
    if sigma == FERMION:
        n = min(n, 0.9)
    z = zeta_from_rates([n], [ndot], [gamma], [sigma])
    assert z.constraint_residual() < 1e-12


def test_physical_form_drops_gamma():
    z = zeta_from_rates([0.3], [0.1], [0.0], [BOSON])
    assert z.zeta1[0] == pytest.approx(0.1)
    assert z.zeta2[0] == pytest.approx(0.1)
    assert z.zeta3[0] == pytest.approx(-0.1)


def test_filled_fermion_with_gamma_is_singular():
    with pytest.raises(SingularityError):
        zeta_from_rates([1.0], [0.0], [0.2], [FERMION])


def test_geometric_q_vector_vanishes():
    for n in (0.1, 0.7, 2.0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = geometric_distribution(n, BOSON, 200)
        assert np.max(np.abs(q_vector(p, n))) < 1e-15
        assert geometric_residual(p, n) < 1e-12


def test_truncated_tail_warns():
    with pytest.warns(RuntimeWarning, match="tail"):
        geometric_distribution(1.0, BOSON, 10)


def test_m_matrix_shape():
    m = m_matrix(4)
    assert np.allclose(m, m.T)
    assert m[0, 0] == -2 and m[0, 1] == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        m_matrix(0)


def test_left_vacuum_of_hu(relaxing):
    basis, _, sched = relaxing
    bra = identity_superstate(basis).amplitudes
    for t in (0.0, 0.7, 2.0):
        assert np.max(np.abs(bra @ build_Hu(basis, sched, t).mat)) < 1e-12


def test_geometric_preserved(relaxing):
    basis, curve, sched = relaxing
    grid = np.linspace(0, 3, 7)
    traj = evolve_lvn(geometric_state(basis, [curve(0)]), sched, grid)
    for t, s in zip(grid, traj):
        assert geometric_residual(mode_distribution(s, 0), curve(t)) < 1e-8


def test_perturbed_start_follows_q_law(relaxing, rng):
    basis, curve, sched = relaxing
    grid = np.linspace(0, 3, 7)
    p0 = geometric_distribution(curve(0), BOSON, CUT) * (1 + 0.05 * rng.standard_normal(CUT + 1))
    p0 /= p0.sum()
    traj = evolve_lvn(product_state(basis, [p0]), sched, grid)
    q0 = q_vector(p0, curve(0))
    _, c, lam = q_closed_form(q0, curve(0), curve(0))
    for t, s in zip(grid, traj):
        assert abs(trace(s) - 1) < 1e-10
        assert hermiticity_residual(s) < 1e-12
        p = mode_distribution(s, 0)
        q = q_vector(p, curve(t))
        assert abs(q @ q - q_norm2(c, lam, curve(0), curve(t))) < 1e-8
    assert geometric_residual(mode_distribution(traj[-1], 0), curve(3.0)) > 1e-4


def test_q_closed_form_matches_ode(rng):
    curve = Curve.relaxing(1.0, 0.5, 1.0, 0.0, 5.0)
    q0 = rng.normal(size=12)
    ev = evolve_q(q0, curve, 4.0, 0.5)
    assert ev.agreement() < 1e-8
    same, _, _ = q_closed_form(q0, 0.3, 0.3)
    assert np.allclose(same, q0, atol=1e-13)


def test_q_examples():
    zero, _, _ = q_closed_form(np.zeros(8), 0.2, 0.9)
    assert np.all(zero == 0)
    lam, u = np.linalg.eigh(m_matrix(8))
    ground = u[:, np.argmax(lam)]
    got, _, _ = q_closed_form(ground, 0.2, 0.5)
    assert np.allclose(got, np.exp(lam.max() * 0.3) * ground, atol=1e-14)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_q_norm_grows_when_n_falls(seed):
    q0 = np.random.default_rng(seed).normal(size=10)
    assert np.all(np.linalg.eigvalsh(m_matrix(10)) < 0)
    _, c, lam = q_closed_form(q0, 1.0, 1.0)
    norms = [q_norm2(c, lam, 1.0, n) for n in (1.0, 0.8, 0.5, 0.1)]
    assert all(a < b for a, b in zip(norms, norms[1:]))


def test_conserved_combinations():
    basis = build_basis([ModeSpec.boson(1.0, 12)])
    curve = Curve.relaxing(0.5, 0.25, 1.0, 0.0, 3.0)
    sched = ThermalSchedule((BOSON,), (curve,), (1.0,))
    grid = np.linspace(0, 3, 4)
    rep = conserved_combination_residual(basis, sched, grid)
    m = rep.max()
    assert m["combination"] < 1e-8
    assert m["difference"] < 1e-8
    assert m["heisenberg"] < 1e-12
    # boundary leakage of the truncated propagator; shrinks quickly with the cutoff
    assert m["intertwining"] < 1e-5
    ctrl = conserved_combination_residual(basis, sched.with_gamma((0.3,)), grid, form="general",
                                          check_propagator=False)
    assert ctrl.max()["left_vacuum"] > 1e-3


def test_fermion_conserved_combinations():
    basis = build_basis([ModeSpec.fermion(1.0)])
    curve = Curve.relaxing(0.6, 0.3, 1.0, 0.0, 2.0)
    sched = ThermalSchedule((FERMION,), (curve,), (1.0,))
    rep = conserved_combination_residual(basis, sched, np.linspace(0, 2, 3), mask=np.ones(4, bool))
    assert rep.max()["combination"] < 1e-8
    assert rep.max()["heisenberg"] < 1e-12


def test_fermion_geometric_preserved():
    basis = build_basis([ModeSpec.fermion(1.0)])
    curve = Curve.relaxing(0.6, 0.3, 1.0, 0.0, 2.0)
    sched = ThermalSchedule((FERMION,), (curve,), (1.0,))
    grid = np.linspace(0, 2, 5)
    traj = evolve_lvn(geometric_state(basis, [curve(0)]), sched, grid)
    for t, s in zip(grid, traj):
        assert geometric_residual(mode_distribution(s, 0), curve(t), FERMION) < 1e-8


def test_bad_grid_rejected(relaxing):
    basis, curve, sched = relaxing
    with pytest.raises(ValueError):
        evolve_lvn(geometric_state(basis, [curve(0)]), sched, [1.0, 0.5])


def test_form_validated(relaxing):
    basis, _, sched = relaxing
    with pytest.raises(ValueError):
        build_Hu(basis, sched, 0.0, form="other")


def test_superstate_from_distribution_is_diagonal():
    basis = build_basis([ModeSpec.boson(1.0, 3)])
    s = product_state(basis, [np.array([0.4, 0.3, 0.2, 0.1])])
    assert isinstance(s, SuperState)
    assert np.allclose(np.diag(s.as_operator()), [0.4, 0.3, 0.2, 0.1])
