"""Constrained unperturbed super-Hamiltonians and their dynamics.

The unperturbed generator is built mode by mode from the pair operators
``a_check a_tilde``, ``a_check^+ a_tilde^+``, the two number operators and a
"unit" term.  On the untruncated space the unit term is the c-number 1; here
it is written as ``((a a^+ - sigma a^+ a)_check + (a a^+ - sigma a^+ a)_tilde) / 2``
which equals 1 away from the boson cutoff and keeps both probability
conservation and the anti-tilde property exact after truncation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import IntegrationError, SingularityError
from .liouville import (
    BOSON,
    FERMION,
    LiouvilleBasis,
    SuperOperatorMatrix,
    SuperState,
    identity_superstate,
    sqrt_sigma,
    super_annihilator,
)
from .schedule import ThermalSchedule

RTOL = 1e-10
ATOL = 1e-13
GEOMETRIC_TAIL = 1e-10


@dataclass(frozen=True)
class ZetaParams:
    """Real rates per mode, plus the energy they are paired with."""

    omega: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta3: np.ndarray
    zeta5: np.ndarray
    sigmas: np.ndarray

    @property
    def eta(self) -> tuple[np.ndarray, ...]:
        return (
            1j * self.zeta1,
            1j * self.zeta2,
            self.omega + 1j * self.zeta3,
            -self.omega + 1j * self.zeta3,
            1j * self.zeta5,
        )

    def constraint_residual(self) -> float:
        r1 = self.zeta1 + self.sigmas * self.zeta2 + 2 * self.zeta3
        r2 = self.zeta2 + self.zeta5
        return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def zeta_from_rates(n, ndot, gamma, sigmas, omega=None) -> ZetaParams:
    n, ndot, gamma, sigmas = (np.asarray(x, dtype=float) for x in (n, ndot, gamma, sigmas))
    denom = 1 + sigmas * n
    active = gamma != 0
    if np.any(active & (np.abs(denom) < 1e-15)):
        raise SingularityError("1 + sigma n = 0 with nonzero gamma (filled fermion mode)")
    safe = np.where(active, denom, 1.0)
    z1 = sigmas * ndot + gamma
    z2 = ndot + np.where(active, n / safe * gamma, 0.0)
    z3 = -sigmas * ndot - np.where(active, (1 + 2 * sigmas * n) / (2 * safe) * gamma, 0.0)
    omega = np.zeros_like(n) if omega is None else np.asarray(omega, dtype=float)
    return ZetaParams(omega, z1, z2, z3, -z2, sigmas.astype(int))


def solve_zeta(schedule: ThermalSchedule, t: float) -> ZetaParams:
    return zeta_from_rates(
        schedule.n_at(t), schedule.ndot_at(t), schedule.gamma_at(t),
        schedule.sigmas, schedule.omega_at(t),
    )


# -- super-Hamiltonian --------------------------------------------------


@dataclass(frozen=True)
class ModeTerms:
    pair_down: SuperOperatorMatrix  # sigma sqrt(sigma) a_check a_tilde
    pair_up: SuperOperatorMatrix  # sigma sqrt(sigma) a_check^+ a_tilde^+
    number_check: SuperOperatorMatrix
    number_tilde: SuperOperatorMatrix
    unit: SuperOperatorMatrix


@lru_cache(maxsize=32)
def mode_terms(basis: LiouvilleBasis, j: int) -> ModeTerms:
    s = basis.modes[j].sigma
    ss = s * sqrt_sigma(s)
    ac = super_annihilator(basis, j, "check")
    at = super_annihilator(basis, j, "tilde")
    nc = ac.dag() @ ac
    nt = at.dag() @ at
    unit = 0.5 * ((at @ at.dag() - s * nt) + (ac @ ac.dag() - s * nc))
    return ModeTerms(ss * (ac @ at), ss * (ac.dag() @ at.dag()), nc, nt, unit)


def hu_from_zeta(basis: LiouvilleBasis, z: ZetaParams) -> SuperOperatorMatrix:
    eta = z.eta
    mat = sp.csr_matrix((basis.dim_l, basis.dim_l), dtype=complex)
    for j in range(basis.n_modes):
        t = mode_terms(basis, j)
        mat = mat + (
            eta[0][j] * t.pair_down.mat
            + eta[1][j] * t.pair_up.mat
            + eta[2][j] * t.number_check.mat
            + eta[3][j] * t.number_tilde.mat
            + eta[4][j] * t.unit.mat
        )
    return SuperOperatorMatrix(basis, sp.csr_matrix(mat), False)


def build_Hu(basis: LiouvilleBasis, schedule: ThermalSchedule, t: float,
             form: str = "physical", include_omega: bool = True) -> SuperOperatorMatrix:
    """Unperturbed super-Hamiltonian at time ``t``.

    ``form="physical"`` drops the free rate gamma; ``"general"`` keeps it.
    ``include_omega=False`` gives the alpha-frame generator.
    """
    if form not in ("physical", "general"):
        raise ValueError(f"form must be 'physical' or 'general', got {form!r}")
    gamma = schedule.gamma_at(t) if form == "general" else np.zeros(schedule.n_modes)
    omega = schedule.omega_at(t) if include_omega else np.zeros(schedule.n_modes)
    z = zeta_from_rates(schedule.n_at(t), schedule.ndot_at(t), gamma, schedule.sigmas, omega)
    return hu_from_zeta(basis, z)


# -- Liouville-von Neumann evolution ------------------------------------


def _integrate(rhs, y0, t_grid, what: str, rtol=RTOL, atol=ATOL):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if t_grid.size == 1:
        return np.asarray(y0)[:, None].copy()
    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), y0, method="DOP853",
                    t_eval=t_grid, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"{what}: {sol.message} (reached t={sol.t[-1] if sol.t.size else t_grid[0]})")
    return sol.y


def evolve_lvn(rho0: SuperState, schedule: ThermalSchedule, t_grid, form: str = "physical",
               rtol: float = RTOL, atol: float = ATOL) -> list[SuperState]:
    """Solve ``i d|rho>>/dt = H_u(t)|rho>>`` and return the states on ``t_grid``."""
    basis = rho0.basis

    def rhs(t, y):
        return -1j * (build_Hu(basis, schedule, t, form).mat @ y)

    ys = _integrate(rhs, rho0.amplitudes.astype(complex), t_grid, "unperturbed evolution", rtol, atol)
    return [SuperState(basis, ys[:, k]) for k in range(ys.shape[1])]


def trace(state: SuperState) -> complex:
    return complex(identity_superstate(state.basis).amplitudes @ state.amplitudes)


def hermiticity_residual(state: SuperState) -> float:
    op = state.as_operator()
    return float(np.max(np.abs(op - op.conj().T)))


def expectation(x: SuperOperatorMatrix, state: SuperState) -> complex:
    """``<<I| X |rho>>``."""
    return complex(identity_superstate(state.basis).amplitudes @ (x.mat @ state.amplitudes))


# -- geometric distribution ---------------------------------------------


def geometric_distribution(n: float, sigma: int, cutoff: int) -> np.ndarray:
    if sigma == FERMION:
        return np.array([1.0 - n, n])
    f = n / (1.0 + n)
    if f ** (cutoff + 1) >= GEOMETRIC_TAIL:
        warnings.warn(
            f"geometric tail f^(cutoff+1) = {f ** (cutoff + 1):.2e} is not negligible; "
            "distribution renormalized on the truncated space",
            RuntimeWarning,
            stacklevel=3,
        )
    p = f ** np.arange(cutoff + 1)
    return p / p.sum()


def product_state(basis: LiouvilleBasis, distributions) -> SuperState:
    """Mode-diagonal superstate with ``p_j`` on the diagonal of each mode."""
    diag = np.ones(basis.dim_h)
    for j, p in enumerate(distributions):
        diag = diag * np.asarray(p)[basis.occupations[:, j]]
    return SuperState(basis, np.diag(diag.astype(complex)).ravel())


def geometric_state(basis: LiouvilleBasis, occupations) -> SuperState:
    dists = [geometric_distribution(float(n), m.sigma, m.cutoff)
             for n, m in zip(occupations, basis.modes)]
    return product_state(basis, dists)


def mode_distribution(state: SuperState, j: int) -> np.ndarray:
    """Marginal occupation probabilities of mode ``j``."""
    b = state.basis
    diag = np.real(np.diag(state.as_operator()))
    return np.bincount(b.occupations[:, j], weights=diag, minlength=b.modes[j].cutoff + 1)


def geometric_residual(p, n: float, sigma: int = BOSON) -> float:
    """``max_m |p_m - (1 - f) f^m|`` with ``f = n / (1 + sigma n)``."""
    p = np.asarray(p, dtype=float)
    if sigma == FERMION:
        ref = np.array([1 - n, n])
    else:
        f = n / (1 + n)
        ref = (1 - f) * f ** np.arange(p.size)
    return float(np.max(np.abs(p - ref)))


# -- q-vector machinery (bosons) ----------------------------------------


def q_vector(p, n: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    m = np.arange(p.size - 1)
    return np.sqrt(m + 1) * ((1 + n) * p[1:] - n * p[:-1])


def m_matrix(cutoff: int) -> np.ndarray:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    m = np.arange(cutoff)
    off = np.sqrt((m[:-1] + 1) * (m[1:] + 1))
    return np.diag(-2.0 * (m + 1)) + np.diag(off, 1) + np.diag(off, -1)


@dataclass(frozen=True)
class QEvolution:
    closed_form: np.ndarray
    integrated: np.ndarray
    coefficients: np.ndarray  # c_l at the reference time
    eigenvalues: np.ndarray

    def agreement(self) -> float:
        return float(np.max(np.abs(self.closed_form - self.integrated)))


def q_closed_form(q0, n_ref: float, n_t: float):
    """Expand ``q0`` on the eigenvectors of M and propagate to occupation ``n_t``.

    ``dq/dt = ndot M q`` integrates to ``exp(lambda (n(t) - n(tau)))`` per eigenmode.
    """
    q0 = np.asarray(q0, dtype=float)
    lam, u = np.linalg.eigh(m_matrix(q0.size))
    c = u.T @ q0
    return u @ (c * np.exp(lam * (n_t - n_ref))), c, lam


def q_norm2(coefficients, eigenvalues, n_ref: float, n_t: float) -> float:
    return float(np.sum(np.abs(coefficients) ** 2 * np.exp(2 * eigenvalues * (n_t - n_ref))))


def evolve_q(q0, n_curve, t: float, tau: float = 0.0) -> QEvolution:
    q0 = np.asarray(q0, dtype=float)
    closed, c, lam = q_closed_form(q0, n_curve(tau), n_curve(t))
    mm = m_matrix(q0.size)
    if t == tau:
        direct = q0.copy()
    else:
        sol = solve_ivp(lambda s, q: n_curve.derivative(s) * (mm @ q), (tau, t), q0,
                        method="DOP853", rtol=1e-12, atol=1e-14)
        if not sol.success:
            raise IntegrationError(f"q evolution: {sol.message}")
        direct = sol.y[:, -1]
    return QEvolution(closed, direct, c, lam)


# -- conserved combinations in the alpha frame --------------------------
#
# The alpha-frame operators obey a closed linear system: each of
# (alpha_check, alpha_check^+, alpha_tilde, alpha_tilde^+) at time t is a
# c-number combination of the four generators.  The 4x4 coefficient matrix is
# integrated directly; the operator matrices follow by linear combination.


def alpha_generator(z: ZetaParams, j: int) -> np.ndarray:
    """``K`` with ``d/dt (a, a^+, a~, a~^+) = K (a, a^+, a~, a~^+)`` for mode ``j``."""
    s = int(z.sigmas[j])
    r = sqrt_sigma(s)
    z1, z2, z3 = z.zeta1[j], z.zeta2[j], z.zeta3[j]
    k = np.zeros((4, 4), dtype=complex)
    k[0, 0], k[0, 3] = z3, z2 * s * r
    k[1, 1], k[1, 2] = -z3, -z1 * r
    k[2, 2], k[2, 1] = z3, z2 * r
    k[3, 3], k[3, 0] = -z3, -z1 * s * r
    return k


def _zeta_alpha(schedule, t, form):
    gamma = schedule.gamma_at(t) if form == "general" else np.zeros(schedule.n_modes)
    return zeta_from_rates(schedule.n_at(t), schedule.ndot_at(t), gamma, schedule.sigmas)


def alpha_coefficients(schedule: ThermalSchedule, j: int, times, form: str = "physical") -> np.ndarray:
    """Coefficient matrices ``C(t)`` with ``alpha(t) = C(t) a``, shape (len(times), 4, 4)."""
    times = np.asarray(times, dtype=float)

    def rhs(t, y):
        return (alpha_generator(_zeta_alpha(schedule, t, form), j) @ y.reshape(4, 4)).ravel()

    # the system is 4x4, so a tolerance near machine precision is cheap and keeps
    # finite differences of the combinations free of integrator noise
    ys = _integrate(rhs, np.eye(4, dtype=complex).ravel(), times, "alpha coefficients",
                    rtol=1e-13, atol=1e-15)
    return ys.T.reshape(-1, 4, 4)


def _generators(basis, j):
    ac = super_annihilator(basis, j, "check")
    at = super_annihilator(basis, j, "tilde")
    return [x.mat for x in (ac, ac.dag(), at, at.dag())]


def heisenberg_residual(basis: LiouvilleBasis, schedule: ThermalSchedule, t: float,
                        form: str = "physical", mask: np.ndarray | None = None) -> float:
    """``max |i[H_alpha, a_k] - sum_l K_kl a_l|`` on the masked block."""
    mask = basis.interior if mask is None else mask
    h = build_Hu(basis, schedule, t, form, include_omega=False).mat
    z = _zeta_alpha(schedule, t, form)
    worst = 0.0
    for j in range(basis.n_modes):
        gens = _generators(basis, j)
        k = alpha_generator(z, j)
        for row, g in enumerate(gens):
            lhs = 1j * (h @ g - g @ h)
            rhs = sum(k[row, c] * gens[c] for c in range(4))
            worst = max(worst, float(np.max(np.abs(restrict_dense(lhs - rhs, mask)), initial=0.0)))
    return worst


def restrict_dense(mat, mask) -> np.ndarray:
    idx = np.flatnonzero(mask)
    return sp.csr_matrix(mat)[idx][:, idx].toarray()


def _sector_blocks(basis: LiouvilleBasis):
    ch = basis.charge
    return [np.flatnonzero(ch == c) for c in np.unique(ch)]


def propagate_alpha_frame(basis: LiouvilleBasis, schedule: ThermalSchedule, times,
                          form: str = "physical") -> list[sp.csr_matrix]:
    """``U(t, t0)`` of the alpha-frame generator, integrated charge sector by charge sector."""
    blocks = _sector_blocks(basis)
    sizes = [b.size for b in blocks]
    offsets = np.concatenate([[0], np.cumsum([s * s for s in sizes])]).astype(int)
    terms = []
    for j in range(basis.n_modes):
        mt = mode_terms(basis, j)
        mats = [x.mat for x in (mt.pair_down, mt.pair_up, mt.number_check, mt.number_tilde, mt.unit)]
        terms.append([[m[idx][:, idx].toarray() for idx in blocks] for m in mats])

    def rhs(t, y):
        gamma = schedule.gamma_at(t) if form == "general" else np.zeros(schedule.n_modes)
        eta = zeta_from_rates(schedule.n_at(t), schedule.ndot_at(t), gamma, schedule.sigmas).eta
        out = np.empty_like(y)
        for k in range(len(blocks)):
            h = sum(eta[q][j] * terms[j][q][k] for j in range(basis.n_modes) for q in range(5))
            u = y[offsets[k]:offsets[k + 1]].reshape(sizes[k], sizes[k])
            out[offsets[k]:offsets[k + 1]] = (-1j * (h @ u)).ravel()
        return out

    y0 = np.concatenate([np.eye(s, dtype=complex).ravel() for s in sizes])
    ys = _integrate(rhs, y0, times, "alpha-frame propagator", rtol=1e-12, atol=1e-14)
    rows = np.concatenate([np.repeat(idx, idx.size) for idx in blocks])
    cols = np.concatenate([np.tile(idx, idx.size) for idx in blocks])
    dim = basis.dim_l
    return [sp.csr_matrix((ys[:, c], (rows, cols)), shape=(dim, dim)) for c in range(ys.shape[1])]


def low_sector(basis: LiouvilleBasis, fraction: float = 0.5) -> np.ndarray:
    """Liouville mask with every boson occupation at most ``fraction * cutoff``."""
    ok = np.ones(basis.dim_h, dtype=bool)
    for j, m in enumerate(basis.modes):
        if m.sigma == BOSON:
            ok &= basis.occupations[:, j] <= int(fraction * m.cutoff)
    return np.outer(ok, ok).ravel()


@dataclass(frozen=True)
class ConservedReport:
    times: np.ndarray
    combination: np.ndarray  # per time and mode: both thermal-state combinations
    difference: np.ndarray  # per time and mode: both difference combinations
    left_vacuum: np.ndarray  # per time and mode: max |<<I| d alpha/dt| over the four alphas
    heisenberg: float  # closure of the alpha equations against the truncated generator
    intertwining: float  # max |U alpha(t) - a U| on the low sector

    def max(self) -> dict[str, float]:
        return {
            "combination": float(np.max(self.combination)),
            "difference": float(np.max(self.difference)),
            "left_vacuum": float(np.max(self.left_vacuum)),
            "heisenberg": self.heisenberg,
            "intertwining": self.intertwining,
        }


def conserved_combination_residual(basis: LiouvilleBasis, schedule: ThermalSchedule, t_grid,
                                   h: float = 1e-2, form: str = "physical",
                                   mask: np.ndarray | None = None,
                                   check_propagator: bool = True) -> ConservedReport:
    """Finite-difference time derivatives of the alpha-frame combinations on ``t_grid``.

    Operator residuals are taken on rows and columns in ``mask`` (default:
    the interior subspace); the left-vacuum rates on interior columns.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    t0 = t_grid[0]
    mask = basis.interior if mask is None else mask
    idx = np.flatnonzero(mask)
    stencils = [(max(t - h, t0), max(t - h, t0) + h, max(t - h, t0) + 2 * h) for t in t_grid]
    times = np.unique(np.concatenate([[t0], np.ravel(stencils)]))
    bra = identity_superstate(basis).amplitudes

    k = basis.n_modes
    comb = np.zeros((t_grid.size, k))
    diff = np.zeros((t_grid.size, k))
    left = np.zeros((t_grid.size, k))
    coeffs = {}
    for j in range(k):
        s = basis.modes[j].sigma
        ss = sqrt_sigma(s)
        gens = _generators(basis, j)
        cs = alpha_coefficients(schedule, j, times, form)
        coeffs[j] = dict(zip(times.tolist(), cs))
        for i, (t, ts) in enumerate(zip(t_grid, stencils)):
            central = ts[1] == t
            vals = []
            for tt in ts:
                c = coeffs[j][tt]
                n = schedule.n[j](tt)
                al, ald, bl, bld = (sum(c[r, q] * gens[q] for q in range(4)) for r in range(4))
                vals.append([
                    (1 + s * n) * al - s * ss * n * bld,
                    (1 + s * n) * bl - ss * n * ald,
                    al - ss * bld,
                    bl - s * ss * ald,
                ] + [sp.csr_matrix(x.T @ bra) for x in (al, ald, bl, bld)])

            def rate(q):
                v0, v1, v2 = (v[q] for v in vals)
                d = (v2 - v0) / (2 * h) if central else (-3 * v0 + 4 * v1 - v2) / (2 * h)
                d = d.toarray()
                d = d[np.ix_(idx, idx)] if d.shape[0] > 1 else d[:, idx]
                return float(np.max(np.abs(d))) if d.size else 0.0

            comb[i, j] = max(rate(0), rate(1))
            diff[i, j] = max(rate(2), rate(3))
            left[i, j] = max(rate(q) for q in range(4, 8))

    heis = max(heisenberg_residual(basis, schedule, t, form, mask) for t in t_grid)
    inter = float("nan")
    if check_propagator:
        low = np.flatnonzero(low_sector(basis))
        props = dict(zip(t_grid.tolist(), propagate_alpha_frame(basis, schedule, t_grid, form)))
        inter = 0.0
        for t in t_grid:
            u = props[float(t)]
            for j in range(k):
                gens = _generators(basis, j)
                c = coeffs[j][float(t)]
                for r in range(4):
                    al = sum(c[r, q] * gens[q] for q in range(4))
                    d = (u @ al - gens[r] @ u)[low][:, low]
                    inter = max(inter, float(np.max(np.abs(d.toarray()), initial=0.0)))
    return ConservedReport(t_grid, comb, diff, left, heis, inter)
