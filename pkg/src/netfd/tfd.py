"""Thermal doublets, Bogoliubov matrices and unperturbed two-time propagators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liouville import (
    LiouvilleBasis,
    SuperOperatorMatrix,
    SuperState,
    identity_superstate,
    scommutator,
    sqrt_sigma,
    super_annihilator,
)
from .schedule import ThermalSchedule
from .unperturbed import evolve_lvn, geometric_state, mode_terms

T0 = np.array([[1.0, -1.0], [1.0, -1.0]])


def bogoliubov(n: float, sigma: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``B(n)`` and its inverse."""
    b = np.array([[1 + sigma * n, -sigma * n], [-1.0, 1.0]])
    binv = np.array([[1.0, sigma * n], [1.0, 1 + sigma * n]])
    return b, binv


def propagator_d(schedule: ThermalSchedule, j: int, t1: float, t2: float) -> np.ndarray:
    """Diagonal xi-propagator.

    At ``t1 == t2`` the 11 entry takes its ``t2 -> t1-`` value and the 22 entry
    its ``t2 -> t1+`` value, so both are nonzero.
    """
    e = np.exp(-1j * schedule.phase(j, t1, t2))
    d = np.zeros((2, 2), dtype=complex)
    if t1 >= t2:
        d[0, 0] = -1j * e
    if t2 >= t1:
        d[1, 1] = 1j * e
    return d


def propagator_delta(schedule: ThermalSchedule, j: int, t1: float, t2: float) -> np.ndarray:
    s = schedule.sigmas[j]
    _, binv = bogoliubov(schedule.n[j](t1), s)
    b, _ = bogoliubov(schedule.n[j](t2), s)
    return binv @ propagator_d(schedule, j, t1, t2) @ b


@dataclass(frozen=True)
class TwoTimeKernel:
    """2x2 thermal-index values on a rectangular ``(t1, t2)`` grid."""

    kind: str
    modes: tuple[int, int]
    t1: np.ndarray
    t2: np.ndarray
    values: np.ndarray  # shape (len(t1), len(t2), 2, 2)

    def component(self, mu: int, nu: int) -> np.ndarray:
        return self.values[:, :, mu - 1, nu - 1]

    def lower_residual(self) -> float:
        return float(np.max(np.abs(self.component(2, 1))))

    def map(self, fn, kind: str | None = None) -> "TwoTimeKernel":
        out = np.empty_like(self.values)
        for a, ta in enumerate(self.t1):
            for c, tc in enumerate(self.t2):
                out[a, c] = fn(ta, tc, self.values[a, c])
        return TwoTimeKernel(kind or self.kind, self.modes, self.t1, self.t2, out)


def kernel_from_function(kind, j, t1, t2, fn) -> TwoTimeKernel:
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    vals = np.array([[fn(a, c) for c in t2] for a in t1], dtype=complex)
    return TwoTimeKernel(kind, (j, j), t1, t2, vals)


def delta_kernel(schedule: ThermalSchedule, j: int, t1, t2) -> TwoTimeKernel:
    return kernel_from_function("Delta", j, t1, t2, lambda a, c: propagator_delta(schedule, j, a, c))


# -- doublets ------------------------------------------------------------


def doublets(basis: LiouvilleBasis, j: int):
    """``(a^1, a^2)`` and ``(abar^1, abar^2)`` superoperators of mode ``j``."""
    s = basis.modes[j].sigma
    r = sqrt_sigma(s)
    ac = super_annihilator(basis, j, "check")
    at = super_annihilator(basis, j, "tilde")
    return (ac, r * at.dag()), (ac.dag(), -r * at)


def xi_doublets(basis: LiouvilleBasis, j: int, n: float):
    """``xi = B a`` and ``xibar = abar B^-1`` at occupation ``n``."""
    b, binv = bogoliubov(n, basis.modes[j].sigma)
    a, abar = doublets(basis, j)
    xi = tuple(b[mu, 0] * a[0] + b[mu, 1] * a[1] for mu in range(2))
    xibar = tuple(abar[0] * binv[0, mu] + abar[1] * binv[1, mu] for mu in range(2))
    return xi, xibar


@dataclass(frozen=True)
class DoubletHu:
    omega: np.ndarray
    ndot: np.ndarray
    sigmas: np.ndarray

    def counterterm(self, j: int) -> np.ndarray:
        """Thermal-index matrix multiplying ``abar^mu ... a^nu`` in the ndot part."""
        return -1j * self.sigmas[j] * self.ndot[j] * T0


def doublet_hu(schedule: ThermalSchedule, t: float) -> DoubletHu:
    return DoubletHu(schedule.omega_at(t), schedule.ndot_at(t), np.asarray(schedule.sigmas))


def reconstruct_hu(basis: LiouvilleBasis, table: DoubletHu) -> SuperOperatorMatrix:
    """Contract the doublet table back into a super-Hamiltonian.

    The c-number ``sigma`` accompanying ``abar a`` uses the same truncation-safe
    unit operator as the unperturbed module.  Agreement with ``build_Hu`` holds on
    the interior subspace; on the boson cutoff row ``a~ a~^+`` truncates differently.
    """
    total = None
    for j in range(basis.n_modes):
        s = basis.modes[j].sigma
        a, abar = doublets(basis, j)
        kin = abar[0] @ a[0] + abar[1] @ a[1] + s * mode_terms(basis, j).unit
        ct = table.counterterm(j)
        mix = sum(ct[mu, nu] * (abar[mu] @ a[nu]) for mu in range(2) for nu in range(2))
        term = table.omega[j] * kin + mix
        total = term if total is None else total + term
    return total


# -- thermal vacuum conditions -------------------------------------------


def xi_vacuum_check(basis: LiouvilleBasis, occupations, mask: np.ndarray | None = None) -> dict[str, float]:
    """Residuals of the ket and bra thermal-vacuum conditions at the given occupations."""
    rho = geometric_state(basis, occupations)
    bra = identity_superstate(basis).amplitudes
    mask = basis.interior if mask is None else mask
    out = {"ket_check": 0.0, "ket_tilde": 0.0, "bra": 0.0}
    for j, n in enumerate(occupations):
        s = basis.modes[j].sigma
        r = sqrt_sigma(s)
        ac = super_annihilator(basis, j, "check")
        at = super_annihilator(basis, j, "tilde")
        k1 = ((1 + s * n) * ac - s * r * n * at.dag()) @ rho
        k2 = ((1 + s * n) * at - r * n * ac.dag()) @ rho
        b1 = (at - s * r * ac.dag()).mat.T @ bra
        out["ket_check"] = max(out["ket_check"], float(np.max(np.abs(k1.amplitudes[mask]))))
        out["ket_tilde"] = max(out["ket_tilde"], float(np.max(np.abs(k2.amplitudes[mask]))))
        out["bra"] = max(out["bra"], float(np.max(np.abs(b1[mask]))))
    return out


def xi_algebra_residual(basis: LiouvilleBasis, j: int, n: float, mask: np.ndarray | None = None) -> float:
    """``max |[xi^mu, xibar^nu]_sigma - delta^{mu nu}|`` on the masked block."""
    mask = basis.interior if mask is None else mask
    idx = np.flatnonzero(mask)
    s = basis.modes[j].sigma
    xi, xibar = xi_doublets(basis, j, n)
    worst = 0.0
    for mu in range(2):
        for nu in range(2):
            c = scommutator(xi[mu], xibar[nu], s).mat[idx][:, idx].toarray()
            c -= (mu == nu) * np.eye(idx.size)
            worst = max(worst, float(np.max(np.abs(c))))
    return worst


# -- direct evaluation on the truncated space ----------------------------


def _forward(state: SuperState, schedule, t_from, t_targets):
    """States propagated by the unperturbed generator from ``t_from`` to each target."""
    targets = [t for t in t_targets if t > t_from]
    out = {t_from: state}
    if targets:
        traj = evolve_lvn(state, schedule, np.concatenate([[t_from], targets]))
        out.update(zip(targets, traj[1:]))
    return out


def two_point_direct(basis: LiouvilleBasis, schedule: ThermalSchedule, j: int, k: int,
                     t1, t2, rho0: SuperState | None = None, t0: float | None = None,
                     ops=None, propagate=None) -> TwoTimeKernel:
    """``-i <<I| T[a^mu(t1) abar^nu(t2)] |rho0>>`` by forward propagation only.

    ``t1 > t2``: ``-i <<I| a^mu U(t1,t2) abar^nu |rho(t2)>>``;
    ``t1 < t2``: ``-i sigma <<I| abar^nu U(t2,t1) a^mu |rho(t1)>>``.
    At equal times the thermal-rotated 11 entry comes from the first ordering
    (``t2 -> t1-``) and the other entries from the second (``t2 -> t1+``),
    matching ``propagator_d``.
    ``propagate(state, t_from, targets)`` defaults to unperturbed evolution.
    """
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    times = np.union1d(t1, t2)
    t0 = times[0] if t0 is None else t0
    if rho0 is None:
        rho0 = geometric_state(basis, schedule.n_at(t0))
    propagate = propagate or (lambda st, a, ts: _forward(st, schedule, a, ts))
    rho_t = propagate(rho0, t0, list(times[times > t0]))
    s = basis.modes[j].sigma
    a_j, _ = doublets(basis, j) if ops is None else ops[0]
    _, abar_k = doublets(basis, k) if ops is None else ops[1]
    bra = identity_superstate(basis).amplitudes

    later = np.zeros((t1.size, t2.size, 2, 2), dtype=complex)  # t1 >= t2 ordering
    earlier = np.zeros_like(later)  # t1 <= t2 ordering
    for c, tc in enumerate(t2):
        for nu in range(2):
            start = abar_k[nu] @ rho_t[tc]
            prop = propagate(start, tc, [t for t in t1 if t >= tc])
            for a, ta in enumerate(t1):
                if ta >= tc:
                    for mu in range(2):
                        later[a, c, mu, nu] = -1j * (bra @ (a_j[mu].mat @ prop[ta].amplitudes))
    for a, ta in enumerate(t1):
        for mu in range(2):
            start = a_j[mu] @ rho_t[ta]
            prop = propagate(start, ta, [t for t in t2 if t >= ta])
            for c, tc in enumerate(t2):
                if tc >= ta:
                    for nu in range(2):
                        earlier[a, c, mu, nu] = -1j * s * (bra @ (abar_k[nu].mat @ prop[tc].amplitudes))

    vals = np.where((t1[:, None] > t2[None, :])[..., None, None], later, earlier)
    for a, ta in enumerate(t1):
        for c, tc in enumerate(t2):
            if ta == tc:
                b, binv = bogoliubov(schedule.n[j](ta), s)
                g_late = b @ later[a, c] @ binv
                g_early = b @ earlier[a, c] @ binv
                g = g_early.copy()
                g[0, 0] = g_late[0, 0]
                vals[a, c] = binv @ g @ b
    return TwoTimeKernel("Delta_direct", (j, k), t1, t2, vals)

