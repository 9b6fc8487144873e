"""Interaction model, exact small-system engine and second-order self-energies.

The exact engine works with a time-independent Fock Hamiltonian
``H = sum omega0 a^+a + H_int``, for which the total super-Hamiltonian is
``L(H) - R(H)``; superstates are propagated as ``W X W^+`` with ``W = exp(-iHt)``.

Second-order self-energies are assembled from "channels".  For mode ``j``,
``Y_j = [a_j, H_int] = lambda sum C_qlm a_q^+ a_l a_m``; terms sharing the same
creator and annihilator content form one channel ``c`` with frequency
``kappa_c = omega_l + omega_m - omega_q`` and Wick weights

    w_c = <[Y_c, Y_c^+]_sigma>,    gain_c = <Y_c^+ Y_c>

taken in the product geometric state (connected pairings only).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .errors import ConfigurationError, IntegrationError
from .liouville import (
    BOSON,
    FERMION,
    LiouvilleBasis,
    ModeSpec,
    SuperOperatorMatrix,
    SuperState,
    build_total_super_hamiltonian,
    identity_superstate,
)
from .schedule import ThermalSchedule
from .tfd import TwoTimeKernel, bogoliubov, delta_kernel, doublets, two_point_direct
from .unperturbed import build_Hu, geometric_state


@dataclass(frozen=True, eq=False)
class InteractionModel:
    """Two-body contact interaction ``lambda sum V_jklm a_j^+ a_k^+ a_l a_m``."""

    coupling: float
    vertex: np.ndarray
    sigmas: tuple[int, ...]
    energies: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.vertex, dtype=complex)
        k = len(self.sigmas)
        if v.shape != (k,) * 4:
            raise ConfigurationError(f"vertex must have shape {(k,) * 4}, got {v.shape}")
        object.__setattr__(self, "vertex", v)
        if len(self.energies) != k:
            raise ConfigurationError("one bare energy per mode is required")
        res = self.symmetry_residual()
        if res > 1e-12:
            raise ConfigurationError(f"vertex violates hermiticity/exchange symmetry (residual {res:.2e})")

    @property
    def n_modes(self) -> int:
        return len(self.sigmas)

    def symmetry_residual(self) -> float:
        v = self.vertex
        herm = np.abs(v - np.conj(v.transpose(2, 3, 0, 1)))
        # exchange signs only matter between two modes of the same statistics;
        # the contact vertex here is restricted to a single statistics
        s = self.sigmas[0] if len(set(self.sigmas)) == 1 else BOSON
        ex1 = np.abs(v - s * v.transpose(1, 0, 2, 3))
        ex2 = np.abs(v - s * v.transpose(0, 1, 3, 2))
        return float(max(herm.max(), ex1.max(), ex2.max()))

    def with_coupling(self, coupling: float) -> "InteractionModel":
        return InteractionModel(coupling, self.vertex, self.sigmas, self.energies)

    def fock_interaction(self, basis: LiouvilleBasis) -> sp.csr_matrix:
        a = [basis.fock_annihilator(j) for j in range(basis.n_modes)]
        ad = [x.conj().T.tocsr() for x in a]
        h = sp.csr_matrix((basis.dim_h, basis.dim_h), dtype=complex)
        for idx in zip(*np.nonzero(self.vertex)):
            j, k, l, m = idx
            h = h + self.vertex[idx] * (ad[j] @ ad[k] @ a[l] @ a[m])
        return (self.coupling * h).tocsr()

    def fock_hamiltonian(self, basis: LiouvilleBasis) -> np.ndarray:
        h = self.fock_interaction(basis).toarray()
        for j in range(basis.n_modes):
            a = basis.fock_annihilator(j)
            h = h + self.energies[j] * (a.conj().T @ a).toarray()
        return h

    @cached_property
    def _channels(self) -> dict[int, list["Channel"]]:
        return {j: build_channels(self, j) for j in range(self.n_modes)}

    def channels(self, j: int) -> list["Channel"]:
        return self._channels[j]


def ladder_vertex(n_modes: int = 3, strength: float = 1.0) -> np.ndarray:
    """Vertex exchanging ``1 + 3 <-> 2 + 2`` (modes 0, 1, 2)."""
    v = np.zeros((n_modes,) * 4)
    half = strength / 2
    v[0, 2, 1, 1] = v[2, 0, 1, 1] = half
    v[1, 1, 0, 2] = v[1, 1, 2, 0] = half
    return v


def ladder_model(coupling: float = 0.1, energies=(1.0, 2.0, 3.0), strength: float = 1.0) -> InteractionModel:
    return InteractionModel(coupling, ladder_vertex(3, strength), (BOSON,) * 3, tuple(energies))


def ladder_modes(energies=(1.0, 2.0, 3.0), cutoffs=(3, 12, 3)) -> list[ModeSpec]:
    return [ModeSpec.boson(e, c) for e, c in zip(energies, cutoffs)]


# -- Wick channels -------------------------------------------------------


def wick(ops, n, sigmas) -> complex:
    """Expectation of an operator string in the product geometric state.

    ``ops`` is a sequence of ``(mode, dagger, group)``; only pairings that
    join different groups are kept (connected part).
    """
    ops = list(ops)
    if not ops:
        return 1.0
    if len(ops) % 2:
        return 0.0
    (m0, d0, g0), rest = ops[0], ops[1:]
    total = 0.0
    fermi_between = 0
    for k, (m, d, g) in enumerate(rest):
        if m == m0 and d != d0 and g != g0:
            val = n[m0] if d0 else 1 + sigmas[m0] * n[m0]
            sign = (-1) ** fermi_between if sigmas[m0] == FERMION else 1
            if val != 0:
                total += sign * val * wick(rest[:k] + rest[k + 1:], n, sigmas)
        if sigmas[m] == FERMION:
            fermi_between += 1
    return total


@dataclass(frozen=True)
class Channel:
    mode: int
    creators: tuple[int, ...]
    annihilators: tuple[int, ...]
    terms: tuple[tuple[complex, int, int, int], ...]  # (C, q, l, m), coupling included
    sigma: int

    def kappa(self, omega) -> float:
        omega = np.asarray(omega)
        return float(omega[list(self.annihilators)].sum() - omega[list(self.creators)].sum())

    def _expect(self, first_dag: bool, n, sigmas) -> complex:
        total = 0.0
        for (c1, q1, l1, m1), (c2, q2, l2, m2) in itertools.product(self.terms, self.terms):
            y = [(q1, True, 0), (l1, False, 0), (m1, False, 0)]
            yd = [(m2, True, 1), (l2, True, 1), (q2, False, 1)]
            coef = c1 * np.conj(c2)
            if first_dag:
                total += coef * wick([(a, b, 0) for a, b, _ in yd] + [(a, b, 1) for a, b, _ in y], n, sigmas)
            else:
                total += coef * wick(y + yd, n, sigmas)
        return total

    def weights(self, n, sigmas) -> tuple[float, float]:
        """``(w, gain)`` at occupations ``n``."""
        yyd = self._expect(False, n, sigmas)
        ydy = self._expect(True, n, sigmas)
        return float(np.real(yyd - self.sigma * ydy)), float(np.real(ydy))


def build_channels(model: InteractionModel, j: int) -> list[Channel]:
    v = model.vertex
    s = model.sigmas
    k = model.n_modes
    groups: dict[tuple, list] = {}
    for q, l, m in itertools.product(range(k), repeat=3):
        c = model.coupling * (v[j, q, l, m] + s[j] * v[q, j, l, m])
        if c == 0:
            continue
        key = ((q,), tuple(sorted((l, m))))
        groups.setdefault(key, []).append((c, q, l, m))
    return [Channel(j, key[0], key[1], tuple(terms), s[j]) for key, terms in sorted(groups.items())]


# -- second-order self-energy --------------------------------------------


def _kappa_phase(channel: Channel, schedule: ThermalSchedule, t: float, s: float) -> float:
    """``int_s^t kappa_c``."""
    ph = sum(schedule.phase(l, t, s) for l in channel.annihilators)
    return ph - sum(schedule.phase(q, t, s) for q in channel.creators)


def self_energy_second_order(model: InteractionModel, schedule: ThermalSchedule, j: int,
                             t: float, s: float, broadening: float = 0.0) -> np.ndarray:
    """Loop self-energy ``S^{mu nu}_{jj}(t, s)`` at order lambda^2.

    Occupations enter at the earlier of the two times.  ``broadening`` multiplies
    the kernel by ``exp(-broadening |t - s|)``.
    """
    n = schedule.n_at(min(t, s))
    sig = schedule.sigmas
    out = np.zeros((2, 2), dtype=complex)
    damp = np.exp(-broadening * abs(t - s))
    for ch in model.channels(j):
        w, gain = ch.weights(n, sig)
        e = np.exp(-1j * _kappa_phase(ch, schedule, t, s)) * damp
        if t >= s:
            out[0, 0] += -1j * w * e
        if s >= t:
            out[1, 1] += 1j * w * e
        out[0, 1] += 1j * sig[j] * (gain - n[j] * w) * e
    return out


def self_energy_kernel(model, schedule, j, t1, t2, broadening: float = 0.0) -> TwoTimeKernel:
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    vals = np.array([[self_energy_second_order(model, schedule, j, a, c, broadening) for c in t2] for a in t1])
    return TwoTimeKernel("S", (j, j), t1, t2, vals)


def transport_rate_direct(model: InteractionModel, n, omega, j: int, elapsed: float) -> float:
    """Order-lambda^2 ``dn_j/dt`` a time ``elapsed`` after switching on the interaction.

    Closed form of the transport integral for constant occupations and energies:
    ``2 sum_c (gain_c - n_j w_c) sin(Omega_c T) / Omega_c``, ``Omega_c = kappa_c - omega_j``.
    """
    rate = 0.0
    sig = model.sigmas
    for ch in model.channels(j):
        w, gain = ch.weights(n, sig)
        om = ch.kappa(omega) - omega[j]
        f = elapsed if abs(om) < 1e-14 else np.sin(om * elapsed) / om
        rate += 2 * (gain - n[j] * w) * f
    return float(rate)


# -- exact engine --------------------------------------------------------


def total_super_hamiltonian(basis: LiouvilleBasis, model: InteractionModel) -> SuperOperatorMatrix:
    return build_total_super_hamiltonian(model.fock_hamiltonian(basis), basis)


def interaction_super_hamiltonian(basis, model, schedule, t: float) -> SuperOperatorMatrix:
    """``H_I(t) = H - H_u(t)`` in the Schrodinger frame."""
    return total_super_hamiltonian(basis, model) - build_Hu(basis, schedule, t)


class ExactEngine:
    """Exact propagation under the time-independent total Hamiltonian."""

    def __init__(self, basis: LiouvilleBasis, model: InteractionModel):
        self.basis = basis
        self.model = model
        self.h = model.fock_hamiltonian(basis)
        self.energies, self.vectors = np.linalg.eigh(self.h)
        self._bra = identity_superstate(basis).amplitudes

    def unitary(self, dt: float) -> np.ndarray:
        return (self.vectors * np.exp(-1j * self.energies * dt)) @ self.vectors.conj().T

    def step(self, state: SuperState, dt: float) -> SuperState:
        w = self.unitary(dt)
        x = state.as_operator()
        return SuperState(self.basis, (w @ x @ w.conj().T).ravel())

    def propagate(self, state: SuperState, t_from: float, targets) -> dict[float, SuperState]:
        out = {t_from: state}
        for t in targets:
            if t > t_from:
                out[t] = self.step(state, t - t_from)
        return out

    def expectation(self, op_fock: np.ndarray, state: SuperState) -> complex:
        return complex(np.trace(op_fock @ state.as_operator()))

    def number(self, state: SuperState, j: int) -> float:
        a = self.basis.fock_annihilator(j)
        return float(np.real(self.expectation((a.conj().T @ a).toarray(), state)))

    def number_rate(self, state: SuperState, j: int) -> float:
        """``d<a_j^+ a_j>/dt = <i[H, a_j^+ a_j]>``, evaluated exactly."""
        a = self.basis.fock_annihilator(j)
        nop = (a.conj().T @ a).toarray()
        return float(np.real(self.expectation(1j * (self.h @ nop - nop @ self.h), state)))


def evolve_v(basis: LiouvilleBasis, model: InteractionModel, schedule: ThermalSchedule, t_grid,
             max_dim: int = 1024) -> list[np.ndarray]:
    """Interaction-picture evolution ``V(t, t0) = U0(t, t0)^-1 U(t, t0)`` on ``t_grid``.

    Dense, so only for small Liouville spaces.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dim = basis.dim_l
    if dim > max_dim:
        raise ConfigurationError(f"evolve_v is dense; Liouville dimension {dim} exceeds {max_dim}")
    engine = ExactEngine(basis, model)

    def rhs(t, y):
        return (-1j * (build_Hu(basis, schedule, t).mat @ y.reshape(dim, dim))).ravel()

    t0 = t_grid[0]
    if t_grid.size > 1:
        sol = solve_ivp(rhs, (t0, t_grid[-1]), np.eye(dim, dtype=complex).ravel(), method="DOP853",
                        t_eval=t_grid, rtol=1e-11, atol=1e-13)
        if not sol.success:
            raise IntegrationError(f"unperturbed propagator: {sol.message}")
        u0s = [sol.y[:, k].reshape(dim, dim) for k in range(t_grid.size)]
    else:
        u0s = [np.eye(dim, dtype=complex)]
    out = []
    for t, u0 in zip(t_grid, u0s):
        w = engine.unitary(t - t0)
        u_full = np.kron(w, w.conj())
        out.append(np.linalg.solve(u0, u_full))
    return out


# -- Green functions -----------------------------------------------------


@dataclass(frozen=True)
class GreenFunctionSet:
    times: np.ndarray
    mode: int
    G: TwoTimeKernel
    g: TwoTimeKernel
    Delta: TwoTimeKernel
    n_heisenberg: np.ndarray
    n_schedule: np.ndarray

    def lower_residual(self) -> float:
        return self.g.lower_residual()

    def identity_residual(self, sigma: int = BOSON) -> float:
        """``max_t |g^12(t, t) - i sigma (n_H - n)|``."""
        g12 = np.diagonal(self.g.component(1, 2))
        return float(np.max(np.abs(g12 - 1j * sigma * (self.n_heisenberg - self.n_schedule))))

    def conjugation_residual(self) -> float:
        """``g^11(t1, t2) = conj g^22(t2, t1)`` and ``g^12(t1,t2) = -conj g^12(t2,t1)``."""
        g11 = self.g.component(1, 1)
        g22 = self.g.component(2, 2)
        g12 = self.g.component(1, 2)
        return float(max(np.max(np.abs(g11 - g22.T.conj())), np.max(np.abs(g12 + g12.T.conj()))))


def full_green(engine: ExactEngine, schedule: ThermalSchedule, j: int, grid,
               rho0: SuperState | None = None) -> GreenFunctionSet:
    """Exact two-point functions of mode ``j`` on ``grid``, starting from ``rho0`` at ``grid[0]``."""
    grid = np.asarray(grid, dtype=float)
    basis = engine.basis
    if schedule.n_modes != basis.n_modes:
        raise ConfigurationError("schedule and basis disagree on the number of modes")
    t0 = grid[0]
    if rho0 is None:
        rho0 = geometric_state(basis, schedule.n_at(t0))
    big = two_point_direct(basis, schedule, j, j, grid, grid, rho0=rho0, t0=t0,
                           ops=(doublets(basis, j), doublets(basis, j)), propagate=engine.propagate)
    s = basis.modes[j].sigma
    gvals = np.empty_like(big.values)
    for a, ta in enumerate(grid):
        for c, tc in enumerate(grid):
            b1, _ = bogoliubov(schedule.n[j](ta), s)
            _, b2inv = bogoliubov(schedule.n[j](tc), s)
            gvals[a, c] = b1 @ big.values[a, c] @ b2inv
    states = engine.propagate(rho0, t0, list(grid[1:]))
    n_h = np.array([engine.number(states[t], j) for t in grid])
    n_s = np.array([schedule.n[j](t) for t in grid])
    return GreenFunctionSet(
        grid, j,
        TwoTimeKernel("G", (j, j), grid, grid, big.values),
        TwoTimeKernel("g", (j, j), grid, grid, gvals),
        delta_kernel(schedule, j, grid, grid),
        n_h, n_s,
    )


# -- Dyson-Schwinger closure on a grid -----------------------------------


def _block(kernel: TwoTimeKernel) -> np.ndarray:
    n1, n2 = kernel.t1.size, kernel.t2.size
    return kernel.values.transpose(0, 2, 1, 3).reshape(2 * n1, 2 * n2)


def _unblock(mat, like: TwoTimeKernel, kind: str) -> TwoTimeKernel:
    n1, n2 = like.t1.size, like.t2.size
    vals = mat.reshape(n1, 2, n2, 2).transpose(0, 2, 1, 3)
    return TwoTimeKernel(kind, like.modes, like.t1, like.t2, vals)


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    dt = np.diff(grid)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


@dataclass(frozen=True)
class DysonResult:
    sigma: TwoTimeKernel
    closure: float
    regularization: float
    condition: float


def dyson_closure(delta: TwoTimeKernel, green: TwoTimeKernel, regularization: float = 1e-10) -> DysonResult:
    """Extract ``Sigma`` from ``G = Delta + Delta * Sigma * G`` on the grid and re-check the equation.

    ``*`` is the trapezoid convolution.  The inversion is Tikhonov-regularized
    when the discretized kernels are ill-conditioned.
    """
    wts = np.repeat(trapezoid_weights(delta.t2), 2)
    d = _block(delta)
    g = _block(green)
    a = d * wts[None, :]  # Delta W
    c = wts[:, None] * g  # W G
    cond = float(max(np.linalg.cond(a), np.linalg.cond(c)))
    reg = 0.0 if cond < 1e10 else regularization

    def inv(m):
        if reg == 0.0:
            return np.linalg.inv(m)
        mh = m.conj().T
        return np.linalg.solve(mh @ m + reg * np.eye(m.shape[0]), mh)

    sigma = inv(a) @ (g - d) @ inv(c)
    closure = float(np.max(np.abs(d + a @ sigma @ c - g)))
    return DysonResult(_unblock(sigma, delta, "Sigma"), closure, reg, cond)
