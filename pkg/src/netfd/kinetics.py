"""Quantum transport with a memory kernel and its Markovian (Boltzmann) limit."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, root

from .errors import ConfigurationError, IntegrationError
from .liouville import BOSON, FERMION
from .perturbation import InteractionModel
from .schedule import Curve

log = logging.getLogger(__name__)

MAX_HALVINGS = 12


def lorentzian(x, width: float):
    return (width / np.pi) / (np.asarray(x) ** 2 + width**2)


def default_broadening(energies) -> float:
    e = np.unique(np.asarray(energies, dtype=float))
    spacing = np.min(np.diff(e)) if e.size > 1 else 1.0
    return 0.05 * spacing


def default_memory(broadening: float) -> float:
    return 8.0 / broadening


@dataclass(frozen=True)
class EquilibriumSpec:
    beta: float
    mu: float = 0.0
    sigma: int = BOSON

    def occupation(self, kappa):
        return 1.0 / (np.exp(self.beta * (np.asarray(kappa, dtype=float) - self.mu)) - self.sigma)


def _occupations(beta, mu, omega, sigma):
    x = np.clip(beta * (omega - mu), -700, 700)
    return 1.0 / np.expm1(x) if sigma == BOSON else 1.0 / (np.exp(x) + 1.0)


def _mu_for_number(beta, number, omega, sigma):
    """Chemical potential giving total occupation ``number`` at inverse temperature ``beta``."""
    def f(mu):
        return _occupations(beta, mu, omega, sigma).sum() - number

    span = 700.0 / abs(beta)
    if sigma == BOSON:
        lo, hi = omega.min() - span, omega.min() - 1e-12 * max(1.0, abs(omega.min()))
    else:
        lo, hi = omega.min() - span, omega.max() + span
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def fit_equilibrium(n, omega, sigma: int = BOSON, guess=None) -> EquilibriumSpec:
    """Equilibrium sharing the total number and energy of ``n``.

    ``mu`` is eliminated through the number constraint, the energy constraint is
    bracketed in ``beta``, and the pair is polished by a 2-d Newton solve.
    """
    n = np.asarray(n, dtype=float)
    omega = np.asarray(omega, dtype=float)
    target = np.array([n.sum(), (omega * n).sum()])

    def resid(p):
        occ = _occupations(p[0], p[1], omega, sigma)
        return np.array([occ.sum(), (omega * occ).sum()]) - target

    def energy_gap(beta):
        mu = _mu_for_number(beta, target[0], omega, sigma)
        return (omega * _occupations(beta, mu, omega, sigma)).sum() - target[1]

    try:
        if guess is None:
            # the energy at fixed number falls monotonically with beta
            betas = np.geomspace(1e-4, 1e4, 161)
            if sigma == FERMION:
                betas = np.concatenate([-betas[::-1], betas])
            gaps = np.array([energy_gap(b) for b in betas])
            k = np.flatnonzero(np.sign(gaps[:-1]) * np.sign(gaps[1:]) <= 0)
            if not k.size:
                raise ValueError("energy constraint not bracketed")
            beta = brentq(energy_gap, betas[k[0]], betas[k[0] + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            guess = (beta, _mu_for_number(beta, target[0], omega, sigma))
    except ValueError as exc:
        raise IntegrationError(f"equilibrium fit failed: {exc}") from exc
    sol = root(resid, guess, method="hybr", tol=1e-14)
    x = sol.x if np.all(np.isfinite(sol.x)) and np.max(np.abs(resid(sol.x))) <= np.max(np.abs(resid(guess))) \
        else np.asarray(guess, dtype=float)
    # hybr reports "xtol too small" once it sits on the root, so judge by the residual
    if np.max(np.abs(resid(x))) > 1e-10 * max(1.0, target[1]):
        raise IntegrationError(f"equilibrium fit failed: {sol.message}")
    return EquilibriumSpec(float(x[0]), float(x[1]), sigma)


# -- Markovian collision integral ---------------------------------------


def markovian_collision(n, model: InteractionModel, omega, broadening: float) -> np.ndarray:
    """``dn_j/dt = 16 pi lambda^2 sum |V_jklm|^2 delta(omega) [gain - loss]``."""
    if broadening <= 0:
        raise ConfigurationError("broadening must be positive")
    n = np.asarray(n, dtype=float)
    omega = np.asarray(omega, dtype=float)
    s = np.asarray(model.sigmas)
    v2 = np.abs(model.vertex) ** 2
    p = 1 + s * n
    de = omega[:, None, None, None] + omega[None, :, None, None] - omega[None, None, :, None] - omega[None, None, None, :]
    gain = np.einsum("j,k,l,m->jklm", p, p, n, n)
    loss = np.einsum("j,k,l,m->jklm", n, n, p, p)
    rate = 16 * np.pi * model.coupling**2 * v2 * lorentzian(de, broadening) * (gain - loss)
    return rate.sum(axis=(1, 2, 3))


# -- memory-kernel transport ---------------------------------------------


def channel_weights(model: InteractionModel, n) -> tuple[np.ndarray, np.ndarray]:
    """``(gain_c - n_j w_c, w_c)`` for every channel of every mode, flattened mode by mode."""
    sig = model.sigmas
    pairs = [(g - n[j] * w, w) for j in range(model.n_modes)
             for w, g in (ch.weights(n, sig) for ch in model.channels(j))]
    a, w = zip(*pairs) if pairs else ((), ())
    return np.array(a, dtype=float), np.array(w, dtype=float)


def channel_table(model: InteractionModel):
    """``(mode, creators, annihilators)`` per flattened channel slot."""
    return [(j, ch.creators, ch.annihilators) for j in range(model.n_modes) for ch in model.channels(j)]


@dataclass
class TransportState:
    """Occupation history on ``[t - T_mem, t]`` with phases and loop weights per point."""

    times: list = field(default_factory=list)
    occupations: list = field(default_factory=list)
    phases: list = field(default_factory=list)  # int_{t0}^{s} omega_j
    weights: list = field(default_factory=list)  # per point: gain - n w, flattened over channels
    widths: list = field(default_factory=list)  # per point: w, flattened over channels

    @property
    def t(self) -> float:
        return self.times[-1]

    @property
    def n(self) -> np.ndarray:
        return self.occupations[-1]

    def push(self, t, n, phase, model):
        self.times.append(float(t))
        self.occupations.append(np.asarray(n, dtype=float).copy())
        self.phases.append(np.asarray(phase, dtype=float).copy())
        a, w = channel_weights(model, n)
        self.weights.append(a)
        self.widths.append(w)

    def _lists(self):
        return (self.times, self.occupations, self.phases, self.weights, self.widths)

    def pop(self):
        for lst in self._lists():
            lst.pop()

    def trim(self, t_mem: float):
        cut = self.t - t_mem
        k = 0
        while k + 1 < len(self.times) and self.times[k + 1] <= cut:
            k += 1
        if k:
            for lst in self._lists():
                del lst[:k]


def phase_of(omega_curves, t, t0):
    return np.array([c.integral(t0, t) for c in omega_curves])


def transport_rhs(state: TransportState, model: InteractionModel, omega_curves, broadening: float = 0.0,
                  t_mem: float | None = None) -> np.ndarray:
    """``dn_j/dt = 2 sigma Im int ds S12(t, s) exp(i int_s^t omega_j)`` by the trapezoid rule.

    With ``S12(t, s) = i sigma sum_c A_c(s) exp(-i int_s^t kappa_c - broadening (t - s))``
    this is ``2 Re sum_c int ds A_c(s) exp(-i int_s^t (kappa_c - omega_j)) exp(-broadening (t - s))``.
    """
    if not state.times:
        raise ConfigurationError("transport state has no history")
    t = state.t
    ts = np.array(state.times)
    sel = ts >= t - t_mem - 1e-9 if t_mem is not None else np.ones(ts.size, dtype=bool)
    ts = ts[sel]
    if ts.size < 2:
        return np.zeros(model.n_modes)
    ph = np.array(state.phases)[sel]
    wts = np.zeros_like(ts)
    dt = np.diff(ts)
    wts[:-1] += dt / 2
    wts[1:] += dt / 2
    damp = np.exp(-broadening * (t - ts))
    a = np.asarray(state.weights)[sel]
    dphi = ph[-1] - ph  # int_s^t omega for every mode
    out = np.zeros(model.n_modes)
    for c, (j, creators, annihilators) in enumerate(channel_table(model)):
        kap = sum(dphi[:, l] for l in annihilators) - sum(dphi[:, q] for q in creators)
        integrand = a[:, c] * np.exp(-1j * (kap - dphi[:, j])) * damp
        out[j] += 2 * np.real(np.sum(wts * integrand))
    return out


def constant_history(model: InteractionModel, n, omega_curves, t_mem: float, dt: float,
                     t: float = 0.0) -> TransportState:
    """History frozen at ``n`` over ``[t - t_mem, t]``."""
    n = np.asarray(n, dtype=float)
    state = TransportState()
    a, w = channel_weights(model, n)
    for s in t - dt * np.arange(int(np.ceil(t_mem / dt)), -1, -1):
        state.times.append(float(s))
        state.occupations.append(n)
        state.phases.append(phase_of(omega_curves, s, 0.0))
        state.weights.append(a)
        state.widths.append(w)
    return state


def tail_error(model: InteractionModel, n, omega_curves, broadening: float, t_mem: float, dt: float) -> float:
    """Change of the rate when the memory window is doubled, with a frozen history."""
    short = transport_rhs(constant_history(model, n, omega_curves, t_mem, dt), model, omega_curves,
                          broadening, t_mem)
    long = transport_rhs(constant_history(model, n, omega_curves, 2 * t_mem, dt), model, omega_curves,
                         broadening, 2 * t_mem)
    return float(np.max(np.abs(long - short)))


def _in_bounds(n, sigmas) -> bool:
    n = np.asarray(n)
    s = np.asarray(sigmas)
    return bool(np.all(n >= 0) and np.all(n[s == FERMION] <= 1))


@dataclass(frozen=True)
class TransportTrajectory:
    times: np.ndarray
    occupations: np.ndarray  # (len(times), modes)
    rates: np.ndarray
    equilibrium: EquilibriumSpec | None
    equilibrium_gap: np.ndarray
    mode: str
    tail_error: float = 0.0

    def asymptote_error(self) -> float:
        return float(self.equilibrium_gap[-1])


def _equilibrium_gap(occ, omega, sigma, eq):
    if eq is None:
        return np.full(len(occ), np.nan)
    target = eq.occupation(omega)
    return np.max(np.abs(np.asarray(occ) - target[None, :]), axis=1)


def _omega_curves(omega, k):
    if omega is None:
        raise ConfigurationError("energies are required")
    if isinstance(omega, (list, tuple)) and omega and isinstance(omega[0], Curve):
        return list(omega)
    return [Curve.constant(float(w)) for w in np.broadcast_to(np.asarray(omega, dtype=float), (k,))]


def relax(model: InteractionModel, n0, omega=None, t_end: float = 100.0, mode: str = "markovian",
          dt: float = 0.05, broadening: float | None = None, t_mem: float | None = None,
          output_every: float | None = None, prehistory: str = "constant") -> TransportTrajectory:
    """Relax occupations from ``n0`` under the transport equation.

    ``mode="markovian"`` integrates the collision integral adaptively;
    ``mode="memory"`` steps the kernel equation explicitly (Heun) with a
    history buffer.  ``prehistory="constant"`` fills the buffer before ``t=0``
    with ``n0``; ``"none"`` switches the interaction on at ``t=0``.
    """
    k = model.n_modes
    n0 = np.asarray(n0, dtype=float)
    if n0.shape != (k,) or not _in_bounds(n0, model.sigmas):
        raise ConfigurationError("initial occupations are outside the physical region")
    omega_curves = _omega_curves(omega if omega is not None else model.energies, k)
    omega0 = np.array([c(0.0) for c in omega_curves])
    broadening = default_broadening(omega0) if broadening is None else broadening
    t_mem = default_memory(broadening) if t_mem is None else t_mem
    output_every = output_every or dt
    out_t = np.arange(0.0, t_end + 0.5 * output_every, output_every)
    sigma = model.sigmas[0]
    try:
        eq = fit_equilibrium(n0, omega0, sigma) if len(set(model.sigmas)) == 1 else None
    except IntegrationError:
        eq = None

    if mode == "markovian":
        def rhs(t, y):
            return markovian_collision(y, model, [c(t) for c in omega_curves], broadening)

        def negative(t, y):
            return np.min(y)
        negative.terminal = True

        sol = solve_ivp(rhs, (0.0, t_end), n0, method="DOP853", t_eval=out_t, rtol=1e-10, atol=1e-13,
                        events=negative)
        if not sol.success or sol.status == 1:
            raise IntegrationError(f"Markovian relaxation left the physical region or failed: {sol.message}")
        occ = sol.y.T
        rates = np.array([rhs(t, y) for t, y in zip(sol.t, occ)])
        return TransportTrajectory(sol.t, occ, rates, eq, _equilibrium_gap(occ, omega0, sigma, eq), mode)

    if mode != "memory":
        raise ConfigurationError(f"unknown transport mode {mode!r}")

    if prehistory == "constant":
        state = constant_history(model, n0, omega_curves, t_mem, dt)
    elif prehistory == "none":
        state = TransportState()
        state.push(0.0, n0, np.zeros(k), model)
    else:
        raise ConfigurationError(f"unknown prehistory {prehistory!r}")
    tail = tail_error(model, n0, omega_curves, broadening, t_mem, dt)
    log.info("memory tail estimate %.3g", tail)

    times, occs, rates = [0.0], [n0.copy()], []
    f0 = transport_rhs(state, model, omega_curves, broadening, t_mem)
    rates.append(f0)
    t = 0.0
    next_out = 1
    h = dt
    while t < t_end - 1e-12:
        step = min(h, t_end - t)
        for _ in range(MAX_HALVINGS):
            pred = state.n + step * f0
            if _in_bounds(pred, model.sigmas):
                state.push(t + step, pred, phase_of(omega_curves, t + step, 0.0), model)
                f1 = transport_rhs(state, model, omega_curves, broadening, t_mem)
                state.pop()
                corr = state.n + 0.5 * step * (f0 + f1)
                if _in_bounds(corr, model.sigmas):
                    break
            step /= 2
            log.warning("occupation bound violated at t=%.6g; halving step to %.3g", t, step)
        else:
            raise IntegrationError(f"occupation bound violated persistently at t={t:.6g}")
        t += step
        state.push(t, corr, phase_of(omega_curves, t, 0.0), model)
        state.trim(t_mem)
        f0 = transport_rhs(state, model, omega_curves, broadening, t_mem)
        while next_out < out_t.size and t >= out_t[next_out] - 1e-9:
            times.append(t)
            occs.append(corr.copy())
            rates.append(f0)
            next_out += 1
    occ = np.array(occs)
    return TransportTrajectory(np.array(times), occ, np.array(rates), eq,
                               _equilibrium_gap(occ, omega0, sigma, eq), mode, tail)
