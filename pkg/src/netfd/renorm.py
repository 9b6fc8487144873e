"""On-shell self-energies, energy renormalization and the equilibrium occupation gap."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, ConfigurationError
from .kinetics import TransportState, channel_table, lorentzian, transport_rhs
from .liouville import BOSON
from .perturbation import InteractionModel
from .tfd import TwoTimeKernel

log = logging.getLogger(__name__)

SCAN_POINTS = 401
BRACKET_WIDENING = (1, 4, 16)


def distribution(kappa, beta: float, sigma: int = BOSON):
    return 1.0 / (np.exp(beta * np.asarray(kappa, dtype=float)) - sigma)


def scaling_exponent(x, y) -> float:
    """Least-squares slope of ``log|y|`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.abs(np.asarray(y, dtype=float))), 1)[0])


# -- on-shell transform --------------------------------------------------


def _trapezoid(x):
    w = np.zeros_like(x)
    d = np.diff(x)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def onshell_transform(kernel, omega, t: float, t_mem: float, grid=None, tol: float = 1e-9) -> np.ndarray:
    """``S[omega; t]`` with retarded arguments ``(t, t - tau)`` and advanced ``(t - tau, t)``.

    ``kernel`` is a ``TwoTimeKernel`` containing ``t`` in both axes, or a callable
    ``(t1, t2) -> 2x2`` together with ``grid``.  Only arguments ``<= t`` are read.
    ``omega`` is a scalar or a callable ``(a, b) -> int_a^b omega``.
    At ``tau = 0`` the retarded piece drops the 22 entry and the advanced piece the 11
    entry, i.e. each half-line uses the one-sided limit of the kernel.
    """
    if isinstance(kernel, TwoTimeKernel):
        i1 = np.flatnonzero(np.isclose(kernel.t1, t, rtol=0, atol=tol))
        i2 = np.flatnonzero(np.isclose(kernel.t2, t, rtol=0, atol=tol))
        if not i1.size or not i2.size:
            raise ConfigurationError("kernel grid does not contain the evaluation time")
        past1 = np.flatnonzero(kernel.t1 <= t + tol)
        past2 = np.flatnonzero(kernel.t2 <= t + tol)
        s_r = kernel.t2[past2]
        s_a = kernel.t1[past1]
        ret = kernel.values[i1[0], past2]
        adv = kernel.values[past1, i2[0]]
    else:
        if grid is None:
            raise ConfigurationError("a callable kernel needs a time grid")
        s_r = s_a = np.asarray(grid, dtype=float)[np.asarray(grid) <= t + tol]
        ret = np.array([kernel(t, s) for s in s_r])
        adv = np.array([kernel(s, t) for s in s_a])
    for s in (s_r, s_a):
        if s.size < 2 or s[0] > t - t_mem + tol:
            raise ConfigurationError(f"insufficient history: need samples back to t - T_mem = {t - t_mem:.6g}")
    phase = (lambda a, b: omega * (b - a)) if np.isscalar(omega) else omega
    keep_r = s_r >= t - t_mem - tol
    keep_a = s_a >= t - t_mem - tol
    s_r, ret = s_r[keep_r], ret[keep_r].copy()
    s_a, adv = s_a[keep_a], adv[keep_a].copy()
    ret[-1, 1, 1] = 0.0
    adv[-1, 0, 0] = 0.0
    e_r = np.exp(1j * np.array([phase(s, t) for s in s_r]))
    e_a = np.exp(-1j * np.array([phase(s, t) for s in s_a]))
    out = np.einsum("s,sij->ij", _trapezoid(s_r) * e_r, ret)
    out += np.einsum("s,sij->ij", _trapezoid(s_a) * e_a, adv)
    return out


def history_kernel(state: TransportState, model: InteractionModel, j: int, broadening: float = 0.0):
    """Loop self-energy of mode ``j`` as a ``TwoTimeKernel`` on the history grid.

    Entries are filled only where one argument is the current time, which is all
    the on-shell transform reads.
    """
    ts = np.array(state.times)
    ph = np.array(state.phases)
    a = np.asarray(state.weights)
    w = np.asarray(state.widths)
    sig = model.sigmas[j]
    vals = np.zeros((ts.size, ts.size, 2, 2), dtype=complex)
    dphi = ph[-1] - ph
    damp = np.exp(-broadening * (ts[-1] - ts))
    for c, (mode, creators, annihilators) in enumerate(channel_table(model)):
        if mode != j:
            continue
        kap = sum(dphi[:, l] for l in annihilators) - sum(dphi[:, q] for q in creators)
        e = np.exp(-1j * kap) * damp  # exp(-i int_s^t kappa)
        vals[-1, :, 0, 0] += -1j * w[:, c] * e
        vals[-1, :, 0, 1] += 1j * sig * a[:, c] * e
        # (s, t): phase int_t^s kappa = -int_s^t kappa, occupations still at s
        vals[:, -1, 1, 1] += 1j * w[:, c] * np.conj(e)
        vals[:, -1, 0, 1] += 1j * sig * a[:, c] * np.conj(e)
    vals[-1, -1, 0, 1] = sum(1j * sig * a[-1, c] for c, (m, _, _) in enumerate(channel_table(model)) if m == j)
    return TwoTimeKernel("S_loop", (j, j), ts, ts, vals)


# -- equilibrium on-shell condition ---------------------------------------


def equilibrium_onshell_solve(sampler, guess: float, half_width: float, points: int = SCAN_POINTS,
                              xtol: float = 1e-14) -> float:
    """Root of ``Re S11(k0)`` in ``guess +- half_width`` closest to ``guess``.

    ``sampler(k0)`` returns the 2x2 self-energy with the energy counterterm at
    ``omega = k0``.  The bracket is scanned for sign changes, each refined by Brent.
    """
    def f(x):
        return float(np.real(sampler(x)[0, 0]))

    xs = np.linspace(guess - half_width, guess + half_width, points)
    fs = np.array([f(x) for x in xs])
    roots = [x for x, v in zip(xs, fs) if v == 0.0]
    for k in np.flatnonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) < 0):
        roots.append(brentq(f, xs[k], xs[k + 1], xtol=xtol, rtol=4 * np.finfo(float).eps))
    if not roots:
        raise BracketError(f"Re S11 has no sign change in [{xs[0]:.6g}, {xs[-1]:.6g}]", scan=(xs, fs))
    return float(min(roots, key=lambda r: abs(r - guess)))


def default_half_width(model: InteractionModel) -> float:
    return 10 * model.coupling**2 * float(np.sum(np.abs(model.vertex) ** 2))


def loop_sampler(model: InteractionModel, n, j: int, broadening: float, omega=None):
    """Second-order ``S(k0)`` of mode ``j`` for stationary occupations ``n``.

    Internal lines use ``omega`` (bare energies by default); the counterterm
    ``omega0_j - k0`` puts the unperturbed energy on shell.
    """
    if broadening <= 0:
        raise ConfigurationError("broadening must be positive")
    omega = np.asarray(model.energies if omega is None else omega, dtype=float)
    n = np.asarray(n, dtype=float)
    sig = model.sigmas[j]
    chans = [(ch.kappa(omega), *ch.weights(n, model.sigmas)) for ch in model.channels(j)]
    omega0 = model.energies[j]

    def sample(k0):
        s11 = omega0 - k0 + sum(w / (k0 - kap + 1j * broadening) for kap, w, _ in chans)
        s12 = 2j * np.pi * sig * sum((g - n[j] * w) * lorentzian(k0 - kap, broadening) for kap, w, g in chans)
        return np.array([[s11, s12], [0.0, np.conj(s11)]])
    return sample


def equilibrium_shifts(model: InteractionModel, beta: float, broadening: float, omega=None) -> np.ndarray:
    """On-shell energies of every mode with thermal occupations at the bare energies."""
    om = np.asarray(model.energies, dtype=float)
    n = distribution(om, beta, model.sigmas[0])
    hw = default_half_width(model)
    return np.array([equilibrium_onshell_solve(loop_sampler(model, n, j, broadening, omega), om[j], hw)
                     for j in range(model.n_modes)])


# -- spectral models -----------------------------------------------------


def _peak(kappa, center, width, shape):
    if shape == "gaussian":
        return np.exp(-0.5 * ((kappa - center) / width) ** 2) / (np.sqrt(2 * np.pi) * width)
    if shape == "lorentzian":
        return lorentzian(kappa - center, width)
    raise ConfigurationError(f"unknown peak shape {shape!r}")


@dataclass(frozen=True)
class SpectralModel:
    """Equilibrium spectra of one mode on a common grid.

    ``self_energy`` is the self-energy spectral function, ``rho`` the spectral
    function of the full propagator; ``omega0`` is the bare energy.
    """

    kappa: np.ndarray
    self_energy: np.ndarray
    rho: np.ndarray
    beta: float
    omega0: float
    sigma: int = BOSON

    def norm(self) -> float:
        return float(_trapezoid(self.kappa) @ self.rho)

    def check(self, tol: float = 1e-6) -> None:
        if abs(self.norm() - 1) > tol:
            raise ConfigurationError(f"spectral function is not normalized: integral = {self.norm():.12g}")

    def occupation(self, kappa):
        return distribution(kappa, self.beta, self.sigma)

    def heisenberg_occupation(self) -> float:
        return float(_trapezoid(self.kappa) @ (self.occupation(self.kappa) * self.rho))

    def _principal(self, k0: float) -> float:
        """``P int sigma(kappa) / (k0 - kappa)`` with the singular part subtracted analytically."""
        x, f = self.kappa, self.self_energy
        f0 = np.interp(k0, x, f)
        d = k0 - x
        near = np.abs(d) < 1e-12
        diff = np.where(near, 0.0, (f - f0) / np.where(near, 1.0, d))
        if near.any():
            diff[near] = -np.interp(k0, x, np.gradient(f, x))
        return float(_trapezoid(x) @ diff + f0 * np.log((k0 - x[0]) / (x[-1] - k0)))

    def sampler(self, n_j: float):
        """``S(k0)`` from the spectral representation at mode occupation ``n_j``."""
        def sample(k0):
            f = np.interp(k0, self.kappa, self.self_energy)
            s11 = self.omega0 - k0 + self._principal(k0) - 1j * np.pi * f
            s12 = 2j * np.pi * self.sigma * (self.occupation(k0) - n_j) * f
            return np.array([[s11, s12], [0.0, np.conj(s11)]])
        return sample


def single_peak_model(omega: float, width: float, beta: float, grid, shape: str = "lorentzian",
                      sigma: int = BOSON) -> SpectralModel:
    """Free quasiparticle with a broadened line, normalized on the grid."""
    kappa = np.asarray(grid, dtype=float)
    rho = _peak(kappa, omega, width, shape)
    rho = rho / (_trapezoid(kappa) @ rho)
    return SpectralModel(kappa, np.zeros_like(kappa), rho, beta, omega, sigma)


def satellite_model(omega0: float, strength: float, kappa_sat: float, beta: float, grid,
                    width: float = 1e-3, sigma: int = BOSON) -> SpectralModel:
    """Bare level coupled with weight ``strength`` to a narrow continuum at ``kappa_sat``.

    The self-energy spectrum is ``strength`` times a narrow Gaussian; the propagator
    spectrum places Gaussians of the same width at the two poles of
    ``k0 - omega0 - strength / (k0 - kappa_sat)`` with their residues as weights.
    """
    kappa = np.asarray(grid, dtype=float)
    mid = 0.5 * (omega0 + kappa_sat)
    rad = 0.5 * np.sqrt((omega0 - kappa_sat) ** 2 + 4 * strength)
    poles = np.array([mid + rad, mid - rad])
    res = (poles - kappa_sat) / (poles - poles[::-1])
    rho = sum(r * _peak(kappa, p, width, "gaussian") for r, p in zip(res, poles))
    rho = rho / (_trapezoid(kappa) @ rho)
    se = strength * _peak(kappa, kappa_sat, width, "gaussian")
    return SpectralModel(kappa, se, rho, beta, omega0, sigma)


@dataclass(frozen=True)
class GapReport:
    omega: float
    n_heisenberg: float
    n_onshell: float
    gap: float
    s12_onshell: complex
    re_s11_onshell: float


def diagonalization_inconsistency_demo(model: SpectralModel, half_width: float = 0.5) -> GapReport:
    """Occupation from the spectral sum rule versus the on-shell distribution."""
    model.check()
    sampler = model.sampler(0.0)
    omega = equilibrium_onshell_solve(sampler, model.omega0, half_width)
    n_on = float(model.occupation(omega))
    n_h = model.heisenberg_occupation()
    s = model.sampler(n_on)(omega)
    return GapReport(omega, n_h, n_on, abs(n_h - n_on), complex(s[0, 1]), float(np.real(s[0, 0])))


# -- nonequilibrium conditions --------------------------------------------


@dataclass(frozen=True)
class OnShellResult:
    mode: int
    t: float
    s: np.ndarray  # 2x2 at the solved energy, counterterms included
    omega: float
    ndot: float
    counterterm: float  # omega - omega0
    re_s11_residual: float
    s12_residual: float
    staggering: float  # change of ndot when re-evaluated at the solved energy
    converged: bool


def new_renorm_step(state: TransportState, model: InteractionModel, omega_curves, j: int,
                    broadening: float, t_mem: float, omega_prev: float | None = None,
                    half_width: float | None = None) -> OnShellResult:
    """Impose ``S12[omega; t] = 0`` and ``Re S11[omega; t] = 0`` for mode ``j``.

    The 12 condition fixes ``ndot`` with the energy history in ``omega_curves``.
    The 11 condition is then solved for a trial energy held fixed over the
    memory window.  The loop is built from ``state`` so the quadrature is the
    one used by ``transport_rhs``.
    """
    t = state.t
    kern = history_kernel(state, model, j, broadening)
    sig = model.sigmas[j]
    omega0 = model.energies[j]
    ph = np.array(state.phases)[:, j]
    times = np.array(state.times)

    def hist_phase(a, b):
        return float(np.interp(b, times, ph) - np.interp(a, times, ph))

    loop = onshell_transform(kern, hist_phase, t, t_mem)
    ndot = float(np.real(-1j * sig * loop[0, 1]))  # S12 = S12_loop - i sigma ndot = 0

    def sampler(x):
        s = onshell_transform(kern, x, t, t_mem)
        s[0, 0] += omega0 - x
        s[1, 1] += omega0 - x
        s[0, 1] -= 1j * sig * ndot
        return s

    omega_prev = omega_curves[j](t) if omega_prev is None else omega_prev
    half_width = default_half_width(model) if half_width is None else half_width
    converged = True
    omega = float(omega0)
    if model.coupling:
        for widen in BRACKET_WIDENING:
            try:
                omega = equilibrium_onshell_solve(sampler, omega_prev, widen * half_width)
                break
            except BracketError:
                continue
        else:
            log.warning("energy condition not bracketed at t=%.6g for mode %d; keeping previous energy", t, j)
            omega, converged = float(omega_prev), False
    s = sampler(omega)
    ndot_new = float(np.real(-1j * sig * onshell_transform(kern, omega, t, t_mem)[0, 1]))
    return OnShellResult(j, t, s, omega, ndot, omega - omega0, float(abs(np.real(s[0, 0]))),
                         float(abs(loop[0, 1] - 1j * sig * ndot)), abs(ndot_new - ndot), converged)


def ndot_identity_residual(state: TransportState, model: InteractionModel, omega_curves, broadening: float,
                           t_mem: float) -> float:
    """``max_j |ndot(new condition) - transport_rhs_j|``."""
    rhs = transport_rhs(state, model, omega_curves, broadening, t_mem)
    new = [new_renorm_step(state, model, omega_curves, j, broadening, t_mem).ndot for j in range(model.n_modes)]
    return float(np.max(np.abs(np.array(new) - rhs)))
