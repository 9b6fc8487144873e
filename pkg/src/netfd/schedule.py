"""Piecewise-cubic time profiles for occupations, energies and rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline, PPoly

from .errors import ConfigurationError
from .liouville import FERMION


class Curve:
    """Scalar function of time backed by a piecewise polynomial.

    Derivatives and integrals are taken analytically on the polynomial
    pieces, so ``derivative`` is exactly the slope of ``__call__``.
    """

    def __init__(self, poly: PPoly):
        self.poly = poly
        self._dpoly = poly.derivative()
        self._ipoly = poly.antiderivative()

    def __call__(self, t):
        out = self.poly(t)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        out = self._dpoly(t)
        return float(out) if np.ndim(out) == 0 else out

    def integral(self, a: float, b: float) -> float:
        return float(self._ipoly(b) - self._ipoly(a))

    @classmethod
    def constant(cls, value: float) -> "Curve":
        return ConstantCurve(value)

    @classmethod
    def from_function(cls, f, df, t0: float, t1: float, step: float = 0.01) -> "Curve":
        """Cubic Hermite interpolant of ``f`` using its exact slope ``df``."""
        if t1 <= t0:
            raise ConfigurationError("curve interval must have t1 > t0")
        n = max(2, int(np.ceil((t1 - t0) / step)) + 1)
        t = np.linspace(t0, t1, n)
        return cls(CubicHermiteSpline(t, f(t), df(t)))

    @classmethod
    def from_samples(cls, t, y) -> "Curve":
        t = np.asarray(t, dtype=float)
        if t.size == 1:
            return cls.constant(float(np.asarray(y)[0]))
        return cls(CubicSpline(t, np.asarray(y, dtype=float), bc_type="natural"))

    @classmethod
    def relaxing(cls, final: float, amplitude: float, rate: float, t0: float, t1: float,
                 step: float = 0.01) -> "Curve":
        """``final - amplitude * exp(-rate t)``."""
        return cls.from_function(
            lambda t: final - amplitude * np.exp(-rate * t),
            lambda t: amplitude * rate * np.exp(-rate * t),
            t0, t1, step,
        )


class ConstantCurve(Curve):
    def __init__(self, value: float):
        self.value = float(value)
        self.poly = PPoly(np.array([[self.value]]), np.array([0.0, 1.0]))

    def __call__(self, t):
        return self.value if np.ndim(t) == 0 else np.full(np.shape(t), self.value)

    def derivative(self, t):
        return 0.0 if np.ndim(t) == 0 else np.zeros(np.shape(t))

    def integral(self, a: float, b: float) -> float:
        return self.value * (b - a)


class PerturbedCurve(Curve):
    """``base`` up to ``t_cut``; ``base + amount (t - t_cut)^2`` afterwards."""

    def __init__(self, base: Curve, t_cut: float, amount: float):
        self.base = base
        self.t_cut = float(t_cut)
        self.amount = float(amount)
        self.poly = base.poly

    def _extra(self, t):
        u = np.maximum(np.asarray(t, dtype=float) - self.t_cut, 0.0)
        return self.amount * u**2

    def __call__(self, t):
        out = np.where(np.asarray(t) > self.t_cut, self.base(t) + self._extra(t), self.base(t))
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        u = np.maximum(np.asarray(t, dtype=float) - self.t_cut, 0.0)
        out = np.where(np.asarray(t) > self.t_cut, self.base.derivative(t) + 2 * self.amount * u,
                       self.base.derivative(t))
        return float(out) if np.ndim(out) == 0 else out

    def integral(self, a: float, b: float) -> float:
        def extra(x):
            return self.amount * max(x - self.t_cut, 0.0) ** 3 / 3
        if a <= self.t_cut and b <= self.t_cut:
            return self.base.integral(a, b)
        return self.base.integral(a, b) + extra(b) - extra(a)


def _as_curve(c) -> Curve:
    return c if isinstance(c, Curve) else Curve.constant(c)


@dataclass(frozen=True)
class ThermalSchedule:
    """Per-mode occupation ``n_j(t)``, energy ``omega_j(t)`` and diagnostic rate ``gamma_j(t)``."""

    sigmas: tuple[int, ...]
    n: tuple[Curve, ...]
    omega: tuple[Curve, ...]
    gamma: tuple[Curve, ...] = field(default=())

    def __post_init__(self):
        k = len(self.sigmas)
        object.__setattr__(self, "n", tuple(_as_curve(c) for c in self.n))
        object.__setattr__(self, "omega", tuple(_as_curve(c) for c in self.omega))
        gamma = self.gamma or (0.0,) * k
        object.__setattr__(self, "gamma", tuple(_as_curve(c) for c in gamma))
        if not (len(self.n) == len(self.omega) == len(self.gamma) == k):
            raise ConfigurationError("schedule needs one n, omega and gamma curve per mode")

    @property
    def n_modes(self) -> int:
        return len(self.sigmas)

    def n_at(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.n])

    def ndot_at(self, t: float) -> np.ndarray:
        return np.array([c.derivative(t) for c in self.n])

    def omega_at(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.omega])

    def gamma_at(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.gamma])

    def phase(self, j: int, t1: float, t2: float) -> float:
        """``int_{t2}^{t1} omega_j``."""
        return self.omega[j].integral(t2, t1)

    def check_occupations(self, t_grid) -> None:
        for j, (s, c) in enumerate(zip(self.sigmas, self.n)):
            v = np.asarray(c(np.asarray(t_grid, dtype=float)))
            if np.any(v < 0) or (s == FERMION and np.any(v > 1)):
                raise ConfigurationError(f"occupation of mode {j} leaves the physical range")

    @classmethod
    def static(cls, basis, n, omega=None) -> "ThermalSchedule":
        omega = [m.bare_energy for m in basis.modes] if omega is None else omega
        return cls(tuple(basis.sigmas.tolist()), tuple(n), tuple(omega))

    def with_n(self, n) -> "ThermalSchedule":
        return ThermalSchedule(self.sigmas, tuple(n), self.omega, self.gamma)

    def perturbed_after(self, t_cut: float, amount: float = 0.1) -> "ThermalSchedule":
        """Same schedule up to ``t_cut``, altered occupations and energies afterwards."""
        n = tuple(PerturbedCurve(c, t_cut, amount) for c in self.n)
        omega = tuple(PerturbedCurve(c, t_cut, amount) for c in self.omega)
        return ThermalSchedule(self.sigmas, n, omega, self.gamma)

    def with_gamma(self, gamma) -> "ThermalSchedule":
        return ThermalSchedule(self.sigmas, self.n, self.omega, tuple(gamma))
