"""Duffing oscillator with an attached nonlinear tuned vibration absorber.

Equations of motion (dimensional)::

    m1 x1'' + c1 x1' + k1 x1 + knl1 x1^3 + c2 (x1' - x2') + k2 r + knl2 r^3 = F cos(w t)
    m2 x2'' + c2 (x2' - x1') - k2 r - knl2 r^3 = 0,        r = x1 - x2

The dimensionless form (time tau = w_n1 t, q1 = x1/f, q2 = r/f, f = F/k1) is
the same system with unit primary mass and stiffness and unit forcing, see
:meth:`DimensionlessParams.to_system`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SystemParams",
    "Forcing",
    "DimensionlessParams",
    "State",
    "TABLE1",
    "table1_params",
    "tune_linear",
    "tune_nonlinear",
    "tune_dimensionless",
    "to_dimensionless",
    "rhs",
    "rhs_relative",
]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class SystemParams:
    """Masses, dampings and stiffnesses of the primary system and absorber."""

    m1: float
    c1: float
    k1: float
    knl1: float
    m2: float
    c2: float
    k2: float
    knl2: float

    def __post_init__(self):
        vals = (self.m1, self.c1, self.k1, self.knl1, self.m2, self.c2, self.k2, self.knl2)
        _require(all(math.isfinite(v) for v in vals), "parameters must be finite")
        _require(self.m1 > 0 and self.m2 > 0, "masses must be positive")
        _require(self.k1 > 0, "k1 must be positive")
        _require(min(self.c1, self.c2, self.k2, self.knl1, self.knl2) >= 0,
                 "dampings and stiffnesses must be non-negative")

    @property
    def epsilon(self) -> float:
        return self.m2 / self.m1

    @property
    def omega_n1(self) -> float:
        return math.sqrt(self.k1 / self.m1)

    @property
    def omega_n2(self) -> float:
        return math.sqrt(self.k2 / self.m2)

    def mass_matrix(self) -> np.ndarray:
        return np.diag([self.m1, self.m2])

    def damping_matrix(self) -> np.ndarray:
        return np.array([[self.c1 + self.c2, -self.c2], [-self.c2, self.c2]])

    def stiffness_matrix(self) -> np.ndarray:
        return np.array([[self.k1 + self.k2, -self.k2], [-self.k2, self.k2]])

    def linear(self) -> "SystemParams":
        """Underlying linear system (both cubic springs removed)."""
        return replace(self, knl1=0.0, knl2=0.0)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class Forcing:
    F: float
    omega: float

    def __post_init__(self):
        _require(math.isfinite(self.F) and self.F >= 0, "F must be >= 0")
        _require(math.isfinite(self.omega) and self.omega > 0, "omega must be > 0")


@dataclass(frozen=True)
class DimensionlessParams:
    epsilon: float
    mu1: float
    mu2: float
    lam: float
    alpha3: float
    beta3: float
    gamma: float = 1.0

    def __post_init__(self):
        vals = (self.epsilon, self.mu1, self.mu2, self.lam, self.alpha3, self.beta3, self.gamma)
        _require(all(math.isfinite(v) for v in vals), "parameters must be finite")
        _require(self.epsilon > 0, "epsilon must be positive")

    def to_system(self) -> SystemParams:
        """Dimensional system whose response to ``F = 1`` at ``omega = gamma``
        reproduces the dimensionless equations (``x1 = q1``, ``x1 - x2 = q2``).
        """
        eps, lam = self.epsilon, self.lam
        return SystemParams(
            m1=1.0,
            c1=2.0 * self.mu1,
            k1=1.0,
            knl1=4.0 / 3.0 * self.alpha3,
            m2=eps,
            c2=2.0 * self.mu2 * lam * eps,
            k2=lam**2 * eps,
            knl2=4.0 / 3.0 * eps * self.beta3,
        )


@dataclass(frozen=True)
class State:
    x1: float
    v1: float
    x2: float
    v2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.v1, self.x2, self.v2], dtype=float)

    @classmethod
    def from_array(cls, y) -> "State":
        y = np.asarray(y, dtype=float)
        return cls(float(y[0]), float(y[1]), float(y[2]), float(y[3]))


def tune_linear(m1: float, k1: float, epsilon: float) -> tuple[float, float]:
    """Equal-peak absorber stiffness and damping for an undamped primary.

    Returns ``(k2, c2)`` for an absorber of mass ``epsilon * m1``.
    """
    _require(m1 > 0 and k1 > 0 and epsilon > 0, "m1, k1 and epsilon must be positive")
    e = epsilon
    s = math.sqrt(4.0 + 3.0 * e)
    k2 = (8.0 * e * k1 * (16.0 + 23.0 * e + 9.0 * e**2 + 2.0 * (2.0 + e) * s)
          / (3.0 * (1.0 + e) ** 2 * (64.0 + 80.0 * e + 27.0 * e**2)))
    m2 = e * m1
    c2 = math.sqrt(k2 * m2 * (8.0 + 9.0 * e - 4.0 * s) / (4.0 * (1.0 + e)))
    return k2, c2


def tune_nonlinear(knl1: float, epsilon: float) -> float:
    """Absorber cubic stiffness that keeps the two peaks equal."""
    _require(knl1 >= 0, "knl1 must be non-negative")
    _require(epsilon > 0, "epsilon must be positive")
    return 2.0 * epsilon**2 * knl1 / (1.0 + 4.0 * epsilon)


def tune_dimensionless(epsilon: float, alpha3: float) -> tuple[float, float, float]:
    """Optimal ``(lambda, mu2, beta3)`` in dimensionless variables."""
    _require(epsilon > 0, "epsilon must be positive")
    _require(alpha3 >= 0, "alpha3 must be non-negative")
    e = epsilon
    s = math.sqrt(4.0 + 3.0 * e)
    lam = 2.0 / (1.0 + e) * math.sqrt(
        2.0 * (16.0 + 23.0 * e + 9.0 * e**2 + 2.0 * (2.0 + e) * s)
        / (3.0 * (64.0 + 80.0 * e + 27.0 * e**2)))
    mu2 = 0.25 * math.sqrt((8.0 + 9.0 * e - 4.0 * s) / (1.0 + e))
    beta3 = 2.0 * alpha3 * e / (1.0 + 4.0 * e)
    return lam, mu2, beta3


def to_dimensionless(params: SystemParams, forcing: Forcing) -> DimensionlessParams:
    p, F = params, forcing.F
    eps = p.epsilon
    wn1 = p.omega_n1
    wn2 = p.omega_n2
    mu2 = p.c2 / (2.0 * p.m2 * wn2) if wn2 > 0 else math.inf
    return DimensionlessParams(
        epsilon=eps,
        mu1=p.c1 / (2.0 * p.m1 * wn1),
        mu2=mu2,
        lam=wn2 / wn1,
        alpha3=3.0 * p.knl1 * F**2 / (4.0 * p.k1**3),
        beta3=3.0 * p.knl2 * F**2 / (4.0 * p.k1**3 * eps),
        gamma=forcing.omega / wn1,
    )


def table1_params(*, linear_absorber: bool = False, exact: bool = False) -> SystemParams:
    """Primary Duffing oscillator with the equal-peak absorber at ``epsilon = 0.05``.

    By default the rounded tabulated values are returned. ``exact=True`` uses
    the tuning rules without rounding; ``linear_absorber=True`` drops ``knl2``.
    """
    m1, c1, k1, knl1, eps = 1.0, 0.002, 1.0, 1.0, 0.05
    if exact:
        k2, c2 = tune_linear(m1, k1, eps)
        knl2 = tune_nonlinear(knl1, eps)
    else:
        k2, c2, knl2 = 0.0454, 0.0128, 0.0042
    return SystemParams(m1=m1, c1=c1, k1=k1, knl1=knl1, m2=eps * m1, c2=c2, k2=k2,
                        knl2=0.0 if linear_absorber else knl2)


TABLE1 = table1_params()


def rhs(state, t: float, params: SystemParams, forcing: Forcing) -> np.ndarray:
    """First-order form of the equations of motion, ``[x1, v1, x2, v2]``."""
    x1, v1, x2, v2 = np.asarray(state, dtype=float)
    p = params
    r = x1 - x2
    rd = v1 - v2
    f_abs = p.c2 * rd + p.k2 * r + p.knl2 * r**3
    f_ext = forcing.F * math.cos(forcing.omega * t)
    a1 = (f_ext - p.c1 * v1 - p.k1 * x1 - p.knl1 * x1**3 - f_abs) / p.m1
    a2 = f_abs / p.m2
    return np.array([v1, a1, v2, a2])


def rhs_relative(y, tau: float, dp: DimensionlessParams) -> np.ndarray:
    """Dimensionless equations in ``[q1, q1', q2, q2']`` with ``q2`` the
    relative absorber displacement.

    Obtained by substituting ``r = x1 - x2`` into the dimensional equations;
    the absorber equation picks up the primary-system terms because
    ``r'' = x1'' - x2''``.
    """
    q1, p1, q2, p2 = np.asarray(y, dtype=float)
    d = dp
    primary = 2 * d.mu1 * p1 + q1 + 4.0 / 3.0 * d.alpha3 * q1**3
    absorber = 2 * d.mu2 * d.lam * p2 + d.lam**2 * q2 + 4.0 / 3.0 * d.beta3 * q2**3
    drive = math.cos(d.gamma * tau)
    a1 = drive - primary - d.epsilon * absorber
    a2 = drive - primary - (d.epsilon + 1.0) * absorber
    return np.array([p1, a1, p2, a2])
