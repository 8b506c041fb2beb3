"""Multi-harmonic balance with alternating frequency/time evaluation.

A periodic response is stored as a real one-sided Fourier series per degree
of freedom, ``x(t) = a0 + sum_k (a_k cos k w t + b_k sin k w t)``, and the
coefficient vector is laid out DOF-major::

    [a0, a1, b1, ..., aNH, bNH]_dof1 + [a0, a1, b1, ..., aNH, bNH]_dof2

Cubic springs act on linear combinations ``q = T x`` of the displacements
(``q1 = x1`` and ``q2 = x1 - x2`` for the absorber system), so every
nonlinear force, Jacobian and Hill-derivative block has the same shape:
forward transform of a time-varying weight times the inverse transform.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import SystemParams

__all__ = [
    "AliasingError",
    "HillError",
    "HBMSystem",
    "HarmonicSolution",
    "HillData",
    "as_system",
    "residual",
    "jacobian",
    "hill_matrices",
    "hill_exponents",
    "synthesize",
    "amplitude",
    "peak_amplitudes",
    "linear_receptance",
    "linear_solution",
]

DEFAULT_NH = 5
DEFAULT_NT = 128


class AliasingError(ValueError):
    """Too few time samples for the cubic nonlinearity."""


class HillError(RuntimeError):
    def __init__(self, msg, condition=None):
        super().__init__(f"{msg} (condition estimate {condition:.3e})" if condition else msg)
        self.condition = condition


class HBMSystem:
    """Harmonic-balance discretization of ``M x'' + C x' + K x + T' (kn * (T x)^3) = F e cos wt``.

    Parameters
    ----------
    M, C, K : (n, n) array_like
        Structural matrices.
    T : (m, n) array_like
        Maps displacements onto the arguments of the ``m`` cubic springs.
    kn : (m,) array_like
        Cubic spring coefficients.
    load : (n,) array_like
        Spatial distribution of the unit harmonic force.
    NH, Nt : int
        Harmonic truncation and number of time samples per period.
    """

    def __init__(self, M, C, K, T, kn, load, NH=DEFAULT_NH, Nt=DEFAULT_NT, scale=1.0):
        if Nt < 4 * NH + 1:
            raise AliasingError(f"Nt={Nt} < 4*NH+1={4 * NH + 1}: cubic terms would alias")
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.K = np.atleast_2d(np.asarray(K, dtype=float))
        self.T = np.atleast_2d(np.asarray(T, dtype=float))
        self.kn = np.atleast_1d(np.asarray(kn, dtype=float))
        self.n = self.M.shape[0]
        self.NH = int(NH)
        self.Nt = int(Nt)
        self.Nc = 2 * self.NH + 1
        self.N = self.n * self.Nc
        # static deflection under unit load; used to scale continuation unknowns
        self.scale = float(scale)

        th = 2.0 * np.pi * np.arange(self.Nt) / self.Nt
        E = np.empty((self.Nt, self.Nc))
        E[:, 0] = 1.0
        for k in range(1, self.NH + 1):
            E[:, 2 * k - 1] = np.cos(k * th)
            E[:, 2 * k] = np.sin(k * th)
        P = E.T * (2.0 / self.Nt)
        P[0] = 1.0 / self.Nt
        self.E, self.P = E, P

        D = np.zeros((self.Nc, self.Nc))
        for k in range(1, self.NH + 1):
            D[2 * k - 1, 2 * k] = k
            D[2 * k, 2 * k - 1] = -k
        self.D = D
        I = np.eye(self.Nc)
        self._K = np.kron(self.K, I)
        self._CD = np.kron(self.C, D)
        self._MD2 = np.kron(self.M, D @ D)
        self._MD = np.kron(self.M, D)
        self._CI = np.kron(self.C, I)
        self._MI = np.kron(self.M, I)

        self.fext = np.zeros(self.N)
        self.fext[np.arange(self.n) * self.Nc + 1] = np.asarray(load, dtype=float)
        # index of the constant term of each DOF
        self.i0 = np.arange(self.n) * self.Nc

        # TT[m, i, j] = T[m, i] * T[m, j]
        self._TT = np.einsum("mi,mj->mij", self.T, self.T)

    @classmethod
    def from_params(cls, params: SystemParams, NH=DEFAULT_NH, Nt=DEFAULT_NT):
        p = params
        return cls(
            p.mass_matrix(), p.damping_matrix(), p.stiffness_matrix(),
            T=[[1.0, 0.0], [1.0, -1.0]], kn=[p.knl1, p.knl2], load=[1.0, 0.0],
            NH=NH, Nt=Nt, scale=1.0 / p.k1,
        )

    # -- transforms ---------------------------------------------------------
    def to_time(self, z):
        """Samples over one period, shape ``(Nt, n)``."""
        return self.E @ np.reshape(z, (self.n, self.Nc)).T

    def to_freq(self, X):
        return (self.P @ X).T.ravel()

    def _q(self, z):
        return self.to_time(z) @ self.T.T

    def _block(self, W):
        """Coefficient-space matrix of ``T' diag(W) T`` acting on the series.

        ``W`` holds time-varying weights per cubic spring, shape ``(Nt, m)``.
        """
        S = np.einsum("tm,mij->ijt", W, self._TT)
        out = np.empty((self.N, self.N))
        Nc = self.Nc
        for i in range(self.n):
            for j in range(self.n):
                out[i * Nc:(i + 1) * Nc, j * Nc:(j + 1) * Nc] = self.P @ (S[i, j][:, None] * self.E)
        return out

    # -- harmonic balance ---------------------------------------------------
    def linear_operator(self, omega):
        return self._K + omega * self._CD + omega**2 * self._MD2

    def d_linear_operator(self, omega):
        return self._CD + 2.0 * omega * self._MD2

    def nonlinear_force(self, z):
        Q = self._q(z)
        return self.to_freq((self.kn * Q**3) @ self.T)

    def residual(self, z, omega, F):
        z = np.asarray(z, dtype=float)
        return self.linear_operator(omega) @ z + self.nonlinear_force(z) - F * self.fext

    def jacobian(self, z, omega, F=None):
        """Return ``(dR/dz, dR/domega, dR/dF)``."""
        z = np.asarray(z, dtype=float)
        Jz = self.linear_operator(omega)
        if np.any(self.kn):
            Jz = Jz + self._block(3.0 * self.kn * self._q(z) ** 2)
        return Jz, self.d_linear_operator(omega) @ z, -self.fext.copy()

    def jz(self, z, omega):
        return self.jacobian(z, omega)[0]

    def djz_dz(self, z, phi):
        """Matrix of ``d(Jz phi)/dz``."""
        if not np.any(self.kn):
            return np.zeros((self.N, self.N))
        return self._block(6.0 * self.kn * self._q(z) * self._q(phi))

    # -- Hill ----------------------------------------------------------------
    def hill_delta2(self):
        return self._MI

    def hill_delta1(self, omega):
        return self._CI + 2.0 * omega * self._MD

    def d_hill_delta1(self):
        return 2.0 * self._MD


@functools.lru_cache(maxsize=64)
def _system_cached(params: SystemParams, NH: int, Nt: int) -> HBMSystem:
    return HBMSystem.from_params(params, NH, Nt)


def as_system(params, NH=DEFAULT_NH, Nt=DEFAULT_NT) -> HBMSystem:
    """Accept either :class:`SystemParams` or a ready :class:`HBMSystem`."""
    if isinstance(params, HBMSystem):
        return params
    return _system_cached(params, int(NH), int(Nt))


@dataclass(frozen=True)
class HarmonicSolution:
    coeffs: np.ndarray
    omega: float
    F: float
    NH: int = DEFAULT_NH
    floquet: np.ndarray | None = None
    stable: bool | None = None
    Nt: int = DEFAULT_NT

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if c.size % (2 * self.NH + 1):
            raise ValueError("coefficient vector does not match NH")

    @property
    def n_dof(self) -> int:
        return self.coeffs.size // (2 * self.NH + 1)

    def dof(self, i: int) -> np.ndarray:
        Nc = 2 * self.NH + 1
        return self.coeffs[i * Nc:(i + 1) * Nc]

    def with_stability(self, floquet, stable) -> "HarmonicSolution":
        return replace(self, floquet=np.asarray(floquet), stable=bool(stable))


@dataclass
class HillData:
    delta2: np.ndarray
    delta1: np.ndarray
    delta0: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    exponents: np.ndarray
    vectors: np.ndarray = field(repr=False)


def residual(coeffs, omega, F, params, NH=DEFAULT_NH, Nt=DEFAULT_NT):
    return as_system(params, NH, Nt).residual(coeffs, omega, F)


def jacobian(coeffs, omega, F, params, NH=DEFAULT_NH, Nt=DEFAULT_NT):
    return as_system(params, NH, Nt).jacobian(coeffs, omega, F)


def hill_matrices(system: HBMSystem, z, omega):
    return system.hill_delta2(), system.hill_delta1(omega), system.jz(z, omega)


def _hill(system: HBMSystem, z, omega) -> HillData:
    D2, D1, D0 = hill_matrices(system, z, omega)
    N = system.N
    # Delta2 = M (x) I is block diagonal with the (invertible) mass matrix
    Minv = np.kron(np.linalg.inv(system.M), np.eye(system.Nc))
    A = np.zeros((2 * N, 2 * N))
    A[:N, N:] = np.eye(N)
    A[N:, :N] = -Minv @ D0
    A[N:, N:] = -Minv @ D1
    try:
        lam, V = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise HillError(f"Hill eigenproblem failed: {exc}", np.linalg.cond(A)) from exc
    if not np.all(np.isfinite(lam)):
        raise HillError("non-finite Hill eigenvalues", np.linalg.cond(A))
    Phi = V[:N]
    # Harmonic content of each eigenvector in complex exponentials. Copies of
    # an exponent shifted by i*k*omega have their content shifted by -k, so
    # the physical ones are those centred on the zeroth harmonic. (Plain
    # zeroth-harmonic weight picks the shifted copies at folds, where the
    # Floquet mode lives on the +-1 harmonics.)
    B = Phi.reshape(system.n, system.Nc, -1)
    a, b = B[:, 1::2], B[:, 2::2]
    pos = np.sum(np.abs(a - 1j * b) ** 2, axis=0) / 4.0
    neg = np.sum(np.abs(a + 1j * b) ** 2, axis=0) / 4.0
    k = np.arange(1, system.NH + 1)[:, None]
    total = np.sum(np.abs(B[:, 0]) ** 2, axis=0) + pos.sum(0) + neg.sum(0)
    centroid = (k * (pos - neg)).sum(0) / total
    keep = np.argsort(np.abs(centroid), kind="stable")[: 2 * system.n]
    keep = keep[np.argsort(lam[keep].imag)]
    return HillData(D2, D1, D0, lam, V, lam[keep], Phi[:, keep])


def stability_tolerance(system: HBMSystem) -> float:
    wn1 = math.sqrt(system.K[0, 0] / system.M[0, 0]) if system.K[0, 0] > 0 else 1.0
    return 1e-6 * wn1


def hill_exponents(solution: HarmonicSolution, params, Nt=None, full=False):
    """Floquet exponents of a converged solution by Hill's method.

    Returns the solution with ``floquet`` and ``stable`` filled in, or the
    :class:`HillData` when ``full`` is set.
    """
    system = as_system(params, solution.NH, Nt or solution.Nt)
    data = _hill(system, solution.coeffs, solution.omega)
    if full:
        return data
    stable = bool(np.all(data.exponents.real <= stability_tolerance(system)))
    return solution.with_stability(data.exponents, stable)


def synthesize(solution: HarmonicSolution, Nt: int = 256):
    """Sample each DOF over one period; returns ``(t, X)`` with ``X`` of shape ``(Nt, n)``."""
    NH, n = solution.NH, solution.n_dof
    t = np.arange(Nt) * (2.0 * np.pi / solution.omega) / Nt
    k = np.arange(1, NH + 1)
    C = np.cos(np.outer(solution.omega * t, k))
    S = np.sin(np.outer(solution.omega * t, k))
    X = np.empty((Nt, n))
    for i in range(n):
        c = solution.dof(i)
        X[:, i] = c[0] + C @ c[1::2] + S @ c[2::2]
    return t, X


def peak_amplitudes(coeffs, NH: int, dof: int = 0, Nt: int = 256) -> np.ndarray:
    """Vectorized ``max |x_dof(t)|`` for a stack of coefficient vectors.

    The sampled maximum is polished by Newton iterations on ``x'(t) = 0``.
    """
    Z = np.atleast_2d(np.asarray(coeffs, dtype=float))
    Nc = 2 * NH + 1
    c = Z[:, dof * Nc:(dof + 1) * Nc]
    a0, a, b = c[:, 0], c[:, 1::2], c[:, 2::2]
    k = np.arange(1, NH + 1)
    th = 2.0 * np.pi * np.arange(Nt) / Nt
    X = a0[:, None] + a @ np.cos(np.outer(k, th)) + b @ np.sin(np.outer(k, th))
    j = np.argmax(np.abs(X), axis=1)
    best = np.abs(X[np.arange(len(Z)), j])
    t0 = th[j]
    for _ in range(6):
        ck, sk = np.cos(np.outer(t0, k)), np.sin(np.outer(t0, k))
        d1 = np.sum(-sk * k * a + ck * k * b, axis=1)
        d2 = np.sum(-ck * k * k * a - sk * k * k * b, axis=1)
        step = np.divide(d1, d2, out=np.zeros_like(d1), where=d2 != 0)
        step = np.clip(step, -np.pi / Nt, np.pi / Nt)
        t0 = t0 - step
    ck, sk = np.cos(np.outer(t0, k)), np.sin(np.outer(t0, k))
    polished = np.abs(a0 + np.sum(ck * a + sk * b, axis=1))
    return np.maximum(best, polished)


def amplitude(solution: HarmonicSolution, dof: int = 0, Nt: int = 256) -> float:
    """Peak ``max |x_dof(t)|`` over one period."""
    return float(peak_amplitudes(solution.coeffs, solution.NH, dof, Nt)[0])


def linear_receptance(params: SystemParams, omega: float) -> np.ndarray:
    """Complex displacement amplitudes of the linear system per unit force."""
    p = params
    Z = p.stiffness_matrix() - omega**2 * p.mass_matrix() + 1j * omega * p.damping_matrix()
    return np.linalg.solve(Z, np.array([1.0, 0.0]))


def linear_solution(params, omega, F, NH=DEFAULT_NH) -> np.ndarray:
    """Harmonic coefficients of the linear steady state (first harmonic only)."""
    if isinstance(params, HBMSystem):
        s = params
        Z = s.K - omega**2 * s.M + 1j * omega * s.C
        H = np.linalg.solve(Z, s.fext[s.i0 + 1])
        n = s.n
    else:
        H = linear_receptance(params, omega)
        n = 2
    Nc = 2 * NH + 1
    z = np.zeros(n * Nc)
    # x = Re(H F e^{iwt}) = Re(H) F cos - Im(H) F sin
    z[np.arange(n) * Nc + 1] = F * H.real
    z[np.arange(n) * Nc + 2] = -F * H.imag
    return z
