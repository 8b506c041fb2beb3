"""Bordered systems whose regular solutions are fold and Neimark-Sacker points.

Both systems work in the scaled unknowns of the continuation module:
``z~ = z / (F_ref * s)`` and, when the forcing is free, ``F~ = F / F_ref``.

Fold (unknowns ``[z~, phi, omega(, F~)]``)::

    R(z, omega, F) = 0,   Jz phi = 0,   c . phi = 1

Neimark-Sacker (unknowns ``[z~, omega, phr, phi, kappa(, F~)]``): the Hill
pencil ``lambda^2 D2 + lambda D1 + Jz`` has the eigenvalue ``i kappa`` with
eigenvector ``phr + i phi``::

    (Jz - kappa^2 D2) phr - kappa D1 phi = 0
    (Jz - kappa^2 D2) phi + kappa D1 phr = 0
    c . phr = 1,   c . phi = 0
"""
from __future__ import annotations

import numpy as np

from .hbm import HBMSystem


class Scaling:
    def __init__(self, system: HBMSystem, F_ref: float):
        self.system = system
        self.ref = F_ref if F_ref > 0 else 1.0
        self.s = system.scale * self.ref


def fold_residual(system: HBMSystem, F_ref: float, c, *, free_F: bool = False, F: float | None = None):
    """Return ``fun(v) -> (G, dG/dv)``; ``c`` is read at call time (mutable border)."""
    sc = Scaling(system, F_ref)
    N = system.N
    F_fixed = F_ref if F is None else F

    def fun(v):
        zt, phi, w = v[:N], v[N:2 * N], v[2 * N]
        Fv = v[2 * N + 1] * sc.ref if free_F else F_fixed
        z = zt * sc.s
        R = system.residual(z, w, Fv) / sc.ref
        Jz, Jw, JF = system.jacobian(z, w)
        Jt = Jz * (sc.s / sc.ref)
        g = np.concatenate([R, Jt @ phi, [c @ phi - 1.0]])
        ncol = 2 * N + 2 if free_F else 2 * N + 1
        A = np.zeros((2 * N + 1, ncol))
        A[:N, :N] = Jt
        A[:N, 2 * N] = Jw / sc.ref
        A[N:2 * N, :N] = system.djz_dz(z, phi) * (sc.s * sc.s / sc.ref)
        A[N:2 * N, N:2 * N] = Jt
        A[N:2 * N, 2 * N] = system.d_linear_operator(w) @ phi * (sc.s / sc.ref)
        A[-1, N:2 * N] = c
        if free_F:
            A[:N, -1] = JF
        return g, A

    return fun, sc


def ns_residual(system: HBMSystem, F_ref: float, c, *, free_F: bool = False, F: float | None = None):
    sc = Scaling(system, F_ref)
    N = system.N
    F_fixed = F_ref if F is None else F
    D2 = system.hill_delta2() * (sc.s / sc.ref)
    dD1 = system.d_hill_delta1() * (sc.s / sc.ref)

    def fun(v):
        zt, w = v[:N], v[N]
        pr, pi, k = v[N + 1:2 * N + 1], v[2 * N + 1:3 * N + 1], v[3 * N + 1]
        Fv = v[3 * N + 2] * sc.ref if free_F else F_fixed
        z = zt * sc.s
        R = system.residual(z, w, Fv) / sc.ref
        Jz, Jw, JF = system.jacobian(z, w)
        Jt = Jz * (sc.s / sc.ref)
        D1 = system.hill_delta1(w) * (sc.s / sc.ref)
        A = Jt - k * k * D2
        g = np.concatenate([R, A @ pr - k * (D1 @ pi), A @ pi + k * (D1 @ pr),
                            [c @ pr - 1.0, c @ pi]])
        dJw = system.d_linear_operator(w) * (sc.s / sc.ref)
        Hr = system.djz_dz(z, pr) * (sc.s * sc.s / sc.ref)
        Hi = system.djz_dz(z, pi) * (sc.s * sc.s / sc.ref)
        ncol = 3 * N + 3 if free_F else 3 * N + 2
        M = np.zeros((3 * N + 2, ncol))
        r1, r2, r3 = slice(0, N), slice(N, 2 * N), slice(2 * N, 3 * N)
        cz, cr, ci, ck = slice(0, N), slice(N + 1, 2 * N + 1), slice(2 * N + 1, 3 * N + 1), 3 * N + 1
        M[r1, cz] = Jt
        M[r1, N] = Jw / sc.ref
        M[r2, cz] = Hr
        M[r2, N] = dJw @ pr - k * (dD1 @ pi)
        M[r2, cr] = A
        M[r2, ci] = -k * D1
        M[r2, ck] = -2 * k * (D2 @ pr) - D1 @ pi
        M[r3, cz] = Hi
        M[r3, N] = dJw @ pi + k * (dD1 @ pr)
        M[r3, cr] = k * D1
        M[r3, ci] = A
        M[r3, ck] = -2 * k * (D2 @ pi) + D1 @ pr
        M[-2, cr] = c
        M[-1, ci] = c
        if free_F:
            M[r1, -1] = JF
        return g, M

    return fun, sc


def orthogonalize_pair(Phi):
    """Rotate a complex eigenvector so its real and imaginary parts are
    orthogonal (real part dominant) and normalize it."""
    Phi = np.asarray(Phi, dtype=complex)
    Phi = Phi * np.exp(-0.5j * np.angle(Phi @ Phi))
    if np.linalg.norm(Phi.real) < np.linalg.norm(Phi.imag):
        Phi = Phi * 1j
    return Phi / np.linalg.norm(Phi)


def ns_border(Phi):
    """Bordering vector with ``c . Re(Phi) = 1`` and ``c . Im(Phi) = 0``."""
    return Phi.real / (Phi.real @ Phi.real)
