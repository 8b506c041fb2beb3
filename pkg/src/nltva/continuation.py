"""Pseudo-arclength continuation of harmonic-balance solutions over frequency.

Unknowns are scaled as ``y = [z / (F * s), omega]`` with ``s`` the static
deflection under unit load, so that step sizes and tolerances do not depend
on the forcing level.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .extended import fold_residual, ns_border, ns_residual, orthogonalize_pair
from .hbm import (
    DEFAULT_NH,
    DEFAULT_NT,
    HarmonicSolution,
    HBMSystem,
    amplitude,
    as_system,
    peak_amplitudes,
    hill_exponents,
    linear_solution,
    stability_tolerance,
)

log = logging.getLogger(__name__)

__all__ = [
    "StepConfig",
    "CorrectorError",
    "Branch",
    "BifurcationPoint",
    "newton",
    "tangent_vector",
    "arclength_steps",
    "correct",
    "continue_branch",
    "detect_bifurcations",
    "localize",
    "find_drc",
    "branch_crossings",
]


@dataclass(frozen=True)
class StepConfig:
    ds: float = 1e-2
    ds_min: float = 1e-5
    ds_max: float = 5e-2
    grow: float = 1.3
    fast_iters: int = 3
    max_iters: int = 15
    tol: float = 1e-10
    max_points: int = 20000
    # reject steps whose tangent turns by more than acos(min_cos)
    min_cos: float = 0.9


class CorrectorError(RuntimeError):
    """Newton corrector did not converge; the caller should shorten the step."""


def newton(fun, y0, tol=1e-10, max_iters=15, max_update=None):
    """Solve ``fun(y) = (G, dG/dy) = 0`` for square systems.

    Returns ``(y, iterations)``; raises :class:`CorrectorError` on failure.
    """
    y = np.array(y0, dtype=float)
    G, J = fun(y)
    nrm = np.max(np.abs(G))
    for it in range(max_iters + 1):
        if not np.isfinite(nrm):
            break
        if nrm <= tol:
            return y, it
        if it == max_iters:
            break
        try:
            dy = np.linalg.solve(J, G)
        except np.linalg.LinAlgError:
            break
        if max_update is not None and np.max(np.abs(dy)) > max_update:
            break
        y = y - dy
        G, J = fun(y)
        nrm = np.max(np.abs(G))
    raise CorrectorError(f"Newton failed, residual {nrm:.3e}")


def tangent_vector(J, t_prev):
    """Unit null vector of the ``m x (m+1)`` Jacobian, oriented along ``t_prev``."""
    A = np.vstack([J, t_prev])
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    t = np.linalg.solve(A, b)
    return t / np.linalg.norm(t)


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    newton_iters: int = 0
    truncated: bool = False


def arclength_steps(fun, y0, t0, config: StepConfig = StepConfig(), stats: StepStats | None = None,
                    post: Callable | None = None) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
    """Generate ``(y, tangent, ds)`` along the solution curve of ``fun``.

    ``fun(y)`` returns the underdetermined residual and its ``m x (m+1)``
    Jacobian. ``post(y)`` may renormalize an accepted point. The first item
    is the starting point. Iteration stops silently at ``max_points`` or when
    the step falls below ``ds_min`` (``stats.truncated`` is then set).
    """
    cfg = config
    stats = stats if stats is not None else StepStats()
    y = np.asarray(y0, dtype=float)
    t = tangent_vector(fun(y)[1], t0)
    ds = cfg.ds
    yield y, t, 0.0
    for _ in range(cfg.max_points - 1):
        while True:
            y_prev, t_prev = y, t

            def aug(v, y_prev=y_prev, t_prev=t_prev, ds=ds):
                G, J = fun(v)
                return (np.append(G, t_prev @ (v - y_prev) - ds), np.vstack([J, t_prev]))

            try:
                y_new, its = newton(aug, y_prev + ds * t_prev, cfg.tol, cfg.max_iters,
                                    max_update=max(1.0, 20 * ds))
                if post is not None:
                    y_new = post(y_new)
                t_new = tangent_vector(fun(y_new)[1], t_prev)
                if t_new @ t_prev < cfg.min_cos and ds > cfg.ds_min:
                    raise CorrectorError("tangent turned too fast")
            except (CorrectorError, np.linalg.LinAlgError):
                stats.rejected += 1
                ds *= 0.5
                if ds < cfg.ds_min:
                    stats.truncated = True
                    return
                continue
            break
        stats.accepted += 1
        stats.newton_iters += its
        y, t = y_new, t_new
        yield y, t, ds
        if its <= cfg.fast_iters:
            ds = min(ds * cfg.grow, cfg.ds_max)


# ---------------------------------------------------------------------------
# frequency-response branches


@dataclass(frozen=True)
class Branch:
    points: tuple
    tangents: np.ndarray
    F: float
    NH: int
    closed: bool = False
    truncated: bool = False
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([p.omega for p in self.points])

    def amplitudes(self, dof: int = 0) -> np.ndarray:
        cache = self.__dict__.setdefault("_amp_cache", {})
        if dof not in cache:
            cache[dof] = peak_amplitudes(np.array([p.coeffs for p in self.points]), self.NH, dof)
        return cache[dof]

    @property
    def stable(self) -> np.ndarray:
        return np.array([bool(p.stable) for p in self.points])


@dataclass(frozen=True)
class BifurcationPoint:
    kind: str  # "fold" or "neimark_sacker"
    solution: HarmonicSolution
    test_value: float
    bracket: tuple[int, int]
    precise: bool = True
    vector: np.ndarray | None = None
    kappa: float | None = None

    @property
    def omega(self) -> float:
        return self.solution.omega

    @property
    def F(self) -> float:
        return self.solution.F


class _Scaled:
    """Scaled harmonic-balance residual at fixed forcing."""

    def __init__(self, system: HBMSystem, F: float):
        self.system = system
        self.F = F
        self.ref = F if F > 0 else 1.0
        self.s = system.scale * self.ref

    def y(self, z, omega):
        return np.append(np.asarray(z) / self.s, omega)

    def z(self, y):
        return y[:-1] * self.s

    def __call__(self, y):
        z, w = self.z(y), y[-1]
        R = self.system.residual(z, w, self.F) / self.ref
        Jz, Jw, _ = self.system.jacobian(z, w)
        return R, np.column_stack([Jz * (self.s / self.ref), Jw / self.ref])


def _stability(system, sol):
    return hill_exponents(sol, system)


def correct(guess: HarmonicSolution, params, *, tangent=None, ds=0.0, ref=None,
            tol=1e-10, max_iters=15, full_output=False):
    """Newton corrector at fixed frequency, or on an arclength hyperplane.

    Without ``tangent`` the frequency of ``guess`` is held fixed. With it,
    the scaled unknowns ``y`` satisfy ``tangent . (y - y_ref) = ds`` where
    ``y_ref`` defaults to the guess itself.
    """
    system = as_system(params, guess.NH, guess.Nt)
    sc = _Scaled(system, guess.F)
    if tangent is None:
        def fun(z):
            Jz = system.jacobian(z, guess.omega)[0]
            return system.residual(z, guess.omega, guess.F) / sc.ref, Jz * (sc.s / sc.ref) / sc.s
        z, its = newton(fun, guess.coeffs, tol, max_iters, max_update=1e3 * sc.s)
        omega = guess.omega
    else:
        y0 = sc.y(guess.coeffs, guess.omega)
        yr = y0 if ref is None else sc.y(ref.coeffs, ref.omega)
        tangent = np.asarray(tangent, dtype=float)

        def fun(y):
            G, J = sc(y)
            return np.append(G, tangent @ (y - yr) - ds), np.vstack([J, tangent])
        y, its = newton(fun, y0, tol, max_iters)
        z, omega = sc.z(y), float(y[-1])
    sol = replace(guess, coeffs=z, omega=float(omega), floquet=None, stable=None)
    return (sol, its) if full_output else sol


def _start_point(system, F, omega, NH, Nt, guess=None):
    z0 = linear_solution(system, omega, F, NH) if guess is None else guess
    sol = HarmonicSolution(z0, omega, F, NH, Nt=Nt)
    return correct(sol, system)


def continue_branch(params, F: float, omega_range, config: StepConfig = StepConfig(), *,
                    NH: int = DEFAULT_NH, Nt: int = DEFAULT_NT, start: HarmonicSolution | None = None,
                    direction: int = 1, closed: bool = False, stability: bool = True) -> Branch:
    """Continue periodic solutions in frequency at fixed forcing ``F``.

    Starts at ``omega_range[0]`` (or at ``start``) and runs until the
    frequency leaves ``omega_range``. With ``closed=True`` the run also stops
    when the branch returns to its starting point, as on an isolated curve.
    """
    system = as_system(params, NH, Nt)
    w_lo, w_hi = min(omega_range), max(omega_range)
    if start is None:
        w0 = w_lo if direction > 0 else w_hi
        start = _start_point(system, F, w0, NH, Nt)
    sc = _Scaled(system, F)
    y0 = sc.y(start.coeffs, start.omega)
    t0 = np.zeros_like(y0)
    t0[-1] = float(direction)
    stats = StepStats()
    points, tangents = [], []
    is_closed = False
    travelled = 0.0
    for y, t, ds in arclength_steps(sc, y0, t0, config, stats):
        travelled += ds
        sol = HarmonicSolution(sc.z(y), float(y[-1]), F, NH, Nt=Nt)
        if closed and len(points) > 3 and travelled > 10 * config.ds_max:
            gap = np.linalg.norm(y - y0)
            if gap < max(2.0 * ds, 10 * config.ds_min) and t @ tangents[0] > 0:
                points.append(points[0])
                tangents.append(tangents[0])
                is_closed = True
                break
        if stability:
            sol = _stability(system, sol)
        points.append(sol)
        tangents.append(t)
        if len(points) > 1 and not (w_lo <= sol.omega <= w_hi):
            break
    if stats.truncated:
        log.warning("continuation truncated at omega=%.6g (F=%g)", points[-1].omega, F)
    if is_closed:
        # restart the loop where the frequency moves fastest so that no fold
        # sits on the seam between the last and first points
        k = int(np.argmax(np.abs(np.array(tangents[:-1])[:, -1])))
        points = points[k:-1] + points[:k] + [points[k]]
        tangents = tangents[k:-1] + tangents[:k] + [tangents[k]]
    return Branch(tuple(points), np.array(tangents), F, NH, closed=is_closed,
                  truncated=stats.truncated, stats=vars(stats).copy())


# ---------------------------------------------------------------------------
# bifurcation detection and localization


def _exponent_counts(sol: HarmonicSolution, tol: float, imtol: float):
    lam = np.asarray(sol.floquet)
    unstable = lam.real > tol
    cplx = np.abs(lam.imag) > imtol
    return int(np.sum(unstable & ~cplx)), int(np.sum(unstable & cplx))


def _ns_test(sol: HarmonicSolution, imtol: float) -> float:
    lam = np.asarray(sol.floquet)
    lam = lam[np.abs(lam.imag) > imtol]
    if lam.size == 0:
        return -np.inf
    return float(np.max(lam.real))


def detect_bifurcations(branch: Branch, params=None, *, Nt: int = DEFAULT_NT) -> list[BifurcationPoint]:
    """Bracket folds (turning points in frequency) and Neimark-Sacker points.

    When ``params`` is given each bracket is localized with :func:`localize`.
    """
    found = []
    pts = branch.points
    if len(pts) < 2:
        return found
    ref_sys = as_system(params, branch.NH, Nt) if params is not None else None
    tol = stability_tolerance(ref_sys) if ref_sys is not None else 1e-6
    imtol = 1e-8
    tw = branch.tangents[:, -1]
    n = len(pts) - (1 if branch.closed else 0)
    for i in range(n - 1):
        a, b = pts[i], pts[i + 1]
        if tw[i] * tw[i + 1] < 0:
            found.append(BifurcationPoint("fold", a if abs(tw[i]) < abs(tw[i + 1]) else b,
                                          float(min(tw[i], tw[i + 1], key=abs)), (i, i + 1)))
        if a.floquet is None or b.floquet is None:
            continue
        ra, ca = _exponent_counts(a, tol, imtol)
        rb, cb = _exponent_counts(b, tol, imtol)
        # a complex pair crossing the axis; real-axis collisions next to a
        # fold change the complex count but also the real one
        if ca != cb and ra == rb:
            ta, tb = _ns_test(a, imtol), _ns_test(b, imtol)
            found.append(BifurcationPoint("neimark_sacker", a if abs(ta) < abs(tb) else b,
                                          float(min(ta, tb, key=abs)), (i, i + 1)))
    if params is not None:
        found = [localize(bp, params, branch=branch) for bp in found]
    return found


def _fold_seed(system, sol, sc):
    Jz = system.jz(sol.coeffs, sol.omega)
    phi = np.linalg.svd(Jz)[2][-1]
    return phi / np.linalg.norm(phi)


def _ns_seed(system, sol):
    data = hill_exponents(sol, system, full=True)
    lam = data.exponents
    # crossing pair: complex exponent with imag > 0 closest to the axis
    cand = [i for i in range(lam.size) if lam[i].imag > 1e-8]
    i = min(cand, key=lambda j: abs(lam[j].real))
    return orthogonalize_pair(data.vectors[:, i]), float(lam[i].imag)


def localize_fold(system, sol: HarmonicSolution, phi=None, tol=1e-10, max_iters=20):
    sc = _Scaled(system, sol.F)
    phi = _fold_seed(system, sol, sc) if phi is None else phi / np.linalg.norm(phi)
    fun, sc = fold_residual(system, sol.F, phi)
    v0 = np.concatenate([sol.coeffs / sc.s, phi, [sol.omega]])
    v, _ = newton(fun, v0, tol, max_iters)
    N = system.N
    phi = v[N:2 * N] / np.linalg.norm(v[N:2 * N])
    return replace(sol, coeffs=v[:N] * sc.s, omega=float(v[-1]), floquet=None, stable=None), phi


def localize_ns(system, sol: HarmonicSolution, Phi=None, kappa=None, tol=1e-10, max_iters=20):
    if Phi is None:
        Phi, kappa = _ns_seed(system, sol)
    fun, sc = ns_residual(system, sol.F, ns_border(Phi))
    N = system.N
    v0 = np.concatenate([sol.coeffs / sc.s, [sol.omega], Phi.real, Phi.imag, [kappa]])
    v, _ = newton(fun, v0, tol, max_iters)
    Phi = orthogonalize_pair(v[N + 1:2 * N + 1] + 1j * v[2 * N + 1:3 * N + 1])
    out = replace(sol, coeffs=v[:N] * sc.s, omega=float(v[N]), floquet=None, stable=None)
    return out, Phi, float(abs(v[-1]))


def _test_value(kind, system, sol, t, imtol=1e-8):
    if kind == "fold":
        return float(t[-1])
    return _ns_test(hill_exponents(sol, system), imtol)


def localize(bp: BifurcationPoint, params, *, branch: Branch | None = None,
             max_bisect: int = 60) -> BifurcationPoint:
    """Refine a bracketed bifurcation.

    Newton on the extended (bordered) system first; if it fails or leaves the
    bracket, bisect the test function along the branch segment and return
    the best iterate with ``precise=False`` when the bracket is lost.
    """
    sol0 = bp.solution
    system = as_system(params, sol0.NH, sol0.Nt)
    sc = _Scaled(system, sol0.F)
    lo_w = hi_w = sol0.omega
    if branch is not None:
        i, j = bp.bracket
        lo_w = min(branch.points[i].omega, branch.points[j].omega)
        hi_w = max(branch.points[i].omega, branch.points[j].omega)
    slack = 1e-3 + 0.5 * (hi_w - lo_w)
    try:
        if bp.kind == "fold":
            sol, vec = localize_fold(system, sol0)
            kappa = None
        else:
            sol, vec, kappa = localize_ns(system, sol0)
        if not (lo_w - slack <= sol.omega <= hi_w + slack):
            raise CorrectorError("left bracket")
        sol = hill_exponents(sol, system)
        if bp.kind == "fold":
            Jz, Jw, _ = system.jacobian(sol.coeffs, sol.omega)
            J = np.column_stack([Jz * sc.s, Jw]) / sc.ref
            t_ref = branch.tangents[bp.bracket[0]] if branch is not None else np.eye(J.shape[1])[-1]
            test = float(tangent_vector(J, t_ref)[-1])
        else:
            test = _ns_test(sol, 1e-8)
            # Hill eigenvalues near the axis are limited by eigen-solver accuracy
            test = 0.0 if abs(test) < 1e-8 else test
        return replace(bp, solution=sol, test_value=test, precise=abs(test) <= 1e-8,
                       vector=vec, kappa=kappa)
    except (CorrectorError, np.linalg.LinAlgError):
        if branch is None:
            return replace(bp, precise=False)
    return _bisect(bp, system, branch, max_bisect)


def _bisect(bp, system, branch, max_bisect):
    i, j = bp.bracket
    a = branch.points[i]
    sc = _Scaled(system, a.F)
    ya = sc.y(a.coeffs, a.omega)
    yb = sc.y(branch.points[j].coeffs, branch.points[j].omega)
    t = branch.tangents[i]
    s_hi = float(t @ (yb - ya))
    fa = _test_value(bp.kind, system, a, branch.tangents[i])
    s_lo, best = 0.0, (abs(fa), a)
    prev = a
    for _ in range(max_bisect):
        s = 0.5 * (s_lo + s_hi)
        try:
            sol = correct(replace(prev, coeffs=sc.z(ya + s * t), omega=float(ya[-1] + s * t[-1])),
                          system, tangent=t, ds=s, ref=a)
        except CorrectorError:
            break
        J = sc(sc.y(sol.coeffs, sol.omega))[1]
        f = _test_value(bp.kind, system, sol, tangent_vector(J, t))
        if abs(f) < best[0]:
            best = (abs(f), sol)
        if abs(f) <= 1e-8 or s_hi - s_lo < 1e-12:
            break
        if np.sign(f) == np.sign(fa):
            s_lo = s
        else:
            s_hi = s
        prev = sol
    sol = hill_exponents(best[1], system)
    return replace(bp, solution=sol, test_value=float(best[0]), precise=best[0] <= 1e-8)


# ---------------------------------------------------------------------------
# detached resonance curves


def branch_crossings(branch: Branch, omega: float, dof: int = 0):
    """Interpolated amplitudes where the branch crosses frequency ``omega``."""
    w = branch.omegas
    amp = branch.amplitudes(dof)
    out = []
    for i in range(len(w) - 1):
        if (w[i] - omega) * (w[i + 1] - omega) <= 0 and w[i] != w[i + 1]:
            u = (omega - w[i]) / (w[i + 1] - w[i])
            out.append(amp[i] + u * (amp[i + 1] - amp[i]))
    return out


def _off_branch(sol, main: Branch, rtol=0.02):
    a = amplitude(sol)
    return all(abs(a - b) > rtol * max(a, b) for b in branch_crossings(main, sol.omega))


def _amplitude_guesses(system, F, omega, NH, n_amp):
    """Single-harmonic guesses around the primary's hardening backbone."""
    m, k, knl = system.M[0, 0], system.K[0, 0], system.kn[0]
    if knl <= 0 or omega**2 * m <= k:
        return
    a_bb = math.sqrt((omega**2 * m - k) / (0.75 * knl))
    Nc = system.Nc
    for fac in np.linspace(0.5, 1.3, n_amp):
        for ratio in (1.0, 1.5, 0.5):
            z = np.zeros(system.N)
            z[1] = fac * a_bb
            if system.n > 1:
                z[Nc + 1] = ratio * fac * a_bb
            yield z


def find_drc(params, F: float, omega_range=(0.5, 3.0), *, main: Branch | None = None,
             seeds=None, config: StepConfig = StepConfig(), NH: int = DEFAULT_NH,
             Nt: int = DEFAULT_NT, n_omega: int = 41, n_amp: int = 8) -> Branch | None:
    """Locate and trace an isolated (detached) branch at forcing ``F``.

    ``seeds`` are solutions believed to lie on the detached curve, typically
    folds from codimension-2 tracking. Without seeds, high-amplitude guesses
    over a frequency grid are corrected and kept if they are not on ``main``.
    Returns ``None`` when no closed detached curve is found.
    """
    system = as_system(params, NH, Nt)
    if main is None:
        main = continue_branch(system, F, omega_range, config, NH=NH, Nt=Nt, stability=False)
    candidates = []
    for s in seeds or ():
        if _off_branch(s, main):
            candidates.append(s)
    if not candidates:
        for w in np.linspace(min(omega_range), max(omega_range), n_omega):
            for z in _amplitude_guesses(system, F, w, NH, n_amp):
                try:
                    sol = correct(HarmonicSolution(z, float(w), F, NH, Nt=Nt), system)
                except CorrectorError:
                    continue
                if _off_branch(sol, main):
                    candidates.append(sol)
                    break
            if candidates:
                break
    for seed in candidates:
        drc = continue_branch(system, F, omega_range, config, NH=NH, Nt=Nt, start=seed,
                              closed=True)
        if drc.closed:
            return drc
    return None
