"""Codimension-2 continuation of fold and Neimark-Sacker loci in (omega, F)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .continuation import (
    BifurcationPoint,
    Branch,
    CorrectorError,
    StepConfig,
    StepStats,
    arclength_steps,
    continue_branch,
    detect_bifurcations,
    localize_fold,
    localize_ns,
    newton,
    tangent_vector,
)
from .extended import fold_residual, ns_border, ns_residual, orthogonalize_pair
from .hbm import DEFAULT_NH, DEFAULT_NT, HarmonicSolution, as_system, peak_amplitudes

log = logging.getLogger(__name__)

__all__ = [
    "TrackingConfig",
    "BifurcationBranch",
    "TurningPoint",
    "DrcEvents",
    "track_fold",
    "track_ns",
    "turning_points",
    "find_drc_events",
    "find_qp_onset",
    "QpOnset",
    "fold_points_at",
    "branch_overlap",
    "Loci",
    "compute_loci",
]

TRACK_STEP = StepConfig(ds=1e-2, ds_min=1e-6, ds_max=5e-2, max_points=6000)


@dataclass(frozen=True)
class TrackingConfig:
    F_range: tuple[float, float] = (0.01, 0.3)
    omega_range: tuple[float, float] = (0.3, 4.0)
    step: StepConfig = TRACK_STEP
    # NS branch terminates when kappa falls below this fraction of omega_n1
    kappa_min: float = 1e-4


@dataclass(frozen=True)
class BifurcationBranch:
    kind: str
    points: tuple
    vectors: np.ndarray
    tangents: np.ndarray
    kappa: np.ndarray | None = None
    label: str | None = None
    truncated: bool = False
    terminated: str | None = None
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    @property
    def F(self) -> np.ndarray:
        return np.array([p.F for p in self.points])

    @property
    def omega(self) -> np.ndarray:
        return np.array([p.omega for p in self.points])

    def amplitudes(self, dof: int = 0) -> np.ndarray:
        cache = self.__dict__.setdefault("_amp_cache", {})
        if dof not in cache:
            NH = self.points[0].NH
            cache[dof] = peak_amplitudes(np.array([p.coeffs for p in self.points]), NH, dof)
        return cache[dof]


def _has_nonlinearity(system) -> bool:
    return bool(np.any(system.kn))


def _omega_n1(system) -> float:
    """Natural frequency of the primary alone (absorber stiffness removed)."""
    k = system.K[0, 0] - (system.K[1, 1] if system.n > 1 else 0.0)
    return math.sqrt(k / system.M[0, 0])


def _run(fun, y0, t0, cfg: TrackingConfig, decode, post, stop=None):
    """Arclength continuation in one direction; returns accepted states."""
    stats = StepStats()
    out = []
    for y, t, _ in arclength_steps(fun, y0, t0, cfg.step, stats, post=post):
        F, w = decode(y)
        out.append((y.copy(), t.copy()))
        if len(out) > 1:
            if not (cfg.F_range[0] <= F <= cfg.F_range[1]) or not (
                    cfg.omega_range[0] <= w <= cfg.omega_range[1]):
                break
            if stop is not None and stop(y):
                break
    return out, stats


def track_fold(seed: BifurcationPoint, params, config: TrackingConfig = TrackingConfig(), *,
               label: str | None = None, directions=(1, -1)) -> BifurcationBranch:
    """Trace the fold locus through ``seed`` in both directions of ``F``."""
    sol = seed.solution
    system = as_system(params, sol.NH, sol.Nt)
    if not _has_nonlinearity(system):
        raise ValueError("linear system: the response is single-valued and has no folds")
    if seed.kind != "fold":
        raise ValueError("seed is not a fold")
    phi = seed.vector
    if phi is None:
        sol, phi = localize_fold(system, sol)
    N = system.N
    F_ref = sol.F
    border = phi / np.linalg.norm(phi)
    # the residual reads the border array, which post() refreshes in place
    fun, sc = fold_residual(system, F_ref, border, free_F=True)

    def post(v):
        v = v.copy()
        v[N:2 * N] /= np.linalg.norm(v[N:2 * N])
        border[:] = v[N:2 * N]
        return v

    def decode(v):
        return v[-1] * sc.ref, v[2 * N]

    y0 = np.concatenate([sol.coeffs / sc.s, border, [sol.omega, sol.F / sc.ref]])
    halves = []
    total = StepStats()
    for d in directions:
        border[:] = y0[N:2 * N]
        t0 = np.zeros_like(y0)
        t0[-1] = d
        pts, st = _run(fun, y0, t0, config, decode, post)
        halves.append(pts)
        for k in ("accepted", "rejected", "newton_iters"):
            setattr(total, k, getattr(total, k) + getattr(st, k))
        total.truncated |= st.truncated
    seq = _join(halves)
    points, vecs, tans = [], [], []
    for y, t in seq:
        F, w = decode(y)
        points.append(HarmonicSolution(y[:N] * sc.s, float(w), float(F), sol.NH, Nt=sol.Nt))
        vecs.append(y[N:2 * N])
        tans.append(t)
    return BifurcationBranch("fold", tuple(points), np.array(vecs), np.array(tans), label=label,
                             truncated=total.truncated, stats=vars(total).copy())


def _join(halves):
    """Concatenate two one-sided runs from a common start into one ordered run."""
    if len(halves) == 1:
        return halves[0]
    back = [(y, -t) for y, t in reversed(halves[1][1:])]
    return back + halves[0]


def track_ns(seed: BifurcationPoint, params, config: TrackingConfig = TrackingConfig(), *,
             directions=(1, -1)) -> BifurcationBranch:
    """Trace the Neimark-Sacker locus through ``seed``.

    A branch ends early (``terminated='kappa_zero'``) when the crossing pair
    becomes real, where the locus degenerates into a fold.
    """
    sol = seed.solution
    system = as_system(params, sol.NH, sol.Nt)
    if not _has_nonlinearity(system):
        raise ValueError("linear system: no Neimark-Sacker points")
    if seed.kind != "neimark_sacker":
        raise ValueError("seed is not a Neimark-Sacker point")
    Phi, kappa = seed.vector, seed.kappa
    if Phi is None or kappa is None:
        sol, Phi, kappa = localize_ns(system, sol)
    Phi = orthogonalize_pair(Phi)
    N = system.N
    F_ref = sol.F
    border = ns_border(Phi)
    wn1 = _omega_n1(system)
    fun, sc = ns_residual(system, F_ref, border, free_F=True)

    def post(v):
        P = orthogonalize_pair(v[N + 1:2 * N + 1] + 1j * v[2 * N + 1:3 * N + 1])
        v = v.copy()
        v[N + 1:2 * N + 1], v[2 * N + 1:3 * N + 1] = P.real, P.imag
        v[3 * N + 1] = abs(v[3 * N + 1])
        border[:] = ns_border(P)
        return v

    def decode(v):
        return v[-1] * sc.ref, v[N]

    terminated = []

    def stop(v):
        if abs(v[3 * N + 1]) < config.kappa_min * wn1:
            terminated.append("kappa_zero")
            return True
        return False

    y0 = np.concatenate([sol.coeffs / sc.s, [sol.omega], Phi.real, Phi.imag, [kappa, sol.F / sc.ref]])
    halves = []
    total = StepStats()
    for d in directions:
        P0 = y0[N + 1:2 * N + 1] + 1j * y0[2 * N + 1:3 * N + 1]
        border[:] = ns_border(P0)
        t0 = np.zeros_like(y0)
        t0[-1] = d
        pts, st = _run(fun, y0, t0, config, decode, post, stop)
        halves.append(pts)
        for k in ("accepted", "rejected", "newton_iters"):
            setattr(total, k, getattr(total, k) + getattr(st, k))
        total.truncated |= st.truncated
    seq = _join(halves)
    points, vecs, tans, kap = [], [], [], []
    for y, t in seq:
        F, w = decode(y)
        points.append(HarmonicSolution(y[:N] * sc.s, float(w), float(F), sol.NH, Nt=sol.Nt))
        vecs.append(y[N + 1:2 * N + 1] + 1j * y[2 * N + 1:3 * N + 1])
        tans.append(t)
        kap.append(y[3 * N + 1])
    return BifurcationBranch("neimark_sacker", tuple(points), np.array(vecs), np.array(tans),
                             kappa=np.array(kap), truncated=total.truncated,
                             terminated=terminated[0] if terminated else None,
                             stats=vars(total).copy())


# ---------------------------------------------------------------------------
# turning points and events


@dataclass(frozen=True)
class TurningPoint:
    index: int  # bracket (index, index + 1) on the branch
    F: float
    omega: float
    amplitude: float
    kind: str  # "min" or "max" in F


def _vertex(s, f):
    """Vertex of the parabola through three points ``(s_i, f_i)``."""
    A = np.vander(s, 3)
    a, b, c = np.linalg.solve(A, f)
    if a == 0:
        return s[1], f[1]
    sv = -b / (2 * a)
    return sv, c - b * b / (4 * a)


def turning_points(branch: BifurcationBranch) -> list[TurningPoint]:
    """Turning points in ``F`` from sign changes of ``dF/ds`` along the branch.

    Each is refined by a quadratic fit of ``(s, F)``, ``(s, omega)`` and
    ``(s, amplitude)`` through the three points around the sign change.
    """
    F = branch.F
    if len(F) < 3:
        return []
    tF = branch.tangents[:, -1]
    w = branch.omega
    amp = branch.amplitudes()
    ys = np.column_stack([w, F])
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ys, axis=0), axis=1))])
    out = []
    for i in range(len(F) - 1):
        if tF[i] * tF[i + 1] < 0:
            j = min(max(i if abs(tF[i]) < abs(tF[i + 1]) else i + 1, 1), len(F) - 2)
            idx = [j - 1, j, j + 1]
            ss = s[idx] - s[j]
            if len(set(ss)) < 3:
                sv, Fv = 0.0, F[j]
            else:
                sv, Fv = _vertex(ss, F[idx])
                sv = float(np.clip(sv, ss[0], ss[-1]))
            wv = float(np.polyval(np.polyfit(ss, w[idx], 2), sv)) if len(set(ss)) == 3 else float(w[j])
            av = float(np.polyval(np.polyfit(ss, amp[idx], 2), sv)) if len(set(ss)) == 3 else float(amp[j])
            kind = "max" if tF[i] > 0 else "min"
            out.append(TurningPoint(i, float(Fv), wv, av, kind))
    return out


@dataclass(frozen=True)
class DrcEvents:
    F_appear: float | None
    F_merge: float | None
    appear: TurningPoint | None = None
    merge: TurningPoint | None = None

    @property
    def present(self) -> bool:
        return self.F_appear is not None and self.F_merge is not None


def find_drc_events(branch: BifurcationBranch) -> DrcEvents:
    """Appearance and merging of the detached curve from a fold branch.

    The merge is the local maximum of ``F``: there the detached curve's fold
    meets the resonance fold of the main branch. The appearance is the
    neighbouring local minimum on the detached (higher-frequency) side, the
    fold-of-folds where the isolated curve is born. Fewer than two turning
    points means no detached curve.
    """
    tps = turning_points(branch)
    if len(tps) < 2:
        return DrcEvents(None, None)
    maxima = [k for k, tp in enumerate(tps) if tp.kind == "max"]
    if not maxima:
        return DrcEvents(None, None)
    k = max(maxima, key=lambda j: tps[j].F)
    nbrs = [tps[j] for j in (k - 1, k + 1) if 0 <= j < len(tps) and tps[j].kind == "min"]
    if not nbrs:
        return DrcEvents(None, None)
    appear = max(nbrs, key=lambda tp: tp.omega)
    merge = tps[k]
    if appear.F >= merge.F:
        return DrcEvents(None, None)
    return DrcEvents(appear.F, merge.F, appear, merge)


@dataclass(frozen=True)
class QpOnset:
    F: float
    omega: float
    at_boundary: bool = False


def find_qp_onset(branch: BifurcationBranch) -> QpOnset:
    """Lowest forcing on a Neimark-Sacker branch, where the torus is born."""
    F = branch.F
    w = branch.omega
    j = int(np.argmin(F))
    if j == 0 or j == len(F) - 1:
        return QpOnset(float(F[j]), float(w[j]), at_boundary=True)
    idx = [j - 1, j, j + 1]
    dw = np.diff(w[idx])
    if dw[0] * dw[1] > 0:
        # frequency is a valid local parameter: fit F(omega) directly
        dx = w[idx] - w[j]
        wv, Fv = _vertex(dx, F[idx])
        return QpOnset(float(min(Fv, F[j])), float(np.clip(wv, dx.min(), dx.max()) + w[j]))
    ys = np.column_stack([w, F])
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ys, axis=0), axis=1))])
    ss = s[idx] - s[j]
    sv, Fv = _vertex(ss, F[idx])
    wv = float(np.polyval(np.polyfit(ss, w[idx], 2), np.clip(sv, ss[0], ss[-1])))
    return QpOnset(float(min(Fv, F[j])), wv)


# ---------------------------------------------------------------------------
# helpers for seeding


def fold_points_at(branch: BifurcationBranch, F: float, params) -> list[HarmonicSolution]:
    """Fold points of the codimension-1 response at forcing ``F`` lying on a
    fold branch, polished by Newton on the fixed-``F`` fold system."""
    Fs = branch.F
    out = []
    system = None
    for i in range(len(Fs) - 1):
        if (Fs[i] - F) * (Fs[i + 1] - F) <= 0 and Fs[i] != Fs[i + 1]:
            u = (F - Fs[i]) / (Fs[i + 1] - Fs[i])
            a, b = branch.points[i], branch.points[i + 1]
            guess = HarmonicSolution((1 - u) * a.coeffs + u * b.coeffs,
                                     (1 - u) * a.omega + u * b.omega, F, a.NH, Nt=a.Nt)
            phi = (1 - u) * branch.vectors[i] + u * branch.vectors[i + 1]
            system = system or as_system(params, a.NH, a.Nt)
            try:
                sol, _ = localize_fold(system, guess, phi)
            except CorrectorError:
                continue
            out.append(sol)
    return out


def branch_overlap(a: BifurcationBranch, b: BifurcationBranch, F_values, rtol: float = 0.02):
    """Whether the ``(x1, F)`` projections of two fold branches coincide.

    At each forcing level the upper fold amplitude of ``a`` is compared with
    the closest fold amplitude of ``b``. Returns a boolean per ``F``.
    """
    out = []
    for F in F_values:
        ra = _amplitudes_at(a, F)
        rb = _amplitudes_at(b, F)
        if not ra or not rb:
            out.append(False)
            continue
        top = max(ra)
        gap = min(abs(top - x) for x in rb)
        out.append(bool(gap <= rtol * top))
    return np.array(out)


def _amplitudes_at(branch: BifurcationBranch, F: float) -> list[float]:
    Fs, amp = branch.F, branch.amplitudes()
    out = []
    for i in range(len(Fs) - 1):
        if (Fs[i] - F) * (Fs[i + 1] - F) < 0:
            u = (F - Fs[i]) / (Fs[i + 1] - Fs[i])
            out.append(float(amp[i] + u * (amp[i + 1] - amp[i])))
    return out


# ---------------------------------------------------------------------------
# automatic seeding


@dataclass(frozen=True)
class Loci:
    A: BifurcationBranch | None
    B: BifurcationBranch | None
    ns: BifurcationBranch | None
    events: DrcEvents
    qp_onset: QpOnset | None
    scanned: tuple = ()


def _on_branch(sol: HarmonicSolution, branch: BifurcationBranch | None, params, tol=1e-3) -> bool:
    if branch is None:
        return False
    try:
        pts = fold_points_at(branch, sol.F, params)
    except (CorrectorError, np.linalg.LinAlgError):
        return False
    return any(abs(p.omega - sol.omega) < tol * max(1.0, sol.omega) for p in pts)


def _cusp_omega(branch: BifurcationBranch) -> float:
    return float(branch.omega[int(np.argmin(branch.F))])


def _labels(folds: list[BifurcationBranch]) -> list[str]:
    """``A`` for the first-peak locus and ``B`` for the one carrying the
    detached curve. The locus with the appearance/merging pair is ``B``; when
    neither or both have it, the lower cusp frequency is ``A``."""
    has = [find_drc_events(b).present for b in folds]
    if len(folds) == 1:
        return ["B" if has[0] else "A"]
    if sum(has) == 1:
        return ["B" if h else "A" for h in has]
    order = np.argsort([_cusp_omega(b) for b in folds])
    out = [""] * len(folds)
    for rank, i in enumerate(order):
        out[i] = "AB"[min(rank, 1)]
    return out


def compute_loci(params, F_range=(0.01, 0.3), *, F_step: float | None = None,
                 omega_range: tuple[float, float] | None = None, ns: bool = True,
                 config: TrackingConfig | None = None, NH: int = DEFAULT_NH,
                 Nt: int = DEFAULT_NT) -> Loci:
    """Find and trace the fold and Neimark-Sacker loci of the main response.

    Frequency responses are computed on an ascending grid of forcing levels.
    The first fold met seeds one fold locus; a later fold not on it seeds the
    other. The locus carrying the appearance/merging pair of the detached
    curve is labelled ``B``. The first Neimark-Sacker point seeds the NS locus.
    """
    system = as_system(params, NH, Nt)
    if not _has_nonlinearity(system):
        raise ValueError("linear system: no bifurcations to track")
    wn1 = _omega_n1(system)
    if omega_range is None:
        omega_range = (0.5 * wn1, 3.0 * wn1)
    F_lo, F_hi = F_range
    if F_step is None:
        F_step = (F_hi - F_lo) / 20
    if config is None:
        config = TrackingConfig(F_range=(0.5 * F_lo, F_hi),
                                omega_range=(0.3 * omega_range[0], 2.0 * omega_range[1]))
    folds: list[BifurcationBranch] = []
    ns_branch = None
    scanned = []
    F = F_lo
    while F <= F_hi * (1 + 1e-12) and (len(folds) < 2 or (ns and ns_branch is None)):
        main = continue_branch(system, F, omega_range, NH=NH, Nt=Nt, stability=ns)
        bps = detect_bifurcations(main, system, Nt=Nt)
        scanned.append(float(F))
        for bp in sorted((b for b in bps if b.kind == "fold"), key=lambda b: -b.omega):
            if len(folds) >= 2 or any(_on_branch(bp.solution, fb, system) for fb in folds):
                continue
            try:
                folds.append(track_fold(bp, system, config))
            except (CorrectorError, np.linalg.LinAlgError) as exc:
                log.warning("fold tracking failed from F=%g: %s", F, exc)
        if ns and ns_branch is None:
            seeds = [b for b in bps if b.kind == "neimark_sacker" and b.kappa]
            if seeds:
                try:
                    ns_branch = track_ns(seeds[0], system, config)
                except (CorrectorError, np.linalg.LinAlgError) as exc:
                    log.warning("NS tracking failed from F=%g: %s", F, exc)
        F += F_step
    labelled = {lab: replace(fb, label=lab) for fb, lab in zip(folds, _labels(folds))}
    A, B = labelled.get("A"), labelled.get("B")
    events = find_drc_events(B) if B is not None else DrcEvents(None, None)
    onset = find_qp_onset(ns_branch) if ns_branch is not None and len(ns_branch) > 2 else None
    return Loci(A, B, ns_branch, events, onset, tuple(scanned))
