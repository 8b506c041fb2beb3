"""Direct time integration, attractor classification and basins of attraction.

The integrator is an adaptive Dormand-Prince 5(4) pair compiled with numba.
Steps are clipped so that every forcing period ends on a step, which gives
exact stroboscopic (Poincare) samples. Peak displacements inside a step are
found from the cubic Hermite interpolant of ``(x1, v1)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .continuation import Branch, CorrectorError, continue_branch, correct, find_drc
from .hbm import HarmonicSolution, amplitude, as_system, hill_exponents
from .model import Forcing, State, SystemParams

__all__ = [
    "Trajectory",
    "AttractorLabel",
    "ClassifyConfig",
    "GridSpec",
    "BasinMap",
    "UndefinedRatio",
    "IntegrationError",
    "integrate",
    "classify",
    "sweep_quasiperiodic",
    "coexisting_solutions",
    "strobe_state",
    "compute_basins",
    "basin_area_ratio",
    "LABELS",
]

LABELS = ("periodic_low", "periodic_high", "quasiperiodic", "unconverged")

# kernel status / kind codes
_OK, _UNDERFLOW, _BLOWUP = 0, 1, 2
_PERIODIC, _QUASI, _UNCONVERGED = 0, 2, 3


class IntegrationError(RuntimeError):
    """Step size fell below the floor; the problem looks stiff or singular."""


class UndefinedRatio(ZeroDivisionError):
    pass


# ---------------------------------------------------------------------------
# compiled kernels

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@njit(cache=True)
def _f(t, y, p, F, w, out):
    m1, c1, k1, knl1, m2, c2, k2, knl2 = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]
    r = y[0] - y[2]
    rd = y[1] - y[3]
    fa = c2 * rd + k2 * r + knl2 * r * r * r
    out[0] = y[1]
    out[1] = (F * math.cos(w * t) - c1 * y[1] - k1 * y[0] - knl1 * y[0] ** 3 - fa) / m1
    out[2] = y[3]
    out[3] = fa / m2


@njit(cache=True)
def _hermite_peak(x0, v0, x1, v1, h):
    """max |x| of the cubic Hermite interpolant on one step."""
    best = max(abs(x0), abs(x1))
    A = 6 * x0 + 3 * h * v0 - 6 * x1 + 3 * h * v1
    B = -6 * x0 - 4 * h * v0 + 6 * x1 - 2 * h * v1
    C = h * v0
    roots = np.empty(2)
    n = 0
    if abs(A) < 1e-300:
        if abs(B) > 1e-300:
            roots[0] = -C / B
            n = 1
    else:
        disc = B * B - 4 * A * C
        if disc >= 0:
            sq = math.sqrt(disc)
            roots[0] = (-B - sq) / (2 * A)
            roots[1] = (-B + sq) / (2 * A)
            n = 2
    for i in range(n):
        s = roots[i]
        if 0.0 < s < 1.0:
            s2 = s * s
            s3 = s2 * s
            x = ((2 * s3 - 3 * s2 + 1) * x0 + (s3 - 2 * s2 + s) * h * v0
                 + (-2 * s3 + 3 * s2) * x1 + (s3 - s2) * h * v1)
            best = max(best, abs(x))
    return best


@njit(cache=True)
def _advance(y, t, t_end, h, p, F, w, tol, hmin, stats):
    """Integrate in place from ``t`` to ``t_end``.

    Returns ``(h_next, peak, status)`` with ``peak`` the largest |x1| met.
    ``stats`` accumulates ``[accepted, rejected]``.
    """
    k = np.empty((7, 4))
    ytmp = np.empty(4)
    ynew = np.empty(4)
    peak = abs(y[0])
    _f(t, y, p, F, w, k[0])
    while t < t_end:
        last = False
        if t + h >= t_end:
            hs = t_end - t
            last = True
        else:
            hs = h
        for s in range(1, 7):
            for i in range(4):
                acc = y[i]
                for j in range(s):
                    acc += hs * _A[s, j] * k[j, i]
                ytmp[i] = acc
            if s < 6:
                _f(t + _C[s] * hs, ytmp, p, F, w, k[s])
        for i in range(4):
            ynew[i] = ytmp[i]  # row 6 of A equals the 5th-order weights
        _f(t + hs, ynew, p, F, w, k[6])
        err = 0.0
        for i in range(4):
            e = 0.0
            for j in range(7):
                e += _E[j] * k[j, i]
            sc = tol + tol * max(abs(y[i]), abs(ynew[i]))
            err = max(err, abs(hs * e) / sc)
        if err <= 1.0:
            peak = max(peak, _hermite_peak(y[0], y[1], ynew[0], ynew[1], hs))
            t = t_end if last else t + hs
            for i in range(4):
                y[i] = ynew[i]
                k[0, i] = k[6, i]
            stats[0] += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if not last:
                h = hs * fac
            else:
                h = max(h, hs * fac)
            if not (abs(y[0]) < 1e8 and abs(y[2]) < 1e8):
                return h, peak, _BLOWUP
        else:
            stats[1] += 1
            h = hs * max(0.2, 0.9 * err ** -0.2)
            if h < hmin:
                return h, peak, _UNDERFLOW
    return h, peak, _OK


@njit(cache=True)
def _sample(y0, p, F, w, t_end, n_out, tol, hmin):
    out = np.empty((n_out + 1, 4))
    peaks = np.zeros(n_out + 1)
    y = y0.copy()
    out[0] = y
    peaks[0] = abs(y[0])
    stats = np.zeros(2, dtype=np.int64)
    h = min(0.01, t_end / n_out)
    dt = t_end / n_out
    status = _OK
    for n in range(n_out):
        h, pk, status = _advance(y, n * dt, (n + 1) * dt, h, p, F, w, tol, hmin, stats)
        out[n + 1] = y
        peaks[n + 1] = pk
        if status != _OK:
            return out[:n + 2], peaks[:n + 2], stats, status
    return out, peaks, stats, status


@njit(cache=True)
def _spread(buf, count, stride, n_window):
    """Largest distance from the mean of the last returns of one residue class."""
    cap = buf.shape[0]
    if count < stride * n_window:
        return np.inf
    mean = np.zeros(4)
    for m in range(n_window):
        idx = (count - 1 - m * stride) % cap
        for i in range(4):
            mean[i] += buf[idx, i]
    mean /= n_window
    worst = 0.0
    for m in range(n_window):
        idx = (count - 1 - m * stride) % cap
        d = 0.0
        for i in range(4):
            d += (buf[idx, i] - mean[i]) ** 2
        worst = max(worst, math.sqrt(d))
    return worst


@njit(cache=True)
def _classify_kernel(y0, p, F, w, tol, hmin, min_periods, ext_periods, max_periods,
                     n_window, disp_tol, attractors, radii):
    """Classify the attractor reached from ``y0``.

    Returns ``(kind, stride, amplitude, periods, y_final)``.
    """
    T = 2 * math.pi / w
    kmax = 8
    cap = kmax * n_window
    buf = np.empty((cap, 4))
    peaks = np.empty(cap)
    y = y0.copy()
    stats = np.zeros(2, dtype=np.int64)
    h = T / 50
    count = 0
    prev_spread = np.inf
    next_check = min_periods
    while count < max_periods:
        h, pk, status = _advance(y, count * T, (count + 1) * T, h, p, F, w, tol, hmin, stats)
        if status != _OK:
            return _UNCONVERGED, 0, pk, count, y
        buf[count % cap] = y
        peaks[count % cap] = pk
        count += 1
        if count >= n_window:
            d1 = _spread(buf, count, 1, n_window)
            if d1 < disp_tol:
                near = count >= min_periods
                for a in range(attractors.shape[0]):
                    dist = 0.0
                    for i in range(4):
                        dist += (y[i] - attractors[a, i]) ** 2
                    if math.sqrt(dist) < radii[a]:
                        near = True
                if near:
                    amp = 0.0
                    for m in range(n_window):
                        amp = max(amp, peaks[(count - 1 - m) % cap])
                    return _PERIODIC, 1, amp, count, y
        if count == next_check:
            for k in range(2, kmax + 1):
                if _spread(buf, count, k, n_window) < disp_tol:
                    amp = 0.0
                    for m in range(k * n_window):
                        amp = max(amp, peaks[(count - 1 - m) % cap])
                    return _PERIODIC, k, amp, count, y
            sp = _spread(buf, count, 1, cap)
            if sp > 0.5 * prev_spread:
                amp = 0.0
                for m in range(cap):
                    amp = max(amp, peaks[(count - 1 - m) % cap])
                return _QUASI, 0, amp, count, y
            prev_spread = sp
            next_check += ext_periods
    amp = 0.0
    for m in range(min(cap, count)):
        amp = max(amp, peaks[(count - 1 - m) % cap])
    return _UNCONVERGED, 0, amp, count, y


@njit(cache=True, parallel=True)
def _points_kernel(starts, p, F, w, tol, hmin, min_periods, ext_periods, max_periods,
                   n_window, disp_tol, attractors, radii):
    n = starts.shape[0]
    kinds = np.empty(n, dtype=np.int64)
    amps = np.empty(n)
    finals = np.empty((n, 4))
    for c in prange(n):
        kind, _, amp, _, yf = _classify_kernel(starts[c].copy(), p, F, w, tol, hmin, min_periods,
                                               ext_periods, max_periods, n_window, disp_tol,
                                               attractors, radii)
        kinds[c] = kind
        amps[c] = amp
        finals[c] = yf
    return kinds, amps, finals


def _pvec(params: SystemParams) -> np.ndarray:
    p = params
    return np.array([p.m1, p.c1, p.k1, p.knl1, p.m2, p.c2, p.k2, p.knl2], dtype=float)


def _as_array(initial) -> np.ndarray:
    if isinstance(initial, State):
        return initial.as_array()
    y = np.asarray(initial, dtype=float).reshape(4)
    if not np.all(np.isfinite(y)):
        raise ValueError("initial state must be finite")
    return y


# ---------------------------------------------------------------------------
# public interface


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    y: np.ndarray  # (len(t), 4): x1, v1, x2, v2
    peaks: np.ndarray  # max |x1| over each output interval
    steps: int
    rejected: int

    def states(self) -> list[State]:
        return [State.from_array(r) for r in self.y]


def integrate(params: SystemParams, forcing: Forcing, initial, t_end: float, tol: float = 1e-8,
              *, n_out: int | None = None) -> Trajectory:
    """Integrate the equations of motion from ``t = 0`` to ``t_end``.

    Output is at ``n_out`` equally spaced times (default 64 per forcing
    period); the integrator lands on each of them exactly.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    y0 = _as_array(initial)
    if n_out is None:
        T = 2 * math.pi / forcing.omega
        n_out = max(1, int(math.ceil(64 * t_end / T)))
    hmin = 1e-12 * t_end
    y, peaks, stats, status = _sample(y0, _pvec(params), forcing.F, forcing.omega, float(t_end),
                                      int(n_out), float(tol), hmin)
    if status == _UNDERFLOW:
        raise IntegrationError(f"step size underflow near t={t_end * (len(y) - 1) / n_out:.6g}")
    if status == _BLOWUP:
        raise IntegrationError("solution diverged")
    t = np.linspace(0.0, t_end, n_out + 1)[:len(y)]
    return Trajectory(t, y, peaks, int(stats[0]), int(stats[1]))


@dataclass(frozen=True)
class ClassifyConfig:
    tol: float = 1e-8
    min_periods: int = 300
    ext_periods: int = 300
    max_periods: int = 1500
    n_window: int = 20
    disp_tol: float = 1e-4
    # stop before min_periods once settled within this fraction of the
    # attractor gap around a known periodic solution
    early_radius: float = 0.1


@dataclass(frozen=True)
class AttractorLabel:
    kind: str
    amplitude: float
    periods: int = 0
    subharmonic: int = 1
    final: tuple = ()

    def __post_init__(self):
        if self.kind not in LABELS:
            raise ValueError(f"unknown attractor kind {self.kind!r}")
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be non-negative")


def strobe_state(sol: HarmonicSolution) -> np.ndarray:
    """State ``[x1, v1, x2, v2]`` of a harmonic solution at ``t = 0`` mod period."""
    Nc = 2 * sol.NH + 1
    out = np.empty(2 * sol.n_dof)
    k = np.arange(1, sol.NH + 1)
    for d in range(sol.n_dof):
        c = sol.coeffs[d * Nc:(d + 1) * Nc]
        out[2 * d] = c[0] + c[1::2].sum()
        out[2 * d + 1] = sol.omega * (k * c[2::2]).sum()
    return out


def _references(solutions, config: ClassifyConfig):
    """Strobe states, early-exit radii and the low/high amplitude midpoint."""
    if not solutions:
        return np.zeros((0, 4)), np.zeros(0), None
    att = np.array([strobe_state(s) for s in solutions])
    amps = [amplitude(s) for s in solutions]
    if len(solutions) >= 2:
        gap = max(amps) - min(amps)
        radii = np.full(len(solutions), config.early_radius * gap)
        mid = 0.5 * (max(amps) + min(amps))
    else:
        radii = np.array([config.early_radius * amps[0]])
        mid = None
    return att, radii, mid


def _label(kind: int, amp: float, mid) -> str:
    if kind == _QUASI:
        return "quasiperiodic"
    if kind == _UNCONVERGED:
        return "unconverged"
    return "periodic_high" if mid is not None and amp > mid else "periodic_low"


def classify(params: SystemParams, forcing: Forcing, initial, config: ClassifyConfig = ClassifyConfig(),
             *, solutions=None) -> AttractorLabel:
    """Integrate from ``initial`` and identify the attractor reached.

    ``solutions`` are the coexisting stable periodic solutions at this
    forcing; with two or more, periodic attractors above the midpoint of
    their amplitudes are labelled ``periodic_high``.
    """
    y0 = _as_array(initial)
    att, radii, mid = _references(solutions, config)
    kind, stride, amp, periods, yf = _classify_kernel(
        y0, _pvec(params), forcing.F, forcing.omega, config.tol, 1e-12, config.min_periods,
        config.ext_periods, config.max_periods, config.n_window, config.disp_tol, att, radii)
    return AttractorLabel(_label(kind, amp, mid), float(amp), int(periods), int(max(stride, 1)),
                          tuple(float(v) for v in yf))


def sweep_quasiperiodic(params: SystemParams, F: float, omegas, config: ClassifyConfig = ClassifyConfig(),
                        initial=None) -> list[tuple[float, float]]:
    """Follow the quasiperiodic attractor through a sequence of frequencies.

    Each frequency starts from the final state of the previous one. Points
    where the motion is not quasiperiodic are omitted.
    """
    y = np.zeros(4) if initial is None else _as_array(initial)
    out = []
    for w in omegas:
        lab = classify(params, Forcing(F, float(w)), y, config)
        if lab.final:
            y = np.array(lab.final)
        if lab.kind == "quasiperiodic":
            out.append((float(w), lab.amplitude))
    return out


def _solutions_on(branch: Branch, omega: float, system) -> list[HarmonicSolution]:
    w = branch.omegas
    out = []
    for i in range(len(w) - 1):
        if (w[i] - omega) * (w[i + 1] - omega) <= 0 and w[i] != w[i + 1]:
            u = (omega - w[i]) / (w[i + 1] - w[i])
            a, b = branch.points[i], branch.points[i + 1]
            guess = HarmonicSolution((1 - u) * a.coeffs + u * b.coeffs, float(omega), a.F, a.NH, Nt=a.Nt)
            try:
                sol = hill_exponents(correct(guess, system), system)
            except CorrectorError:
                continue
            if not any(np.allclose(sol.coeffs, s.coeffs, atol=1e-8) for s in out):
                out.append(sol)
    return out


def coexisting_solutions(params: SystemParams, F: float, omega: float, *, main: Branch | None = None,
                         drc: Branch | None = None, omega_range=(0.5, 3.0), search_drc: bool = True):
    """Stable periodic solutions at ``(F, omega)`` sorted by amplitude.

    Collects the main branch and, if one is found, the detached curve.
    """
    system = as_system(params)
    if main is None:
        main = continue_branch(system, F, omega_range, stability=False)
    sols = _solutions_on(main, omega, system)
    if drc is None and search_drc:
        drc = find_drc(system, F, omega_range, main=main)
    if drc is not None:
        sols += _solutions_on(drc, omega, system)
    sols = [s for s in sols if s.stable]
    return sorted(sols, key=amplitude)


@dataclass(frozen=True)
class GridSpec:
    x1: tuple[float, float]
    v1: tuple[float, float]
    nx: int = 201
    nv: int = 201
    x2: float = 0.0
    v2: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.nv < 1:
            raise ValueError("grid must have at least one cell per axis")
        if not (self.x1[0] <= self.x1[1] and self.v1[0] <= self.v1[1]):
            raise ValueError("grid ranges must be ordered")

    def axes(self):
        return np.linspace(*self.x1, self.nx), np.linspace(*self.v1, self.nv)

    @classmethod
    def around(cls, solutions, factor: float = 1.5, n: int = 201) -> "GridSpec":
        """Square window of half-width ``factor`` times the largest amplitude."""
        a = factor * max(amplitude(s) for s in solutions)
        return cls((-a, a), (-a, a), n, n)


@dataclass(frozen=True)
class BasinMap:
    grid: GridSpec
    labels: np.ndarray  # (nv, nx) indices into LABELS
    amplitudes: np.ndarray
    finals: np.ndarray
    forcing: Forcing
    config_hash: str
    reference_amplitudes: tuple = ()

    def counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.labels == i)) for i, name in enumerate(LABELS)}


def _config_hash(params, forcing, grid, config, refs) -> str:
    blob = json.dumps({"params": asdict(params), "forcing": asdict(forcing), "grid": asdict(grid),
                       "config": asdict(config), "refs": list(refs)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def compute_basins(params: SystemParams, forcing: Forcing, grid: GridSpec | None = None,
                   config: ClassifyConfig = ClassifyConfig(), *, solutions=None,
                   threads: int | None = None, sampling: str = "grid", seed: int = 0) -> BasinMap:
    """Label initial conditions ``(x1, v1)`` with the absorber at rest.

    ``sampling='grid'`` labels the cells of ``grid`` (default); ``'random'``
    draws ``nx * nv`` uniform points in the same window from ``seed`` and
    returns a single-row map. ``solutions`` default to
    :func:`coexisting_solutions`. The window must reach beyond the amplitude
    of every reference solution.
    """
    if solutions is None:
        solutions = coexisting_solutions(params, forcing.F, forcing.omega) if forcing.F > 0 else []
    if grid is None:
        if not solutions:
            raise ValueError("a grid is required when there is no reference solution")
        grid = GridSpec.around(solutions)
    amps = tuple(float(amplitude(s)) for s in solutions)
    for a in amps:
        if max(abs(grid.x1[0]), abs(grid.x1[1])) < a or max(abs(grid.v1[0]), abs(grid.v1[1])) < a:
            raise ValueError(f"grid window does not cover attractor amplitude {a:.6g}")
    att, radii, mid = _references(solutions, config)
    if sampling == "grid":
        x1s, v1s = grid.axes()
        X, V = np.meshgrid(x1s, v1s)
        shape = X.shape
    elif sampling == "random":
        rng = np.random.default_rng(seed)
        n = grid.nx * grid.nv
        X = rng.uniform(*grid.x1, n)
        V = rng.uniform(*grid.v1, n)
        shape = (1, n)
    else:
        raise ValueError("sampling must be 'grid' or 'random'")
    starts = np.column_stack([X.ravel(), V.ravel(), np.full(X.size, grid.x2), np.full(X.size, grid.v2)])
    if threads:
        numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
    kinds, amp, finals = _points_kernel(starts, _pvec(params), forcing.F, forcing.omega, config.tol,
                                        1e-12, config.min_periods, config.ext_periods,
                                        config.max_periods, config.n_window, config.disp_tol,
                                        att, radii)
    kinds, amp, finals = kinds.reshape(shape), amp.reshape(shape), finals.reshape(shape + (4,))
    labels = np.empty(kinds.shape, dtype=np.int8)
    labels[kinds == _QUASI] = LABELS.index("quasiperiodic")
    labels[kinds == _UNCONVERGED] = LABELS.index("unconverged")
    per = kinds == _PERIODIC
    high = per & (amp > mid) if mid is not None else np.zeros_like(per)
    labels[per & ~high] = LABELS.index("periodic_low")
    labels[high] = LABELS.index("periodic_high")
    return BasinMap(grid, labels, amp, finals, forcing,
                    _config_hash(params, forcing, grid, config, amps + (sampling, seed)), amps)


def basin_area_ratio(bmap: BasinMap) -> float:
    """Area of the high-amplitude basin relative to the low one, in percent."""
    c = bmap.counts()
    if c["periodic_low"] == 0:
        raise UndefinedRatio("no cell reaches the low-amplitude attractor")
    return 100.0 * c["periodic_high"] / c["periodic_low"]
