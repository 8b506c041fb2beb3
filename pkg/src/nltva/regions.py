"""Operating regions of the absorber, peak performance and parameter sweeps.

Region sweeps run in dimensionless variables. For a given ``(epsilon, mu2,
beta3 / alpha3)`` the dimensionless system is built with ``alpha3 = 1``;
forcing it with amplitude ``F`` is then the same as ``alpha3 = F**2`` at unit
forcing, so the forcing axis of the fold loci maps directly onto ``alpha3``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import find_peaks

from .continuation import continue_branch, find_drc
from .hbm import DEFAULT_NH, DEFAULT_NT, as_system
from .model import DimensionlessParams, SystemParams, tune_dimensionless
from .tracking import DrcEvents, Loci, compute_loci

log = logging.getLogger(__name__)

__all__ = [
    "PeakRecord",
    "Envelope",
    "RegionBoundary",
    "classify_operation",
    "drc_events",
    "peak_amplitudes",
    "sensitivity_envelope",
    "reference_system",
    "alpha3_loci",
    "region_sweep",
    "elimination_threshold",
    "VARIANTS",
    "ALPHA3_RANGE",
]

VARIANTS = ("LTVA", "NLTVA", "perturbed")
SWEEPS = ("epsilon", "p_mu", "p_beta")
# primary damping ratio of the tabulated system
MU1_DEFAULT = 0.001
# wide enough to contain the merging of the detached curve for p_beta <= 1.25
ALPHA3_RANGE = (1e-4, 0.15)


# ---------------------------------------------------------------------------
# operating regions


@lru_cache(maxsize=32)
def _events_cached(params: SystemParams, F_max: float) -> DrcEvents:
    return compute_loci(params, (0.01, F_max), ns=False).events


def drc_events(params: SystemParams, F_max: float = 0.3) -> DrcEvents:
    """Appearance and merging forcing of the detached curve (cached)."""
    return _events_cached(params, float(F_max))


def classify_operation(params: SystemParams, F: float, events: DrcEvents | None = None) -> str:
    """``safe`` below the appearance of the detached curve, ``unsafe`` until it
    merges with the main branch, ``unacceptable`` beyond."""
    if F < 0:
        raise ValueError("F must be non-negative")
    ev = drc_events(params) if events is None else events
    if not ev.present:
        return "safe"
    if F < ev.F_appear:
        return "safe"
    if F < ev.F_merge:
        return "unsafe"
    return "unacceptable"


# ---------------------------------------------------------------------------
# resonance peaks


@dataclass(frozen=True)
class PeakRecord:
    F: float
    first: float | None
    second: float | None
    variant: str = "NLTVA"
    omega_first: float | None = None
    omega_second: float | None = None
    drc_peak: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for a in (self.first, self.second, self.drc_peak):
            if a is not None and not a > 0:
                raise ValueError("peak amplitudes must be positive")

    @property
    def worst(self) -> float:
        return max(a for a in (self.first, self.second) if a is not None)


def _refine_peak(x, y, i):
    """Vertex of the parabola through three samples around index ``i``."""
    if i == 0 or i == len(y) - 1:
        return float(x[i]), float(y[i])
    xs, ys = x[i - 1:i + 2], y[i - 1:i + 2]
    if len(set(xs)) < 3:
        return float(x[i]), float(y[i])
    a, b, c = np.polyfit(xs - xs[1], ys, 2)
    if a >= 0:
        return float(x[i]), float(y[i])
    xv = float(np.clip(-b / (2 * a), xs[0] - xs[1], xs[2] - xs[1]))
    return float(xv + xs[1]), float(max(np.polyval([a, b, c], xv), y[i]))


def _branch_peaks(branch, prominence=0.02):
    amp = branch.amplitudes()
    w = branch.omegas
    idx, props = find_peaks(np.concatenate([[0.0], amp, [0.0]]),
                            prominence=prominence * amp.max())
    idx = idx - 1
    top = sorted(idx, key=lambda i: -amp[i])[:2]
    return [_refine_peak(w, amp, i) for i in sorted(top)]


def peak_amplitudes(params: SystemParams, F: float, *, variant: str = "NLTVA",
                    omega_range=(0.5, 3.0), with_drc: bool = False, NH: int = DEFAULT_NH,
                    Nt: int = DEFAULT_NT) -> PeakRecord:
    """Resonance peaks of the main branch at forcing ``F``.

    Peaks are prominent local maxima of ``max|x1|`` along the branch, refined
    by a quadratic fit in frequency. A single surviving peak (merged
    response) is reported as the second one when it lies above the absorber
    frequency. ``variant='LTVA'`` drops the absorber's cubic spring.
    """
    if not F > 0:
        raise ValueError("F must be positive")
    if variant == "LTVA":
        params = params.linear() if params.knl1 == 0 else params.with_(knl2=0.0)
    system = as_system(params, NH, Nt)
    main = continue_branch(system, F, omega_range, NH=NH, Nt=Nt, stability=False)
    peaks = _branch_peaks(main)
    if len(peaks) == 2:
        (w1, a1), (w2, a2) = peaks
    elif params.omega_n2 > 0 and peaks[0][0] > params.omega_n2:
        (w1, a1), (w2, a2) = (None, None), peaks[0]
    else:
        (w1, a1), (w2, a2) = peaks[0], (None, None)
    drc_peak = None
    if with_drc:
        drc = find_drc(system, F, omega_range, main=main, NH=NH, Nt=Nt)
        if drc is not None:
            drc_peak = float(drc.amplitudes().max())
    return PeakRecord(float(F), a1, a2, variant, w1, w2, drc_peak)


@dataclass(frozen=True)
class Envelope:
    F: float
    nominal: PeakRecord
    records: tuple  # one PeakRecord per perturbation level
    first: tuple[float, float]
    second: tuple[float, float]

    def contains(self, rec: PeakRecord) -> bool:
        ok = True
        for (lo, hi), a in ((self.first, rec.first), (self.second, rec.second)):
            if a is not None:
                ok &= lo - 1e-12 <= a <= hi + 1e-12
        return ok


def sensitivity_envelope(params: SystemParams, F_values, coefficient: str, fraction: float,
                         **kw) -> list[Envelope]:
    """Peak amplitudes under ``{-fraction, 0, +fraction}`` changes of ``c2`` or ``knl2``."""
    if coefficient not in ("c2", "knl2"):
        raise ValueError("coefficient must be 'c2' or 'knl2'")
    if not 0 <= fraction <= 0.5:
        raise ValueError("fraction must lie in [0, 0.5]")
    base = getattr(params, coefficient)
    out = []
    for F in F_values:
        nominal = peak_amplitudes(params, F, **kw)
        recs = [nominal]
        if fraction > 0:
            for s in (-1.0, 1.0):
                p = params.with_(**{coefficient: base * (1 + s * fraction)})
                r = peak_amplitudes(p, F, **kw)
                recs.append(PeakRecord(r.F, r.first, r.second, "perturbed", r.omega_first,
                                       r.omega_second))

        def span(attr):
            vals = [getattr(r, attr) for r in recs if getattr(r, attr) is not None]
            return (min(vals), max(vals)) if vals else (math.nan, math.nan)

        out.append(Envelope(float(F), nominal, tuple(recs), span("first"), span("second")))
    return out


# ---------------------------------------------------------------------------
# dimensionless region sweeps


def reference_system(epsilon: float = 0.05, p_mu: float = 1.0, p_beta: float = 1.0,
                     mu1: float = MU1_DEFAULT) -> SystemParams:
    """Dimensionless system at ``alpha3 = 1`` with optimally tuned absorber
    (damping and cubic stiffness scaled by ``p_mu`` and ``p_beta``)."""
    if min(epsilon, p_mu, p_beta) <= 0:
        raise ValueError("sweep values must be positive")
    lam, mu2, beta3 = tune_dimensionless(epsilon, 1.0)
    return DimensionlessParams(epsilon, mu1, p_mu * mu2, lam, 1.0, p_beta * beta3).to_system()


def alpha3_loci(epsilon=0.05, p_mu=1.0, p_beta=1.0, alpha3_range=ALPHA3_RANGE, *, ns: bool = True,
                n_scan: int = 20) -> Loci:
    """Fold and NS loci of the dimensionless system; their ``F`` is ``sqrt(alpha3)``."""
    F_lo, F_hi = math.sqrt(alpha3_range[0]), math.sqrt(alpha3_range[1])
    return compute_loci(reference_system(epsilon, p_mu, p_beta), (F_lo, F_hi),
                        F_step=(F_hi - F_lo) / n_scan, ns=ns)


@dataclass(frozen=True)
class RegionBoundary:
    parameter: str
    values: np.ndarray
    alpha3_appear: np.ndarray  # nan where absent
    alpha3_merge: np.ndarray
    alpha3_qp_onset: np.ndarray
    failed: tuple = ()

    def __post_init__(self):
        if self.parameter not in SWEEPS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")

    def curve(self, which: str, n: int = 200):
        """Monotone cubic interpolation of one boundary for plotting."""
        y = getattr(self, f"alpha3_{which}")
        ok = np.isfinite(y)
        if ok.sum() < 2:
            return np.array([]), np.array([])
        x = np.linspace(self.values[ok].min(), self.values[ok].max(), n)
        return x, PchipInterpolator(self.values[ok], y[ok])(x)


def region_sweep(parameter: str, values, *, base: dict | None = None, alpha3_range=ALPHA3_RANGE,
                 qp: bool = True) -> RegionBoundary:
    """Boundaries ``alpha3_appear``, ``alpha3_merge`` and ``alpha3_qp_onset``
    for each value of ``epsilon``, ``p_mu`` or ``p_beta``."""
    if parameter not in SWEEPS:
        raise ValueError(f"parameter must be one of {SWEEPS}")
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.any(values <= 0):
        raise ValueError("sweep values must be positive")
    kw = dict(epsilon=0.05, p_mu=1.0, p_beta=1.0)
    kw.update(base or {})
    app, mer, qpo, failed = [], [], [], []
    for v in values:
        kw[parameter] = float(v)
        try:
            loci = alpha3_loci(alpha3_range=alpha3_range, ns=qp, **kw)
        except Exception as exc:  # one bad point must not stop the sweep
            log.warning("sweep point %s=%g failed: %s", parameter, v, exc)
            failed.append(float(v))
            app.append(np.nan), mer.append(np.nan), qpo.append(np.nan)
            continue
        ev = loci.events
        app.append(ev.F_appear**2 if ev.present else np.nan)
        mer.append(ev.F_merge**2 if ev.present else np.nan)
        on = loci.qp_onset
        qpo.append(on.F**2 if on is not None and not on.at_boundary else np.nan)
    return RegionBoundary(parameter, values, np.array(app), np.array(mer), np.array(qpo),
                          tuple(failed))


def elimination_threshold(lo: float = 1.0, hi: float = 2.0, *, tol: float = 0.005,
                          epsilon: float = 0.05, p_beta: float = 1.0,
                          alpha3_range=ALPHA3_RANGE) -> float:
    """Smallest ``p_mu`` for which the fold locus has no folding (bisection).

    ``lo`` must have a detached curve and ``hi`` none.
    """
    def has(p):
        loci = alpha3_loci(epsilon, p, p_beta, alpha3_range, ns=False)
        return loci.events.present

    if not has(lo):
        raise ValueError(f"no detached curve at p_mu={lo}")
    if has(hi):
        raise ValueError(f"detached curve persists at p_mu={hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if has(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
