import numpy as np
import pytest

from nltva.continuation import (
    BifurcationPoint,
    StepConfig,
    continue_branch,
    detect_bifurcations,
    find_drc,
)
from nltva.hbm import HarmonicSolution, HBMSystem, linear_solution
from nltva.model import TABLE1
from nltva.tracking import (
    BifurcationBranch,
    TrackingConfig,
    branch_overlap,
    compute_loci,
    find_drc_events,
    find_qp_onset,
    fold_points_at,
    track_fold,
    track_ns,
    turning_points,
)

LINEAR = TABLE1.with_(knl1=0.0, knl2=0.0)
DUFFING = HBMSystem([[1.0]], [[0.05]], [[1.0]], T=[[1.0]], kn=[1.0], load=[1.0])


def _linear_seed(kind):
    sol = HarmonicSolution(linear_solution(LINEAR, 1.0, 0.1), 1.0, 0.1)
    return BifurcationPoint(kind, sol, 0.0, (0, 1))


def test_linear_system_refused():
    with pytest.raises(ValueError):
        track_fold(_linear_seed("fold"), LINEAR)
    with pytest.raises(ValueError):
        track_ns(_linear_seed("neimark_sacker"), LINEAR)
    with pytest.raises(ValueError):
        compute_loci(LINEAR)


def test_linear_response_has_no_seed():
    br = continue_branch(LINEAR, 0.3, (0.5, 3.0))
    assert detect_bifurcations(br, LINEAR) == []


def test_wrong_seed_kind_refused(main_branch):
    bp = [b for b in detect_bifurcations(main_branch(0.11), TABLE1) if b.kind == "neimark_sacker"][0]
    with pytest.raises(ValueError):
        track_fold(bp, TABLE1)


def _synthetic(s, F, w, amp=None):
    s = np.asarray(s, dtype=float)
    F = np.asarray(F, dtype=float)
    w = np.asarray(w, dtype=float)
    amp = np.ones_like(s) if amp is None else amp
    pts = []
    for Fi, wi, ai in zip(F, w, amp):
        c = np.zeros(11)
        c[1] = ai
        pts.append(HarmonicSolution(c, float(wi), float(Fi), 5))
    dF = np.gradient(F, s)
    dw = np.gradient(w, s)
    t = np.column_stack([dw, dF])
    t /= np.linalg.norm(t, axis=1)[:, None]
    return BifurcationBranch("fold", tuple(pts), np.zeros((len(s), 11)), t)


def test_turning_points_synthetic_cubic():
    # F = 0.15 - 0.03 (u^3 - 3u)/2 has a minimum 0.12 at u=-1... mirrored: max 0.18 at u=+1?
    u = np.linspace(-2, 2, 401)
    F = 0.15 + 0.015 * (u**3 - 3 * u)
    w = 1.5 + 0.5 * u
    br = _synthetic(u, F, w)
    tps = turning_points(br)
    assert [tp.kind for tp in tps] == ["max", "min"]
    assert tps[0].F == pytest.approx(0.18, abs=1e-6)
    assert tps[1].F == pytest.approx(0.12, abs=1e-6)
    ev = find_drc_events(br)
    assert ev.F_merge == pytest.approx(0.18, abs=1e-6)
    assert ev.F_appear == pytest.approx(0.12, abs=1e-6)
    assert ev.appear.omega == pytest.approx(2.0, abs=1e-3)


def test_monotone_branch_has_no_events():
    u = np.linspace(0, 1, 50)
    br = _synthetic(u, 0.1 + 0.1 * u, 1 + u)
    assert turning_points(br) == []
    assert not find_drc_events(br).present
    on = find_qp_onset(br)
    assert on.at_boundary and on.F == pytest.approx(0.1)


def test_qp_onset_parabola_exact():
    u = np.linspace(-1, 1.3, 37)
    w = 1.1 + 0.1 * u
    br = _synthetic(u, 0.095 + 0.2 * (w - 1.1137) ** 2, w)
    on = find_qp_onset(br)
    assert not on.at_boundary
    assert on.F == pytest.approx(0.095, abs=1e-12)
    assert on.omega == pytest.approx(1.1137, abs=1e-9)


def test_duffing_cusp_matches_dense_tracking():
    br = continue_branch(DUFFING, 0.1, (0.5, 3.0))
    seed = [b for b in detect_bifurcations(br, DUFFING) if b.kind == "fold"][0]
    cfg = TrackingConfig(F_range=(0.005, 0.2), omega_range=(0.5, 3.0))
    coarse = track_fold(seed, DUFFING, cfg)
    tps = turning_points(coarse)
    assert len(tps) == 1 and tps[0].kind == "min"
    fine_cfg = TrackingConfig(F_range=(0.005, 0.2), omega_range=(0.5, 3.0),
                              step=StepConfig(ds=5e-4, ds_min=1e-6, ds_max=1e-3, grow=1.0,
                                              max_points=60000))
    fine = track_fold(seed, DUFFING, fine_cfg)
    assert tps[0].F == pytest.approx(fine.F.min(), abs=1e-4)
    assert tps[0].omega == pytest.approx(fine.omega[np.argmin(fine.F)], abs=1e-2)


@pytest.fixture(scope="module")
def loci(table1_loci):
    return table1_loci


def test_loci_found_and_labelled(loci):
    assert loci.A is not None and loci.B is not None and loci.ns is not None
    assert loci.A.label == "A" and loci.B.label == "B"
    assert loci.A.omega[np.argmin(loci.A.F)] < loci.B.omega[np.argmin(loci.B.F)]
    assert find_drc_events(loci.B).present and not find_drc_events(loci.A).present
    assert not loci.A.truncated and not loci.B.truncated


def test_null_vector_normalized(loci):
    for br in (loci.A, loci.B):
        assert np.max(np.abs(np.linalg.norm(br.vectors, axis=1) - 1.0)) <= 1e-10
    assert np.max(np.abs(np.linalg.norm(loci.ns.vectors, axis=1) - 1.0)) <= 1e-10


def test_ns_kappa_positive(loci):
    k = loci.ns.kappa
    assert np.all(k[1:-1] > 0)


def _interp_omega(br, F):
    out = []
    Fs, w = br.F, br.omega
    for i in range(len(Fs) - 1):
        if (Fs[i] - F) * (Fs[i + 1] - F) < 0:
            u = (F - Fs[i]) / (Fs[i + 1] - Fs[i])
            out.append(w[i] + u * (w[i + 1] - w[i]))
    return out


@pytest.mark.parametrize("label,F_values", [
    ("A", (0.13, 0.15, 0.2, 0.25, 0.28)),
    ("B", (0.10, 0.13, 0.16, 0.2, 0.25)),
])
def test_fold_loci_recheck_by_frequency_continuation(loci, label, F_values):
    br = getattr(loci, label)
    for F in F_values:
        # wide window: at high forcing the jump-down fold lies beyond 3 rad/s
        curves = [continue_branch(TABLE1, F, (0.5, 4.0))]
        drc = find_drc(TABLE1, F, (0.5, 4.0), main=curves[0], seeds=fold_points_at(br, F, TABLE1))
        if drc is not None:
            curves.append(drc)
        brackets = []
        for c in curves:
            for b in detect_bifurcations(c):
                if b.kind == "fold":
                    i, j = b.bracket
                    wa, wb = c.points[i].omega, c.points[j].omega
                    brackets.append((min(wa, wb), max(wa, wb)))
        for w in _interp_omega(br, F):
            gap = min(max(lo - w, w - hi, 0.0) for lo, hi in brackets)
            assert gap <= 1e-3, (label, F, w)


def test_events(loci):
    ev = loci.events
    assert ev.present and ev.F_appear < ev.F_merge
    assert ev.F_appear == pytest.approx(0.12, abs=0.01)
    assert ev.F_merge == pytest.approx(0.18, abs=0.01)


def test_ns_locus_turning_points(loci):
    assert loci.qp_onset.F == pytest.approx(0.095, abs=0.005)
    assert not loci.qp_onset.at_boundary
    kinds = [tp.kind for tp in turning_points(loci.ns)]
    assert "min" in kinds and "max" in kinds


def test_branch_overlap(loci):
    inside = branch_overlap(loci.A, loci.B, np.linspace(0.13, 0.17, 9))
    assert inside.all()
    outside = branch_overlap(loci.A, loci.B, [0.11, 0.19])
    assert not outside.any()
