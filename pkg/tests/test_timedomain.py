import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nltva.continuation import branch_crossings, correct, detect_bifurcations
from nltva.hbm import HarmonicSolution, amplitude
from nltva.model import TABLE1, Forcing, rhs
from nltva.timedomain import (
    LABELS,
    BasinMap,
    ClassifyConfig,
    GridSpec,
    UndefinedRatio,
    basin_area_ratio,
    classify,
    coexisting_solutions,
    compute_basins,
    integrate,
    strobe_state,
    sweep_quasiperiodic,
)

LOW, HIGH = LABELS.index("periodic_low"), LABELS.index("periodic_high")


@pytest.fixture(scope="module")
def sols_20(main_branch, drc_015):
    return coexisting_solutions(TABLE1, 0.15, 2.0, main=main_branch(0.15), drc=drc_015)


@pytest.fixture(scope="module")
def sols_167(main_branch, drc_015):
    return coexisting_solutions(TABLE1, 0.15, 1.67, main=main_branch(0.15), drc=drc_015)


def test_origin_stays_at_rest():
    tr = integrate(TABLE1, Forcing(0.0, 1.0), np.zeros(4), 200.0)
    assert np.all(tr.y == 0.0)


def test_free_decay():
    tr = integrate(TABLE1, Forcing(0.0, 1.0), [1.0, 0.0, 0.5, 0.0], 10 * 2 / TABLE1.c1)
    assert np.max(np.abs(tr.y[-64:])) < 1e-6


@pytest.mark.parametrize("y0", [[0.0, 0.0, 0.0, 0.0], [1.2, -0.3, 0.4, 0.8]])
def test_matches_scipy_reference(y0):
    f = Forcing(0.15, 1.9)
    tr = integrate(TABLE1, f, y0, 100.0, tol=1e-10, n_out=50)
    ref = solve_ivp(lambda t, y: rhs(y, t, TABLE1, f), (0, 100.0), y0, method="DOP853",
                    rtol=1e-12, atol=1e-12, t_eval=tr.t)
    assert np.max(np.abs(tr.y - ref.y.T)) < 1e-6


def test_tolerance_validation():
    with pytest.raises(ValueError):
        integrate(TABLE1, Forcing(0.1, 1.0), np.zeros(4), -1.0)
    with pytest.raises(ValueError):
        integrate(TABLE1, Forcing(0.1, 1.0), [np.nan, 0, 0, 0], 1.0)


@pytest.mark.parametrize("omega", [0.9, 1.0])
def test_steady_state_matches_hbm(main_branch, omega):
    br = main_branch(0.09)
    i = int(np.argmin(np.abs(br.omegas - omega)))
    sol = correct(HarmonicSolution(br.points[i].coeffs, omega, 0.09), TABLE1)
    lab = classify(TABLE1, Forcing(0.09, omega), np.zeros(4))
    assert lab.kind == "periodic_low"
    assert lab.amplitude == pytest.approx(amplitude(sol), rel=1e-3)


def test_strobe_state_is_on_orbit(sols_20):
    low = sols_20[0]
    y = integrate(TABLE1, Forcing(0.15, 2.0), strobe_state(low), 2 * np.pi / 2.0 * 50, n_out=50).y
    np.testing.assert_allclose(y[-1], strobe_state(low), atol=1e-5)


def test_classify_low_and_high(sols_20):
    assert len(sols_20) == 2
    f = Forcing(0.15, 2.0)
    low = classify(TABLE1, f, [0.01, 0.0, 0.0, 0.0], solutions=sols_20)
    high = classify(TABLE1, f, strobe_state(sols_20[1]), solutions=sols_20)
    assert low.kind == "periodic_low" and high.kind == "periodic_high"
    assert high.amplitude == pytest.approx(amplitude(sols_20[1]), rel=1e-3)
    assert low.amplitude == pytest.approx(amplitude(sols_20[0]), rel=1e-3)


def test_classify_quasiperiodic():
    lab = classify(TABLE1, Forcing(0.11, 1.15), np.zeros(4))
    assert lab.kind == "quasiperiodic"


def test_quasiperiodic_sweep(main_branch):
    br = main_branch(0.11)
    ns = sorted(b.omega for b in detect_bifurcations(br, TABLE1) if b.kind == "neimark_sacker")
    mid = 0.5 * (ns[0] + ns[1])
    peaks = br.amplitudes()[(br.omegas > 0.8) & (br.omegas < 1.5)].max()
    for end in ns:
        # walk from the middle of the window towards the NS point
        omegas = end + (mid - end) * np.array([1.0, 0.3, 0.1, 0.03, 0.01, 0.003])
        pts = sweep_quasiperiodic(TABLE1, 0.11, omegas)
        assert len(pts) == len(omegas)
        amps = np.array([a for _, a in pts])
        assert np.all(amps > 0.5 * peaks) and np.all(amps < 1.5 * peaks)
        # the torus shrinks onto the periodic orbit at the NS point
        w, a = pts[-1]
        ref = branch_crossings(br, w)
        assert len(ref) == 1 and a == pytest.approx(ref[0], rel=0.05)


def test_no_quasiperiodic_at_low_forcing():
    assert sweep_quasiperiodic(TABLE1, 0.005, np.linspace(0.9, 1.1, 3)) == []


def test_ratio_identities():
    g = GridSpec((-1, 1), (-1, 1), 4, 4)
    f = Forcing(0.1, 1.0)
    mk = lambda lab: BasinMap(g, lab.astype(np.int8), np.zeros(lab.shape), np.zeros(lab.shape + (4,)), f, "")
    assert basin_area_ratio(mk(np.full((4, 4), LOW))) == 0.0
    checker = np.where((np.add.outer(np.arange(4), np.arange(4)) % 2) == 0, LOW, HIGH)
    assert basin_area_ratio(mk(checker)) == 100.0
    with pytest.raises(UndefinedRatio):
        basin_area_ratio(mk(np.full((4, 4), HIGH)))


def test_unforced_basins_reach_origin():
    b = compute_basins(TABLE1, Forcing(0.0, 1.0), GridSpec((-1, 1), (-1, 1), 5, 5), solutions=[])
    assert np.all(b.labels == LOW)
    assert b.amplitudes.max() < 1e-4


def test_window_must_cover_attractors(sols_20):
    with pytest.raises(ValueError):
        compute_basins(TABLE1, Forcing(0.15, 2.0), GridSpec((-1, 1), (-1, 1), 3, 3),
                       solutions=sols_20)


def test_single_attractor_window(sols_167):
    assert len(sols_167) == 1
    b = compute_basins(TABLE1, Forcing(0.15, 1.67), GridSpec.around(sols_167, n=21),
                       solutions=sols_167)
    assert np.all(b.labels == LOW)
    assert basin_area_ratio(b) == 0.0


@pytest.fixture(scope="module")
def map_20(sols_20):
    return compute_basins(TABLE1, Forcing(0.15, 2.0), GridSpec.around(sols_20, n=101),
                          solutions=sols_20)


def test_two_basins_and_far_drc_basin(map_20):
    c = map_20.counts()
    assert c["periodic_low"] > 0 and c["periodic_high"] > 0
    x, v = map_20.grid.axes()
    X, V = np.meshgrid(x, v)
    r = np.hypot(X, V)
    # the detached curve is reached only from far out
    assert r[map_20.labels == HIGH].min() > 0.25 * r.max()


def test_low_cells_end_near_low_orbit(map_20, sols_20):
    lo, hi = sols_20
    gap = amplitude(hi) - amplitude(lo)
    d = np.linalg.norm(map_20.finals[map_20.labels == LOW] - strobe_state(lo), axis=1)
    assert d.max() <= 0.1 * gap


def test_basins_deterministic(sols_20):
    g = GridSpec.around(sols_20, n=15)
    f = Forcing(0.15, 2.0)
    a = compute_basins(TABLE1, f, g, solutions=sols_20)
    b = compute_basins(TABLE1, f, g, solutions=sols_20, threads=1)
    assert a.config_hash == b.config_hash
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.amplitudes, b.amplitudes) and np.array_equal(a.finals, b.finals)
    r1 = compute_basins(TABLE1, f, g, solutions=sols_20, sampling="random", seed=7)
    r2 = compute_basins(TABLE1, f, g, solutions=sols_20, sampling="random", seed=7)
    assert np.array_equal(r1.labels, r2.labels) and r1.labels.shape == (1, 225)


@pytest.mark.slow
def test_tolerance_robustness(map_20, sols_20):
    tight = compute_basins(TABLE1, Forcing(0.15, 2.0), map_20.grid, ClassifyConfig(tol=1e-10),
                           solutions=sols_20)
    assert np.mean(tight.labels != map_20.labels) <= 0.01


@pytest.mark.slow
def test_grid_convergence(map_20, sols_20):
    fine = compute_basins(TABLE1, Forcing(0.15, 2.0), GridSpec.around(sols_20, n=201),
                          solutions=sols_20)
    assert abs(basin_area_ratio(fine) - basin_area_ratio(map_20)) < 1.0
