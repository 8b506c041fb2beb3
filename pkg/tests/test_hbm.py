import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nltva.continuation import continue_branch, correct
from nltva.hbm import (
    AliasingError,
    HarmonicSolution,
    HBMSystem,
    amplitude,
    as_system,
    hill_exponents,
    jacobian,
    linear_receptance,
    linear_solution,
    peak_amplitudes,
    residual,
    synthesize,
)
from nltva.model import TABLE1

LINEAR = TABLE1.with_(knl1=0.0, knl2=0.0)


def test_zero_state_zero_forcing():
    assert np.all(residual(np.zeros(22), 1.0, 0.0, TABLE1) == 0.0)


def test_zero_state_residual_is_forcing():
    r = residual(np.zeros(22), 1.3, 0.2, TABLE1)
    expect = np.zeros(22)
    expect[1] = -0.2
    np.testing.assert_array_equal(r, expect)


@pytest.mark.parametrize("omega", [0.6, 0.95, 1.05, 1.4])
def test_linear_receptance_is_exact_solution(omega):
    z = linear_solution(LINEAR, omega, 0.1, NH=1)
    r = residual(z, omega, 0.1, LINEAR, NH=1)
    assert np.max(np.abs(r)) < 1e-12


def test_receptance_independent_of_solver():
    # static limit and hand-derived 2x2 inverse
    H = linear_receptance(LINEAR, 1e-9)
    k1, k2 = LINEAR.k1, LINEAR.k2
    np.testing.assert_allclose(H.real, [1 / k1, 1 / k1], rtol=1e-8)
    w = 0.8
    p = LINEAR
    a = p.k1 + p.k2 - w**2 * p.m1 + 1j * w * (p.c1 + p.c2)
    b = -(p.k2 + 1j * w * p.c2)
    d = p.k2 - w**2 * p.m2 + 1j * w * p.c2
    det = a * d - b * b
    np.testing.assert_allclose(linear_receptance(p, w), [d / det, -b / det], rtol=1e-13)


def test_aliasing_rejected():
    with pytest.raises(AliasingError):
        as_system(TABLE1, 5, 20)
    as_system(TABLE1, 5, 21)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_finite_difference(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=0.5, size=22)
    w = rng.uniform(0.5, 3.0)
    F = rng.uniform(0.0, 0.3)
    Jz, Jw, JF = jacobian(z, w, F, TABLE1)
    h = 1e-6
    num = np.empty_like(Jz)
    for j in range(22):
        e = np.zeros(22)
        e[j] = h
        num[:, j] = (residual(z + e, w, F, TABLE1) - residual(z - e, w, F, TABLE1)) / (2 * h)
    assert np.max(np.abs(num - Jz)) <= 1e-5 * np.max(np.abs(Jz))
    nw = (residual(z, w + h, F, TABLE1) - residual(z, w - h, F, TABLE1)) / (2 * h)
    assert np.max(np.abs(nw - Jw)) <= 1e-5 * max(np.max(np.abs(Jw)), 1.0)
    nF = (residual(z, w, F + h, TABLE1) - residual(z, w, F - h, TABLE1)) / (2 * h)
    np.testing.assert_allclose(nF, JF, atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([21, 32, 64, 128, 257]))
def test_aft_exact_above_floor(seed, Nt):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=22)
    r_ref = residual(z, 1.1, 0.1, TABLE1, Nt=512)
    r = residual(z, 1.1, 0.1, TABLE1, Nt=Nt)
    assert np.max(np.abs(r - r_ref)) < 1e-13 * max(1.0, np.max(np.abs(r_ref)))


def test_synthesize_and_amplitude():
    c = np.zeros(22)
    c[1] = 0.7
    sol = HarmonicSolution(c, 1.0, 0.1)
    assert amplitude(sol) == pytest.approx(0.7, rel=1e-14)
    t, X = synthesize(HarmonicSolution(np.zeros(22), 1.0, 0.0))
    assert np.all(X == 0) and X.shape == (256, 2)
    c[1], c[3], c[2] = 0.3, 0.1, 0.2
    t, X = synthesize(HarmonicSolution(c, 2.0, 0.1), Nt=4096)
    direct = 0.3 * np.cos(2 * t) + 0.2 * np.sin(2 * t) + 0.1 * np.cos(4 * t)
    np.testing.assert_allclose(X[:, 0], direct, atol=1e-14)
    assert peak_amplitudes(c, 5)[0] == pytest.approx(np.abs(direct).max(), rel=1e-6)


def test_hill_linear_oracle():
    """Hill exponents of a linear system equal the eigenvalues of the free system."""
    sol = correct(HarmonicSolution(linear_solution(LINEAR, 1.0, 0.1), 1.0, 0.1), LINEAR)
    sol = hill_exponents(sol, LINEAR)
    p = LINEAR
    M, C, K = p.mass_matrix(), p.damping_matrix(), p.stiffness_matrix()
    A = np.block([[np.zeros((2, 2)), np.eye(2)],
                  [-np.linalg.solve(M, K), -np.linalg.solve(M, C)]])
    ev = np.linalg.eigvals(A)
    key = lambda x: (round(x.real, 9), round(abs(x.imag), 9))
    got = sorted(sol.floquet, key=key)
    ref = sorted(ev, key=key)
    np.testing.assert_allclose(np.sort(np.real(got)), np.sort(np.real(ref)), atol=1e-9)
    np.testing.assert_allclose(np.sort(np.abs(np.imag(got))), np.sort(np.abs(np.imag(ref))),
                               atol=1e-9)
    assert sol.stable


def _point_at(branch, omega):
    i = int(np.argmin(np.abs(branch.omegas - omega)))
    return correct(HarmonicSolution(branch.points[i].coeffs, omega, branch.F), TABLE1)


def test_stable_point_f009(main_branch):
    sol = hill_exponents(_point_at(main_branch(0.09), 1.0), TABLE1)
    assert len(sol.floquet) == 4
    assert np.all(sol.floquet.real < 0) and sol.stable


def test_one_unstable_exponent_between_folds(main_branch):
    from nltva.continuation import detect_bifurcations
    br = main_branch(0.098)
    folds = [b for b in detect_bifurcations(br, TABLE1) if b.kind == "fold"]
    assert len(folds) == 2
    i, j = sorted(f.bracket[1] for f in folds)
    mid = br.points[(i + j) // 2]
    sol = hill_exponents(mid, TABLE1)
    assert int(np.sum(sol.floquet.real > 0)) == 1


def test_harmonic_convergence():
    """First-peak amplitude barely changes when two more harmonics are kept."""
    amps = {}
    for NH in (5, 7):
        br = continue_branch(TABLE1, 0.09, (0.9, 1.05), NH=NH, stability=False)
        i = int(np.argmax(br.amplitudes()))
        amps[NH] = br.amplitudes()[i]
    assert abs(amps[7] - amps[5]) / amps[5] < 1e-3


def test_hill_exponents_nh_agreement(main_branch):
    br = main_branch(0.09)
    for omega in (0.8, 1.0, 1.3, 2.0):
        s5 = hill_exponents(_point_at(br, omega), TABLE1)
        g7 = np.zeros(30)
        for d in range(2):
            g7[d * 15:d * 15 + 11] = s5.dof(d)
        s7 = correct(HarmonicSolution(g7, omega, 0.09, NH=7), TABLE1)
        s7 = hill_exponents(s7, TABLE1)
        assert s5.stable and s7.stable
        a = sorted(s5.floquet, key=lambda x: (x.imag, x.real))
        b = sorted(s7.floquet, key=lambda x: (x.imag, x.real))
        assert np.max(np.abs(np.array(a) - np.array(b))) < 1e-3


def test_generic_system_matches_params():
    s = as_system(TABLE1)
    g = HBMSystem(TABLE1.mass_matrix(), TABLE1.damping_matrix(), TABLE1.stiffness_matrix(),
                  T=[[1, 0], [1, -1]], kn=[TABLE1.knl1, TABLE1.knl2], load=[1, 0])
    z = np.random.default_rng(1).normal(size=22)
    np.testing.assert_allclose(s.residual(z, 1.2, 0.1), g.residual(z, 1.2, 0.1), rtol=1e-14,
                               atol=1e-14)
