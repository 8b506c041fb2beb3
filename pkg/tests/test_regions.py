import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import find_peaks

import nltva.regions as regions
from nltva.hbm import linear_receptance
from nltva.model import TABLE1, Forcing, to_dimensionless
from nltva.regions import (
    PeakRecord,
    RegionBoundary,
    alpha3_loci,
    classify_operation,
    peak_amplitudes,
    reference_system,
    region_sweep,
    sensitivity_envelope,
)
from nltva.tracking import DrcEvents


@pytest.fixture(scope="module")
def events(table1_loci):
    return table1_loci.events


@pytest.mark.parametrize("F,expected", [(0.09, "safe"), (0.15, "unsafe"), (0.19, "unacceptable")])
def test_operation_regions(events, F, expected):
    assert classify_operation(TABLE1, F, events) == expected


def test_operation_rejects_negative_forcing(events):
    with pytest.raises(ValueError):
        classify_operation(TABLE1, -0.1, events)


def test_no_folding_is_always_safe():
    none = DrcEvents(None, None)
    assert {classify_operation(TABLE1, F, none) for F in (0.01, 0.2, 1.0)} == {"safe"}


ORDER = {"safe": 0, "unsafe": 1, "unacceptable": 2}


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.001, 0.5),
       st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_region_ordering_monotone(appear, width, Fs):
    ev = DrcEvents(appear, appear + width)
    Fs = sorted(Fs)
    ranks = [ORDER[classify_operation(TABLE1, F, ev)] for F in Fs]
    assert ranks == sorted(ranks)


def test_linear_limit_peaks():
    w = np.linspace(0.8, 1.2, 40001)
    H = np.array([abs(linear_receptance(TABLE1, x)[0]) for x in w])
    ref = 0.001 * H[find_peaks(H)[0]]
    for variant in ("LTVA", "NLTVA"):
        r = peak_amplitudes(TABLE1, 0.001, variant=variant)
        assert r.first == pytest.approx(ref[0], rel=1e-3)
        assert r.second == pytest.approx(ref[1], rel=1e-3)


def _inequality(r):
    return abs(r.first - r.second) / max(r.first, r.second)


@pytest.mark.parametrize("F", [0.02, 0.04, 0.06])
def test_nltva_equal_peaks_at_moderate_forcing(F):
    assert _inequality(peak_amplitudes(TABLE1, F)) < 0.02


@pytest.mark.parametrize("F", [0.09, 0.12, 0.15])
def test_nltva_peaks_stay_close_up_to_merge(F):
    # equal-peak tuning is an approximation: the gap grows slowly with F
    assert _inequality(peak_amplitudes(TABLE1, F)) < 0.06


@pytest.mark.parametrize("F", [0.03, 0.04])
def test_ltva_peaks_diverge(F):
    lt = _inequality(peak_amplitudes(TABLE1, F, variant="LTVA"))
    nl = _inequality(peak_amplitudes(TABLE1, F))
    assert lt > 0.1 and lt > 5 * nl


def test_peak_record_validation():
    with pytest.raises(ValueError):
        PeakRecord(0.1, 0.2, 0.3, variant="other")
    with pytest.raises(ValueError):
        PeakRecord(0.1, -0.2, 0.3)
    assert PeakRecord(0.1, 0.2, None).worst == 0.2


def test_zero_perturbation_envelope_degenerates():
    (env,) = sensitivity_envelope(TABLE1, [0.05], "c2", 0.0)
    assert env.first == (env.nominal.first, env.nominal.first)
    assert env.second == (env.nominal.second, env.nominal.second)
    with pytest.raises(ValueError):
        sensitivity_envelope(TABLE1, [0.05], "k2", 0.1)


@pytest.mark.parametrize("coef", ["c2", "knl2"])
def test_envelope_contains_nominal(coef):
    for env in sensitivity_envelope(TABLE1, [0.05, 0.11], coef, 0.15):
        assert env.contains(env.nominal)
        assert len(env.records) == 3


def test_stiffer_absorber_trades_peaks():
    nominal = peak_amplitudes(TABLE1, 0.11)
    stiff = peak_amplitudes(TABLE1.with_(knl2=1.15 * TABLE1.knl2), 0.11)
    assert stiff.first > nominal.first
    assert stiff.second < nominal.second


def test_reference_system_maps_forcing_to_alpha3():
    ref = reference_system(0.05)
    for F in (0.01, 0.1, 0.2):
        dp = to_dimensionless(ref, Forcing(F, 1.0))
        assert dp.alpha3 == pytest.approx(F**2, rel=1e-12)
        assert dp.epsilon == pytest.approx(0.05, rel=1e-12)
    with pytest.raises(ValueError):
        reference_system(0.05, p_mu=0.0)


def test_sweep_validation():
    with pytest.raises(ValueError):
        region_sweep("lambda", [1.0])
    with pytest.raises(ValueError):
        region_sweep("epsilon", [])
    with pytest.raises(ValueError):
        region_sweep("epsilon", [-0.01])


def test_failed_sweep_point_is_flagged(monkeypatch):
    calls = []

    def fake(epsilon, p_mu, p_beta, alpha3_range, ns):
        calls.append(epsilon)
        if epsilon == 0.02:
            raise RuntimeError("boom")

        class L:
            events = DrcEvents(0.1 * epsilon, 0.2 * epsilon)
            qp_onset = None
        return L()

    monkeypatch.setattr(regions, "alpha3_loci",
                        lambda alpha3_range, ns, **kw: fake(alpha3_range=alpha3_range, ns=ns, **kw))
    rb = region_sweep("epsilon", [0.01, 0.02, 0.03])
    assert rb.failed == (0.02,) and calls == [0.01, 0.02, 0.03]
    assert np.isnan(rb.alpha3_appear[1])
    # the fake appearance forcing is 0.1 * epsilon, and alpha3 = F**2
    np.testing.assert_allclose(rb.alpha3_appear[[0, 2]], [1e-6, 9e-6], rtol=1e-12)
    x, y = rb.curve("appear")
    assert len(x) == 200 and np.all(np.diff(y) >= 0)


@pytest.fixture(scope="module")
def loci_005():
    return alpha3_loci(0.05, ns=False)


@pytest.mark.slow
def test_dimensional_dimensionless_agreement(events, loci_005):
    to_alpha3 = lambda F: 3 * TABLE1.knl1 * F**2 / (4 * TABLE1.k1**3)
    ev = loci_005.events
    assert ev.F_appear**2 == pytest.approx(to_alpha3(events.F_appear), rel=0.08)
    assert ev.F_merge**2 == pytest.approx(to_alpha3(events.F_merge), rel=0.08)


@pytest.mark.slow
def test_p_beta_sweep_delays_merging():
    rb = region_sweep("p_beta", [0.8, 1.0, 1.1, 1.25], qp=False)
    assert rb.failed == ()
    assert np.all(np.isfinite(rb.alpha3_merge)) and np.all(np.diff(rb.alpha3_merge) > 0)
    assert rb.alpha3_appear[3] > rb.alpha3_appear[1]
    assert np.all(rb.alpha3_appear < rb.alpha3_merge)


@pytest.mark.slow
def test_detached_curve_found_when_its_cusp_is_lower():
    # at p_mu = 1.3 the locus with the turning-point pair has the lower cusp frequency
    loci = alpha3_loci(0.05, 1.3, 1.0, ns=False)
    assert loci.events.present
    assert loci.events.F_appear < loci.events.F_merge
    assert loci.B.omega[np.argmin(loci.B.F)] < loci.A.omega[np.argmin(loci.A.F)]


def test_region_boundary_requires_known_parameter():
    with pytest.raises(ValueError):
        RegionBoundary("gamma", np.array([1.0]), np.array([1.0]), np.array([1.0]), np.array([1.0]))
