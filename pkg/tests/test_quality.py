import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from pcgscreen.core import RunConfig, TooShort
from pcgscreen.quality import (QualityReport, assess_quality, compute_rmssd, compute_zcr, daubechies_filters,
                               dwt_approx3, read_quality_csv, write_quality_csv)
from conftest import heartbeat, make_segment

# reference db4 analysis filters (frozen from an established wavelet library)
DB4_DEC_LO = [-0.010597401785069032, 0.0328830116668852, 0.030841381835560764, -0.18703481171909309,
              -0.027983769416859854, 0.6308807679298589, 0.7148465705529157, 0.2303778133088965]
DB4_DEC_HI = [-0.2303778133088965, 0.7148465705529157, -0.6308807679298589, -0.027983769416859854,
              0.18703481171909309, 0.030841381835560764, -0.0328830116668852, -0.010597401785069032]

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False).filter(lambda v: v == 0 or abs(v) > 1e-100)


def test_db4_filters_match_reference():
    lo, hi = daubechies_filters(4)
    np.testing.assert_allclose(lo, DB4_DEC_LO, rtol=0, atol=1e-14)
    np.testing.assert_allclose(hi, DB4_DEC_HI, rtol=0, atol=1e-14)


@pytest.mark.parametrize("order", range(1, 9))
def test_daubechies_filters_are_orthonormal(order):
    lo, hi = daubechies_filters(order)
    assert lo.size == 2 * order
    assert math.isclose(lo.sum(), math.sqrt(2), abs_tol=1e-12)
    for shift in range(0, lo.size, 2):
        expect = 1.0 if shift == 0 else 0.0
        assert abs(np.dot(lo[shift:], lo[:lo.size - shift]) - expect) < 1e-10
    # vanishing moments of the highpass
    k = np.arange(lo.size)
    for p in range(order):
        assert abs(np.sum(hi * k ** p)) < 1e-6 * max(1, lo.size ** p)


def test_dwt_matches_direct_summation_oracle():
    lo, _ = daubechies_filters(4)
    for seed in range(10):
        x = np.random.default_rng(seed).standard_normal(300)
        ours = dwt_approx3(x).approx3
        ref = oracles.dwt_approx3(x, lo)
        np.testing.assert_allclose(ours, ref, rtol=1e-9, atol=1e-12)


def test_level_lengths():
    dec = dwt_approx3(np.ones(4096))
    lens = [d.size for d in dec.details]
    assert lens == [2051, 1029, 518] and dec.approx3.size == 518


def test_constant_input_scales_by_two_to_the_three_halves():
    dec = dwt_approx3(np.full(4096, 0.7))
    inner = oracles.interior_slice(4096, 8)
    np.testing.assert_allclose(dec.approx3[inner], 0.7 * 2 ** 1.5, rtol=1e-12)
    for d in dec.details:
        assert np.max(np.abs(d)) < 1e-12


def test_zero_input_gives_zero_coefficients():
    dec = dwt_approx3(np.zeros(512))
    assert not dec.approx3.any() and not any(d.any() for d in dec.details)


def test_1khz_sine_lands_in_detail_one():
    x = np.sin(2 * np.pi * 1000 * np.arange(4096) / 4000 + 0.3)
    dec = dwt_approx3(x)
    lo, hi = daubechies_filters(4)
    d1_ref = np.sum(np.square(oracles.dwt_level(list(x), hi)))
    a3_ref = np.sum(np.square(oracles.dwt_approx3(x, lo)))
    assert np.sum(dec.details[0] ** 2) == pytest.approx(d1_ref, rel=1e-9)
    assert np.sum(dec.approx3 ** 2) == pytest.approx(a3_ref, rel=1e-9)
    # fs/4 sits on the half-band edge, yet detail 1 still dominates by >100x
    assert d1_ref > 100 * a3_ref


def test_dwt_needs_enough_samples():
    with pytest.raises(TooShort):
        dwt_approx3(np.ones(63))


# --- indicators --------------------------------------------------------------

def test_worked_indicator_examples():
    assert compute_rmssd([0, 1, 0, 1]) == pytest.approx(1.0, abs=1e-12)
    assert compute_rmssd(np.full(10, 3.3)) == 0.0
    assert compute_zcr([1, -1, 1, -1]) == pytest.approx(1.0, abs=1e-12)
    assert compute_zcr([0, 0, 0]) == 0.0
    assert compute_zcr([0.1, 2, 5]) == 0.0
    # a step off exactly zero counts as a crossing
    assert compute_zcr([0, 1, 1]) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(TooShort):
        compute_rmssd([1.0])
    with pytest.raises(TooShort):
        compute_zcr([])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 200), elements=finite))
def test_zcr_in_unit_interval(x):
    assert 0.0 <= compute_zcr(x) <= 1.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 100), elements=finite), st.floats(1e-3, 1e3))
def test_indicator_scaling(x, s):
    assert compute_zcr(s * x) == compute_zcr(x)
    assert compute_rmssd(s * x) == pytest.approx(s * compute_rmssd(x), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_gate_is_monotone(r, z, rt, zt, drt, dzt):
    rep = QualityReport(r, z, r <= rt and z <= zt, rt, zt)
    if rep.passes(rt, zt):
        assert rep.passes(rt + drt, zt) and rep.passes(rt, zt + dzt)


def test_threshold_is_inclusive():
    rep = QualityReport(0.4, 0.1, True, 0.4, 0.4)
    assert rep.passes(0.4, 0.4) and not rep.passes(0.39, 0.4)


def test_clean_heartbeat_is_suitable():
    seg = make_segment(heartbeat(seed=3)[:20000])
    rep = assess_quality(seg, RunConfig())
    assert rep.suitable and 0 <= rep.rmssd <= 0.4 and rep.zcr <= 0.4


def test_white_noise_is_unsuitable_through_zcr():
    seg = make_segment(np.random.default_rng(0).standard_normal(20000))
    rep = assess_quality(seg, RunConfig())
    assert not rep.suitable and rep.zcr > 0.4


@pytest.mark.parametrize("kind", ["heart", "noise", "murmur"])
def test_maximal_gate_accepts(kind):
    x = {"heart": heartbeat(seed=1), "noise": np.random.default_rng(5).standard_normal(20000),
         "murmur": heartbeat(seed=2, murmur="systolic", noise_snr=0.0)}[kind]
    rep = assess_quality(make_segment(x[:20000]), RunConfig(rmssd_threshold=1.0, zcr_threshold=1.0))
    assert rep.suitable


def test_all_zero_segment_is_unsuitable_with_nan_indicators():
    rep = assess_quality(make_segment(np.zeros(20000)), RunConfig(rmssd_threshold=1.0, zcr_threshold=1.0))
    assert not rep.suitable and math.isnan(rep.rmssd) and math.isnan(rep.zcr)
    assert not rep.passes(1.0, 1.0)


def test_quality_is_scale_invariant():
    x = heartbeat(seed=4)[:20000]
    a = assess_quality(make_segment(x))
    b = assess_quality(make_segment(0.01 * x))
    assert a.rmssd == pytest.approx(b.rmssd, rel=1e-12) and a.zcr == b.zcr


def test_quality_csv_round_trip(tmp_path):
    seg = make_segment(heartbeat(seed=0)[:20000])
    rep = assess_quality(seg)
    write_quality_csv(tmp_path / "q.csv", [(seg, rep)])
    assert read_quality_csv(tmp_path / "q.csv") == {seg.parent_id: (rep.rmssd, rep.zcr)}
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "parent_id,duration_class,rmssd,zcr,suitable"
