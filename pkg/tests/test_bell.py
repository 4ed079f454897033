import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from nu_entangle.bell import (
    REFERENCE_TIMES,
    TERM_NAMES,
    BellTimes,
    EmptyRange,
    GridScanSpec,
    NonPositiveDenominator,
    bell_result,
    bell_terms,
    ch_value,
    find_contamination_minimum,
    h_value,
    scan_h,
    tau_contamination,
)
from nu_entangle.oscillation import Flavor

# frozen from tests/oracles.py
H_NUM = 0.31821320383408824
H_DEN = 0.18622992487465237
CH = 0.13198327895943587
CONTAM_LEFT_AT_TY = 5.441152921659294e-4
CONTAM_RIGHT_AT_TX = 1.8662039026652185e-3

bell_times = st.builds(BellTimes, *(st.floats(0.0, 0.6) for _ in range(4)))


def test_bell_times_validation():
    with pytest.raises(ValueError):
        BellTimes(0.1, -0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        BellTimes(math.nan, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        BellTimes.from_sequence([0.1, 0.2])


def test_reference_point_terms_against_oracle():
    res = h_value(REFERENCE_TIMES)
    assert res.h_numerator == pytest.approx(H_NUM, abs=1e-13)
    assert res.h_denominator == pytest.approx(H_DEN, abs=1e-13)
    assert res.ch == pytest.approx(CH, abs=1e-13)
    assert res.h == pytest.approx(1.71, abs=0.02)
    assert res.violated


def test_reference_point_coarse_targets():
    res = h_value(REFERENCE_TIMES)
    assert res.h_numerator == pytest.approx(0.318213, abs=1e-3)
    assert res.h_denominator == pytest.approx(0.18616, abs=1e-3)
    assert ch_value(REFERENCE_TIMES) == pytest.approx(0.318213 - 0.18616, abs=2e-3)


def test_origin_is_on_the_boundary():
    origin = BellTimes(0, 0, 0, 0)
    assert ch_value(origin) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(NonPositiveDenominator) as info:
        h_value(origin)
    assert info.value.result.h is None
    assert info.value.result.terms["p_l2e_r2mu"] == pytest.approx(0.5)


@given(bell_times)
def test_ch_is_numerator_minus_denominator(bt):
    res = bell_result(bt)
    assert res.ch == pytest.approx(res.h_numerator - res.h_denominator, abs=1e-12)
    for name in TERM_NAMES:
        assert -1e-12 <= res.terms[name] <= 1 + 1e-12


@given(bell_times)
def test_violation_criteria_agree(bt):
    res = bell_result(bt)
    # on the boundary itself both signs are rounding noise
    if res.h_denominator > 0.01 and abs(res.ch) > 1e-12:
        assert (res.h > 1) == (res.ch > 0)


@pytest.mark.parametrize("bt", [REFERENCE_TIMES, BellTimes(0.3, 0.1, 0.2, 0.5), BellTimes(0.01, 0.59, 0.4, 0.02)])
def test_terms_against_direct_evaluation(bt):
    num, den, ch = oracles.hardy(*bt.as_tuple())
    res = bell_result(bt)
    assert res.h_numerator == pytest.approx(num, abs=1e-13)
    assert res.h_denominator == pytest.approx(den, abs=1e-13)
    assert res.ch == pytest.approx(ch, abs=1e-13)


def test_marginal_terms_ignore_infinity_side_time():
    # p_inf_r2mu is taken from the (l2, r2) table, p_l1mu_inf from (l1, r1);
    # moving t_l2 / t_r1 must not change them
    a = bell_terms(0.4, 0.1, 0.2, 0.3)
    b = bell_terms(0.4, 0.55, 0.01, 0.3)
    assert a["p_inf_r2mu"] == pytest.approx(b["p_inf_r2mu"], abs=1e-12)
    assert a["p_l1mu_inf"] == pytest.approx(b["p_l1mu_inf"], abs=1e-12)


def test_result_serialises():
    d = h_value(REFERENCE_TIMES).to_dict()
    assert set(d["terms"]) == set(TERM_NAMES)
    assert d["h_defined"] and d["violation"]


# -- grid scan ---------------------------------------------------------------

def test_scan_shape_contract():
    spec = GridScanSpec(resolution=(2, 2))
    res = scan_h(spec)
    assert res.h.shape == (2, 2)
    buf = io.StringIO()
    res.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "axis1,axis2,h,defined"
    assert len(lines) == 5


def test_scan_flags_undefined_cells():
    spec = GridScanSpec(axes=("t_l1", "t_l2"), base=BellTimes(0, 0, 0, 0),
                        range1=(0.0, 0.1), range2=(0.0, 0.1), resolution=(3, 3))
    res = scan_h(spec)
    assert not res.defined[0, 0]
    assert math.isnan(res.h[0, 0])
    buf = io.StringIO()
    res.to_csv(buf)
    assert "0,0,nan,0" in buf.getvalue().splitlines()


def test_scan_cells_match_pointwise_evaluation():
    spec = GridScanSpec(axes=("t_r2", "t_l1"), range1=(0.1, 0.2), range2=(0.5, 0.6), resolution=(4, 5))
    res = scan_h(spec)
    for i, x in enumerate(res.axis1):
        for j, y in enumerate(res.axis2):
            bt = BellTimes(y, REFERENCE_TIMES.t_l2, REFERENCE_TIMES.t_r1, x)
            assert res.h[i, j] == pytest.approx(h_value(bt).h, abs=1e-12)


def test_scan_contains_reference_point():
    # grids built so the reference (t_l2, t_r1) is a node
    spec = GridScanSpec(range1=(0.0, 2 * REFERENCE_TIMES.t_l2), range2=(0.0, 2 * REFERENCE_TIMES.t_r1),
                        resolution=(41, 41))
    res = scan_h(spec)
    assert res.h[20, 20] == pytest.approx(h_value(REFERENCE_TIMES).h, abs=1e-12)
    assert res.max >= h_value(REFERENCE_TIMES).h - 1e-6


def test_scan_independent_of_workers():
    spec = GridScanSpec(resolution=(70, 30))
    a = scan_h(spec, workers=1, chunk_rows=7)
    b = scan_h(spec, workers=4, chunk_rows=7)
    assert np.array_equal(a.h, b.h, equal_nan=True)


def test_scan_spec_validation():
    with pytest.raises(ValueError):
        GridScanSpec(axes=("t_l1", "t_l1"))
    with pytest.raises(ValueError):
        GridScanSpec(range1=(0.2, 0.1))
    with pytest.raises(ValueError):
        GridScanSpec(resolution=(1, 5))


# -- two-flavor placement ----------------------------------------------------

def test_contamination_values():
    left = tau_contamination("left", REFERENCE_TIMES.t_l1, Flavor.E, 0.02604)
    right = tau_contamination("right", REFERENCE_TIMES.t_r2, Flavor.MU, 0.02568)
    assert left == pytest.approx(CONTAM_LEFT_AT_TY, abs=1e-15)
    assert right == pytest.approx(CONTAM_RIGHT_AT_TX, abs=1e-15)
    assert right <= 5e-3


def test_contamination_equal_time_tau_is_zero():
    for side in ("left", "right"):
        assert tau_contamination(side, 0.3, Flavor.TAU, 0.3) == pytest.approx(0.0, abs=1e-10)


def test_contamination_vectorised():
    t = np.linspace(0.0, 0.1, 11)
    vals = tau_contamination("right", 0.2, "mu", t)
    assert vals.shape == (11,)
    assert vals[3] == tau_contamination("right", 0.2, "mu", t[3])


def test_contamination_minimum_locations():
    t_left, v_left = find_contamination_minimum("left", REFERENCE_TIMES.t_l1, Flavor.E, (0.02, 0.03))
    t_right, v_right = find_contamination_minimum("right", REFERENCE_TIMES.t_r2, Flavor.MU, (0.02, 0.03))
    assert t_left == pytest.approx(0.02604, abs=1e-3)
    assert t_right == pytest.approx(0.02568, abs=1e-3)
    # golden-section result is at least as good as the dense scan
    grid = np.linspace(0.02, 0.03, 10_000)
    assert v_left <= tau_contamination("left", REFERENCE_TIMES.t_l1, Flavor.E, grid).min()
    assert v_right <= tau_contamination("right", REFERENCE_TIMES.t_r2, Flavor.MU, grid).min()


def test_contamination_minimum_degenerate_ranges():
    t, v = find_contamination_minimum("left", 0.5, "e", (0.025, 0.025))
    assert t == 0.025
    assert v == tau_contamination("left", 0.5, "e", 0.025)
    with pytest.raises(EmptyRange):
        find_contamination_minimum("left", 0.5, "e", (0.03, 0.02))


def test_contamination_minimum_is_deterministic():
    a = find_contamination_minimum("right", 0.180264, "mu", (0.0, 0.1))
    b = find_contamination_minimum("right", 0.180264, "mu", (0.0, 0.1))
    assert a == b
