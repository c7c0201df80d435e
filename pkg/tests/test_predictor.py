import math

import pytest
from hypothesis import given, settings, strategies as st

from sde_weak_lab.model import cubic_linear, cubic_quadratic
from sde_weak_lab.predictor import (
    family_exponents, format_prediction, moment_caps, predict_order, required_moment,
)

CASE_ONE = {"r": 1.0, "p0_prime": 201.0, "eps_slack": 0.0}
COVERED = ("bs1", "te1", "ts1", "ft1", "bs2", "ts2", "ms2")


def test_problem_meta_feeds_predictor():
    meta = cubic_quadratic(0.1).meta()
    assert meta["r"] == 1 and meta["p0_prime"] == pytest.approx(201)
    assert predict_order(meta, "bs1").q_raw == pytest.approx(math.sqrt(3.25) - 1, abs=1e-4)


def test_case_one_caps():
    assert moment_caps("mt", family_exponents("bs2"), 1, 201).B2 == pytest.approx(195 / 16)
    assert moment_caps("euler", family_exponents("bs1"), 1, 201).B1 == pytest.approx(19.5)


def test_balanced_first_order_g1():
    exps = family_exponents("bs1")
    tau, l1 = exps.tau_l1(0.5)
    assert max(6, (3 * l1 - 1) / tau) == 6
    assert exps.g1(1.0) == 6


@pytest.mark.parametrize("scheme", ["bs1", "ts1", "te1"])
def test_case_one_first_order(scheme):
    pred = predict_order(CASE_ONE, scheme)
    assert pred.B1 == pytest.approx(19.5, abs=1e-9)
    # 6 (q + 1)^2 = B1
    assert pred.q_raw == pytest.approx(math.sqrt(19.5 / 6) - 1, abs=1e-3)
    assert pred.feasible


@pytest.mark.parametrize("scheme", ["bs2", "ts2", "ms2"])
def test_case_one_second_order(scheme):
    pred = predict_order(CASE_ONE, scheme)
    assert pred.B == pytest.approx(12.1875, abs=1e-9)
    # (q + 1)(1 + q/2) = B2 / 10  ->  q^2 + 3q + 2 - B2/5 = 0
    root = (-3 + math.sqrt(9 - 4 * (2 - 12.1875 / 5))) / 2
    assert pred.q_raw == pytest.approx(root, abs=1e-3)
    assert pred.q_integer_note == 0.0


def test_unbounded_monotonicity_saturates():
    meta = cubic_linear().meta()
    bs2 = predict_order(meta, "bs2")
    assert bs2.q_raw == 2 and bs2.varkappa == 60 and bs2.threshold == 60
    bs1 = predict_order(meta, "bs1")
    assert bs1.q_raw == 1 and bs1.varkappa == 24
    for scheme in COVERED:
        assert predict_order(meta, scheme).q_raw == family_exponents(scheme).ceiling


def test_required_moment_examples():
    assert required_moment("mt", 2, 1, 0, 2, 1.0).varkappa == 60
    assert required_moment("euler", 1, 1, 0, 2, 1.0).varkappa == 24
    r = required_moment("euler", 0.5, 1, 0, 1.5, 3.0)
    assert r.threshold == r.varkappa
    r = required_moment("euler", 0.5, 1, 2, 1.5, 3.0)
    assert r.threshold == max(4, 3 * 2 + r.varkappa)
    with pytest.raises(ValueError):
        required_moment("euler", -1, 1, 0, 1, 1.0)


def test_beta_fixed_point_is_consistent():
    caps = moment_caps("mt", family_exponents("bs2"), 1, 201)
    req = required_moment("mt", 0.1, 1, 2, 1.05, caps.beta)
    assert req.threshold == pytest.approx(max(4, caps.beta(req.threshold) * 2 + req.varkappa),
                                          rel=1e-10)


def test_fully_tamed_denominator_seven():
    caps = moment_caps("euler", family_exponents("ft1"), 1, 201)
    assert caps.G1 == 6 and caps.B1 == pytest.approx((201 - 6) / 7)


def test_fully_tamed_formula_gives_24():
    pred = predict_order(cubic_linear().meta(), "ft1")
    assert pred.q_raw == 1 and pred.varkappa == 24


@pytest.mark.parametrize("scheme", ["ms1", "em", "mt"])
def test_uncovered_schemes_report_infeasible(scheme):
    pred = predict_order(CASE_ONE, scheme)
    assert not pred.feasible and pred.q_raw == 0 and pred.note


def test_bs2_square_case_one_infeasible():
    pred = predict_order(CASE_ONE, "bs2", kappa=2)
    assert not pred.feasible and pred.q_raw == 0


@pytest.mark.parametrize("scheme", COVERED)
def test_monotone_in_p0_prime(scheme):
    qs = [predict_order({"r": 1, "p0_prime": p}, scheme).q_raw for p in (9, 50, 201, 1e6)]
    assert all(b >= a - 1e-9 for a, b in zip(qs, qs[1:]))


@settings(max_examples=40, deadline=None)
@given(scheme=st.sampled_from(COVERED), p0=st.floats(8, 2000), kappa=st.sampled_from([0, 1, 2]))
def test_prediction_invariants(scheme, p0, kappa):
    pred = predict_order({"r": 1, "p0_prime": p0}, scheme, kappa)
    exps = family_exponents(scheme)
    assert 0 <= pred.q_raw <= exps.ceiling
    if pred.feasible:
        assert pred.B >= pred.threshold - 1e-9
        (t,) = pred.chosen_free.values()
        assert exps.q0(t) >= pred.q_raw - 1e-9
        assert pred.threshold >= max(2 * kappa, pred.varkappa) - 1e-9


def test_unknown_scheme():
    with pytest.raises(ValueError):
        family_exponents("rk4")


def test_format_prediction_lists_columns():
    text = format_prediction(predict_order(CASE_ONE, "bs2"))
    for key in ("G1", "B2", "beta", "varkappa", "threshold", "q_raw", "varsigma"):
        assert key in text
