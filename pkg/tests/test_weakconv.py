import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import linear_scheme_mean
from sde_weak_lab.model import cubic_linear, cubic_quadratic, drift_only_problem, fhn, linear_problem
from sde_weak_lab.schemes import SchemeConfig, scheme_preset
from sde_weak_lab.weakconv import (
    CSV_HEADER, DivergenceWarning, Moments, TestFunction, UnresolvedError, WeakErrorRow,
    WeakErrorTable, estimate_functional, fit_order, moment_trace, one_step_moment_gap,
    steps_for, weak_error_study,
)


def test_deterministic_path_has_zero_halfwidth():
    est = estimate_functional(drift_only_problem("zero"), scheme_preset("mt"),
                              TestFunction("square"), 1.0, 0.1, 1000, 1, [0.5])
    assert est.mean == 0.25 and est.ci95_halfwidth == 0.0 and est.diverged_count == 0


def test_test_functions():
    x = np.array([[1.0, -2.0], [3.0, 0.5]])
    assert TestFunction("square")(x).tolist() == [10.0, 4.25]
    assert TestFunction("identity_coord", 1)(x).tolist() == [3.0, 0.5]
    np.testing.assert_allclose(TestFunction("cos")(x), np.cos([1.0, -2.0]))
    assert [TestFunction(n).kappa for n in ("cosine", "identity_coord", "square")] == [0, 1, 2]
    with pytest.raises(ValueError):
        TestFunction("sin")


def test_linear_mean_within_ci():
    a, b, x0, T, h = -0.5, 0.4, 1.0, 1.0, 0.1
    est = estimate_functional(linear_problem(a, b), scheme_preset("em"),
                              TestFunction("identity_coord"), T, h, 400_000, 3, [x0])
    assert abs(est.mean - linear_scheme_mean(x0, a, h, 10)) <= 4 * est.ci95_halfwidth


def test_ci_coverage_linear_gaussian():
    a, b, x0, T, h = -0.5, 0.4, 1.0, 0.5, 0.1
    target = linear_scheme_mean(x0, a, h, 5)
    hits = 0
    for seed in range(200):
        est = estimate_functional(linear_problem(a, b), scheme_preset("em"),
                                  TestFunction("identity_coord"), T, h, 2000, seed, [x0],
                                  threads=1)
        hits += abs(est.mean - target) <= est.ci95_halfwidth
    assert hits >= 186  # at least 93%


def test_estimate_independent_of_thread_count():
    args = (fhn(), scheme_preset("ms2"), TestFunction("identity_coord"), 0.5, 0.1, 50_000, 9,
            [0.8, 0.8])
    a = estimate_functional(*args, threads=1)
    b = estimate_functional(*args, threads=3)
    assert (a.mean, a.ci95_halfwidth) == (b.mean, b.ci95_halfwidth)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(1, 59))
def test_moments_merge_matches_direct(values, cut):
    v = np.array(values)
    cut = min(cut, len(v) - 1)
    merged = Moments.of(v[:cut]).merge(Moments.of(v[cut:]))
    direct = Moments.of(v)
    assert merged.n == direct.n
    assert merged.mean == pytest.approx(direct.mean, rel=1e-12, abs=1e-9)
    assert merged.m2 == pytest.approx(direct.m2, rel=1e-9, abs=1e-6)


def test_steps_for_adjusts_h():
    assert steps_for(1.0, 0.3) == (3, 1.0 / 3)
    assert steps_for(2.0, 0.05)[0] == 40


def _rows(hs, errs, hw=0.0):
    return [WeakErrorRow(h, 10, e, hw, 0.0, e, None, 0) for h, e in zip(hs, errs)]


def test_rates_and_sorting_on_synthetic_table():
    hs = [0.05, 0.2, 0.1]
    t = WeakErrorTable(_rows(hs, [3 * h ** 2 for h in hs]))
    assert [r.h for r in t.rows] == [0.2, 0.1, 0.05]
    assert t.rows[0].rate is None
    for r in t.rows[1:]:
        assert r.rate == pytest.approx(2.0, abs=1e-12)
    errs = [1e-2, 4e-3, 3e-3]
    t = WeakErrorTable(_rows([0.4, 0.2, 0.1], errs))
    assert t.rows[1].rate == math.log(4e-3 / 1e-2) / math.log(0.5)


def test_fit_order_exact_power_law():
    hs = [0.2, 0.1, 0.05, 0.025]
    fit = fit_order(WeakErrorTable(_rows(hs, [0.7 * h ** 2 for h in hs])))
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(0.7), abs=1e-12)


def test_fit_order_needs_resolved_rows():
    t = WeakErrorTable(_rows([0.2, 0.1, 0.05], [1e-3, 5e-4, 2e-4], hw=1e-3))
    assert not any(r.resolved for r in t.rows)
    with pytest.raises(UnresolvedError):
        fit_order(t)


def test_csv_format():
    t = WeakErrorTable(_rows([0.1, 0.2], [1e-3, 4e-3]),
                       meta={"scheme": "bs2", "problem": "p", "phi": "square"})
    rows = list(csv.reader(io.StringIO(t.to_csv())))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[1][:4] == ["bs2", "p", "square", "0.2"] and rows[1][9] == ""
    assert float(rows[2][9]) == pytest.approx(2.0)
    lines = t.loglog_data().strip().splitlines()
    assert [float(v) for v in lines[0].split()] == pytest.approx([math.log10(0.2),
                                                                 math.log10(4e-3)])


def test_small_m_study_flags_unresolved_rows():
    p = cubic_quadratic(0.1)
    t = weak_error_study(p, scheme_preset("ts1"), TestFunction("cosine"), 1.0,
                         [2 ** -5, 2 ** -6, 2 ** -7], 1000, 2 ** -8, 1000, 1, [0.1])
    assert not all(r.resolved for r in t.rows)
    assert all(r.ci95_halfwidth > 0 for r in t.rows)


def test_study_argument_checks():
    p = cubic_linear()
    with pytest.raises(ValueError):
        weak_error_study(p, scheme_preset("em"), TestFunction("x"), 1.0, [0.1], 100, 0.1, 100,
                         0, [0.5])
    with pytest.raises(ValueError):
        weak_error_study(p, scheme_preset("em"), TestFunction("x"), 1.0, [0.1], 100, 0.03, 100,
                         0, [0.5], coupling="common")
    with pytest.raises(ValueError):
        estimate_functional(p, scheme_preset("em"), TestFunction("x"), 1.0, 0.1, 1, 0, [0.5])


def test_common_and_independent_agree_statistically():
    p = cubic_linear()
    kw = dict(problem=p, cfg=scheme_preset("bs2"), phi=TestFunction("square"), T=1.0,
              h_list=[0.25, 0.125], M=100_000, h_ref=1 / 32, M_ref=100_000, seed=4, x0=[0.5])
    ind = weak_error_study(**kw)
    com = weak_error_study(**kw, coupling="common")
    for a, b in zip(ind.rows, com.rows):
        diff = (a.estimate - a.reference) - (b.estimate - b.reference)
        assert abs(diff) <= 4 * math.hypot(a.ci95_halfwidth, b.ci95_halfwidth)
        assert b.ci95_halfwidth < a.ci95_halfwidth
    assert com.meta["coupling"] == "common"


def test_common_study_thread_invariant():
    kw = dict(problem=fhn(), cfg=scheme_preset("ts2"), phi=TestFunction("x"), T=0.5,
              h_list=[0.25, 0.125], M=40_000, h_ref=1 / 32, M_ref=0, seed=2, x0=[0.8, 0.8],
              coupling="common")
    a = weak_error_study(**kw, threads=1).to_csv()
    b = weak_error_study(**kw, threads=4).to_csv()
    assert a == b


def test_divergence_is_excluded_and_warned():
    with pytest.warns(DivergenceWarning):
        est = estimate_functional(cubic_quadratic(0.5), scheme_preset("em"),
                                  TestFunction("square"), 1.0, 2 ** -4, 2000, 1, [7.0])
    assert est.diverged_count > 0
    assert est.count == 2000 - est.diverged_count
    assert math.isnan(est.mean) or math.isfinite(est.mean)


def test_moment_trace_infinite_after_divergence():
    tr = moment_trace(cubic_quadratic(0.5), scheme_preset("em"), 2, 1.0, 2 ** -4, 2000, 1, [7.0])
    assert tr.diverged_count > 0 and math.isinf(tr.sup_over_n)
    first = next(i for i, v in enumerate(tr.per_step) if math.isinf(v))
    assert all(math.isinf(v) for v in tr.per_step[first:])
    assert tr.per_step[0] == pytest.approx(49.0)


def test_moment_trace_stable_for_bs2():
    sups = []
    for k in (4, 5, 6):
        tr = moment_trace(cubic_quadratic(0.5), scheme_preset("bs2"), 2, 1.0, 2.0 ** -k, 10_000,
                          5, [0.1])
        assert tr.diverged_count == 0 and math.isfinite(tr.sup_over_n)
        assert len(tr.per_step) == 2 ** k + 1
        sups.append(tr.sup_over_n)
    assert max(sups) <= 1.2 * min(sups)


def test_moment_trace_dissipative_nonincreasing():
    tr = moment_trace(drift_only_problem("dissipative"), scheme_preset("ts1"), 2, 1.0, 0.01, 10,
                      0, [1.0])
    assert all(b <= a for a, b in zip(tr.per_step, tr.per_step[1:]))
    assert tr.sup_over_n == 1.0


def test_one_step_gap_zero_problem():
    for s in (1, 2):
        g = one_step_moment_gap(drift_only_problem("zero"), scheme_preset("bs2"), [0.3], 0.1, s,
                                1000, 0)
        assert g.max_abs == 0.0


def test_one_step_gap_index_layout():
    g = one_step_moment_gap(fhn(), scheme_preset("ms2"), [0.8, 0.8], 0.05, 2, 2000, 0,
                            substeps=4)
    assert g.indices == [(0, 0), (0, 1), (1, 1)]
    assert g.gap.shape == (3,) and np.all(g.ci95 >= 0)
    with pytest.raises(ValueError):
        one_step_moment_gap(fhn(), scheme_preset("ms2"), [0.8, 0.8], 0.05, 3, 10, 0)


def test_one_step_gap_matches_proxy_identity():
    # proxy equal to the scheme at one substep: the gap vanishes exactly
    g = one_step_moment_gap(cubic_linear(), scheme_preset("mt"), [0.5], 0.05, 2, 5000, 1,
                            substeps=1, proxy=scheme_preset("mt"))
    assert g.max_abs == 0.0


def test_bs2_scaled_estimate_close_to_fine_reference():
    # bias of h=0.004 against h_ref=0.001 is far below the cos-functional scale
    p = cubic_linear()
    t = weak_error_study(p, scheme_preset("bs2"), TestFunction("cosine"), 2.0, [0.004], 20_000,
                         0.001, 0, 3, [0.5], coupling="common")
    assert t.rows[0].abs_error < 1e-4


def test_identity_kinds_usable():
    est = estimate_functional(cubic_linear(), SchemeConfig("modified_mt"), TestFunction("cos"),
                              1.0, 0.1, 100, 0, [0.5])
    assert math.isfinite(est.mean)
