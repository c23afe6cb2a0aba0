import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from oracles import anova_by_hand, studentized_range_cdf_quad
from kinemetrics.errors import DegenerateVariance, TooFewGroups, TooFewObservations
from kinemetrics.stats import (
    GroupSample,
    aggregate_participants,
    f_sf,
    one_way_anova,
    studentized_range_cdf,
    studentized_range_ppf,
    tukey_hsd,
)

TOY = {"A": [1.0, 2.0, 3.0], "B": [2.0, 3.0, 4.0], "C": [3.0, 4.0, 5.0]}

group_values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=12)
group_maps = st.lists(group_values, min_size=2, max_size=5).map(
    lambda gs: {f"g{i}": v for i, v in enumerate(gs)}
).filter(lambda g: sum(np.var(v) for v in g.values()) > 1e-6)


# --- aggregation ---------------------------------------------------------------


def test_aggregate_examples():
    out = aggregate_participants([
        GroupSample("Student", "p1", (2.0, 4.0, 6.0)),
        GroupSample("Expert", "p2", (7.0,)),
    ])
    assert out == [GroupSample("Student", "p1", (4.0,)), GroupSample("Expert", "p2", (7.0,))]


def test_aggregate_pools_split_rows(rng):
    samples = []
    direct = {}
    for p in range(30):
        group = ("Student", "Junior", "Senior", "Expert")[p % 4]
        vals = rng.normal(size=int(rng.integers(1, 4)))
        direct[(group, f"p{p}")] = sum(vals) / len(vals)
        for v in vals:  # one row per trial, as read back from a report
            samples.append(GroupSample(group, f"p{p}", (float(v),)))
    out = aggregate_participants(samples)
    assert len(out) == 30
    for s in out:
        assert s.values[0] == pytest.approx(direct[(s.group, s.participant)], rel=1e-12, abs=1e-15)


# --- ANOVA ---------------------------------------------------------------------


def test_toy_anova():
    t = one_way_anova(TOY)
    assert (t.ss_between, t.ss_within) == pytest.approx((6.0, 6.0))
    assert (t.df_between, t.df_within) == (2, 6)
    assert t.F == pytest.approx(3.0, rel=1e-12)
    assert t.p == pytest.approx(sps.f.sf(3.0, 2, 6), rel=1e-10)


def test_identical_groups():
    t = one_way_anova({"A": [1.0, 2.0], "B": [1.0, 2.0], "C": [2.0, 1.0]})
    assert t.F == 0 and t.p == 1


def test_constant_identical_groups():
    t = one_way_anova({"A": [3.0, 3.0], "B": [3.0, 3.0]})
    assert (t.F, t.p) == (0.0, 1.0)


def test_degenerate_variance():
    with pytest.raises(DegenerateVariance) as exc:
        one_way_anova({"A": [1.0, 1.0], "B": [2.0, 2.0]})
    assert exc.value.table.p == 0.0


def test_too_few():
    with pytest.raises(TooFewGroups):
        one_way_anova({"A": [1.0, 2.0]})
    with pytest.raises(TooFewGroups):
        one_way_anova({"A": [1.0, 2.0], "B": []})
    with pytest.raises(TooFewObservations):
        one_way_anova({"A": [1.0, 2.0], "B": [3.0]})


def test_group_order_follows_cohort_labels():
    t = one_way_anova({"Expert": [1, 2], "Student": [3, 4], "Senior": [5, 6]})
    assert t.groups == ("Student", "Senior", "Expert")


def test_two_groups_f_is_t_squared(rng):
    for _ in range(50):
        a = rng.normal(size=int(rng.integers(2, 15)))
        b = rng.normal(0.5, size=int(rng.integers(2, 15)))
        ref = sps.ttest_ind(a, b, equal_var=True)
        t = one_way_anova({"A": a, "B": b})
        assert t.F == pytest.approx(ref.statistic**2, rel=1e-9)
        assert t.p == pytest.approx(ref.pvalue, rel=1e-8)


def test_matches_hand_computation(rng):
    for _ in range(50):
        groups = [list(rng.normal(rng.normal(), size=int(rng.integers(2, 8)))) for _ in range(int(rng.integers(2, 5)))]
        t = one_way_anova({f"g{i}": g for i, g in enumerate(groups)})
        ref = anova_by_hand(groups)
        assert t.F == pytest.approx(ref["F"], rel=1e-9)
        assert (t.df_between, t.df_within) == (ref["dfb"], ref["dfw"])


@given(group_maps)
def test_ss_decomposition(g):
    t = one_way_anova(g)
    assert t.ss_between + t.ss_within == pytest.approx(t.ss_total, rel=1e-9, abs=1e-9)
    assert t.F >= 0 and 0 <= t.p <= 1


@settings(max_examples=50)
@given(group_maps, st.floats(-100, 100), st.floats(0.01, 100))
def test_f_invariant_to_affine_change(g, shift, scale):
    base = one_way_anova(g)
    moved = one_way_anova({k: [scale * x + shift for x in v] for k, v in g.items()})
    assert moved.F == pytest.approx(base.F, rel=1e-6, abs=1e-9)


def test_f_sf_matches_reference_distribution():
    for F, d1, d2 in [(0.5, 1, 1), (3.0, 2, 6), (10.0, 3, 40), (1.2, 7, 3)]:
        assert f_sf(F, d1, d2) == pytest.approx(sps.f.sf(F, d1, d2), rel=1e-10)
    assert f_sf(0, 2, 3) == 1.0


# --- studentized range --------------------------------------------------------------


def test_cdf_limits():
    assert studentized_range_cdf(0, 3, 6) == 0.0
    for k in (2, 3, 10):
        for df in (8, 20, 120):
            assert studentized_range_cdf(100, k, df) >= 1 - 1e-9
    # with only 6 error df the upper tail at q = 100 is still about 1.34e-9
    assert 1 - studentized_range_cdf(100, 3, 6) == pytest.approx(sps.studentized_range.sf(100, 3, 6), rel=1e-2)


def test_cdf_at_tabulated_critical_value():
    assert studentized_range_cdf(4.339, 3, 6) == pytest.approx(0.95, abs=1e-4)
    assert studentized_range_ppf(0.95, 3, 6) == pytest.approx(4.339, abs=1e-3)


@pytest.mark.parametrize(
    "k, df, q95",
    [(2, 10, 3.151), (3, 6, 4.339), (4, 20, 3.958), (5, 60, 3.977), (4, 3, 6.825)],
)
def test_ppf_table_values(k, df, q95):
    assert studentized_range_ppf(0.95, k, df) == pytest.approx(q95, abs=2e-3)


@pytest.mark.parametrize("q, k, df", [(0.5, 2, 1), (2.0, 3, 6), (3.5, 4, 12), (5.0, 4, 26), (1.0, 6, 100)])
def test_cdf_matches_quadrature_oracle(q, k, df):
    assert studentized_range_cdf(q, k, df) == pytest.approx(studentized_range_cdf_quad(q, k, df), abs=1e-6)


def test_cdf_monotone_in_q_and_df():
    qs = np.linspace(0, 8, 41)
    for k in (2, 3, 5):
        vals = [studentized_range_cdf(q, k, 6) for q in qs]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
        by_df = [studentized_range_cdf(3.0, k, df) for df in (2, 5, 10, 30, 120)]
        assert all(a <= b + 1e-12 for a, b in zip(by_df, by_df[1:]))


def test_ppf_rejects_bad_probability():
    with pytest.raises(ValueError):
        studentized_range_ppf(1.0, 3, 6)


# --- Tukey --------------------------------------------------------------------------


def test_tukey_toy_matches_oracle():
    table = one_way_anova(TOY)
    for c in tukey_hsd(TOY, table):
        oracle = 1 - studentized_range_cdf_quad(c.q_stat, 3, 6)
        assert c.p_adj == pytest.approx(oracle, abs=1e-4)
    ac = next(c for c in tukey_hsd(TOY, table) if c.pair == ("A", "C"))
    assert ac.mean_diff == -2.0
    assert ac.q_stat == pytest.approx(2 / math.sqrt(1 / 3), rel=1e-12)


def test_tukey_identical_means():
    (c,) = tukey_hsd({"A": [1.0, 3.0], "B": [3.0, 1.0]})
    assert c.mean_diff == 0
    assert c.p_adj == pytest.approx(1.0, abs=1e-9)
    assert c.ci_low == pytest.approx(-c.ci_high)


def test_tukey_degenerate_propagates():
    with pytest.raises(DegenerateVariance):
        tukey_hsd({"A": [1.0, 1.0], "B": [2.0, 2.0]})


def test_tukey_against_reference_implementation(rng):
    for _ in range(10):
        groups = [rng.normal(m, size=int(rng.integers(3, 9))) for m in rng.normal(scale=1.5, size=4)]
        ref = sps.tukey_hsd(*groups)
        ci = ref.confidence_interval(0.95)
        got = tukey_hsd({f"g{i}": g for i, g in enumerate(groups)})
        for c in got:
            i, j = int(c.group_a[1]), int(c.group_b[1])
            assert c.mean_diff == pytest.approx(ref.statistic[i, j], rel=1e-12)
            assert c.p_adj == pytest.approx(ref.pvalue[i, j], abs=1e-5)
            assert c.ci_low == pytest.approx(ci.low[i, j], abs=1e-5)
            assert c.ci_high == pytest.approx(ci.high[i, j], abs=1e-5)


@settings(max_examples=50)
@given(group_maps)
def test_tukey_ci_consistency(g):
    n = min(len(v) for v in g.values())
    g = {k: v[:n] for k, v in g.items()}  # equal group sizes
    try:
        comps = tukey_hsd(g)
    except DegenerateVariance:
        return
    for c in comps:
        assert c.ci_low <= c.mean_diff <= c.ci_high
        assert 0 <= c.p_adj <= 1
        excludes_zero = c.ci_low > 0 or c.ci_high < 0
        if abs(c.p_adj - 0.05) > 1e-6:
            assert excludes_zero == (c.p_adj < 0.05)


def test_tukey_p_monotone_in_difference():
    base = np.array([-1.0, 0.0, 1.0])
    ps = []
    for d in np.linspace(0, 5, 11):
        comps = tukey_hsd({"A": base, "B": base + d, "C": base + 10})
        ps.append(next(c for c in comps if c.pair == ("A", "B")).p_adj)
    assert all(a >= b - 1e-12 for a, b in zip(ps, ps[1:]))


def test_alpha_widens_interval():
    narrow = tukey_hsd(TOY, alpha=0.10)[0]
    wide = tukey_hsd(TOY, alpha=0.01)[0]
    assert wide.ci_high - wide.ci_low > narrow.ci_high - narrow.ci_low
