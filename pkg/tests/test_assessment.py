import itertools
import math
from collections import Counter
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gradeswap.assessment import (
    FIVE_BAND_QUOTA,
    LADDER,
    GradeQuota,
    LetterGrade,
    NormalSpec,
    ScoreSheet,
    WeightScheme,
    allocate_curve,
    apply_floor,
    bucket_counts,
    entity_weight,
    final_weight,
    midterm_weight,
    normal_pdf,
    progress_ratio,
    quotas_from_boundaries,
    structural_constant,
    ttl_combine,
    volatility,
)
from gradeswap.errors import InvalidInput


def mp_midterm(x):
    """Unsimplified midterm payoff evaluated at 40 digits."""
    with mpmath.workdps(40):
        c = mpmath.power(10, mpmath.sqrt(mpmath.log(mpmath.exp(4)))) / mpmath.sqrt(mpmath.log(mpmath.exp(25)))
        return float(min(15, max(0, c - x)))


# -- letter grades -----------------------------------------------------------


def test_ladder_rank_and_points_agree():
    ranks = [g.rank for g in LADDER]
    points = [g.gpa_points for g in LADDER]
    assert ranks == sorted(ranks, reverse=True)
    assert points == sorted(points, reverse=True)
    assert len(set(points)) == len(points) == 11
    assert LetterGrade.A_PLUS.gpa_points == Fraction("4.3")


@pytest.mark.parametrize("text,grade", [("A+", LetterGrade.A_PLUS), ("b-", LetterGrade.B_MINUS), ("C−", LetterGrade.C_MINUS), (" F ", LetterGrade.F)])
def test_parse(text, grade):
    assert LetterGrade.parse(text) is grade


def test_parse_rejects_unknown():
    with pytest.raises(InvalidInput):
        LetterGrade.parse("E")


# -- weights -----------------------------------------------------------------


def test_structural_constant():
    assert structural_constant() == 20.0
    with mpmath.workdps(50):
        oracle = mpmath.power(10, mpmath.sqrt(mpmath.log(mpmath.exp(4)))) / mpmath.sqrt(mpmath.log(mpmath.exp(25)))
    assert abs(structural_constant() - float(oracle)) < 1e-12


@pytest.mark.parametrize("x,m,f", [(10, 10.0, 30.0), (0, 15.0, 25.0), (30, 0.0, 40.0)])
def test_weights_spot_values(x, m, f):
    assert midterm_weight(x) == m == mp_midterm(x)
    assert final_weight(x) == f


def test_negative_volatility_rejected():
    with pytest.raises(InvalidInput):
        midterm_weight(-0.1)
    with pytest.raises(InvalidInput):
        final_weight(-1)


@given(st.floats(min_value=0, max_value=1e6, allow_nan=False))
def test_weights_share_forty(x):
    m = midterm_weight(x)
    assert 0 <= m <= 15
    assert m + final_weight(x) == 40
    assert m == mp_midterm(x)


def test_weight_scheme():
    w = WeightScheme.from_volatility(10)
    assert (w.midterm, w.final) == (10, 30)
    with pytest.raises(InvalidInput):
        WeightScheme(0, 16, 24)


def test_volatility():
    assert volatility(ScoreSheet({"a": 10, "b": 10, "c": 10})) == 0
    assert volatility(ScoreSheet({"a": 0, "b": 20})) == 10
    assert volatility(ScoreSheet({"a": 55})) == 0
    with pytest.raises(InvalidInput):
        volatility(ScoreSheet({}))


def test_score_sheet_range():
    with pytest.raises(InvalidInput):
        ScoreSheet({"a": 101})
    with pytest.raises(InvalidInput):
        ScoreSheet.from_pairs([("a", 1), ("a", 2)])


def test_entity_weight():
    assert entity_weight([3.0] * 6) == 15
    assert entity_weight([0, 20, 0, 20]) == 10
    assert entity_weight([-25, 25]) == 0
    with pytest.raises(InvalidInput):
        entity_weight([])


# -- curve -------------------------------------------------------------------


def test_five_band_counts():
    sheet = ScoreSheet({f"s{i}": 50 + i for i in range(10)})
    grades = allocate_curve(sheet, FIVE_BAND_QUOTA)
    assert Counter(g.label for g in grades.values()) == {"A": 2, "B": 3, "C": 3, "D": 2}
    assert grades["s9"] is LetterGrade.A and grades["s0"] is LetterGrade.D


def test_single_student():
    q = GradeQuota.from_percentages({"A": 100})
    assert allocate_curve(ScoreSheet({"x": 3}), q) == {"x": LetterGrade.A}


def test_largest_remainder_prefers_higher_grade():
    q = GradeQuota.from_percentages({"A": 50, "B": 50})
    assert bucket_counts(3, q) == [2, 1]
    thirds = GradeQuota(((LetterGrade.A, Fraction(1, 3)), (LetterGrade.B, Fraction(1, 3)), (LetterGrade.C, Fraction(1, 3))))
    assert bucket_counts(4, thirds) == [2, 1, 1]


def brute_force_curve(scores, quota):
    """Best tie-respecting assignment: least total displacement of the bucket
    boundaries (cumulative counts against cumulative targets), then the
    highest grades in score order."""
    groups = sorted(set(scores.values()), reverse=True)
    targets = bucket_counts(len(scores), quota)
    k = len(targets)
    best = None
    for assign in itertools.product(range(k), repeat=len(groups)):
        if list(assign) != sorted(assign):
            continue
        counts = [0] * k
        for grp, b in zip(groups, assign):
            counts[b] += sum(1 for v in scores.values() if v == grp)
        dev = sum(abs(c - t) for c, t in zip(itertools.accumulate(counts), itertools.accumulate(targets)))
        key = (dev, assign)
        if best is None or key < best:
            best = key
    bands = quota.bands
    by_group = dict(zip(groups, best[1]))
    return {sid: bands[by_group[v]] for sid, v in scores.items()}


def test_tie_group_inside_bucket():
    # 80/80 sit wholly in B under 25/50/25: no promotion needed
    scores = {"p": 90, "q": 80, "r": 80, "s": 10}
    quota = GradeQuota.from_percentages({"A": 25, "B": 50, "C": 25})
    got = allocate_curve(ScoreSheet(scores), quota)
    assert [got[k].label for k in "pqrs"] == ["A", "B", "B", "C"]
    assert got == brute_force_curve(scores, quota)


def test_tie_group_straddling_boundary_is_promoted():
    scores = {"p": 90, "q": 80, "r": 80, "s": 10}
    quota = GradeQuota.from_percentages({"A": 50, "B": 25, "C": 25})
    got = allocate_curve(ScoreSheet(scores), quota)
    assert [got[k].label for k in "pqrs"] == ["A", "A", "A", "C"]
    assert got == brute_force_curve(scores, quota)


def test_quota_validation():
    with pytest.raises(InvalidInput):
        GradeQuota.from_percentages({"A": 50, "B": 40})
    with pytest.raises(InvalidInput):
        GradeQuota.from_percentages({"B": 50, "A": 50})
    with pytest.raises(InvalidInput):
        GradeQuota.from_percentages({"A": 110, "B": -10})
    with pytest.raises(InvalidInput):
        allocate_curve(ScoreSheet({}), FIVE_BAND_QUOTA)


score_sheets = st.dictionaries(
    st.text(alphabet="abcdefgh", min_size=1, max_size=3),
    st.integers(min_value=0, max_value=20).map(float),
    min_size=1,
    max_size=25,
)


@settings(max_examples=200)
@given(score_sheets)
def test_curve_invariants(scores):
    grades = allocate_curve(ScoreSheet(scores), FIVE_BAND_QUOTA)
    assert set(grades) == set(scores)
    for a, b in itertools.combinations(scores, 2):
        if scores[a] == scores[b]:
            assert grades[a] is grades[b]
        elif scores[a] > scores[b]:
            assert grades[a] >= grades[b]


def test_distinct_divisible_counts_exact():
    q = GradeQuota.from_percentages({"A": 10, "B": 40, "C": 50})
    grades = allocate_curve(ScoreSheet({str(i): i for i in range(20)}), q)
    assert Counter(g.label for g in grades.values()) == {"A": 2, "B": 8, "C": 10}


# -- normal quotas -------------------------------------------------------------


def test_normal_pdf_values():
    assert normal_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-15)
    assert normal_pdf(1.0) == pytest.approx(0.24197072451914337, abs=1e-15)
    assert normal_pdf(72, NormalSpec(70, 5)) == normal_pdf(68, NormalSpec(70, 5))
    with pytest.raises(InvalidInput):
        NormalSpec(0, 0)


@pytest.mark.parametrize("mu,sigma", [(0, 1), (70, 12), (-3, 0.25)])
def test_normal_pdf_integrates_to_one(mu, sigma):
    spec = NormalSpec(mu, sigma)
    total, _ = integrate.quad(normal_pdf, mu - 8 * sigma, mu + 8 * sigma, args=(spec,), epsabs=1e-12)
    assert abs(total - 1) < 1e-6


def test_quotas_uniform():
    q = quotas_from_boundaries(5, uniform=True)
    assert [f for _, f in q.buckets] == [Fraction(1, 5)] * 5
    assert q.bands == (LetterGrade.A, LetterGrade.B, LetterGrade.C, LetterGrade.D, LetterGrade.F)


def test_quotas_one_sigma():
    q = quotas_from_boundaries(boundaries=[-1, 1])
    fracs = [float(f) for _, f in q.buckets]
    oracle = [stats.norm.sf(1), stats.norm.cdf(1) - stats.norm.cdf(-1), stats.norm.cdf(-1)]
    assert fracs == pytest.approx(oracle, abs=1e-9)
    assert fracs == pytest.approx([0.1587, 0.6827, 0.1587], abs=1e-4)


def test_quotas_single_boundary():
    q = quotas_from_boundaries(2, [0.0])
    assert [float(f) for _, f in q.buckets] == pytest.approx([0.5, 0.5], abs=1e-9)


@given(st.lists(st.floats(min_value=-4, max_value=4), min_size=1, max_size=6, unique=True))
@settings(max_examples=50, deadline=None)
def test_quotas_sum_to_one(cuts):
    cuts = sorted(cuts)
    if any(b - a < 1e-6 for a, b in zip(cuts, cuts[1:])):
        return
    q = quotas_from_boundaries(boundaries=cuts)
    assert abs(sum(float(f) for _, f in q.buckets) - 1) < 1e-9
    edges = [-math.inf, *cuts, math.inf]
    oracle = [stats.norm.cdf(hi) - stats.norm.cdf(lo) for lo, hi in zip(edges, edges[1:])][::-1]
    assert [float(f) for _, f in q.buckets] == pytest.approx(oracle, abs=1e-9)


def test_quotas_reject_non_increasing():
    with pytest.raises(InvalidInput):
        quotas_from_boundaries(boundaries=[1, 1])
    with pytest.raises(InvalidInput):
        quotas_from_boundaries(boundaries=[1, 0])


# -- floors, progress, ttl -------------------------------------------------------


def test_apply_floor():
    assert apply_floor(LetterGrade.F, True) is LetterGrade.C_PLUS
    assert apply_floor(LetterGrade.A, True) is LetterGrade.A
    assert apply_floor(LetterGrade.D, False) is LetterGrade.D
    assert apply_floor(LetterGrade.C_PLUS, True) is LetterGrade.C_PLUS


def test_progress_ratio():
    assert progress_ratio(0, 1) == math.inf
    assert progress_ratio(2, 3) == 50
    assert progress_ratio(0, 0) == 0
    assert progress_ratio(0, 1) > 1e308
    with pytest.raises(InvalidInput):
        progress_ratio(-1, 2)


@given(st.floats(min_value=1e-300, max_value=1e300))
def test_progress_properties(a):
    assert progress_ratio(0, a) == math.inf
    assert progress_ratio(a, a) == 0


def test_ttl_combine():
    assert ttl_combine(80, 60, 50) == 70
    assert ttl_combine(100, 0, 0) == 0
    assert ttl_combine(70, 90, midterm_weight(10)) == pytest.approx(0.1 * 70 + 0.9 * 90, abs=1e-12)
    with pytest.raises(InvalidInput):
        ttl_combine(101, 0, 0)
