import random
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flourishsem.datamodel import CensusAreaId, CountyId, LabelRecord, ValidationError
from flourishsem.indicators import (
    DailyAreaCell, DerivationRule, IndicatorMatrix, RecodingScheme, aggregate_county,
    aggregate_daily, build_indicators, derive, load_dictionary, merge_cells, month_periods,
    normalize, read_indicators, recode, screen_variance, write_indicators,
)
from oracles import brute_force_indicators

DAY = date(2016, 3, 1)
AREA = CensusAreaId("01001020100")


def rec(label, tweet="t", day=DAY, area=AREA, question="happiness"):
    return LabelRecord(tweet, day, area, question, label)


@pytest.mark.parametrize("label, value", [
    ("high", 1.0), ("medium", 0.5), ("not_present", 0.0), ("low", -1.0),
])
def test_recode(label, value):
    assert recode(label) == value


def test_scheme_validation():
    with pytest.raises(ValidationError):
        RecodingScheme({"low": -1, "medium": 0.5, "high": 1, "not_present": 0.1})
    with pytest.raises(ValidationError):
        RecodingScheme({"low": -2, "medium": 0.5, "high": 1, "not_present": 0})


@pytest.mark.parametrize("labels, total, n", [
    (["low", "high"], 0.0, 2),
    (["not_present", "not_present"], 0.0, 0),
    (["high", "medium", "not_present"], 1.5, 2),
])
def test_aggregate_daily_examples(labels, total, n):
    cells = aggregate_daily([rec(l, tweet=str(i)) for i, l in enumerate(labels)])
    (cell,) = cells.values()
    assert cell.sum == total and cell.related_count == n


def test_aggregate_county_examples():
    a2 = CensusAreaId("01001020200")
    cells = [DailyAreaCell(AREA, DAY, "q", 0.5, 1), DailyAreaCell(a2, DAY, "q", -0.5, 1)]
    sums = aggregate_county(cells)
    assert sums.totals[(CountyId("01001"), "q")] == (0.0, 2)
    days = [DailyAreaCell(AREA, date(2016, 3, d), "q", 1.0, 1) for d in (1, 2, 3)]
    assert aggregate_county(days).totals[(CountyId("01001"), "q")] == (3.0, 3)
    # period filter
    assert aggregate_county(days, (date(2016, 3, 2), date(2016, 3, 2))).totals[(CountyId("01001"), "q")] == (1.0, 1)


def test_twelve_record_fixture_matches_oracle():
    b = CensusAreaId("48201100000")
    labels = ["high", "low", "medium", "not_present", "high", "high",
              "low", "medium", "medium", "not_present", "low", "high"]
    records = [rec(l, tweet=str(i), area=AREA if i % 2 else b, question="q" + str(i % 3),
                   day=date(2014, 1, 1 + i % 4)) for i, l in enumerate(labels)]
    m = build_indicators(records)
    oracle = brute_force_indicators(records)
    for (fips, q), (val, n) in oracle.items():
        i = m.counties.index(CountyId(fips))
        j = m.columns.index(q)
        assert m.values[i, j] == val and m.support[i, j] == n


def test_normalize_examples():
    from flourishsem.indicators import CountySums
    c1, c2, c3 = CountyId("01001"), CountyId("01003"), CountyId("01005")
    m = normalize(CountySums({(c1, "q"): (3.0, 3), (c2, "q"): (0.0, 0), (c3, "q"): (1.5, 2)},
                             (date(2013, 1, 1), date(2023, 6, 30))))
    assert m.values[0, 0] == 1.0
    assert np.isnan(m.values[1, 0]) and m.support[1, 0] == 0
    assert m.values[2, 0] == 0.75


def _single(name, vals):
    vals = np.asarray(vals, dtype=float)[:, None]
    counties = tuple(CountyId(f"{i + 1:05d}") for i in range(len(vals)))
    return IndicatorMatrix(counties, (name,), vals, np.where(np.isfinite(vals), 5, 0))


def test_derive_examples():
    m = derive(_single("fearfuture", [0.4, np.nan]), [DerivationRule("future_sec", "fearfuture")])
    assert m.columns == ("fearfuture", "future_sec")
    assert m.column("future_sec")[0] == -0.4
    assert np.isnan(m.column("future_sec")[1]) and m.support[1, 1] == 0
    m = derive(_single("finworry", [-1.0]), [DerivationRule("fin_sec", "finworry")])
    assert m.column("fin_sec")[0] == 1.0
    with pytest.raises(ValidationError):
        derive(_single("x", [0.1]), [DerivationRule("y", "missing")])
    with pytest.raises(ValidationError):
        DerivationRule("x", "x")


def test_screen_examples():
    vals = np.column_stack([np.full(4, 0.2), [-1, 1, -1, 1]])
    m = IndicatorMatrix(tuple(CountyId(f"0000{i + 1}") for i in range(4)), ("flat", "spread"),
                        vals, np.ones((4, 2), dtype=int))
    kept, dropped = screen_variance(m, 1e-6)
    assert kept.columns == ("spread",) and dropped == ["flat"]
    assert np.array_equal(kept.column("spread"), vals[:, 1])
    with pytest.raises(ValueError):
        screen_variance(m, -1)


def test_dictionary_roster_and_bundled_screen(rng):
    d = load_dictionary()
    assert len(d.questions) == 46
    assert set(d.excluded) == {"immigration", "corruption", "ptsd"}
    assert {(r.target, r.source) for r in d.rules} == {("future_sec", "fearfuture"), ("fin_sec", "finworry")}
    assert len(d.active) == 43 and "future_sec" in d.active and "fearfuture" not in d.active
    # 46 questions where the three excluded ones carry no cross-county signal
    n = 60
    values = rng.uniform(-0.8, 0.8, size=(n, 46))
    for k in d.excluded:
        values[:, d.questions.index(k)] = 0.5
    m = IndicatorMatrix(tuple(CountyId(f"{i + 1:05d}") for i in range(n)), d.questions,
                        values, np.full((n, 46), 10))
    kept, dropped = screen_variance(m)
    assert len(kept.columns) == 43
    assert sorted(dropped) == sorted(d.excluded)


def test_month_periods():
    periods = month_periods((date(2013, 1, 15), date(2013, 3, 10)))
    assert periods == [(date(2013, 1, 15), date(2013, 1, 31)), (date(2013, 2, 1), date(2013, 2, 28)),
                       (date(2013, 3, 1), date(2013, 3, 10))]
    assert len(month_periods()) == 126


def test_indicator_csv_round_trip(tmp_path):
    records = [rec("high", "a"), rec("low", "b", area=CensusAreaId("01003000100")),
               rec("not_present", "c", area=CensusAreaId("01005000100"))]
    m = build_indicators(records)
    path = tmp_path / "ind.csv"
    write_indicators(m, path)
    assert path.read_text().splitlines()[0] == "fips,happiness,happiness__n"
    assert path.read_text().splitlines()[3] == "01005,,0"
    assert read_indicators(path).equals(m)


# --- property tests -------------------------------------------------------

AREAS = [CensusAreaId(g) for g in ("01001000100", "01001000200", "01003000100", "48201000100")]
LABELS = ["low", "medium", "high", "not_present"]
record_lists = st.lists(
    st.tuples(st.sampled_from(AREAS), st.integers(0, 5), st.sampled_from(["q1", "q2", "q3"]),
              st.sampled_from(LABELS)),
    min_size=0, max_size=80,
).map(lambda rows: [LabelRecord(f"t{i}", date(2015, 1, 1 + d), a, q, l)
                    for i, (a, d, q, l) in enumerate(rows)])


@settings(max_examples=150, deadline=None)
@given(record_lists, st.randoms(use_true_random=False))
def test_pipeline_properties(records, rnd):
    m = build_indicators(records)
    # oracle equality
    oracle = brute_force_indicators(records)
    present = {(m.counties[i].fips, m.columns[j])
               for i, j in zip(*np.nonzero(m.support))}
    assert present == set(oracle)
    for (fips, q), (val, n) in oracle.items():
        i, j = m.counties.index(CountyId(fips)), m.columns.index(q)
        assert m.values[i, j] == val and m.support[i, j] == n
    # bounds and missingness
    finite = np.isfinite(m.values)
    assert np.all(np.abs(m.values[finite]) <= 1.0)
    assert np.array_equal(finite, m.support > 0)
    # permutation invariance, bitwise
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert build_indicators(shuffled).equals(m)
    # shard merge
    cut = rnd.randint(0, len(records))
    merged = merge_cells(aggregate_daily(records[:cut]), aggregate_daily(records[cut:]))
    assert normalize(aggregate_county(merged)).equals(m)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1, 1)), min_size=1, max_size=20))
def test_derive_involution(vals):
    vals = [np.nan if v is None else v for v in vals]
    m = _single("a", vals)
    once = derive(m, [DerivationRule("b", "a")])
    twice = derive(once.select(["b"]), [DerivationRule("a", "b")]).select(["a"])
    assert twice.equals(m)
    assert np.array_equal(once.support[:, 0], once.support[:, 1])


def test_large_shuffle_bitwise(rng):
    areas = [CensusAreaId(f"{c:05d}{k:06d}") for c in range(1001, 1061) for k in range(3)]
    records = [LabelRecord(f"t{i}", date(2013, 1, 1 + int(rng.integers(0, 28))), areas[int(rng.integers(len(areas)))],
                           f"q{int(rng.integers(0, 5))}", LABELS[int(rng.integers(0, 4))])
               for i in range(3000)]
    m = build_indicators(records)
    random.Random(5).shuffle(records)
    assert build_indicators(records).equals(m)
