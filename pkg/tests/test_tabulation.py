"""Tabulation model: validation, cumulative statistics, CSV round trips."""

import io

import numpy as np
import pytest

import topshares as ts
from topshares.errors import ParseError
from topshares.tabulation import parse_denominators, parse_tabulations

from conftest import random_tabulation


def simple_tab(**overrides):
    kwargs = dict(
        year=1950,
        brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 160.0),
            ts.IncomeBracket(50.0, 10, 10 * 70.0),
            ts.IncomeBracket(10.0, 35, 35 * 25.0),
        ),
        population=100,
        total_income=5000.0,
    )
    kwargs.update(overrides)
    return ts.Tabulation(**kwargs)


class TestValidate:
    def test_valid_tabulation_has_no_violations(self, table_1920):
        assert ts.validate(table_1920) == []
        assert ts.validate(simple_tab()) == []

    def test_mean_below_threshold_names_bracket(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 160.0),
            ts.IncomeBracket(50.0, 10, 10 * 20.0),  # mean 20 < 50
            ts.IncomeBracket(10.0, 35, 35 * 25.0),
        ))
        violations = ts.validate(tab)
        assert len(violations) == 1
        assert violations[0].code == "mean_below_bracket"
        assert violations[0].bracket == 1

    def test_mean_above_bracket(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 160.0),
            ts.IncomeBracket(50.0, 10, 10 * 120.0),  # mean 120 >= 100
            ts.IncomeBracket(10.0, 35, 35 * 25.0),
        ))
        assert [v.code for v in ts.validate(tab)] == ["mean_above_bracket"]

    def test_equal_thresholds_flagged(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 160.0),
            ts.IncomeBracket(50.0, 10, 10 * 70.0),
            ts.IncomeBracket(50.0, 35, 35 * 25.0),
        ))
        codes = {v.code for v in ts.validate(tab)}
        assert "thresholds_not_strictly_decreasing" in codes

    def test_top_bracket_mean_must_exceed_threshold(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 100.0),  # mean == threshold
            ts.IncomeBracket(50.0, 10, 10 * 70.0),
            ts.IncomeBracket(10.0, 35, 35 * 25.0),
        ))
        assert [v.code for v in ts.validate(tab)] == ["top_mean_not_above_threshold"]

    def test_counts_exceeding_population(self):
        tab = simple_tab(population=40)
        assert [v.code for v in ts.validate(tab)] == ["counts_exceed_population"]

    def test_too_few_brackets_and_bad_denominators(self):
        tab = ts.Tabulation(year=1, brackets=(ts.IncomeBracket(10.0, 1, 20.0),),
                            population=0, total_income=-1.0)
        codes = {v.code for v in ts.validate(tab)}
        assert {"too_few_brackets", "population_not_positive",
                "total_income_not_positive"} <= codes

    def test_empty_bracket_is_allowed(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 160.0),
            ts.IncomeBracket(50.0, 0, 0.0),
            ts.IncomeBracket(10.0, 35, 35 * 25.0),
        ))
        assert ts.validate(tab) == []


class TestCumulate:
    def test_table_1920_top_rows(self, table_1920):
        stats = ts.cumulate(table_1920)
        # highest class: 4 returns, $29,920k -> conditional mean $7.48M
        assert stats.mean_above[0] == pytest.approx(7_480_000.0)
        assert stats.pareto_coefficient[0] == pytest.approx(1.87)
        assert stats.pareto_exponent[0] == pytest.approx(2.149, abs=5e-4)
        assert stats.pareto_coefficient[1] == pytest.approx(1.86, abs=5e-3)
        assert stats.pareto_exponent[1] == pytest.approx(2.158, abs=5e-4)
        assert stats.top_fraction[0] * 100 == pytest.approx(0.00001, abs=5e-6)

    def test_coefficient_two_gives_exponent_two(self):
        # cumulative mean above the bottom threshold exactly twice it
        tab = ts.Tabulation(
            year=1, brackets=(ts.IncomeBracket(100.0, 1, 250.0),
                              ts.IncomeBracket(50.0, 3, 150.0)),
            population=10, total_income=500.0)
        stats = ts.cumulate(tab)
        assert stats.mean_above[1] == pytest.approx(100.0)
        assert stats.pareto_coefficient[1] == pytest.approx(2.0)
        assert stats.pareto_exponent[1] == pytest.approx(2.0)

    def test_income_unit_rescaling(self):
        dollars = simple_tab()
        thousands = simple_tab(
            brackets=tuple(ts.IncomeBracket(b.lower_threshold, b.count,
                                            b.income_sum / 1000.0)
                           for b in dollars.brackets),
            total_income=dollars.total_income / 1000.0, income_unit=1000.0)
        a = ts.cumulate(dollars)
        b = ts.cumulate(thousands)
        np.testing.assert_allclose(b.income_above, a.income_above, rtol=1e-12)
        assert b.total_income == pytest.approx(a.total_income)

    def test_idempotent_bit_identical(self, table_1920):
        s1 = ts.cumulate(table_1920)
        s2 = ts.cumulate(table_1920)
        for name in ("top_fraction", "mean_above", "pareto_coefficient",
                     "pareto_exponent", "bracket_fraction", "bracket_mean",
                     "income_above"):
            assert np.array_equal(getattr(s1, name), getattr(s2, name),
                                  equal_nan=True), name

    def test_exponent_forms_agree(self):
        # a = 1/(1 - t/s) and a = b/(b-1) are the same number
        rng = np.random.default_rng(11)
        for _ in range(20):
            stats = ts.cumulate(random_tabulation(rng))
            alt = 1.0 / (1.0 - stats.thresholds / stats.mean_above)
            np.testing.assert_allclose(stats.pareto_exponent, alt, rtol=1e-12)

    def test_bracket_fractions_sum_to_coverage(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            stats = ts.cumulate(random_tabulation(rng))
            assert stats.bracket_fraction.sum() == pytest.approx(
                stats.covered_fraction, rel=1e-12)

    def test_cumulative_invariants_on_random_tabulations(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            stats = ts.cumulate(random_tabulation(rng))
            assert np.all(np.diff(stats.count_above) > 0)
            assert np.all(np.diff(stats.income_above) > 0)
            assert np.all((stats.top_fraction > 0) & (stats.top_fraction <= 1))
            positive = stats.thresholds > 0
            assert np.all(stats.pareto_coefficient[positive] > 1)
            assert np.all(stats.pareto_exponent[positive] > 1)
            # bracket means sit strictly inside their brackets
            assert np.all(stats.bracket_mean > stats.thresholds)
            assert np.all(stats.bracket_mean[1:] < stats.thresholds[:-1])

    def test_stats_arrays_are_read_only(self, table_1920):
        stats = ts.cumulate(table_1920)
        with pytest.raises(ValueError):
            stats.top_fraction[0] = 0.5

    def test_zero_threshold_gives_nan_pareto_fields(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 5, 5 * 160.0),
            ts.IncomeBracket(50.0, 10, 10 * 70.0),
            ts.IncomeBracket(0.0, 35, 35 * 25.0),
        ))
        stats = ts.cumulate(tab)
        assert np.isnan(stats.pareto_coefficient[-1])
        assert np.isnan(stats.pareto_exponent[-1])

    def test_empty_top_bracket_rejected(self):
        tab = simple_tab(brackets=(
            ts.IncomeBracket(100.0, 0, 0.0),
            ts.IncomeBracket(50.0, 10, 10 * 70.0),
            ts.IncomeBracket(10.0, 35, 35 * 25.0),
        ))
        with pytest.raises(ValueError, match="top bracket is empty"):
            ts.cumulate(tab)

    def test_brackets_normalized_to_descending_order(self):
        ascending = simple_tab(brackets=tuple(reversed(simple_tab().brackets)))
        assert [b.lower_threshold for b in ascending.brackets] == [100.0, 50.0, 10.0]
        np.testing.assert_array_equal(ts.cumulate(ascending).thresholds,
                                      ts.cumulate(simple_tab()).thresholds)


DENOM_CSV = "year,population,total_income,income_unit\n1950,100,5000,1\n"

TAB_CSV = """year,lower_threshold,returns,income_sum
1950,100,5,800
1950,50,10,700
1950,10,35,875
"""


class TestParsing:
    def test_well_formed_three_bracket_csv(self):
        tabs = parse_tabulations(TAB_CSV, parse_denominators(DENOM_CSV))
        assert len(tabs) == 1
        assert tabs[0].num_brackets == 3
        assert tabs[0].population == 100
        assert tabs[0].brackets[0].count == 5

    def test_parse_single_year_helper(self):
        tab = ts.parse_tabulation(TAB_CSV, parse_denominators(DENOM_CSV))
        assert tab.year == 1950

    def test_negative_count_names_line(self):
        bad = TAB_CSV.replace("1950,50,10,700", "1950,50,-10,700")
        with pytest.raises(ParseError, match="line 3"):
            parse_tabulations(bad, parse_denominators(DENOM_CSV))

    def test_ascending_thresholds_accepted_and_reordered(self):
        lines = TAB_CSV.strip().splitlines()
        flipped = "\n".join([lines[0]] + lines[1:][::-1]) + "\n"
        tabs = parse_tabulations(flipped, parse_denominators(DENOM_CSV))
        assert [b.lower_threshold for b in tabs[0].brackets] == [100.0, 50.0, 10.0]

    def test_blank_lines_ignored(self):
        padded = TAB_CSV.replace("1950,50,10,700\n", "1950,50,10,700\n\n  \n")
        tabs = parse_tabulations(padded, parse_denominators(DENOM_CSV))
        assert tabs[0].num_brackets == 3

    def test_missing_denominator_metadata(self):
        with pytest.raises(ParseError, match="missing denominator"):
            parse_tabulations(TAB_CSV, {})

    def test_duplicate_year_in_denominators(self):
        dup = DENOM_CSV + "1950,200,9000,1\n"
        with pytest.raises(ParseError, match="duplicate year"):
            parse_denominators(dup)

    def test_duplicate_bracket_row(self):
        dup = TAB_CSV + "1950,100,5,800\n"
        with pytest.raises(ParseError, match="duplicate bracket"):
            parse_tabulations(dup, parse_denominators(DENOM_CSV))

    def test_malformed_number_names_line(self):
        bad = TAB_CSV.replace("1950,10,35,875", "1950,10,thirty,875")
        with pytest.raises(ParseError, match="line 4"):
            parse_tabulations(bad, parse_denominators(DENOM_CSV))

    def test_invalid_tabulation_reported(self):
        bad = TAB_CSV.replace("1950,50,10,700", "1950,50,10,200")  # mean 20 < 50
        with pytest.raises(ParseError, match="mean_below_bracket"):
            parse_tabulations(bad, parse_denominators(DENOM_CSV))

    def test_custom_column_mapping(self):
        renamed = TAB_CSV.replace("lower_threshold", "threshold")
        tabs = parse_tabulations(renamed, parse_denominators(DENOM_CSV),
                                 columns={"lower_threshold": "threshold"})
        assert tabs[0].num_brackets == 3


class TestRoundTrip:
    def test_serialize_parse_reproduces_numbers_exactly(self):
        rng = np.random.default_rng(5)
        tabs = [random_tabulation(rng) for _ in range(8)]
        years = {}
        for i, tab in enumerate(tabs):  # make years unique
            years[i] = ts.Tabulation(year=1900 + i, brackets=tab.brackets,
                                     population=tab.population,
                                     total_income=tab.total_income,
                                     income_unit=tab.income_unit)
        tabs = list(years.values())
        tab_csv, den_csv = ts.serialize_tabulations(tabs)
        parsed = parse_tabulations(tab_csv, parse_denominators(den_csv))
        assert len(parsed) == len(tabs)
        for orig, back in zip(tabs, parsed):
            assert back.year == orig.year
            assert back.population == orig.population
            assert back.total_income == orig.total_income
            assert back.income_unit == orig.income_unit
            for a, b in zip(orig.brackets, back.brackets):
                assert (a.lower_threshold, a.count, a.income_sum) == \
                       (b.lower_threshold, b.count, b.income_sum)

    def test_parse_preserves_decimal_precision(self):
        den = "year,population,total_income,income_unit\n1950,100,5000.125,1\n"
        tab_csv = ("year,lower_threshold,returns,income_sum\n"
                   "1950,100.0625,5,800.333333333333337\n"
                   "1950,50,10,700\n")
        tab = ts.parse_tabulation(tab_csv, parse_denominators(den))
        assert tab.brackets[0].lower_threshold == 100.0625
        assert tab.brackets[0].income_sum == 800.333333333333337
        assert tab.total_income == 5000.125
