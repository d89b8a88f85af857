"""Tests for Monte Carlo evaluation, confidence intervals and report output."""

import csv
import math

import pytest

from uecct.channel import uncoded_ber
from uecct.decoders import HardDecoder, MlDecoder
from uecct.errors import ConfigError
from uecct.evaluate import (
    CSV_FIELDS,
    ErrorCounts,
    EvalPoint,
    EvalReport,
    binomial_ci,
    compare_decoders,
    monte_carlo,
    neg_ln_ber_table,
    write_csv,
)
from uecct.registry import builtin_code


@pytest.fixture
def hamming():
    return builtin_code("hamming74")


def test_noiseless_regime_has_no_errors(hamming):
    report = monte_carlo(HardDecoder(), hamming, [30.0], min_blocks=500, batch_blocks=128)
    point = report.points[0]
    assert point.ber == 0.0 and point.bler == 0.0
    assert point.neg_ln_ber == math.inf
    assert point.counts.blocks_total == 500
    assert point.counts.bits_total == 500 * 7


def test_hard_decision_ber_matches_uncoded_theory(hamming):
    report = monte_carlo(HardDecoder(), hamming, [3.0], min_blocks=20_000, seed=3, batch_blocks=5000)
    point = report.points[0]
    expected = uncoded_ber(3.0, hamming.rate)
    assert point.ber == pytest.approx(expected, rel=0.05)
    lo, hi = point.ber_ci
    assert lo < point.ber < hi
    assert point.bler >= point.ber


def test_results_reproducible_for_seed_and_workers(hamming):
    a = monte_carlo(HardDecoder(), hamming, [2.0, 4.0], 900, seed=7, batch_blocks=100, workers=3)
    b = monte_carlo(HardDecoder(), hamming, [2.0, 4.0], 900, seed=7, batch_blocks=100, workers=3)
    c = monte_carlo(HardDecoder(), hamming, [2.0, 4.0], 900, seed=8, batch_blocks=100, workers=3)
    assert [p.counts for p in a.points] == [p.counts for p in b.points]
    assert a.points[0].counts.blocks_total == 900
    assert [p.counts for p in a.points] != [p.counts for p in c.points]


def test_invalid_block_counts(hamming):
    with pytest.raises(ConfigError, match="must all be positive"):
        monte_carlo(HardDecoder(), hamming, [4.0], min_blocks=0)


def test_compare_decoders_share_noise(hamming):
    results = compare_decoders([HardDecoder(), MlDecoder()], hamming, 3.0, blocks=2000, seed=1, batch_blocks=500)
    hard, hard_bits = results["hard"]
    ml, ml_bits = results["ml"]
    assert hard_bits.shape == ml_bits.shape == (2000, 7)
    assert ml.counts.block_errors <= hard.counts.block_errors


def test_binomial_ci():
    lo, hi = binomial_ci(0, 100)
    assert lo == 0.0 and 0.0 < hi < 0.05
    lo, hi = binomial_ci(50, 100)
    assert lo < 0.5 < hi
    assert binomial_ci(0, 0) == (0.0, 1.0)


def make_report():
    report = EvalReport(decoder="hard")
    report.points.append(EvalPoint("hamming74", 4.0, ErrorCounts(10, 7000, 9, 1000)))
    report.points.append(EvalPoint("golay24", 4.0, ErrorCounts(0, 24000, 0, 1000)))
    report.points.append(EvalPoint("hamming74", 5.0, ErrorCounts(2, 7000, 2, 1000)))
    return report


def test_aggregates_pool_counts():
    report = make_report()
    assert report.aber(4.0) == pytest.approx(10 / 31000)
    assert report.abler(4.0) == pytest.approx(9 / 2000)
    assert report.aggregate().blocks_total == 3000
    assert report.codes() == ["hamming74", "golay24"]
    assert report.snrs() == [4.0, 5.0]
    assert report.point("golay24", 5.0) is None


def test_write_csv(tmp_path):
    path = write_csv(make_report(), tmp_path / "out" / "eval.csv")
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CSV_FIELDS
    assert rows[0]["code"] == "hamming74"
    assert float(rows[0]["ber"]) == pytest.approx(10 / 7000)
    assert rows[1]["neg_ln_ber"] == "inf"
    assert rows[2]["blocks"] == "1000"


def test_neg_ln_ber_table():
    lines = neg_ln_ber_table(make_report()).splitlines()
    assert lines[0].split() == ["code", "4.00", "5.00"]
    hamming_row = lines[1].split()
    assert hamming_row[0] == "hamming74"
    assert float(hamming_row[1]) == pytest.approx(-math.log(10 / 7000), abs=0.01)
    assert lines[2].split() == ["golay24", "inf", "-"]
    assert lines[3].startswith("ABER")
    assert lines[4].startswith("ABLER")
