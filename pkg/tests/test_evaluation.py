import json
import random
from decimal import Decimal
from fractions import Fraction

import pytest

from weaklabel.errors import UsageError
from weaklabel.evaluation import (
    AVERAGE,
    DatasetRates,
    EvalPair,
    ModelReport,
    compare_to_expected,
    evaluate_pairs,
    format_reduction_table,
    format_report_table,
    load_eval_pairs,
    load_report,
    order_tags,
    reduction_table,
)
from weaklabel.textmetrics import NormalizationPolicy, round_half_up

from oracles import dp_levenshtein


def pair(uid, ref, pred, tag="SADA"):
    return EvalPair(utterance_id=uid, reference=ref, prediction=pred, dataset_tag=tag)


class TestEvaluatePairs:
    def test_perfect_predictions(self):
        rates = evaluate_pairs([pair("u1", "a b", "a b"), pair("u2", "c d", "c d")])
        assert rates["SADA"].wer_percent == 0
        assert rates["SADA"].cer_percent == 0

    def test_corpus_pooling(self):
        # Two 4-word references, one word error total: pooled WER is 1/8.
        rates = evaluate_pairs([
            pair("u1", "a b c d", "a b c d"),
            pair("u2", "e f g h", "e f x h"),
        ])
        assert rates["SADA"].wer_percent == Fraction(100, 8)
        assert round_half_up(rates["SADA"].wer_percent) == 12.5

    def test_single_pair_cer(self):
        rates = evaluate_pairs([pair("u1", "ab", "ac")])
        assert rates["SADA"].cer_percent == Fraction(50)

    def test_pooling_differs_from_utterance_mean(self):
        # 1/1 on a one-word utterance plus 0/9 on a nine-word one:
        # pooled = 1/10, utterance mean would be 1/2.
        rates = evaluate_pairs([
            pair("u1", "a", "x"),
            pair("u2", "b c d e f g h i j", "b c d e f g h i j"),
        ])
        assert rates["SADA"].wer_percent == Fraction(10)

    def test_permutation_invariant(self):
        rng = random.Random(0)
        pairs = [
            pair(f"u{i}", " ".join(rng.choice("abc") for _ in range(rng.randint(1, 6))),
                 " ".join(rng.choice("abc") for _ in range(rng.randint(0, 6))))
            for i in range(30)
        ]
        baseline = evaluate_pairs(pairs)
        shuffled = pairs[:]
        rng.shuffle(shuffled)
        assert evaluate_pairs(shuffled) == baseline

    def test_multiple_datasets_grouped(self):
        rates = evaluate_pairs([
            pair("u1", "a b", "a b", tag="SADA"),
            pair("u2", "a b", "a x", tag="MGB-2"),
        ])
        assert rates["SADA"].wer_percent == 0
        assert rates["MGB-2"].wer_percent == Fraction(50)

    def test_empty_normalized_reference_skipped_with_dataset_omitted(self, caplog):
        rates = evaluate_pairs([
            pair("u1", "...", "anything", tag="broken"),
            pair("u2", "a b", "a b", tag="SADA"),
        ])
        assert "broken" not in rates
        assert "SADA" in rates

    def test_no_pairs_rejected(self):
        with pytest.raises(UsageError):
            evaluate_pairs([])

    def test_matches_oracle_pooling(self):
        rng = random.Random(1)
        pairs, edits, length = [], 0, 0
        for i in range(40):
            ref = [rng.choice("abcd") for _ in range(rng.randint(1, 8))]
            hyp = [rng.choice("abcd") for _ in range(rng.randint(0, 8))]
            pairs.append(pair(f"u{i}", " ".join(ref), " ".join(hyp)))
            edits += dp_levenshtein(ref, hyp)
            length += len(ref)
        rates = evaluate_pairs(pairs, NormalizationPolicy())
        assert rates["SADA"].wer_percent == Fraction(100 * edits, length)


WER_BASELINE = {
    "SADA": "47.26", "Common Voice": "10.60", "MASC (clean)": "24.12",
    "MASC (noisy)": "35.64", "Casablanca": "71.13", "MGB-2": "19.69",
}
WER_OURS = {
    "SADA": "27.71", "Common Voice": "10.42", "MASC (clean)": "21.74",
    "MASC (noisy)": "28.08", "Casablanca": "60.04", "MGB-2": "12.10",
}
CER_BASELINE = {
    "SADA": "22.54", "Common Voice": "3.05", "MASC (clean)": "5.63",
    "MASC (noisy)": "11.02", "Casablanca": "30.5", "MGB-2": "7.46",
}
CER_OURS = {
    "SADA": "11.65", "Common Voice": "3.21", "MASC (clean)": "5.80",
    "MASC (noisy)": "8.88", "Casablanca": "25.51", "MGB-2": "5.27",
}


def leaderboard_reports():
    baseline = ModelReport(
        model_name="baseline",
        rates={
            tag: DatasetRates(
                wer_percent=Fraction(Decimal(WER_BASELINE[tag])),
                cer_percent=Fraction(Decimal(CER_BASELINE[tag])),
            )
            for tag in WER_BASELINE
        },
    )
    ours = ModelReport(
        model_name="ours",
        rates={
            tag: DatasetRates(
                wer_percent=Fraction(Decimal(WER_OURS[tag])),
                cer_percent=Fraction(Decimal(CER_OURS[tag])),
            )
            for tag in WER_OURS
        },
    )
    return baseline, ours


class TestModelReport:
    def test_average_is_column_mean(self):
        baseline, _ = leaderboard_reports()
        expected = sum((Fraction(Decimal(v)) for v in WER_BASELINE.values()), Fraction(0)) / 6
        assert baseline.average_wer == expected
        assert baseline.average_wer == Fraction(Decimal("34.74"))

    def test_rounded_average_recomputable_from_row(self):
        baseline, ours = leaderboard_reports()
        for report in (baseline, ours):
            emitted = report.to_dict()
            cells = [emitted["datasets"][t]["wer"] for t in report.tags]
            assert abs(sum(cells) / len(cells) - emitted["average"]["wer"]) <= 0.005 + 1e-9

    def test_json_round_trip(self, tmp_path):
        _, ours = leaderboard_reports()
        path = tmp_path / "report.json"
        path.write_text(json.dumps(ours.to_dict()), encoding="utf-8")
        back = load_report(path)
        assert back.model_name == "ours"
        assert back.rates["SADA"].wer_percent == Fraction(Decimal("27.71"))

    def test_order_tags_canonical_then_appearance(self):
        got = order_tags(["zeta", "MGB-2", "SADA", "alpha"])
        assert got == ["SADA", "MGB-2", "zeta", "alpha"]


class TestReductionTable:
    def test_identical_reports_all_zero(self):
        _, ours = leaderboard_reports()
        table = reduction_table(ours, ours)
        assert all(v == 0 for v in table.werr.values())
        assert all(v == 0 for v in table.cerr.values())

    def test_average_uses_average_rates_not_mean_of_reductions(self):
        baseline, ours = leaderboard_reports()
        table = reduction_table(baseline, ours)
        expected = 100 * (baseline.average_wer - ours.average_wer) / baseline.average_wer
        assert table.werr[AVERAGE] == expected
        mean_of_cells = sum(
            (table.werr[t] for t in table.tags), Fraction(0)
        ) / len(table.tags)
        assert table.werr[AVERAGE] != mean_of_cells

    def test_consistent_cells_match_published_values(self):
        baseline, ours = leaderboard_reports()
        table = reduction_table(baseline, ours)
        assert abs(float(table.werr["SADA"]) - 41.36) < 0.05
        assert abs(float(table.cerr["SADA"]) - 48.31) < 0.05
        assert abs(float(table.werr["Common Voice"]) - 1.69) < 0.05
        assert abs(float(table.cerr["Common Voice"]) - (-5.24)) < 0.05
        assert abs(float(table.werr[AVERAGE]) - 23.19) < 0.05
        assert abs(float(table.cerr[AVERAGE]) - 24.78) < 0.05

    def test_column_mismatch_rejected(self):
        baseline, ours = leaderboard_reports()
        smaller = ModelReport(model_name="b", rates={"SADA": baseline.rates["SADA"]})
        with pytest.raises(UsageError):
            reduction_table(smaller, ours)

    def test_compare_to_expected_flags_mismatches(self):
        baseline, ours = leaderboard_reports()
        table = reduction_table(baseline, ours)
        diffs = compare_to_expected(
            table,
            expected_werr={"SADA": 41.36, "MGB-2": 25.58, "Casablanca": 5.84},
            expected_cerr={"SADA": 48.31, "Casablanca": 6.10},
        )
        by_cell = {(d.metric, d.tag): d for d in diffs}
        assert by_cell[("werr", "SADA")].matched
        assert by_cell[("cerr", "SADA")].matched
        assert not by_cell[("werr", "MGB-2")].matched
        assert not by_cell[("werr", "Casablanca")].matched
        assert not by_cell[("cerr", "Casablanca")].matched

    def test_unknown_expected_column_rejected(self):
        baseline, ours = leaderboard_reports()
        table = reduction_table(baseline, ours)
        with pytest.raises(UsageError):
            compare_to_expected(table, expected_werr={"Nope": 1.0}, expected_cerr={})


class TestFormatting:
    def test_report_table_columns_in_order(self):
        _, ours = leaderboard_reports()
        text = format_report_table(ours)
        header = text.splitlines()[0]
        positions = [header.index(t) for t in ("SADA", "Common Voice", "MASC (clean)",
                                               "MASC (noisy)", "Casablanca", "MGB-2", "Average")]
        assert positions == sorted(positions)

    def test_reduction_table_formats_rounded_values(self):
        baseline, ours = leaderboard_reports()
        text = format_reduction_table(reduction_table(baseline, ours))
        assert "41.37" in text  # SADA WERR, half-up rounding of 41.3669
        assert "WERR" in text and "CERR" in text

    def test_eval_pairs_file_loader(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        rows = [
            {"utterance_id": "u1", "reference": "a b", "prediction": "a b", "dataset_tag": "SADA"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
        assert load_eval_pairs(path) == [pair("u1", "a b", "a b")]
