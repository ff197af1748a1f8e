"""Leaderboard-style evaluation: per-dataset WER/CER and reduction tables.

Rates are corpus-pooled — total edit distance over total reference length
per dataset — not means of per-utterance rates. Everything is carried as
exact rationals and rounded half-up to two decimals only when a report is
emitted; comparisons always use unrounded values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .errors import UsageError, ValidationError
from .textmetrics import (
    NormalizationPolicy,
    STRICT_POLICY,
    UnitKind,
    levenshtein,
    normalize,
    rate_reduction,
    round_half_up,
)

logger = logging.getLogger(__name__)

#: Canonical column order for report tables; unknown tags follow, as seen.
DATASET_COLUMNS = (
    "SADA",
    "Common Voice",
    "MASC (clean)",
    "MASC (noisy)",
    "Casablanca",
    "MGB-2",
)

AVERAGE = "Average"


@dataclass(frozen=True)
class EvalPair:
    utterance_id: str
    reference: str
    prediction: str
    dataset_tag: str


def load_eval_pairs(path) -> list[EvalPair]:
    """Eval pair file: JSONL {utterance_id, reference, prediction, dataset_tag}."""
    pairs = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    EvalPair(
                        utterance_id=obj["utterance_id"],
                        reference=obj["reference"],
                        prediction=obj["prediction"],
                        dataset_tag=obj["dataset_tag"],
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{line_number}: bad eval pair: {exc}") from exc
    return pairs


@dataclass(frozen=True)
class DatasetRates:
    """Corpus-pooled rates for one dataset, as exact percent fractions."""

    wer_percent: Fraction
    cer_percent: Fraction


def evaluate_pairs(
    pairs: Sequence[EvalPair], normalization: NormalizationPolicy = STRICT_POLICY
) -> dict[str, DatasetRates]:
    """Pool edit distances over reference lengths per dataset tag.

    Pairs whose reference normalizes to empty text violate the pair
    invariant; they are skipped with a warning, and a dataset left with no
    usable pairs is omitted (with a warning) rather than reported as 0/0.
    """
    if not pairs:
        raise UsageError("no evaluation pairs given")
    edits: dict[str, list[int]] = {}
    order: list[str] = []
    for pair in pairs:
        if pair.dataset_tag not in order:
            order.append(pair.dataset_tag)
        ref_words = normalize(pair.reference, normalization, UnitKind.WORD)
        if len(ref_words) == 0:
            logger.warning(
                "utterance %s: reference normalizes to empty text, skipped", pair.utterance_id
            )
            continue
        ref_chars = normalize(pair.reference, normalization, UnitKind.CHARACTER)
        hyp_words = normalize(pair.prediction, normalization, UnitKind.WORD)
        hyp_chars = normalize(pair.prediction, normalization, UnitKind.CHARACTER)
        bucket = edits.setdefault(pair.dataset_tag, [0, 0, 0, 0])
        bucket[0] += levenshtein(ref_words, hyp_words)
        bucket[1] += len(ref_words)
        bucket[2] += levenshtein(ref_chars, hyp_chars)
        bucket[3] += len(ref_chars)
    for tag in order:
        if tag not in edits:
            logger.warning("dataset %s: no usable pairs, omitted from the report", tag)
    if not edits:
        raise UsageError("no usable evaluation pairs after normalization")
    return {
        tag: DatasetRates(
            wer_percent=100 * Fraction(edits[tag][0], edits[tag][1]),
            cer_percent=100 * Fraction(edits[tag][2], edits[tag][3]),
        )
        for tag in order
        if tag in edits
    }


def order_tags(tags: Sequence[str]) -> list[str]:
    known = [t for t in DATASET_COLUMNS if t in tags]
    rest = [t for t in tags if t not in DATASET_COLUMNS]
    return known + rest


@dataclass(frozen=True)
class ModelReport:
    """Per-dataset rates for one model; averages are unweighted column means."""

    model_name: str
    rates: Mapping[str, DatasetRates]

    def __post_init__(self):
        if not self.rates:
            raise UsageError("a model report needs at least one dataset")
        object.__setattr__(self, "rates", dict(self.rates))

    @property
    def tags(self) -> list[str]:
        return order_tags(list(self.rates))

    @property
    def average_wer(self) -> Fraction:
        return sum((self.rates[t].wer_percent for t in self.rates), Fraction(0)) / len(self.rates)

    @property
    def average_cer(self) -> Fraction:
        return sum((self.rates[t].cer_percent for t in self.rates), Fraction(0)) / len(self.rates)

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "datasets": {
                tag: {
                    "wer": round_half_up(self.rates[tag].wer_percent),
                    "cer": round_half_up(self.rates[tag].cer_percent),
                }
                for tag in self.tags
            },
            "average": {
                "wer": round_half_up(self.average_wer),
                "cer": round_half_up(self.average_cer),
            },
        }

    @classmethod
    def from_rates(cls, model_name: str, rates: Mapping[str, DatasetRates]) -> "ModelReport":
        return cls(model_name=model_name, rates=rates)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelReport":
        rates = {
            tag: DatasetRates(
                wer_percent=_exact(cell["wer"]), cer_percent=_exact(cell["cer"])
            )
            for tag, cell in data["datasets"].items()
        }
        return cls(model_name=data.get("model_name", "unnamed"), rates=rates)


def _exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    return Fraction(Decimal(str(value)))


def load_report(path) -> ModelReport:
    return ModelReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ReductionTable:
    """Column-wise error-rate reductions of one model over a baseline.

    The Average column applies the reduction formula to the two reports'
    average rates, not the mean of per-column reductions.
    """

    baseline_name: str
    model_name: str
    werr: Mapping[str, Fraction]
    cerr: Mapping[str, Fraction]

    @property
    def tags(self) -> list[str]:
        return order_tags([t for t in self.werr if t != AVERAGE])

    def to_dict(self) -> dict:
        out = {
            "baseline": self.baseline_name,
            "model": self.model_name,
            "datasets": {
                tag: {"werr": round_half_up(self.werr[tag]), "cerr": round_half_up(self.cerr[tag])}
                for tag in self.tags
            },
            "average": {
                "werr": round_half_up(self.werr[AVERAGE]),
                "cerr": round_half_up(self.cerr[AVERAGE]),
            },
        }
        return out


def reduction_table(baseline: ModelReport, ours: ModelReport) -> ReductionTable:
    if set(baseline.rates) != set(ours.rates):
        raise UsageError(
            f"dataset columns differ: baseline {sorted(baseline.rates)} "
            f"vs ours {sorted(ours.rates)}"
        )
    werr = {
        tag: rate_reduction(baseline.rates[tag].wer_percent, ours.rates[tag].wer_percent)
        for tag in baseline.rates
    }
    cerr = {
        tag: rate_reduction(baseline.rates[tag].cer_percent, ours.rates[tag].cer_percent)
        for tag in baseline.rates
    }
    werr[AVERAGE] = rate_reduction(baseline.average_wer, ours.average_wer)
    cerr[AVERAGE] = rate_reduction(baseline.average_cer, ours.average_cer)
    return ReductionTable(
        baseline_name=baseline.model_name, model_name=ours.model_name, werr=werr, cerr=cerr
    )


@dataclass(frozen=True)
class CellDiff:
    tag: str
    metric: str
    computed: float
    expected: float
    matched: bool


def compare_to_expected(
    table: ReductionTable,
    expected_werr: Mapping[str, float],
    expected_cerr: Mapping[str, float],
    tolerance: float = 0.05,
) -> list[CellDiff]:
    """Diff computed reductions against externally published values.

    Cells whose published value cannot be reproduced by the reduction
    formula show up as mismatches instead of being silently overwritten.
    """
    diffs = []
    for metric, computed, expected in (
        ("werr", table.werr, expected_werr),
        ("cerr", table.cerr, expected_cerr),
    ):
        for tag, value in expected.items():
            if tag not in computed:
                raise UsageError(f"expected value given for unknown column {tag!r}")
            got = float(computed[tag])
            diffs.append(
                CellDiff(
                    tag=tag,
                    metric=metric,
                    computed=got,
                    expected=float(value),
                    matched=abs(got - float(value)) <= tolerance,
                )
            )
    return diffs


# --- plain-text tables -----------------------------------------------------------


def format_report_table(report: ModelReport) -> str:
    tags = report.tags + [AVERAGE]
    header = ["model"] + [f"{t} WER" for t in tags] + [f"{t} CER" for t in tags]
    wers = [report.rates[t].wer_percent for t in report.tags] + [report.average_wer]
    cers = [report.rates[t].cer_percent for t in report.tags] + [report.average_cer]
    row = [report.model_name] + [f"{round_half_up(v):.2f}" for v in wers + cers]
    return _align([header, row])


def format_reduction_table(table: ReductionTable) -> str:
    tags = table.tags + [AVERAGE]
    header = ["column"] + list(tags)
    werr_row = ["WERR"] + [f"{round_half_up(table.werr[t]):.2f}" for t in tags]
    cerr_row = ["CERR"] + [f"{round_half_up(table.cerr[t]):.2f}" for t in tags]
    return _align([header, werr_row, cerr_row])


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)
