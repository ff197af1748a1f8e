"""Hypothesis selection: agreement scoring, medoid choice, and gates.

A segment passes when its hypotheses agree (average pairwise WER/CER at or
below the thresholds, strict > drops), the best hypothesis is the medoid —
the one minimizing summed edit distance to the others — and its text is
fluent enough under a language model (perplexity at or below threshold).

The bundled LM is an add-k smoothed character n-gram so the pipeline needs
no external model; anything exposing `perplexity(text)` can replace it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .datamodel import Decision, Hypothesis, PipelineConfig
from .errors import UndefinedRateError, UsageError, ValidationError
from .textmetrics import (
    AgreementStats,
    NormalizationPolicy,
    TokenSequence,
    UnitKind,
    levenshtein,
    normalize,
    pairwise_agreement,
)

BOS = "<s>"
END = "</s>"
UNK = "<unk>"

LM_FORMAT_VERSION = 1


def select_hypothesis(
    hypotheses: Sequence[Hypothesis],
    normalization: NormalizationPolicy,
    unit_kind: UnitKind = UnitKind.WORD,
) -> Hypothesis:
    """Pick the hypothesis minimizing summed edit distance to all others.

    Distances are computed on normalized token sequences at `unit_kind`
    (word by default). Ties break by lowest summed character-level distance,
    then by lexicographically smallest generator_id, so the result does not
    depend on input order.
    """
    if len(hypotheses) < 2:
        raise UsageError("hypothesis selection needs at least two hypotheses")
    primary = [normalize(h.text, normalization, unit_kind) for h in hypotheses]
    chars = [normalize(h.text, normalization, UnitKind.CHARACTER) for h in hypotheses]

    def summed(seqs: list[TokenSequence], i: int) -> int:
        return sum(levenshtein(seqs[i], seqs[j]) for j in range(len(seqs)) if j != i)

    best = min(
        range(len(hypotheses)),
        key=lambda i: (summed(primary, i), summed(chars, i), hypotheses[i].generator_id),
    )
    return hypotheses[best]


def admit_by_agreement(
    hypotheses: Sequence[Hypothesis], config: PipelineConfig
) -> tuple[AgreementStats, Decision]:
    """Gate on inter-hypothesis agreement.

    Drops when either average strictly exceeds its threshold; a segment
    with no scoreable pair (every hypothesis empty) is dropped too, since
    agreement cannot be established.
    """
    stats = pairwise_agreement([h.text for h in hypotheses], config.normalization)
    if stats.avg_pairwise_wer is None or stats.avg_pairwise_cer is None:
        return stats, Decision.DROPPED_AGREEMENT
    if (
        stats.avg_pairwise_wer > config.pwer_threshold
        or stats.avg_pairwise_cer > config.pcer_threshold
    ):
        return stats, Decision.DROPPED_AGREEMENT
    return stats, Decision.ADMITTED


class LanguageModel(Protocol):
    def perplexity(self, text: str) -> float:
        ...


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(Decimal(repr(value)))
    return Fraction(value)


@dataclass
class CharNgramLM:
    """Add-k smoothed character n-gram model with begin/end padding.

    Probabilities are exact rationals: P(u | ctx) = (c(ctx,u) + k) /
    (c(ctx) + k*|V|), where V is the character vocabulary plus the end and
    unknown symbols. Unseen characters map to the unknown symbol; an unseen
    context therefore scores uniformly at 1/|V|. Immutable after training.
    """

    order: int
    smoothing_k: Fraction
    vocabulary: frozenset[str]
    counts: dict[tuple[str, ...], dict[str, int]]
    context_totals: dict[tuple[str, ...], int]
    policy: NormalizationPolicy = field(default_factory=NormalizationPolicy)

    @classmethod
    def uniform(
        cls,
        alphabet: Iterable[str],
        order: int = 3,
        smoothing_k=1,
        policy: NormalizationPolicy | None = None,
    ) -> "CharNgramLM":
        """A model with no counts: every unit scores exactly 1/|V|."""
        return cls(
            order=order,
            smoothing_k=_as_fraction(smoothing_k),
            vocabulary=frozenset(alphabet) | {END, UNK},
            counts={},
            context_totals={},
            policy=policy or NormalizationPolicy(),
        )

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def _normalize_context(self, context: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(u if (u in self.vocabulary or u == BOS) else UNK for u in context)

    def probability(self, context: tuple[str, ...], unit: str) -> Fraction:
        if unit not in self.vocabulary:
            unit = UNK
        context = self._normalize_context(context)
        unit_count = self.counts.get(context, {}).get(unit, 0)
        context_count = self.context_totals.get(context, 0)
        k = self.smoothing_k
        return (unit_count + k) / (context_count + k * self.vocab_size)

    def perplexity(self, text: str) -> float:
        """Exponentiated mean negative log-probability per character.

        Scoring covers each character and the end symbol, so a text of m
        characters contributes m + 1 events.
        """
        chars = list(self.policy.apply(text))
        if not chars:
            raise UndefinedRateError("perplexity is undefined for text that normalizes to empty")
        padded = [BOS] * (self.order - 1) + chars + [END]
        log_total = 0.0
        events = 0
        for i in range(self.order - 1, len(padded)):
            context = tuple(padded[i - self.order + 1 : i])
            p = self.probability(context, padded[i])
            log_total += math.log(p.numerator) - math.log(p.denominator)
            events += 1
        return math.exp(-log_total / events)


def train_char_lm(
    corpus: Sequence[str],
    order: int = 3,
    smoothing_k=1,
    policy: NormalizationPolicy | None = None,
) -> CharNgramLM:
    """Count all order-n character windows over a normalized corpus."""
    if order < 1:
        raise UsageError("order must be >= 1")
    policy = policy or NormalizationPolicy()
    k = _as_fraction(smoothing_k)
    if k <= 0:
        raise UsageError("smoothing_k must be > 0")

    counts: dict[tuple[str, ...], dict[str, int]] = {}
    context_totals: dict[tuple[str, ...], int] = {}
    vocabulary: set[str] = {END, UNK}
    trained = False
    for text in corpus:
        chars = list(policy.apply(text))
        if not chars:
            continue
        trained = True
        vocabulary.update(chars)
        padded = [BOS] * (order - 1) + chars + [END]
        for i in range(order - 1, len(padded)):
            context = tuple(padded[i - order + 1 : i])
            unit = padded[i]
            counts.setdefault(context, {})
            counts[context][unit] = counts[context].get(unit, 0) + 1
            context_totals[context] = context_totals.get(context, 0) + 1
    if not trained:
        raise UsageError("training corpus is empty after normalization")
    return CharNgramLM(
        order=order,
        smoothing_k=k,
        vocabulary=frozenset(vocabulary),
        counts=counts,
        context_totals=context_totals,
        policy=policy,
    )


def perplexity(lm: LanguageModel, text: str) -> float:
    return lm.perplexity(text)


def admit_by_perplexity(
    hypothesis: Hypothesis, lm: LanguageModel, ppl_threshold: float
) -> tuple[float, Decision]:
    """Fluency gate: drop iff perplexity strictly exceeds the threshold."""
    if not hypothesis.text:
        raise UsageError("perplexity gate needs a nonempty hypothesis text")
    ppl = lm.perplexity(hypothesis.text)
    if ppl > ppl_threshold:
        return ppl, Decision.DROPPED_PERPLEXITY
    return ppl, Decision.ADMITTED


# --- LM persistence: versioned JSON count table -------------------------------


def save_lm(lm: CharNgramLM, path) -> None:
    payload = {
        "format_version": LM_FORMAT_VERSION,
        "order": lm.order,
        "smoothing_k": [lm.smoothing_k.numerator, lm.smoothing_k.denominator],
        "vocabulary": sorted(lm.vocabulary),
        "policy": lm.policy.to_dict(),
        "counts": [
            {"context": list(context), "units": units}
            for context, units in sorted(lm.counts.items())
        ],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_lm(path) -> CharNgramLM:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != LM_FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported LM file version {version!r}, expected {LM_FORMAT_VERSION}"
        )
    counts: dict[tuple[str, ...], dict[str, int]] = {}
    context_totals: dict[tuple[str, ...], int] = {}
    for entry in payload["counts"]:
        context = tuple(entry["context"])
        units = {u: int(c) for u, c in entry["units"].items()}
        counts[context] = units
        context_totals[context] = sum(units.values())
    num, den = payload["smoothing_k"]
    return CharNgramLM(
        order=int(payload["order"]),
        smoothing_k=Fraction(int(num), int(den)),
        vocabulary=frozenset(payload["vocabulary"]),
        counts=counts,
        context_totals=context_totals,
        policy=NormalizationPolicy.from_dict(payload["policy"]),
    )
