"""Text normalization, Levenshtein distance, WER/CER, and agreement statistics.

This is the numeric kernel of the pipeline. Rates are returned as exact
`fractions.Fraction` values so that threshold comparisons never depend on
float rounding; callers convert to floats or percents only when reporting.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .errors import UndefinedRateError, UsageError


class UnitKind(str, Enum):
    WORD = "word"
    CHARACTER = "character"


# Arabic-script letter-variant folding: hamza-carrying alef forms, alef
# wasla, alef maksura and teh marbuta collapse to bare counterparts, and
# tatweel is dropped. No key appears as a value, keeping folding idempotent.
_FOLD_TABLE = {
    "أ": "ا",  # alef with hamza above
    "إ": "ا",  # alef with hamza below
    "آ": "ا",  # alef with madda above
    "ٱ": "ا",  # alef wasla
    "ى": "ي",  # alef maksura -> yeh
    "ة": "ه",  # teh marbuta -> heh
    "ـ": "",        # tatweel
}

_COMBINING_CATEGORIES = frozenset({"Mn", "Mc", "Me"})


@dataclass(frozen=True)
class NormalizationPolicy:
    """Which transformations to apply to raw text before tokenization."""

    strip_diacritics: bool = False
    fold_characters: bool = False
    collapse_whitespace: bool = True
    remove_punctuation: bool = True

    def apply(self, text: str) -> str:
        """Normalize raw text. Applying the policy twice equals applying it once."""
        if self.strip_diacritics:
            text = "".join(
                c for c in text if unicodedata.category(c) not in _COMBINING_CATEGORIES
            )
        if self.fold_characters:
            text = "".join(_FOLD_TABLE.get(c, c) for c in text)
        if self.remove_punctuation:
            text = "".join(c for c in text if not unicodedata.category(c).startswith("P"))
        if self.collapse_whitespace:
            text = " ".join(text.split())
        return text

    def to_dict(self) -> dict:
        return {
            "strip_diacritics": self.strip_diacritics,
            "fold_characters": self.fold_characters,
            "collapse_whitespace": self.collapse_whitespace,
            "remove_punctuation": self.remove_punctuation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationPolicy":
        return cls(
            strip_diacritics=bool(data.get("strip_diacritics", False)),
            fold_characters=bool(data.get("fold_characters", False)),
            collapse_whitespace=bool(data.get("collapse_whitespace", True)),
            remove_punctuation=bool(data.get("remove_punctuation", True)),
        )


#: Policy used for agreement scoring: whitespace and punctuation are noise,
#: but diacritics are kept because generators disagreeing on them is signal.
AGREEMENT_POLICY = NormalizationPolicy()

#: Stricter policy for leaderboard-style evaluation.
STRICT_POLICY = NormalizationPolicy(strip_diacritics=True, fold_characters=True)


@dataclass(frozen=True)
class TokenSequence:
    """Normalized text as an ordered sequence of comparison units."""

    units: tuple[str, ...]
    unit_kind: UnitKind

    def __post_init__(self):
        if self.unit_kind is UnitKind.WORD and any(not u for u in self.units):
            raise UsageError("word sequences must not contain empty units")

    def __len__(self) -> int:
        return len(self.units)

    @property
    def text(self) -> str:
        joiner = " " if self.unit_kind is UnitKind.WORD else ""
        return joiner.join(self.units)


def tokenize(text: str, unit_kind: UnitKind) -> TokenSequence:
    """Split already-normalized text into comparison units.

    Word mode splits on whitespace; character mode yields one unit per
    Unicode scalar, excluding whitespace.
    """
    if unit_kind is UnitKind.WORD:
        units = tuple(text.split())
    else:
        units = tuple(c for c in text if not c.isspace())
    return TokenSequence(units=units, unit_kind=unit_kind)


def normalize(text: str, policy: NormalizationPolicy, unit_kind: UnitKind) -> TokenSequence:
    """Apply a normalization policy and tokenize. Deterministic."""
    return tokenize(policy.apply(text), unit_kind)


def _levenshtein_units(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    if a == b:
        return 0
    if len(a) < len(b):  # keep the inner row the short one
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, unit_a in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, unit_b in enumerate(b, start=1):
            current[j] = min(
                previous[j] + 1,          # deletion
                current[j - 1] + 1,       # insertion
                previous[j - 1] + (unit_a != unit_b),
            )
        previous = current
    return previous[len(b)]


def levenshtein(a: TokenSequence, b: TokenSequence) -> int:
    """Minimum number of unit insertions, deletions, and substitutions turning `a` into `b`."""
    if a.unit_kind is not b.unit_kind:
        raise UsageError(
            f"unit kinds differ: {a.unit_kind.value} vs {b.unit_kind.value}"
        )
    return _levenshtein_units(a.units, b.units)


def error_rate(reference: TokenSequence, hypothesis: TokenSequence) -> Fraction:
    """Edit distance over reference length: WER for word units, CER for characters.

    May exceed 1 when the hypothesis is much longer than the reference.
    """
    if len(reference) == 0:
        raise UndefinedRateError("error rate is undefined for an empty reference")
    return Fraction(levenshtein(reference, hypothesis), len(reference))


@dataclass(frozen=True)
class AgreementStats:
    """Average pairwise error over all ordered hypothesis pairs.

    An average is None when that unit level was not computed (or when no
    pair had a nonempty reference side). `pair_count` counts the ordered
    pairs that contributed; it equals k*(k-1) when all k hypotheses are
    nonempty.
    """

    avg_pairwise_wer: Fraction | None
    avg_pairwise_cer: Fraction | None
    pair_count: int


def avg_pairwise_error(hypotheses: Sequence[TokenSequence]) -> AgreementStats:
    """Mean error_rate over all ordered pairs (i, j), i != j.

    Pairs whose reference side is empty are skipped and excluded from
    pair_count. Fills the stats field matching the sequences' unit kind.
    """
    if len(hypotheses) < 2:
        raise UsageError("pairwise agreement needs at least two hypotheses")
    kinds = {h.unit_kind for h in hypotheses}
    if len(kinds) != 1:
        raise UsageError("hypotheses must share one unit kind")
    (kind,) = kinds

    total = Fraction(0)
    pairs = 0
    for i, ref in enumerate(hypotheses):
        if len(ref) == 0:
            continue
        for j, hyp in enumerate(hypotheses):
            if i == j:
                continue
            total += error_rate(ref, hyp)
            pairs += 1
    average = total / pairs if pairs else None
    if kind is UnitKind.WORD:
        return AgreementStats(avg_pairwise_wer=average, avg_pairwise_cer=None, pair_count=pairs)
    return AgreementStats(avg_pairwise_wer=None, avg_pairwise_cer=average, pair_count=pairs)


def pairwise_agreement(texts: Sequence[str], policy: NormalizationPolicy) -> AgreementStats:
    """Word- and character-level agreement for one segment's hypothesis texts.

    Word and character pair counts always coincide: a text tokenizes to zero
    words exactly when it has no non-whitespace characters.
    """
    words = avg_pairwise_error([normalize(t, policy, UnitKind.WORD) for t in texts])
    chars = avg_pairwise_error([normalize(t, policy, UnitKind.CHARACTER) for t in texts])
    return AgreementStats(
        avg_pairwise_wer=words.avg_pairwise_wer,
        avg_pairwise_cer=chars.avg_pairwise_cer,
        pair_count=words.pair_count,
    )


def rate_reduction(baseline, ours):
    """Relative improvement over a baseline rate, in percent.

    Negative when `ours` is worse. Preserves exactness: Fraction inputs
    yield a Fraction, floats yield a float.
    """
    if baseline == 0:
        raise UndefinedRateError("rate reduction is undefined for a zero baseline")
    return 100 * (baseline - ours) / baseline


def round_half_up(value, ndigits: int = 2) -> float:
    """Decimal half-up rounding, used only when emitting report numbers."""
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))
