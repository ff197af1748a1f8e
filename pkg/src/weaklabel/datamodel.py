"""Corpus entities and the JSONL manifest layer shared by every pipeline stage.

Times are seconds with millisecond precision; audio content is referenced by
URI, never embedded. Interval arithmetic elsewhere runs on integer
milliseconds (`to_ms`) so packing and coverage checks are drift-free. Exact
rates serialize as ``[numerator, denominator]`` pairs so manifests round-trip
without float loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .errors import ManifestError, ValidationError
from .textmetrics import AgreementStats, NormalizationPolicy

__all__ = [
    "AudioAsset",
    "Chunk",
    "ChunkMember",
    "Decision",
    "Hypothesis",
    "PipelineConfig",
    "QualityFlag",
    "Segment",
    "SelectionResult",
    "load_config",
    "read_manifest",
    "save_config",
    "to_ms",
    "to_seconds",
    "validate_config",
    "write_manifest",
]


def to_ms(seconds: float) -> int:
    return round(seconds * 1000)


def to_seconds(milliseconds: int) -> float:
    return milliseconds / 1000.0


class QualityFlag(str, Enum):
    TOO_LONG = "too_long"
    OVERLAPPING_SPEAKERS = "overlapping_speakers"
    LOW_AGREEMENT = "low_agreement"
    HIGH_PERPLEXITY = "high_perplexity"


class Decision(str, Enum):
    ADMITTED = "admitted"
    DROPPED_AGREEMENT = "dropped_agreement"
    DROPPED_PERPLEXITY = "dropped_perplexity"
    DROPPED_OVERLAP = "dropped_overlap"
    DROPPED_LENGTH = "dropped_length"
    # Not a quality gate: a backend had no transcript for the segment.
    DROPPED_GENERATOR = "dropped_generator"


@dataclass(frozen=True)
class AudioAsset:
    id: str
    uri: str
    duration: float
    sample_rate: int

    def __post_init__(self):
        if not self.id:
            raise ValidationError("audio asset id must be nonempty")
        if self.duration <= 0:
            raise ValidationError(f"audio {self.id}: duration must be > 0")
        if self.sample_rate <= 0:
            raise ValidationError(f"audio {self.id}: sample_rate must be > 0")


@dataclass(frozen=True)
class Segment:
    """A time interval of a parent audio, the unit of hypothesis generation."""

    parent_id: str
    start: float
    end: float
    overlap_flag: bool = False
    quality_flags: frozenset[QualityFlag] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "start", to_seconds(to_ms(self.start)))
        object.__setattr__(self, "end", to_seconds(to_ms(self.end)))
        if self.start < 0 or self.start >= self.end:
            raise ValidationError(
                f"segment [{self.start}, {self.end}] of {self.parent_id!r}: "
                "need 0 <= start < end"
            )
        object.__setattr__(self, "quality_flags", frozenset(self.quality_flags))

    @property
    def duration_ms(self) -> int:
        return to_ms(self.end) - to_ms(self.start)

    @property
    def duration(self) -> float:
        return to_seconds(self.duration_ms)


@dataclass(frozen=True)
class Hypothesis:
    generator_id: str
    text: str


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of the selection gates for one segment.

    `chosen` is present exactly when the segment was admitted. `stats` is
    None for segments dropped before agreement could be computed (overlap,
    length, or generator misses).
    """

    segment: Segment
    chosen: Hypothesis | None
    stats: AgreementStats | None
    perplexity: float | None
    decision: Decision

    def __post_init__(self):
        if (self.chosen is not None) != (self.decision is Decision.ADMITTED):
            raise ValidationError(
                f"segment [{self.segment.start}, {self.segment.end}]: chosen hypothesis "
                f"must be present iff decision is admitted (got {self.decision.value})"
            )


@dataclass(frozen=True)
class ChunkMember:
    start: float
    end: float
    text: str

    def __post_init__(self):
        object.__setattr__(self, "start", to_seconds(to_ms(self.start)))
        object.__setattr__(self, "end", to_seconds(to_ms(self.end)))
        if self.start < 0 or self.start >= self.end:
            raise ValidationError(f"chunk member [{self.start}, {self.end}]: need 0 <= start < end")

    @property
    def duration_ms(self) -> int:
        return to_ms(self.end) - to_ms(self.start)


@dataclass(frozen=True)
class Chunk:
    """A merged run of consecutive admitted segments, one training example."""

    parent_id: str
    start: float
    end: float
    transcript: str
    members: tuple[ChunkMember, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "start", to_seconds(to_ms(self.start)))
        object.__setattr__(self, "end", to_seconds(to_ms(self.end)))
        if not self.members:
            raise ValidationError("chunk needs at least one member segment")
        for prev, cur in zip(self.members, self.members[1:]):
            if to_ms(cur.start) < to_ms(prev.end):
                raise ValidationError(
                    f"chunk {self.parent_id!r}: members overlap or are out of order"
                )
        if to_ms(self.start) != to_ms(self.members[0].start) or to_ms(self.end) != to_ms(
            self.members[-1].end
        ):
            raise ValidationError(
                f"chunk {self.parent_id!r}: span must run first member start to last member end"
            )
        expected = " ".join(m.text for m in self.members)
        if self.transcript != expected:
            raise ValidationError(
                f"chunk {self.parent_id!r}: transcript must be the space-joined member texts"
            )

    @property
    def span_ms(self) -> int:
        return to_ms(self.end) - to_ms(self.start)

    @property
    def speech_ms(self) -> int:
        """Speech content only; interior gaps are part of the span, not of this."""
        return sum(m.duration_ms for m in self.members)

    @property
    def speech_seconds(self) -> float:
        return to_seconds(self.speech_ms)


@dataclass(frozen=True)
class PipelineConfig:
    """The hyperparameter vector driving every pipeline stage.

    `ppl_threshold` defaults to +inf (gate disabled) because a useful value
    is data-dependent; the calibration search is the supported way to pick
    one. An empty `generator_ids` means "use every generator provided".
    """

    max_segment_len: float = 5.0
    max_chunk_len: float = 15.0
    merge_gap_tol: float = 1.0
    pwer_threshold: float = 0.35
    pcer_threshold: float = 0.15
    ppl_threshold: float = math.inf
    normalization: NormalizationPolicy = field(default_factory=NormalizationPolicy)
    generator_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "generator_ids", tuple(self.generator_ids))


def validate_config(config: PipelineConfig) -> list[str]:
    """Return human-readable violations; empty list means the config is valid."""
    problems = []
    if config.max_segment_len <= 0:
        problems.append("max_segment_len must be > 0")
    if config.max_segment_len > config.max_chunk_len:
        problems.append(
            f"max_segment_len ({config.max_segment_len}) must not exceed "
            f"max_chunk_len ({config.max_chunk_len})"
        )
    if config.merge_gap_tol < 0:
        problems.append("merge_gap_tol must be >= 0")
    for name in ("pwer_threshold", "pcer_threshold", "ppl_threshold"):
        value = getattr(config, name)
        if value < 0:
            problems.append(f"{name} must be >= 0")
    if len(set(config.generator_ids)) != len(config.generator_ids):
        problems.append("generator_ids must be unique")
    return problems


# --- serialization -----------------------------------------------------------
#
# One JSON object per manifest line, fixed key order, UTF-8. Chunk records:
#   {parent_id, start, end, transcript, speech, segments: [{start, end, text}]}
# Selection records:
#   {segment: {parent_id, start, end, overlap, flags}, chosen: {...}|null,
#    stats: {pwer: [n,d]|null, pcer: [n,d]|null, pairs}|null, ppl, decision}


def _fraction_out(value: Fraction | None):
    if value is None:
        return None
    return [value.numerator, value.denominator]


def _fraction_in(value, where: str) -> Fraction | None:
    if value is None:
        return None
    if not (isinstance(value, list) and len(value) == 2):
        raise ValidationError(f"{where}: expected [numerator, denominator]")
    return Fraction(int(value[0]), int(value[1]))


def _segment_record(segment: Segment) -> dict:
    return {
        "parent_id": segment.parent_id,
        "start": segment.start,
        "end": segment.end,
        "overlap": segment.overlap_flag,
        "flags": sorted(f.value for f in segment.quality_flags),
    }


def _segment_from(record: dict) -> Segment:
    return Segment(
        parent_id=record["parent_id"],
        start=record["start"],
        end=record["end"],
        overlap_flag=bool(record.get("overlap", False)),
        quality_flags=frozenset(QualityFlag(f) for f in record.get("flags", [])),
    )


def chunk_to_record(chunk: Chunk) -> dict:
    return {
        "parent_id": chunk.parent_id,
        "start": chunk.start,
        "end": chunk.end,
        "transcript": chunk.transcript,
        "speech": to_seconds(chunk.speech_ms),
        "segments": [{"start": m.start, "end": m.end, "text": m.text} for m in chunk.members],
    }


def chunk_from_record(record: dict) -> Chunk:
    members = tuple(
        ChunkMember(start=m["start"], end=m["end"], text=m["text"])
        for m in record["segments"]
    )
    chunk = Chunk(
        parent_id=record["parent_id"],
        start=record["start"],
        end=record["end"],
        transcript=record["transcript"],
        members=members,
    )
    if "speech" in record and to_ms(record["speech"]) != chunk.speech_ms:
        raise ValidationError("chunk 'speech' field disagrees with member durations")
    return chunk


def selection_to_record(result: SelectionResult) -> dict:
    stats = None
    if result.stats is not None:
        stats = {
            "pwer": _fraction_out(result.stats.avg_pairwise_wer),
            "pcer": _fraction_out(result.stats.avg_pairwise_cer),
            "pairs": result.stats.pair_count,
        }
    chosen = None
    if result.chosen is not None:
        chosen = {"generator_id": result.chosen.generator_id, "text": result.chosen.text}
    return {
        "segment": _segment_record(result.segment),
        "chosen": chosen,
        "stats": stats,
        "ppl": result.perplexity,
        "decision": result.decision.value,
    }


def selection_from_record(record: dict) -> SelectionResult:
    stats = None
    if record.get("stats") is not None:
        raw = record["stats"]
        stats = AgreementStats(
            avg_pairwise_wer=_fraction_in(raw.get("pwer"), "stats.pwer"),
            avg_pairwise_cer=_fraction_in(raw.get("pcer"), "stats.pcer"),
            pair_count=int(raw["pairs"]),
        )
    chosen = None
    if record.get("chosen") is not None:
        chosen = Hypothesis(
            generator_id=record["chosen"]["generator_id"], text=record["chosen"]["text"]
        )
    return SelectionResult(
        segment=_segment_from(record["segment"]),
        chosen=chosen,
        stats=stats,
        perplexity=record.get("ppl"),
        decision=Decision(record["decision"]),
    )


def record_to_json(record) -> dict:
    if isinstance(record, Chunk):
        return chunk_to_record(record)
    if isinstance(record, SelectionResult):
        return selection_to_record(record)
    raise ValidationError(f"cannot serialize {type(record).__name__} into a manifest")


def record_from_json(obj: dict):
    if "transcript" in obj:
        return chunk_from_record(obj)
    if "decision" in obj:
        return selection_from_record(obj)
    raise ValidationError("record is neither a chunk nor a selection result")


def write_manifest(records: Iterable, path) -> None:
    """Write one JSON object per line, stable field order, UTF-8."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), ensure_ascii=False))
            fh.write("\n")


def read_manifest(path) -> list:
    """Inverse of write_manifest.

    Raises ManifestError naming the 1-based line number on the first
    malformed or invariant-violating line; the error carries the records
    parsed before the failure.
    """
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(
                    f"{path}:{line_number}: malformed JSON: {exc.msg}",
                    line_number=line_number,
                    records=records,
                ) from exc
            try:
                records.append(record_from_json(obj))
            except (ValidationError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(
                    f"{path}:{line_number}: invalid record: {exc}",
                    line_number=line_number,
                    records=records,
                ) from exc
    return records


# --- config files ------------------------------------------------------------


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "max_segment_len": config.max_segment_len,
        "max_chunk_len": config.max_chunk_len,
        "merge_gap_tol": config.merge_gap_tol,
        "pwer_threshold": config.pwer_threshold,
        "pcer_threshold": config.pcer_threshold,
        "ppl_threshold": config.ppl_threshold,
        "normalization": config.normalization.to_dict(),
        "generator_ids": list(config.generator_ids),
    }


def config_from_dict(data: dict) -> PipelineConfig:
    defaults = PipelineConfig()
    known = set(config_to_dict(defaults))
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key in known & set(data):
        if key == "normalization":
            kwargs[key] = NormalizationPolicy.from_dict(data[key])
        elif key == "generator_ids":
            kwargs[key] = tuple(data[key])
        elif key == "ppl_threshold" and data[key] is None:
            kwargs[key] = math.inf
        else:
            kwargs[key] = data[key]
    return replace(defaults, **kwargs)


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config_to_dict(config), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_config(path) -> PipelineConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
