"""Hyperparameter optimization over a labeled calibration set.

Each candidate config is scored by running the full pipeline (segmentation,
replayed generation, gates, merging) on every calibration sample and summing
annotation efficiency minus label error. Hypotheses come from replay tables
so the search never re-invokes real backends; only admission and packing
change between candidates.
"""

from __future__ import annotations

import itertools
import json
import logging
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .datamodel import (
    AudioAsset,
    Decision,
    Hypothesis,
    PipelineConfig,
    Segment,
    to_ms,
    validate_config,
)
from .errors import ConfigError, UndefinedRateError, UsageError, ValidationError
from .generators import ReplayGenerator, SegmentKey, segment_key
from .orchestrator import CorpusEntry, label_audio
from .segmentation import SpeakerInterval, VadEvent, VadKind
from .selection import LanguageModel
from .textmetrics import NormalizationPolicy, UnitKind, error_rate, normalize

logger = logging.getLogger(__name__)

#: Config fields a search space may range over.
SEARCHABLE_FIELDS = (
    "pwer_threshold",
    "pcer_threshold",
    "ppl_threshold",
    "max_segment_len",
    "max_chunk_len",
    "merge_gap_tol",
)


@dataclass(frozen=True)
class CalibrationSample:
    """One development-set audio with ground truth and replayed hypotheses.

    `replays` maps generator id -> segment key -> hypothesis text. When
    `segment_references` covers the admitted segments, label error is the
    mean per-segment WER; otherwise it falls back to comparing the full
    reference against the concatenated selected texts.
    """

    audio: AudioAsset
    reference_text: str
    vad_events: tuple[VadEvent, ...]
    diarization: tuple[SpeakerInterval, ...]
    replays: Mapping[str, Mapping[SegmentKey, str]]
    segment_references: Mapping[SegmentKey, str] | None = None

    def __post_init__(self):
        if not self.reference_text:
            raise ValidationError(f"sample {self.audio.id}: reference_text must be nonempty")
        object.__setattr__(self, "vad_events", tuple(self.vad_events))
        object.__setattr__(self, "diarization", tuple(self.diarization))


def efficiency(
    audio_duration: float,
    admitted_segments: Sequence[Segment],
    *,
    speech_seconds: float | None = None,
) -> Fraction:
    """Fraction of the audio that survives as annotated segments.

    Divides by the full audio duration as the default; pass `speech_seconds`
    to measure against speech time only. Overlapping or out-of-range
    segments are rejected because they would inflate the score.
    """
    if audio_duration <= 0:
        raise UsageError("audio_duration must be > 0")
    duration_ms = to_ms(audio_duration)
    ordered = sorted(admitted_segments, key=lambda s: (to_ms(s.start), to_ms(s.end)))
    last_end = 0
    total = 0
    for segment in ordered:
        s, e = to_ms(segment.start), to_ms(segment.end)
        if s < last_end:
            raise ValidationError("admitted segments overlap")
        if e > duration_ms:
            raise ValidationError("admitted segment extends past the audio end")
        total += e - s
        last_end = e
    denominator = to_ms(speech_seconds) if speech_seconds is not None else duration_ms
    if denominator <= 0:
        raise UsageError("denominator duration must be > 0")
    return Fraction(total, denominator)


@dataclass(frozen=True)
class ErrorMeasure:
    value: Fraction
    used_concatenation: bool


def pipeline_error(
    reference_text: str,
    selected: Sequence[tuple[Segment, Hypothesis]],
    normalization: NormalizationPolicy,
    segment_references: Mapping[SegmentKey, str] | None = None,
) -> ErrorMeasure:
    """Label error of the selected hypotheses, as WER.

    With per-segment references: the mean of per-segment WERs. Without: the
    WER between the full reference and the time-ordered concatenation of
    selected texts, flagged via `used_concatenation` since segment
    boundaries may not align with the reference.
    """
    if not selected:
        raise UndefinedRateError("label error is undefined with no selected segments")
    ordered = sorted(selected, key=lambda pair: to_ms(pair[0].start))

    keys = [segment_key(segment) for segment, _ in ordered]
    if segment_references is not None and all(k in segment_references for k in keys):
        rates = []
        for (segment, hypothesis), key in zip(ordered, keys):
            reference = normalize(segment_references[key], normalization, UnitKind.WORD)
            if len(reference) == 0:
                raise UndefinedRateError(
                    f"segment reference for {key} normalizes to empty text"
                )
            rates.append(error_rate(reference, normalize(hypothesis.text, normalization, UnitKind.WORD)))
        return ErrorMeasure(value=sum(rates, Fraction(0)) / len(rates), used_concatenation=False)

    reference = normalize(reference_text, normalization, UnitKind.WORD)
    if len(reference) == 0:
        raise UndefinedRateError("reference text normalizes to empty")
    concatenation = " ".join(h.text for _, h in ordered)
    hypothesis = normalize(concatenation, normalization, UnitKind.WORD)
    return ErrorMeasure(value=error_rate(reference, hypothesis), used_concatenation=True)


def objective_score(samples: Sequence[tuple], error_weight: float = 1.0):
    """Sum of (efficiency - error) over samples.

    Samples with nothing admitted are encoded as (0, 0): nothing annotated,
    nothing wrong. `error_weight` rescales the error term for
    experimentation and defaults to the plain unweighted sum.
    """
    total = Fraction(0) if error_weight == 1.0 else 0.0
    for xi, err in samples:
        if error_weight == 1.0:
            total += Fraction(xi) - Fraction(err)
        else:
            total += float(xi) - error_weight * float(err)
    return total


# --- search space --------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Finite grids per hyperparameter plus an evaluation budget."""

    grid: Mapping[str, tuple]
    budget: int
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        clean = {}
        for name, values in self.grid.items():
            if name not in SEARCHABLE_FIELDS:
                raise ConfigError(
                    f"unknown search dimension {name!r}; searchable: {SEARCHABLE_FIELDS}"
                )
            values = tuple(values)
            if not values:
                raise ConfigError(f"search dimension {name!r} has no values")
            clean[name] = values
        if not clean:
            raise ConfigError("search space has no dimensions")
        object.__setattr__(self, "grid", clean)

    @property
    def grid_size(self) -> int:
        size = 1
        for values in self.grid.values():
            size *= len(values)
        return size


def load_search_space(path) -> SearchSpace:
    """Search space file: {"budget", "seed", "grid": {name: [...] | {min,max,steps}}}.

    A missing budget defaults to the grid size (exhaustive search).
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    raw = data.get("grid")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a 'grid' object")
    grid = {}
    for name, values in raw.items():
        if isinstance(values, dict):
            grid[name] = _linspace(values, name)
        elif isinstance(values, list):
            grid[name] = tuple(values)
        else:
            raise ConfigError(f"{path}: dimension {name!r} must be a list or {{min,max,steps}}")
    budget = data.get("budget")
    if budget is None:
        budget = 1
        for values in grid.values():
            budget *= max(len(values), 1)
    return SearchSpace(grid=grid, budget=int(budget), seed=int(data.get("seed", 0)))


def _linspace(spec: dict, name: str) -> tuple:
    try:
        lo, hi, steps = float(spec["min"]), float(spec["max"]), int(spec["steps"])
    except KeyError as exc:
        raise ConfigError(f"dimension {name!r}: range needs min, max, steps") from exc
    if steps < 1 or hi < lo:
        raise ConfigError(f"dimension {name!r}: invalid range")
    if steps == 1:
        return (lo,)
    width = (hi - lo) / (steps - 1)
    return tuple(round(lo + i * width, 9) for i in range(steps))


def candidate_configs(space: SearchSpace, base: PipelineConfig) -> list[PipelineConfig]:
    """Deterministic candidate list: the whole grid when it fits the budget,
    otherwise a seeded sample of the grid without replacement."""
    names = sorted(space.grid)
    axes = [space.grid[name] for name in names]
    total = space.grid_size
    if total <= space.budget:
        combos = list(itertools.product(*axes))
    else:
        rng = random.Random(space.seed)
        picks = sorted(rng.sample(range(total), space.budget))
        combos = [_decode_combo(index, axes) for index in picks]
    return [replace(base, **dict(zip(names, combo))) for combo in combos]


def _decode_combo(index: int, axes: list) -> tuple:
    combo = []
    for values in reversed(axes):
        index, offset = divmod(index, len(values))
        combo.append(values[offset])
    return tuple(reversed(combo))


# --- search --------------------------------------------------------------------


@dataclass
class TraceEntry:
    config: PipelineConfig
    score: Fraction | None
    per_sample: list[tuple[Fraction, Fraction]]
    error: str | None = None

    def to_dict(self) -> dict:
        from .datamodel import config_to_dict

        return {
            "config": config_to_dict(self.config),
            "score": None if self.score is None else float(self.score),
            "per_sample": [{"xi": float(xi), "L": float(err)} for xi, err in self.per_sample],
            "error": self.error,
        }


def evaluate_config(
    config: PipelineConfig,
    samples: Sequence[CalibrationSample],
    lm: LanguageModel | None = None,
) -> list[tuple[Fraction, Fraction]]:
    """Run the pipeline on every sample under `config`; return (xi, L) pairs."""
    pairs = []
    for sample in samples:
        generators = [
            ReplayGenerator(gid, table) for gid, table in sorted(sample.replays.items())
        ]
        if len(generators) < 2:
            raise ConfigError(f"sample {sample.audio.id}: needs replays for >= 2 generators")
        entry = CorpusEntry(asset=sample.audio, vad=sample.vad_events, diarization=sample.diarization)
        result = label_audio(entry, generators, config, lm=lm)
        admitted = [
            (s.segment, s.chosen) for s in result.selections if s.decision is Decision.ADMITTED
        ]
        dropped_missing = sum(
            1 for s in result.selections if s.decision is Decision.DROPPED_GENERATOR
        )
        if dropped_missing:
            logger.warning(
                "sample=%s: %d segment(s) had no replayed hypothesis", sample.audio.id, dropped_missing
            )
        if not admitted:
            pairs.append((Fraction(0), Fraction(0)))
            continue
        xi = efficiency(sample.audio.duration, [seg for seg, _ in admitted])
        err = pipeline_error(
            sample.reference_text,
            admitted,
            config.normalization,
            segment_references=sample.segment_references,
        )
        pairs.append((xi, err.value))
    return pairs


def calibrate(
    space: SearchSpace,
    samples: Sequence[CalibrationSample],
    base_config: PipelineConfig | None = None,
    lm: LanguageModel | None = None,
) -> tuple[PipelineConfig, list[TraceEntry]]:
    """Find the config maximizing sum(efficiency - error) over the samples.

    Candidates that fail validation or evaluation are recorded in the trace
    as invalid and skipped; ties keep the earliest candidate. Deterministic
    for a fixed space seed.
    """
    if not samples:
        raise UsageError("calibration needs at least one sample")
    base = base_config if base_config is not None else PipelineConfig()
    trace: list[TraceEntry] = []
    best: TraceEntry | None = None
    for config in candidate_configs(space, base):
        problems = validate_config(config)
        if problems:
            trace.append(TraceEntry(config=config, score=None, per_sample=[], error="; ".join(problems)))
            continue
        try:
            pairs = evaluate_config(config, samples, lm=lm)
        except Exception as exc:
            trace.append(TraceEntry(config=config, score=None, per_sample=[], error=str(exc)))
            continue
        entry = TraceEntry(config=config, score=objective_score(pairs), per_sample=pairs)
        trace.append(entry)
        if best is None or entry.score > best.score:
            best = entry
    if best is None:
        raise ConfigError("every candidate configuration failed to evaluate")
    return best.config, trace


def write_trace(trace: Sequence[TraceEntry], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for entry in trace:
            fh.write(json.dumps(entry.to_dict(), ensure_ascii=False))
            fh.write("\n")


# --- sample files ----------------------------------------------------------------


def load_samples(path) -> list[CalibrationSample]:
    """Calibration sample file: JSONL, one sample per line.

    Record shape: {audio: {id, uri, duration, sample_rate}, reference_text,
    vad: [...], diarization: [...], replays: {gid: [{start, end, text}]},
    segment_references: [{start, end, text}] | absent}. Segment keys use the
    audio's own id.
    """
    samples = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(_sample_from(json.loads(line)))
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{line_number}: bad sample: {exc}") from exc
    return samples


def _sample_from(obj: dict) -> CalibrationSample:
    audio = AudioAsset(
        id=obj["audio"]["id"],
        uri=obj["audio"]["uri"],
        duration=obj["audio"]["duration"],
        sample_rate=obj["audio"]["sample_rate"],
    )
    vad = tuple(
        VadEvent(start=e["start"], end=e["end"], kind=VadKind(e["kind"])) for e in obj["vad"]
    )
    diarization = tuple(
        SpeakerInterval(speaker_id=d["speaker_id"], start=d["start"], end=d["end"])
        for d in obj.get("diarization", [])
    )
    replays = {
        gid: {
            (audio.id, to_ms(item["start"]), to_ms(item["end"])): item["text"]
            for item in items
        }
        for gid, items in obj["replays"].items()
    }
    segment_references = None
    if "segment_references" in obj:
        segment_references = {
            (audio.id, to_ms(item["start"]), to_ms(item["end"])): item["text"]
            for item in obj["segment_references"]
        }
    return CalibrationSample(
        audio=audio,
        reference_text=obj["reference_text"],
        vad_events=vad,
        diarization=diarization,
        replays=replays,
        segment_references=segment_references,
    )
