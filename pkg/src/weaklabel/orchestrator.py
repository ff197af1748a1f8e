"""End-to-end pipeline driver: segmentation, generation, gates, merging.

Per audio the flow is: split speech by VAD, flag speaker overlap, collect
one hypothesis per generator, gate on agreement, pick the medoid hypothesis,
gate on perplexity, then pack admitted segments into chunks. Every segment
leaves exactly one selection record, so created = admitted + dropped always
holds. Per-audio failures are isolated: the audio is skipped and counted,
never aborting the run.
"""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .datamodel import (
    AudioAsset,
    Chunk,
    Decision,
    PipelineConfig,
    QualityFlag,
    Segment,
    SelectionResult,
    to_ms,
    validate_config,
    write_manifest,
)
from .errors import ConfigError, GeneratorMissError, UsageError, ValidationError
from .generators import (
    CorruptionModel,
    HypothesisGenerator,
    MockNoisyGenerator,
    SegmentKey,
    segment_key,
)
from .merging import merge_segments
from .segmentation import (
    SpeakerInterval,
    VadEvent,
    VadKind,
    flag_overlap,
    load_speaker_intervals,
    load_vad_events,
    split_by_vad,
)
from .selection import LanguageModel, admit_by_agreement, admit_by_perplexity, select_hypothesis
from .textmetrics import UnitKind, levenshtein, tokenize

logger = logging.getLogger(__name__)

STAGES = ("segmentation", "generation", "selection", "merging")


@dataclass(frozen=True)
class CorpusEntry:
    asset: AudioAsset
    vad: tuple[VadEvent, ...]
    diarization: tuple[SpeakerInterval, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vad", tuple(self.vad))
        object.__setattr__(self, "diarization", tuple(self.diarization))


def load_corpus(path) -> list[CorpusEntry]:
    """Corpus manifest: JSONL, one audio per line.

    Each record carries {id, uri, duration, sample_rate} plus either inline
    event lists ("vad", "diarization") or file references ("vad_path",
    "diarization_path") resolved relative to the manifest.
    """
    path = Path(path)
    entries = []
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                asset = AudioAsset(
                    id=obj["id"],
                    uri=obj["uri"],
                    duration=obj["duration"],
                    sample_rate=obj["sample_rate"],
                )
                entries.append(
                    CorpusEntry(
                        asset=asset,
                        vad=_load_events(obj, path.parent),
                        diarization=_load_diarization(obj, path.parent),
                    )
                )
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{line_number}: bad corpus record: {exc}") from exc
    ids = [entry.asset.id for entry in entries]
    if len(set(ids)) != len(ids):
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"{path}: duplicate audio ids: {duplicates}")
    return entries


def _load_events(obj: dict, base: Path) -> tuple[VadEvent, ...]:
    if "vad" in obj:
        return tuple(
            VadEvent(start=e["start"], end=e["end"], kind=VadKind(e["kind"])) for e in obj["vad"]
        )
    if "vad_path" in obj:
        return tuple(load_vad_events(base / obj["vad_path"]))
    raise ValidationError("corpus record needs 'vad' or 'vad_path'")


def _load_diarization(obj: dict, base: Path) -> tuple[SpeakerInterval, ...]:
    if "diarization" in obj:
        return tuple(
            SpeakerInterval(speaker_id=d["speaker_id"], start=d["start"], end=d["end"])
            for d in obj["diarization"]
        )
    if "diarization_path" in obj:
        return tuple(load_speaker_intervals(base / obj["diarization_path"]))
    return ()


@dataclass
class RunSummary:
    audios_processed: int = 0
    audios_failed: int = 0
    segments_created: int = 0
    segments_admitted: int = 0
    dropped_by_reason: dict[str, int] = field(default_factory=dict)
    chunks_emitted: int = 0
    admitted_seconds: float = 0.0
    stage_seconds: dict[str, float] = field(default_factory=dict)

    @property
    def admitted_hours(self) -> float:
        return self.admitted_seconds / 3600.0

    def check_conservation(self) -> None:
        dropped = sum(self.dropped_by_reason.values())
        if self.segments_created != self.segments_admitted + dropped:
            raise RuntimeError(
                f"segment conservation violated: created={self.segments_created}, "
                f"admitted={self.segments_admitted}, dropped={dropped}"
            )

    def to_dict(self, include_timing: bool = False) -> dict:
        # Timings are excluded by default so persisted summaries are
        # reproducible byte-for-byte across runs.
        out = {
            "audios_processed": self.audios_processed,
            "audios_failed": self.audios_failed,
            "segments_created": self.segments_created,
            "segments_admitted": self.segments_admitted,
            "dropped_by_reason": {k: self.dropped_by_reason[k] for k in sorted(self.dropped_by_reason)},
            "chunks_emitted": self.chunks_emitted,
            "admitted_seconds": self.admitted_seconds,
            "admitted_hours": self.admitted_hours,
        }
        if include_timing:
            out["stage_seconds"] = dict(self.stage_seconds)
        return out


@dataclass
class AudioResult:
    selections: list[SelectionResult]
    chunks: list[Chunk]
    stage_seconds: dict[str, float]


@dataclass
class PipelineOutput:
    chunks: list[Chunk]
    selections: list[SelectionResult]
    summary: RunSummary


_DROP_FLAGS = {
    Decision.DROPPED_AGREEMENT: QualityFlag.LOW_AGREEMENT,
    Decision.DROPPED_PERPLEXITY: QualityFlag.HIGH_PERPLEXITY,
}


def _dropped(segment: Segment, decision: Decision, stats=None, ppl=None) -> SelectionResult:
    flag = _DROP_FLAGS.get(decision)
    if flag is not None:
        segment = replace(segment, quality_flags=segment.quality_flags | {flag})
    return SelectionResult(
        segment=segment, chosen=None, stats=stats, perplexity=ppl, decision=decision
    )


def label_audio(
    entry: CorpusEntry,
    generators: Sequence[HypothesisGenerator],
    config: PipelineConfig,
    lm: LanguageModel | None = None,
) -> AudioResult:
    """Run all pipeline stages for one audio. Pure given deterministic generators."""
    timings = dict.fromkeys(STAGES, 0.0)

    t0 = time.perf_counter()
    split = split_by_vad(entry.vad, config.max_segment_len, parent_id=entry.asset.id)
    segments = flag_overlap(split.segments, entry.diarization)
    timings["segmentation"] = time.perf_counter() - t0

    selections: list[SelectionResult] = []
    for island in split.dropped_short:
        selections.append(_dropped(island, Decision.DROPPED_LENGTH))

    admitted: list[tuple[Segment, str]] = []
    for segment in segments:
        if segment.overlap_flag:
            selections.append(_dropped(segment, Decision.DROPPED_OVERLAP))
            continue

        t0 = time.perf_counter()
        try:
            hypotheses = [g.generate(segment, audio=entry.asset) for g in generators]
        except GeneratorMissError as exc:
            logger.warning("audio=%s segment=%.3f-%.3f %s", entry.asset.id, segment.start, segment.end, exc)
            selections.append(_dropped(segment, Decision.DROPPED_GENERATOR))
            timings["generation"] += time.perf_counter() - t0
            continue
        timings["generation"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        stats, decision = admit_by_agreement(hypotheses, config)
        if decision is not Decision.ADMITTED:
            selections.append(_dropped(segment, decision, stats=stats))
            timings["selection"] += time.perf_counter() - t0
            continue

        chosen = select_hypothesis(hypotheses, config.normalization)
        if not config.normalization.apply(chosen.text).strip():
            # Consensus on effectively-empty text: nothing usable to train on.
            selections.append(_dropped(segment, Decision.DROPPED_AGREEMENT, stats=stats))
            timings["selection"] += time.perf_counter() - t0
            continue

        ppl = None
        if lm is not None:
            ppl, ppl_decision = admit_by_perplexity(chosen, lm, config.ppl_threshold)
            if ppl_decision is not Decision.ADMITTED:
                selections.append(_dropped(segment, ppl_decision, stats=stats, ppl=ppl))
                timings["selection"] += time.perf_counter() - t0
                continue
        timings["selection"] += time.perf_counter() - t0

        selections.append(
            SelectionResult(
                segment=segment, chosen=chosen, stats=stats, perplexity=ppl, decision=Decision.ADMITTED
            )
        )
        admitted.append((segment, chosen.text))

    t0 = time.perf_counter()
    chunks = merge_segments(admitted, config.max_chunk_len, config.merge_gap_tol)
    timings["merging"] = time.perf_counter() - t0
    return AudioResult(selections=selections, chunks=chunks, stage_seconds=timings)


def _select_generators(
    generators: Sequence[HypothesisGenerator], config: PipelineConfig
) -> list[HypothesisGenerator]:
    by_id = {g.generator_id: g for g in generators}
    if len(by_id) != len(generators):
        raise ConfigError("generator ids must be unique")
    if config.generator_ids:
        missing = [gid for gid in config.generator_ids if gid not in by_id]
        if missing:
            raise ConfigError(f"configured generators not provided: {missing}")
        chosen = [by_id[gid] for gid in config.generator_ids]
    else:
        chosen = list(generators)
    if len(chosen) < 2:
        raise ConfigError("the agreement gate needs at least two generators")
    return chosen


def run_pipeline(
    corpus: Sequence[CorpusEntry],
    generators: Sequence[HypothesisGenerator],
    config: PipelineConfig,
    lm: LanguageModel | None = None,
    workers: int = 1,
) -> PipelineOutput:
    """Label a corpus. Output ordering follows corpus order, whatever the worker count."""
    problems = validate_config(config)
    if problems:
        raise ConfigError("; ".join(problems))
    active = _select_generators(generators, config)

    def one(entry: CorpusEntry):
        try:
            return label_audio(entry, active, config, lm=lm)
        except Exception as exc:  # isolate per-audio failures
            logger.error("audio=%s skipped: %s", entry.asset.id, exc)
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, corpus))
    else:
        results = [one(entry) for entry in corpus]

    summary = RunSummary(stage_seconds=dict.fromkeys(STAGES, 0.0))
    chunks: list[Chunk] = []
    selections: list[SelectionResult] = []
    for entry, result in zip(corpus, results):
        if isinstance(result, Exception):
            summary.audios_failed += 1
            continue
        summary.audios_processed += 1
        chunks.extend(result.chunks)
        selections.extend(result.selections)
        summary.chunks_emitted += len(result.chunks)
        summary.segments_created += len(result.selections)
        for stage, seconds in result.stage_seconds.items():
            summary.stage_seconds[stage] += seconds
        for selection in result.selections:
            if selection.decision is Decision.ADMITTED:
                summary.segments_admitted += 1
            else:
                reason = selection.decision.value
                summary.dropped_by_reason[reason] = summary.dropped_by_reason.get(reason, 0) + 1
        logger.info(
            "audio=%s segments=%d admitted=%d chunks=%d",
            entry.asset.id,
            len(result.selections),
            sum(1 for s in result.selections if s.decision is Decision.ADMITTED),
            len(result.chunks),
        )
    summary.admitted_seconds = sum(c.speech_ms for c in chunks) / 1000.0
    summary.check_conservation()
    return PipelineOutput(chunks=chunks, selections=selections, summary=summary)


def write_outputs(output: PipelineOutput, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(output.chunks, out_dir / "chunks.jsonl")
    write_manifest(output.selections, out_dir / "selections.jsonl")
    (out_dir / "summary.json").write_text(
        json.dumps(output.summary.to_dict(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return out_dir


def run_iteration(
    corpus: Sequence[CorpusEntry],
    generators: Sequence[HypothesisGenerator],
    config: PipelineConfig,
    out_root,
    lm: LanguageModel | None = None,
    workers: int = 1,
    iteration: int | None = None,
) -> tuple[Path, PipelineOutput]:
    """One labeling iteration with versioned outputs.

    Writes into out_root/iter_NNN (next free index unless given) and records
    the generator ids actually used. Earlier iterations are never touched;
    swapping the generator list between invocations is the supported way to
    add a newly trained model or retire a misbehaving one.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    if iteration is None:
        existing = [
            int(p.name.split("_")[1])
            for p in out_root.glob("iter_*")
            if p.is_dir() and p.name.split("_")[1].isdigit()
        ]
        iteration = max(existing, default=0) + 1
    out_dir = out_root / f"iter_{iteration:03d}"
    if out_dir.exists():
        raise ConfigError(f"{out_dir} already exists; refusing to overwrite an iteration")

    output = run_pipeline(corpus, generators, config, lm=lm, workers=workers)
    write_outputs(output, out_dir)
    active = _select_generators(generators, config)
    metadata = {
        "iteration": iteration,
        "generator_ids": [g.generator_id for g in active],
        "config": _config_dict(config),
    }
    (out_dir / "metadata.json").write_text(
        json.dumps(metadata, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return out_dir, output


def _config_dict(config: PipelineConfig) -> dict:
    from .datamodel import config_to_dict

    return config_to_dict(config)


# --- simulation ---------------------------------------------------------------

DEFAULT_SIM_VOCABULARY = (
    "amal",
    "bahr",
    "dars",
    "fajr",
    "hilm",
    "jabal",
    "kitab",
    "layl",
    "nahr",
    "qamar",
    "rih",
    "shams",
    "tariq",
    "warda",
    "yamam",
    "zahr",
)


@dataclass(frozen=True)
class SimulationSpec:
    """Synthetic corpus with known ground truth for desk-scale pipeline runs.

    Each utterance becomes one speech event whose duration is proportional
    to its word count, so every utterance maps to exactly one segment and
    per-segment ground truth stays exact. `words_max * word_seconds` must
    therefore fit within the segment cap.
    """

    audios: int = 20
    utterances_per_audio: int = 10
    words_min: int = 3
    words_max: int = 10
    word_seconds: float = 0.5
    gap_min: float = 0.3
    gap_max: float = 2.0
    vocabulary: tuple[str, ...] = DEFAULT_SIM_VOCABULARY
    seed: int = 0

    def __post_init__(self):
        if self.words_min < 1 or self.words_min > self.words_max:
            raise UsageError("need 1 <= words_min <= words_max")
        if self.audios < 1 or self.utterances_per_audio < 1:
            raise UsageError("need at least one audio and one utterance per audio")
        if self.gap_min < 0 or self.gap_min > self.gap_max:
            raise UsageError("need 0 <= gap_min <= gap_max")
        if len(self.vocabulary) < 2:
            raise UsageError("simulation vocabulary needs at least two words")


@dataclass(frozen=True)
class SyntheticCorpus:
    entries: tuple[CorpusEntry, ...]
    ground_truth: dict[SegmentKey, str]
    total_speech_ms: int


def build_synthetic_corpus(spec: SimulationSpec, max_segment_len: float) -> SyntheticCorpus:
    if spec.words_max * spec.word_seconds > max_segment_len:
        raise UsageError(
            f"utterances of up to {spec.words_max} words at {spec.word_seconds}s/word "
            f"exceed the {max_segment_len}s segment cap"
        )
    rng = random.Random(spec.seed)
    entries = []
    ground_truth: dict[SegmentKey, str] = {}
    total_speech_ms = 0
    word_ms = to_ms(spec.word_seconds)
    for a in range(spec.audios):
        audio_id = f"sim-{a:04d}"
        cursor_ms = to_ms(round(rng.uniform(spec.gap_min, spec.gap_max), 3))
        events = []
        for _ in range(spec.utterances_per_audio):
            n_words = rng.randint(spec.words_min, spec.words_max)
            words = [rng.choice(spec.vocabulary) for _ in range(n_words)]
            start_ms = cursor_ms
            end_ms = start_ms + n_words * word_ms
            events.append(
                VadEvent(start=start_ms / 1000.0, end=end_ms / 1000.0, kind=VadKind.SPEECH)
            )
            ground_truth[(audio_id, start_ms, end_ms)] = " ".join(words)
            total_speech_ms += end_ms - start_ms
            cursor_ms = end_ms + to_ms(round(rng.uniform(spec.gap_min, spec.gap_max), 3))
        duration = (cursor_ms + 500) / 1000.0
        asset = AudioAsset(id=audio_id, uri=f"synthetic://{audio_id}", duration=duration, sample_rate=16000)
        entries.append(CorpusEntry(asset=asset, vad=tuple(events)))
    return SyntheticCorpus(
        entries=tuple(entries), ground_truth=ground_truth, total_speech_ms=total_speech_ms
    )


@dataclass
class QualityReport:
    """How good the admitted weak labels are against known ground truth."""

    admitted_speech_fraction: float
    admitted_segments: int
    label_wer: float | None
    generator_wer: dict[str, float]
    mean_generator_wer: float | None

    def to_dict(self) -> dict:
        return {
            "admitted_speech_fraction": self.admitted_speech_fraction,
            "admitted_segments": self.admitted_segments,
            "label_wer": self.label_wer,
            "generator_wer": {k: self.generator_wer[k] for k in sorted(self.generator_wer)},
            "mean_generator_wer": self.mean_generator_wer,
        }


def simulate(
    spec: SimulationSpec,
    config: PipelineConfig,
    corruption: Mapping[str, CorruptionModel],
    lm: LanguageModel | None = None,
    workers: int = 1,
) -> tuple[PipelineOutput, QualityReport, SyntheticCorpus]:
    """Generate a synthetic corpus, label it with noisy mocks, grade the labels.

    The quality report compares admitted labels against ground truth and
    against what each generator alone would have produced on the same
    admitted segments.
    """
    if len(corruption) < 2:
        raise ConfigError("simulation needs at least two generators")
    corpus = build_synthetic_corpus(spec, config.max_segment_len)
    mocks = [
        MockNoisyGenerator(gid, corpus.ground_truth, model)
        for gid, model in sorted(corruption.items())
    ]
    output = run_pipeline(corpus.entries, mocks, config, lm=lm, workers=workers)
    report = grade_against_truth(output, mocks, corpus)
    return output, report, corpus


def grade_against_truth(
    output: PipelineOutput,
    generators: Sequence[HypothesisGenerator],
    corpus: SyntheticCorpus,
) -> QualityReport:
    admitted = [s for s in output.selections if s.decision is Decision.ADMITTED]
    admitted_ms = sum(s.segment.duration_ms for s in admitted)
    fraction = float(Fraction(admitted_ms, corpus.total_speech_ms)) if corpus.total_speech_ms else 0.0
    if not admitted:
        return QualityReport(
            admitted_speech_fraction=fraction,
            admitted_segments=0,
            label_wer=None,
            generator_wer={},
            mean_generator_wer=None,
        )

    label_edits = 0
    ref_len = 0
    gen_edits = dict.fromkeys((g.generator_id for g in generators), 0)
    for selection in admitted:
        key = segment_key(selection.segment)
        reference = tokenize(corpus.ground_truth[key], UnitKind.WORD)
        ref_len += len(reference)
        chosen = tokenize(selection.chosen.text, UnitKind.WORD)
        label_edits += levenshtein(reference, chosen)
        for generator in generators:
            hyp = tokenize(generator.generate(selection.segment).text, UnitKind.WORD)
            gen_edits[generator.generator_id] += levenshtein(reference, hyp)

    label_wer = float(Fraction(label_edits, ref_len))
    generator_wer = {gid: float(Fraction(edits, ref_len)) for gid, edits in gen_edits.items()}
    mean_generator_wer = sum(generator_wer.values()) / len(generator_wer)
    return QualityReport(
        admitted_speech_fraction=fraction,
        admitted_segments=len(admitted),
        label_wer=label_wer,
        generator_wer=generator_wer,
        mean_generator_wer=mean_generator_wer,
    )
