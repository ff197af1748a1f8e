"""Turn VAD and diarization event streams into capped candidate segments.

VAD and diarization are consumed as event files, never computed from audio.
Touching speech events coalesce into one contiguous span; spans longer than
the cap are cut preferentially at the event junctions inside the window (the
points where the VAD itself marked a break) and at exactly the cap otherwise,
so no speech time is lost or invented.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .datamodel import QualityFlag, Segment, to_ms, to_seconds
from .errors import ValidationError

#: Spans shorter than this are untranscribable and are dropped (and counted).
MIN_SEGMENT_LEN = 0.2


class VadKind(str, Enum):
    SPEECH = "speech"
    NONSPEECH = "nonspeech"


@dataclass(frozen=True)
class VadEvent:
    start: float
    end: float
    kind: VadKind

    def __post_init__(self):
        if self.start >= self.end:
            raise ValidationError(f"VAD event [{self.start}, {self.end}]: start must precede end")


@dataclass(frozen=True)
class SpeakerInterval:
    speaker_id: str
    start: float
    end: float

    def __post_init__(self):
        if self.start >= self.end:
            raise ValidationError(
                f"speaker interval [{self.start}, {self.end}]: start must precede end"
            )


@dataclass(frozen=True)
class VadSplit:
    """Segments carved from one audio plus the sub-minimum islands dropped."""

    segments: tuple[Segment, ...]
    dropped_short: tuple[Segment, ...]


def validate_events(events: Sequence[VadEvent]) -> None:
    for prev, cur in zip(events, events[1:]):
        if to_ms(cur.start) < to_ms(prev.end):
            raise ValidationError(
                f"VAD events out of order or overlapping near t={cur.start}"
            )


def split_by_vad(
    events: Sequence[VadEvent],
    max_segment_len: float,
    *,
    parent_id: str,
    min_segment_len: float = MIN_SEGMENT_LEN,
) -> VadSplit:
    """Carve speech events into segments no longer than `max_segment_len`.

    Contiguous speech events (zero gap) form one span; the junctions between
    them are remembered as preferred cut points. Isolated spans shorter than
    `min_segment_len` are returned separately as dropped, not silently lost.
    Total emitted duration plus dropped duration equals total speech duration.
    """
    validate_events(events)
    cap_ms = to_ms(max_segment_len)
    min_ms = to_ms(min_segment_len)
    if cap_ms <= 0:
        raise ValidationError("max_segment_len must be > 0")

    # Coalesce touching speech events into spans and collect their junctions.
    spans: list[tuple[int, int, list[int]]] = []  # (start_ms, end_ms, junctions)
    for event in events:
        if event.kind is not VadKind.SPEECH:
            continue
        s, e = to_ms(event.start), to_ms(event.end)
        if spans and s == spans[-1][1]:
            start, _, junctions = spans[-1]
            junctions.append(s)
            spans[-1] = (start, e, junctions)
        else:
            spans.append((s, e, []))

    segments: list[Segment] = []
    dropped: list[Segment] = []
    for start, end, junctions in spans:
        if end - start < min_ms:
            dropped.append(
                Segment(parent_id=parent_id, start=to_seconds(start), end=to_seconds(end))
            )
            continue
        cursor = start
        while end - cursor > cap_ms:
            window_end = cursor + cap_ms
            inside = [j for j in junctions if cursor < j <= window_end]
            cut = inside[-1] if inside else window_end
            segments.append(
                Segment(parent_id=parent_id, start=to_seconds(cursor), end=to_seconds(cut))
            )
            cursor = cut
        segments.append(
            Segment(parent_id=parent_id, start=to_seconds(cursor), end=to_seconds(end))
        )
    return VadSplit(segments=tuple(segments), dropped_short=tuple(dropped))


def flag_overlap(
    segments: Iterable[Segment], diarization: Sequence[SpeakerInterval]
) -> list[Segment]:
    """Mark segments where two distinct speakers overlap for positive duration.

    Boundaries are never changed; touching intervals (zero-length
    intersection) do not count as overlap.
    """
    flagged = []
    for segment in segments:
        if _has_speaker_overlap(segment, diarization):
            flagged.append(
                Segment(
                    parent_id=segment.parent_id,
                    start=segment.start,
                    end=segment.end,
                    overlap_flag=True,
                    quality_flags=segment.quality_flags | {QualityFlag.OVERLAPPING_SPEAKERS},
                )
            )
        else:
            flagged.append(segment)
    return flagged


def _has_speaker_overlap(segment: Segment, diarization: Sequence[SpeakerInterval]) -> bool:
    seg_s, seg_e = to_ms(segment.start), to_ms(segment.end)
    clipped = []
    for interval in diarization:
        s = max(to_ms(interval.start), seg_s)
        e = min(to_ms(interval.end), seg_e)
        if s < e:
            clipped.append((interval.speaker_id, s, e))
    for i, (spk_a, sa, ea) in enumerate(clipped):
        for spk_b, sb, eb in clipped[i + 1 :]:
            if spk_a != spk_b and min(ea, eb) - max(sa, sb) > 0:
                return True
    return False


# --- event files: JSONL, seconds with millisecond precision ------------------


def load_vad_events(path) -> list[VadEvent]:
    events = []
    for line_number, obj in _read_jsonl(path):
        try:
            events.append(VadEvent(start=obj["start"], end=obj["end"], kind=VadKind(obj["kind"])))
        except (KeyError, ValueError, ValidationError) as exc:
            raise ValidationError(f"{path}:{line_number}: bad VAD event: {exc}") from exc
    validate_events(events)
    return events


def load_speaker_intervals(path) -> list[SpeakerInterval]:
    intervals = []
    for line_number, obj in _read_jsonl(path):
        try:
            intervals.append(
                SpeakerInterval(speaker_id=obj["speaker_id"], start=obj["start"], end=obj["end"])
            )
        except (KeyError, ValidationError) as exc:
            raise ValidationError(f"{path}:{line_number}: bad speaker interval: {exc}") from exc
    return intervals


def _read_jsonl(path):
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if line.strip():
                yield line_number, json.loads(line)
