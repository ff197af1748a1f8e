import json
import random

import pytest

from weaklabel.datamodel import QualityFlag, Segment, to_ms
from weaklabel.errors import ValidationError
from weaklabel.segmentation import (
    SpeakerInterval,
    VadEvent,
    VadKind,
    flag_overlap,
    load_speaker_intervals,
    load_vad_events,
    split_by_vad,
)

from oracles import greedy_hard_split, intervals_overlap_inside


def speech(start, end):
    return VadEvent(start=start, end=end, kind=VadKind.SPEECH)


def nonspeech(start, end):
    return VadEvent(start=start, end=end, kind=VadKind.NONSPEECH)


def spans(segments):
    return [(s.start, s.end) for s in segments]


class TestSplitByVad:
    def test_under_cap_single_segment(self):
        split = split_by_vad([speech(0, 3)], 5.0, parent_id="a")
        assert spans(split.segments) == [(0.0, 3.0)]
        assert split.dropped_short == ()

    def test_hard_split_matches_greedy_oracle(self):
        split = split_by_vad([speech(0, 12)], 5.0, parent_id="a")
        expected = [
            (s / 1000.0, e / 1000.0) for s, e in greedy_hard_split(0, 12000, 5000)
        ]
        assert spans(split.segments) == expected == [(0.0, 5.0), (5.0, 10.0), (10.0, 12.0)]

    def test_empty_event_list(self):
        split = split_by_vad([], 5.0, parent_id="a")
        assert split.segments == ()

    def test_nonspeech_events_ignored_for_content(self):
        split = split_by_vad([nonspeech(0, 1), speech(1, 3), nonspeech(3, 9)], 5.0, parent_id="a")
        assert spans(split.segments) == [(1.0, 3.0)]

    def test_prefers_junction_over_hard_cut(self):
        # Two touching speech events: the VAD marked a boundary at t=4, so an
        # over-cap span cuts there instead of at the 5 s cap.
        split = split_by_vad([speech(0, 4), speech(4, 9)], 5.0, parent_id="a")
        assert spans(split.segments) == [(0.0, 4.0), (4.0, 9.0)]

    def test_touching_events_under_cap_coalesce(self):
        split = split_by_vad([speech(0, 2), speech(2, 4)], 5.0, parent_id="a")
        assert spans(split.segments) == [(0.0, 4.0)]

    def test_positive_gap_separates_spans(self):
        split = split_by_vad([speech(0, 7), nonspeech(7, 7.5), speech(7.5, 12)], 5.0, parent_id="a")
        assert spans(split.segments) == [(0.0, 5.0), (5.0, 7.0), (7.5, 12.0)]

    def test_isolated_short_island_dropped_and_counted(self):
        split = split_by_vad([speech(0, 0.1), speech(1, 3)], 5.0, parent_id="a")
        assert spans(split.segments) == [(1.0, 3.0)]
        assert spans(split.dropped_short) == [(0.0, 0.1)]

    def test_touching_island_absorbed_into_span(self):
        split = split_by_vad([speech(0, 0.15), speech(0.15, 3)], 5.0, parent_id="a")
        assert spans(split.segments) == [(0.0, 3.0)]
        assert split.dropped_short == ()

    def test_unordered_events_rejected(self):
        with pytest.raises(ValidationError):
            split_by_vad([speech(2, 3), speech(0, 1)], 5.0, parent_id="a")

    def test_overlapping_events_rejected(self):
        with pytest.raises(ValidationError):
            split_by_vad([speech(0, 2), speech(1.5, 3)], 5.0, parent_id="a")

    def test_conservation_and_cap_on_random_streams(self):
        rng = random.Random(42)
        for _ in range(200):
            events, cursor = [], 0
            for _ in range(rng.randint(0, 10)):
                gap_ms = rng.choice([0, 0, rng.randint(1, 3000)])
                cursor += gap_ms
                length_ms = rng.randint(200, 12000)
                events.append(speech(cursor / 1000.0, (cursor + length_ms) / 1000.0))
                cursor += length_ms
            split = split_by_vad(events, 5.0, parent_id="a")
            speech_ms = sum(to_ms(e.end) - to_ms(e.start) for e in events)
            emitted = sum(s.duration_ms for s in split.segments)
            dropped = sum(s.duration_ms for s in split.dropped_short)
            assert emitted + dropped == speech_ms
            assert all(s.duration_ms <= 5000 for s in split.segments)
            assert all(s.duration_ms > 0 for s in split.segments)
            again = split_by_vad(events, 5.0, parent_id="a")
            assert again == split  # determinism

    def test_segments_time_ordered_nonoverlapping(self):
        split = split_by_vad([speech(0, 11), nonspeech(11, 12), speech(12, 14)], 5.0, parent_id="a")
        segs = split.segments
        for prev, cur in zip(segs, segs[1:]):
            assert to_ms(cur.start) >= to_ms(prev.end)


class TestFlagOverlap:
    def test_single_speaker_never_flagged(self):
        segments = [Segment("a", 0, 4)]
        out = flag_overlap(segments, [SpeakerInterval("spk1", 0, 10)])
        assert not out[0].overlap_flag

    def test_two_speakers_overlapping_inside_segment(self):
        segment = Segment("a", 2, 5)
        diar = [SpeakerInterval("A", 0, 4), SpeakerInterval("B", 3, 6)]
        (out,) = flag_overlap([segment], diar)
        assert intervals_overlap_inside((2, 5), (0, 4), (3, 6))
        assert out.overlap_flag
        assert QualityFlag.OVERLAPPING_SPEAKERS in out.quality_flags

    def test_boundary_touch_not_flagged(self):
        segment = Segment("a", 0, 4)
        diar = [SpeakerInterval("A", 0, 2), SpeakerInterval("B", 2, 4)]
        (out,) = flag_overlap([segment], diar)
        assert not intervals_overlap_inside((0, 4), (0, 2), (2, 4))
        assert not out.overlap_flag

    def test_overlap_outside_segment_not_flagged(self):
        segment = Segment("a", 0, 2)
        diar = [SpeakerInterval("A", 3, 5), SpeakerInterval("B", 4, 6)]
        (out,) = flag_overlap([segment], diar)
        assert not out.overlap_flag

    def test_same_speaker_intervals_not_flagged(self):
        segment = Segment("a", 0, 4)
        diar = [SpeakerInterval("A", 0, 3), SpeakerInterval("A", 2, 4)]
        (out,) = flag_overlap([segment], diar)
        assert not out.overlap_flag

    def test_boundaries_never_change(self):
        segments = [Segment("a", 0, 4), Segment("a", 5, 9)]
        diar = [SpeakerInterval("A", 0, 9), SpeakerInterval("B", 1, 8)]
        out = flag_overlap(segments, diar)
        assert spans(out) == spans(segments)
        assert all(s.overlap_flag for s in out)

    def test_random_against_oracle(self):
        rng = random.Random(7)
        for _ in range(300):
            seg = Segment("a", 0, rng.uniform(1, 10))
            diar = [
                SpeakerInterval(f"s{rng.randint(0, 2)}", start, start + rng.uniform(0.1, 5))
                for start in (rng.uniform(0, 8) for _ in range(rng.randint(0, 4)))
            ]
            (out,) = flag_overlap([seg], diar)
            expected = any(
                a.speaker_id != b.speaker_id
                and intervals_overlap_inside(
                    (to_ms(seg.start), to_ms(seg.end)),
                    (to_ms(a.start), to_ms(a.end)),
                    (to_ms(b.start), to_ms(b.end)),
                )
                for i, a in enumerate(diar)
                for b in diar[i + 1 :]
            )
            assert out.overlap_flag == expected


class TestEventFiles:
    def test_vad_round_trip(self, tmp_path):
        path = tmp_path / "vad.jsonl"
        rows = [
            {"start": 0.0, "end": 1.25, "kind": "speech"},
            {"start": 1.25, "end": 2.0, "kind": "nonspeech"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
        events = load_vad_events(path)
        assert events == [speech(0, 1.25), nonspeech(1.25, 2.0)]

    def test_vad_bad_kind_names_line(self, tmp_path):
        path = tmp_path / "vad.jsonl"
        path.write_text('{"start": 0, "end": 1, "kind": "music"}\n', encoding="utf-8")
        with pytest.raises(ValidationError, match="vad.jsonl:1"):
            load_vad_events(path)

    def test_diarization_load(self, tmp_path):
        path = tmp_path / "diar.jsonl"
        path.write_text('{"speaker_id": "spk0", "start": 0.5, "end": 3.0}\n', encoding="utf-8")
        assert load_speaker_intervals(path) == [SpeakerInterval("spk0", 0.5, 3.0)]
