import random

import pytest

from weaklabel.datamodel import Segment, to_ms
from weaklabel.errors import ValidationError
from weaklabel.merging import merge_segments

from oracles import min_chunk_count


def seg(start, end, parent="a"):
    return Segment(parent_id=parent, start=start, end=end)


def pairs(*intervals):
    return [(seg(s, e), f"t{i}") for i, (s, e) in enumerate(intervals)]


class TestMergeSegments:
    def test_exactly_at_cap_single_chunk(self):
        chunks = merge_segments(pairs((0, 5), (5, 10), (10, 15)), 15.0, 1.0)
        assert len(chunks) == 1
        assert (chunks[0].start, chunks[0].end) == (0.0, 15.0)
        assert chunks[0].transcript == "t0 t1 t2"

    def test_cap_forces_break(self):
        chunks = merge_segments(pairs((0, 5), (5, 10), (10, 15), (15, 16)), 15.0, 1.0)
        assert [(c.start, c.end) for c in chunks] == [(0.0, 15.0), (15.0, 16.0)]

    def test_gap_over_tolerance_breaks(self):
        chunks = merge_segments(pairs((0, 4), (9, 12)), 15.0, 1.0)
        assert len(chunks) == 2

    def test_gap_exactly_at_tolerance_merges(self):
        chunks = merge_segments(pairs((0, 4), (5, 8)), 15.0, 1.0)
        assert len(chunks) == 1
        assert chunks[0].span_ms == 8000
        assert chunks[0].speech_ms == 7000

    def test_empty_input(self):
        assert merge_segments([], 15.0, 1.0) == []

    def test_unordered_rejected(self):
        with pytest.raises(ValidationError):
            merge_segments([(seg(5, 6), "b"), (seg(0, 1), "a")], 15.0, 1.0)

    def test_overlapping_rejected(self):
        with pytest.raises(ValidationError):
            merge_segments([(seg(0, 3), "a"), (seg(2, 4), "b")], 15.0, 1.0)

    def test_mixed_parents_rejected(self):
        with pytest.raises(ValidationError):
            merge_segments([(seg(0, 1, "a"), "x"), (seg(2, 3, "b"), "y")], 15.0, 1.0)

    def test_interior_gaps_count_against_span(self):
        # Three 4 s segments with 1 s gaps: span 0-14 fits; a fourth would not.
        chunks = merge_segments(pairs((0, 4), (5, 9), (10, 14), (15, 19)), 15.0, 1.0)
        assert [(c.start, c.end) for c in chunks] == [(0.0, 14.0), (15.0, 19.0)]

    def test_transcript_is_single_space_join(self):
        chunks = merge_segments([(seg(0, 1), "ab cd"), (seg(1, 2), "ef")], 15.0, 1.0)
        assert chunks[0].transcript == "ab cd ef"


class TestPackingProperties:
    def _random_case(self, rng):
        segments = []
        cursor = 0
        for _ in range(rng.randint(1, 8)):
            cursor += rng.choice([0, rng.randint(1, 2500)])
            length = rng.randint(300, 6000)
            segments.append((cursor, cursor + length))
            cursor += length
        return segments

    def test_chunk_count_minimal_vs_brute_force(self):
        rng = random.Random(11)
        for _ in range(300):
            intervals = self._random_case(rng)
            cap_ms, gap_ms = 15000, rng.choice([0, 500, 1000, 2000])
            chunks = merge_segments(
                [(seg(s / 1000, e / 1000), "w") for s, e in intervals],
                cap_ms / 1000,
                gap_ms / 1000,
            )
            assert len(chunks) == min_chunk_count(intervals, cap_ms, gap_ms)

    def test_every_segment_in_exactly_one_chunk(self):
        rng = random.Random(12)
        for _ in range(200):
            intervals = self._random_case(rng)
            inputs = [(seg(s / 1000, e / 1000), f"w{i}") for i, (s, e) in enumerate(intervals)]
            chunks = merge_segments(inputs, 15.0, 1.0)
            members = [(to_ms(m.start), to_ms(m.end)) for c in chunks for m in c.members]
            assert members == intervals
            assert all(c.span_ms <= 15000 for c in chunks)

    def test_merging_conserves_speech_duration(self):
        rng = random.Random(13)
        for _ in range(200):
            intervals = self._random_case(rng)
            inputs = [(seg(s / 1000, e / 1000), "w") for s, e in intervals]
            chunks = merge_segments(inputs, 15.0, 1.0)
            assert sum(c.speech_ms for c in chunks) == sum(e - s for s, e in intervals)

    def test_member_order_preserves_time(self):
        chunks = merge_segments(pairs((0, 2), (2.5, 4), (4.5, 6)), 15.0, 1.0)
        for chunk in chunks:
            starts = [m.start for m in chunk.members]
            assert starts == sorted(starts)
