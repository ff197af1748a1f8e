"""Pack consecutive admitted segments into bounded training chunks.

Greedy first-fit: a segment joins the current chunk iff the grown span stays
within the cap and the silence gap to the previous member is within
tolerance. Consecutiveness forbids reordering, which makes greedy packing
optimal for chunk count under these constraints.
"""

from __future__ import annotations

from typing import Sequence

from .datamodel import Chunk, ChunkMember, Segment, to_ms
from .errors import ValidationError


def merge_segments(
    admitted: Sequence[tuple[Segment, str]],
    max_chunk_len: float,
    gap_tol: float,
) -> list[Chunk]:
    """Merge time-ordered (segment, transcript) pairs from one parent audio.

    The chunk span runs from the first member's start to the last member's
    end, so interior gaps count against the cap; both span and speech-only
    duration are recoverable from the chunk. Transcripts join with a single
    space.
    """
    if not admitted:
        return []
    parent_ids = {segment.parent_id for segment, _ in admitted}
    if len(parent_ids) != 1:
        raise ValidationError(f"segments span multiple parents: {sorted(parent_ids)}")
    for (prev, _), (cur, _) in zip(admitted, admitted[1:]):
        if to_ms(cur.start) < to_ms(prev.end):
            raise ValidationError(
                f"segments out of order or overlapping near t={cur.start}"
            )

    cap_ms = to_ms(max_chunk_len)
    gap_ms = to_ms(gap_tol)
    chunks: list[Chunk] = []
    current: list[tuple[Segment, str]] = []
    for segment, text in admitted:
        if current:
            gap = to_ms(segment.start) - to_ms(current[-1][0].end)
            span = to_ms(segment.end) - to_ms(current[0][0].start)
            if gap <= gap_ms and span <= cap_ms:
                current.append((segment, text))
                continue
            chunks.append(_build_chunk(current))
            current = [(segment, text)]
        else:
            current = [(segment, text)]
    chunks.append(_build_chunk(current))
    return chunks


def _build_chunk(members: list[tuple[Segment, str]]) -> Chunk:
    parts = tuple(
        ChunkMember(start=segment.start, end=segment.end, text=text)
        for segment, text in members
    )
    return Chunk(
        parent_id=members[0][0].parent_id,
        start=parts[0].start,
        end=parts[-1].end,
        transcript=" ".join(m.text for m in parts),
        members=parts,
    )
