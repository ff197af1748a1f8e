"""Hypothesis-generation backends behind one small contract.

Three interchangeable kinds: a file-backed replay generator (precomputed
transcripts keyed by segment), a seeded noisy mock for tests and
simulations, and an HTTP client for real ASR services. All are safe for
concurrent calls across segments and deterministic where the contract
promises it.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Protocol

from .datamodel import AudioAsset, Hypothesis, Segment, to_ms
from .errors import BackendError, ConfigError, GeneratorMissError, ValidationError
from .textmetrics import TokenSequence, UnitKind, tokenize

#: Unit pool mock generators substitute and insert from.
DEFAULT_ALPHABET = tuple("abcdefghij")

SegmentKey = tuple[str, int, int]


def segment_key(segment: Segment) -> SegmentKey:
    """Millisecond-precise lookup key; immune to float drift in boundaries."""
    return (segment.parent_id, to_ms(segment.start), to_ms(segment.end))


class GeneratorKind(str, Enum):
    FILE_REPLAY = "file_replay"
    MOCK_NOISY = "mock_noisy"
    HTTP = "http"


@dataclass(frozen=True)
class CorruptionModel:
    """Per-unit noise model: delete, substitute, then maybe insert after."""

    sub_rate: float = 0.0
    ins_rate: float = 0.0
    del_rate: float = 0.0
    unit_kind: UnitKind = UnitKind.WORD
    seed: int = 0
    alphabet: tuple[str, ...] = DEFAULT_ALPHABET

    def __post_init__(self):
        for name in ("sub_rate", "ins_rate", "del_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {rate}")
        if self.sub_rate + self.del_rate > 1.0:
            raise ValidationError("sub_rate + del_rate must not exceed 1")
        if len(self.alphabet) < 2:
            raise ValidationError("corruption alphabet needs at least two units")


def corrupt(
    reference: TokenSequence, model: CorruptionModel, rng: random.Random | None = None
) -> TokenSequence:
    """Apply the noise model to a reference sequence, reproducibly.

    Per unit, one roll decides delete vs substitute vs keep (deletion and
    substitution are mutually exclusive); a second roll may insert a random
    unit after the position. Substitutions always pick a different unit.
    """
    if rng is None:
        rng = random.Random(model.seed)
    out: list[str] = []
    for unit in reference.units:
        roll = rng.random()
        if roll < model.del_rate:
            pass
        elif roll < model.del_rate + model.sub_rate:
            out.append(_different_unit(rng, unit, model.alphabet))
        else:
            out.append(unit)
        if model.ins_rate and rng.random() < model.ins_rate:
            out.append(rng.choice(model.alphabet))
    return TokenSequence(units=tuple(out), unit_kind=reference.unit_kind)


def _different_unit(rng: random.Random, unit: str, alphabet: tuple[str, ...]) -> str:
    choices = [u for u in alphabet if u != unit]
    return rng.choice(choices) if choices else rng.choice(alphabet)


class HypothesisGenerator(Protocol):
    generator_id: str

    def generate(self, segment: Segment, *, audio: AudioAsset | None = None) -> Hypothesis:
        ...


class ReplayGenerator:
    """Replays precomputed transcripts keyed by (parent_id, start, end)."""

    def __init__(self, generator_id: str, table: Mapping[SegmentKey, str]):
        self.generator_id = generator_id
        self._table = dict(table)

    @classmethod
    def from_file(cls, generator_id: str, path) -> "ReplayGenerator":
        return cls(generator_id, load_replay_table(path))

    def generate(self, segment: Segment, *, audio: AudioAsset | None = None) -> Hypothesis:
        key = segment_key(segment)
        try:
            text = self._table[key]
        except KeyError:
            raise GeneratorMissError(
                f"generator {self.generator_id!r} has no transcript for "
                f"{key[0]}[{segment.start}, {segment.end}]"
            ) from None
        return Hypothesis(generator_id=self.generator_id, text=text)


def load_replay_table(path) -> dict[SegmentKey, str]:
    """Replay transcript file: JSONL records {parent_id, start, end, text}."""
    table: dict[SegmentKey, str] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (obj["parent_id"], to_ms(obj["start"]), to_ms(obj["end"]))
                table[key] = obj["text"]
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{line_number}: bad replay record: {exc}") from exc
    return table


def write_replay_table(table: Mapping[SegmentKey, str], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for (parent_id, start_ms, end_ms), text in table.items():
            record = {
                "parent_id": parent_id,
                "start": start_ms / 1000.0,
                "end": end_ms / 1000.0,
                "text": text,
            }
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")


class MockNoisyGenerator:
    """Corrupts known reference transcripts; a stand-in for a noisy ASR.

    The RNG is re-seeded per segment from (model seed, generator id, segment
    key) via SHA-256, so the same segment always yields the same hypothesis
    regardless of call order, thread, or process.
    """

    def __init__(
        self,
        generator_id: str,
        references: Mapping[SegmentKey, str],
        model: CorruptionModel,
    ):
        self.generator_id = generator_id
        self._references = dict(references)
        self._model = model

    def generate(self, segment: Segment, *, audio: AudioAsset | None = None) -> Hypothesis:
        key = segment_key(segment)
        try:
            reference = self._references[key]
        except KeyError:
            raise GeneratorMissError(
                f"mock generator {self.generator_id!r} has no reference for "
                f"{key[0]}[{segment.start}, {segment.end}]"
            ) from None
        tokens = tokenize(reference, self._model.unit_kind)
        corrupted = corrupt(tokens, self._model, rng=self._segment_rng(key))
        return Hypothesis(generator_id=self.generator_id, text=corrupted.text)

    def _segment_rng(self, key: SegmentKey) -> random.Random:
        material = f"{self._model.seed}|{self.generator_id}|{key[0]}|{key[1]}|{key[2]}"
        digest = hashlib.sha256(material.encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))


#: transport(url, payload, timeout, headers) -> (status_code, response_dict).
#: `payload` is a JSON-able dict for reference mode or raw bytes for WAV mode.
Transport = Callable[[str, "dict | bytes", float, dict], tuple[int, dict | None]]

#: audio_bytes_provider(segment, audio) -> raw 16 kHz PCM WAV bytes
AudioBytesProvider = Callable[[Segment, "AudioAsset | None"], bytes]


def _requests_transport(url: str, payload, timeout: float, headers: dict):
    import requests

    if isinstance(payload, (bytes, bytearray)):
        response = requests.post(
            url, data=payload, timeout=timeout,
            headers={**headers, "Content-Type": "audio/wav"},
        )
    else:
        response = requests.post(url, json=payload, timeout=timeout, headers=headers)
    try:
        body = response.json()
    except ValueError:
        body = None
    return response.status_code, body


class HttpGenerator:
    """Client for a remote ASR service.

    Reference mode (default) POSTs {parent_id, start, end, uri}; when an
    `audio_bytes_provider` is given, the raw WAV bytes it returns are sent
    instead. Either way the service answers JSON {"text": ...}. Retries
    server errors and transport failures up to `max_retries` times with
    exponential backoff; a semaphore bounds in-flight requests to
    `max_in_flight`. Client errors (4xx) fail immediately.
    """

    def __init__(
        self,
        generator_id: str,
        url: str,
        *,
        auth_token: str | None = None,
        timeout: float = 10.0,
        max_in_flight: int = 4,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        transport: Transport | None = None,
        audio_bytes_provider: AudioBytesProvider | None = None,
    ):
        if max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        self.generator_id = generator_id
        self.url = url
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
        self._transport = transport or _requests_transport
        self._provider = audio_bytes_provider
        self._slots = threading.Semaphore(max_in_flight)

    def generate(self, segment: Segment, *, audio: AudioAsset | None = None) -> Hypothesis:
        if self._provider is not None:
            payload = self._provider(segment, audio)
        else:
            payload = {
                "parent_id": segment.parent_id,
                "start": segment.start,
                "end": segment.end,
                "uri": audio.uri if audio is not None else None,
            }
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt and self.backoff_base:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            with self._slots:
                try:
                    status, body = self._transport(self.url, payload, self.timeout, self._headers)
                except Exception as exc:  # transport-level failure, retryable
                    last_error = f"transport error: {exc}"
                    continue
            if status == 200 and isinstance(body, dict) and isinstance(body.get("text"), str):
                return Hypothesis(generator_id=self.generator_id, text=body["text"])
            if 400 <= status < 500:
                raise BackendError(
                    f"generator {self.generator_id!r}: {self.url} answered {status}"
                )
            last_error = f"status {status}"
        raise BackendError(
            f"generator {self.generator_id!r}: {self.url} failed after "
            f"{self.max_retries + 1} attempts ({last_error})"
        )


@dataclass(frozen=True)
class GeneratorSpec:
    """Declarative description of one backend; see build_generator."""

    generator_id: str
    kind: GeneratorKind
    path: str | None = None  # replay transcripts, or mock references
    sub_rate: float = 0.0
    ins_rate: float = 0.0
    del_rate: float = 0.0
    seed: int = 0
    unit_kind: UnitKind = UnitKind.WORD
    url: str | None = None
    auth_token: str | None = None
    timeout: float = 10.0
    max_in_flight: int = 4

    def __post_init__(self):
        if not self.generator_id:
            raise ConfigError("generator_id must be nonempty")
        if self.kind in (GeneratorKind.FILE_REPLAY, GeneratorKind.MOCK_NOISY) and not self.path:
            raise ConfigError(f"generator {self.generator_id!r}: kind {self.kind.value} needs a path")
        if self.kind is GeneratorKind.HTTP and not self.url:
            raise ConfigError(f"generator {self.generator_id!r}: kind http needs a url")


def spec_from_dict(data: dict) -> GeneratorSpec:
    try:
        kind = GeneratorKind(data["kind"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"generator spec needs a valid 'kind': {exc}") from exc
    return GeneratorSpec(
        generator_id=data.get("generator_id", ""),
        kind=kind,
        path=data.get("path"),
        sub_rate=data.get("sub_rate", 0.0),
        ins_rate=data.get("ins_rate", 0.0),
        del_rate=data.get("del_rate", 0.0),
        seed=data.get("seed", 0),
        unit_kind=UnitKind(data.get("unit_kind", "word")),
        url=data.get("url"),
        auth_token=data.get("auth_token"),
        timeout=data.get("timeout", 10.0),
        max_in_flight=data.get("max_in_flight", 4),
    )


def load_generator_specs(path) -> list[GeneratorSpec]:
    """Generator spec file: a JSON array of spec objects."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a JSON array of generator specs")
    specs = [spec_from_dict(item) for item in data]
    ids = [s.generator_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: generator ids must be unique")
    return specs


def build_generator(spec: GeneratorSpec, base_dir=None) -> HypothesisGenerator:
    base = Path(base_dir) if base_dir is not None else Path(".")
    if spec.kind is GeneratorKind.FILE_REPLAY:
        return ReplayGenerator.from_file(spec.generator_id, base / spec.path)
    if spec.kind is GeneratorKind.MOCK_NOISY:
        model = CorruptionModel(
            sub_rate=spec.sub_rate,
            ins_rate=spec.ins_rate,
            del_rate=spec.del_rate,
            unit_kind=spec.unit_kind,
            seed=spec.seed,
        )
        return MockNoisyGenerator(spec.generator_id, load_replay_table(base / spec.path), model)
    return HttpGenerator(
        spec.generator_id,
        spec.url,
        auth_token=spec.auth_token,
        timeout=spec.timeout,
        max_in_flight=spec.max_in_flight,
    )


def build_generators(specs, base_dir=None) -> list[HypothesisGenerator]:
    ids = [s.generator_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("generator ids must be unique")
    return [build_generator(spec, base_dir=base_dir) for spec in specs]
