"""Corpus manifests: JSON-lines ingestion, duration filtering, speaker grouping.

A manifest is a UTF-8 JSON-lines file with one utterance per line and the
fields ``utterance_id``, ``speaker_id``, ``audio_path``, ``transcript``,
``duration_s``. File order is preserved everywhere; grouping by speaker
partitions the list without reordering within a speaker.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from ..errors import (
    DuplicateIdError,
    EmptyTranscriptError,
    InvalidFieldError,
    ManifestError,
    MissingFieldError,
    UnreadableFileError,
)
from ..evaluation import normalize_text

MANIFEST_FIELDS = ("utterance_id", "speaker_id", "audio_path", "transcript", "duration_s")


class Split(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class Utterance:
    """One audio file plus its reference transcript and speaker identity."""

    utterance_id: str
    speaker_id: str
    audio_path: str
    transcript: str
    duration_s: float

    def __post_init__(self) -> None:
        if not self.utterance_id:
            raise ValueError("utterance_id must be non-empty")
        if not self.speaker_id:
            raise ValueError("speaker_id must be non-empty")
        if not (self.duration_s >= 0 and math.isfinite(self.duration_s)):
            raise ValueError("duration_s must be a finite non-negative number")


@dataclass(frozen=True)
class CorpusManifest:
    split: Split
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for u in self.utterances:
            if u.utterance_id in seen:
                raise ValueError(f"duplicate utterance_id {u.utterance_id!r}")
            seen.add(u.utterance_id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def speakers(self) -> dict[str, list[Utterance]]:
        """Utterances grouped by speaker, preserving manifest order throughout."""
        groups: dict[str, list[Utterance]] = {}
        for u in self.utterances:
            groups.setdefault(u.speaker_id, []).append(u)
        return groups


def _infer_split(path: str | os.PathLike) -> Split:
    stem = Path(path).stem.lower()
    for s in Split:
        if stem == s.value:
            return s
    return Split.TEST


def load_manifest(path: str | os.PathLike, split: Split | None = None) -> CorpusManifest:
    """Parse a JSON-lines manifest, preserving file order.

    ``split`` defaults to the file stem when it names a split, else ``test``.

    Raises:
        UnreadableFileError: file missing or undecodable.
        MissingFieldError / InvalidFieldError: bad record (names field + line).
        DuplicateIdError: repeated utterance_id.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFileError(f"cannot read manifest {path}: {exc}") from exc

    utterances: list[Utterance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        for name in MANIFEST_FIELDS:
            if name not in record:
                raise MissingFieldError(name, lineno)
        for name in ("utterance_id", "speaker_id", "audio_path", "transcript"):
            if not isinstance(record[name], str):
                raise InvalidFieldError(name, lineno, "must be a string")
        if not isinstance(record["duration_s"], (int, float)) or isinstance(
            record["duration_s"], bool
        ):
            raise InvalidFieldError("duration_s", lineno, "must be a number")
        if record["utterance_id"] in seen:
            raise DuplicateIdError(record["utterance_id"], lineno)
        seen.add(record["utterance_id"])
        try:
            utterances.append(
                Utterance(
                    utterance_id=record["utterance_id"],
                    speaker_id=record["speaker_id"],
                    audio_path=record["audio_path"],
                    transcript=record["transcript"],
                    duration_s=float(record["duration_s"]),
                )
            )
        except ValueError as exc:
            raise InvalidFieldError("record", lineno, str(exc)) from exc

    return CorpusManifest(split=split or _infer_split(path), utterances=tuple(utterances))


def save_manifest(manifest: CorpusManifest, path: str | os.PathLike) -> None:
    """Write a manifest as JSON-lines with a stable field order."""
    with open(path, "w", encoding="utf-8") as f:
        for u in manifest.utterances:
            record = {
                "utterance_id": u.utterance_id,
                "speaker_id": u.speaker_id,
                "audio_path": u.audio_path,
                "transcript": u.transcript,
                "duration_s": u.duration_s,
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def filter_max_duration(manifest: CorpusManifest, max_s: float) -> CorpusManifest:
    """Keep utterances strictly shorter than ``max_s`` seconds, order preserved."""
    if not max_s > 0:
        raise ValueError("max_s must be positive")
    kept = tuple(u for u in manifest.utterances if u.duration_s < max_s)
    return CorpusManifest(split=manifest.split, utterances=kept)


@dataclass(frozen=True)
class DurationStats:
    n_utterances: int
    n_speakers: int
    total_hours: float
    mean_duration_s: float
    sd_duration_s: float
    mean_utterances_per_speaker: float
    sd_utterances_per_speaker: float
    min_duration_s: float = field(default=0.0)
    max_duration_s: float = field(default=0.0)


def _mean_sd(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
    return mean, sd


def duration_stats(manifest: CorpusManifest) -> DurationStats:
    """Count / mean / SD summaries in the style the harness reports per split."""
    if not manifest.utterances:
        return DurationStats(0, 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    durations = [u.duration_s for u in manifest.utterances]
    counts = [float(len(v)) for v in manifest.speakers().values()]
    mean_d, sd_d = _mean_sd(durations)
    mean_c, sd_c = _mean_sd(counts)
    return DurationStats(
        n_utterances=len(durations),
        n_speakers=len(counts),
        total_hours=sum(durations) / 3600.0,
        mean_duration_s=mean_d,
        sd_duration_s=sd_d,
        mean_utterances_per_speaker=mean_c,
        sd_utterances_per_speaker=sd_c,
        min_duration_s=min(durations),
        max_duration_s=max(durations),
    )


def word_duration(u: Utterance) -> float:
    """Seconds per transcript word: duration / word count.

    Word counts use the same text normalizer as WER scoring so the two
    denominators stay consistent.

    Raises:
        EmptyTranscriptError: no words remain after normalization.
    """
    words = normalize_text(u.transcript).split()
    if not words:
        raise EmptyTranscriptError(
            f"utterance {u.utterance_id!r} has an empty transcript after normalization"
        )
    if not u.duration_s > 0:
        raise ValueError(f"utterance {u.utterance_id!r} has zero duration")
    return u.duration_s / len(words)
