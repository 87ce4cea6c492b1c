"""Run directory layout: config, per-utterance results, integrity manifest.

A run directory contains:

* ``config.json``       fully resolved configuration (canonical JSON)
* ``results.jsonl``     one line per utterance, deterministic given the run
                        inputs (no timestamps or timings)
* ``run_manifest.json`` timestamps, input hashes, timings, library version
* ``speakers/``         one ``<speaker_id>.jsonl`` plus ``<speaker_id>.done``
                        marker per completed speaker, enabling resume

``results.jsonl`` is assembled from the per-speaker files in sorted speaker
order once all speakers are done, so its bytes do not depend on scheduling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from ..errors import ConfigError
from ..evaluation import WerCount
from .config import AdaptationConfig
from .runner import AdaptationTrace, ExperimentResult, SpeakerRunResult, StepRecord, UtteranceRecord

RESULTS_NAME = "results.jsonl"
CONFIG_NAME = "config.json"
RUN_MANIFEST_NAME = "run_manifest.json"
SPEAKERS_DIR = "speakers"


def canonical_json(obj: object) -> str:
    """Deterministic JSON: sorted keys, no whitespace, shortest float repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def record_to_dict(record: UtteranceRecord) -> dict:
    count = record.count
    return {
        "utterance_id": record.utterance_id,
        "speaker_id": record.speaker_id,
        "reference": record.reference,
        "hypothesis": record.hypothesis,
        "substitutions": count.substitutions if count else None,
        "deletions": count.deletions if count else None,
        "insertions": count.insertions if count else None,
        "reference_words": count.reference_words if count else None,
        "flags": list(record.flags),
        "loss": {
            "initial": record.trace.initial_total,
            "final": record.trace.final_total,
            "steps": [s.total for s in record.trace.steps],
        },
    }


def record_from_dict(data: Mapping) -> UtteranceRecord:
    count = None
    if data.get("reference_words") is not None:
        count = WerCount(
            substitutions=data["substitutions"],
            deletions=data["deletions"],
            insertions=data["insertions"],
            reference_words=data["reference_words"],
        )
    loss = data.get("loss", {})
    steps = tuple(StepRecord(total=t, components={}) for t in loss.get("steps", []))
    trace = AdaptationTrace(
        steps=steps,
        initial_total=loss.get("initial"),
        final_total=loss.get("final"),
        wall_time_s=0.0,
        parameters_restored=False,
        non_finite="non_finite_loss" in data.get("flags", []),
    )
    return UtteranceRecord(
        utterance_id=data["utterance_id"],
        speaker_id=data["speaker_id"],
        reference=data["reference"],
        hypothesis=data["hypothesis"],
        count=count,
        trace=trace,
        flags=tuple(data.get("flags", [])),
    )


class RunWriter:
    """Incrementally persists an experiment so it can be resumed."""

    def __init__(self, out_dir: Path, config: AdaptationConfig) -> None:
        self.out_dir = Path(out_dir)
        self.config = config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / SPEAKERS_DIR).mkdir(exist_ok=True)
        self._write_or_check_config()
        self._started_at = datetime.now(timezone.utc)
        self._timings: dict[str, float] = {}

    def _write_or_check_config(self) -> None:
        path = self.out_dir / CONFIG_NAME
        blob = canonical_json(self.config.to_dict())
        if path.exists():
            if path.read_text(encoding="utf-8").strip() != blob:
                raise ConfigError(
                    f"{path} holds a different configuration; refusing to mix runs"
                )
        else:
            path.write_text(blob + "\n", encoding="utf-8")

    def completed_speakers(self) -> dict[str, SpeakerRunResult]:
        """Load speakers already finished by an earlier invocation."""
        done: dict[str, SpeakerRunResult] = {}
        for marker in sorted((self.out_dir / SPEAKERS_DIR).glob("*.done")):
            speaker_id = marker.stem
            rows_path = marker.with_suffix(".jsonl")
            if not rows_path.exists():
                continue
            records = tuple(
                record_from_dict(json.loads(line))
                for line in rows_path.read_text(encoding="utf-8").splitlines()
                if line
            )
            counts = [r.count for r in records if r.count is not None]
            pooled = None
            if counts:
                errors = sum(c.errors for c in counts)
                words = sum(c.reference_words for c in counts)
                pooled = errors / words if words else None
            done[speaker_id] = SpeakerRunResult(
                speaker_id=speaker_id, records=records, wer=pooled, wall_time_s=0.0
            )
        return done

    def speaker_done(self, result: SpeakerRunResult) -> None:
        rows_path = self.out_dir / SPEAKERS_DIR / f"{result.speaker_id}.jsonl"
        with open(rows_path, "w", encoding="utf-8") as fh:
            for record in result.records:
                fh.write(canonical_json(record_to_dict(record)) + "\n")
        self._timings[result.speaker_id] = result.wall_time_s
        marker = rows_path.with_suffix(".done")
        marker.write_text("", encoding="utf-8")

    def finalize(
        self,
        result: ExperimentResult,
        manifest_path: Path | None = None,
        checkpoint_fingerprint: str | None = None,
    ) -> Path:
        """Assemble results.jsonl in sorted speaker order and write the manifest."""
        results_path = self.out_dir / RESULTS_NAME
        with open(results_path, "w", encoding="utf-8") as fh:
            for speaker in result.speakers:
                for record in speaker.records:
                    fh.write(canonical_json(record_to_dict(record)) + "\n")

        finished_at = datetime.now(timezone.utc)
        run_manifest = {
            "started_at": self._started_at.isoformat(),
            "finished_at": finished_at.isoformat(),
            "config_fingerprint": self.config.fingerprint(),
            "corpus_manifest_sha256": sha256_file(manifest_path) if manifest_path else None,
            "checkpoint_fingerprint": checkpoint_fingerprint,
            "results_sha256": sha256_file(results_path),
            "speaker_wall_time_s": {k: self._timings.get(k) for k in sorted(self._timings)},
            "n_speakers": len(result.speakers),
            "n_utterances": sum(len(s.records) for s in result.speakers),
        }
        (self.out_dir / RUN_MANIFEST_NAME).write_text(
            json.dumps(run_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return results_path


def read_run_config(run_dir: Path) -> AdaptationConfig:
    path = Path(run_dir) / CONFIG_NAME
    if not path.exists():
        raise ConfigError(f"{path} does not exist")
    return AdaptationConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))


def read_run_records(run_dir: Path) -> list[UtteranceRecord]:
    path = Path(run_dir) / RESULTS_NAME
    if not path.exists():
        raise ConfigError(f"{path} does not exist; run has not finished")
    return [
        record_from_dict(json.loads(line))
        for line in path.read_text(encoding="utf-8").splitlines()
        if line
    ]


def speaker_wers_from_records(records: Iterable[UtteranceRecord]) -> dict[str, float]:
    """Pooled per-speaker WER (speaker error mass over speaker word mass)."""
    errors: dict[str, int] = {}
    words: dict[str, int] = {}
    for r in records:
        if r.count is None:
            continue
        errors[r.speaker_id] = errors.get(r.speaker_id, 0) + r.count.errors
        words[r.speaker_id] = words.get(r.speaker_id, 0) + r.count.reference_words
    return {s: errors[s] / words[s] for s in sorted(words) if words[s] > 0}
