"""Corpus construction and quality checking.

Every utterance carries a QC status that only ever transitions; nothing is
silently deleted. ASR consistency is measured as token error rate between
the normalized raw text and the normalized ASR hypothesis, and manifests
export only utterances that passed.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .listen.plan import SCENARIO_NAMES
from .textnorm import TextNormError, normalize_text

QC_STATUSES = ("pending", "pass", "mismatch", "mispronounced", "removed")

MANIFEST_FIELDS = ("id", "audio_path", "text", "speaker", "scenario", "emotion")


class AsrUnavailableError(RuntimeError):
    """The ASR backend could not be reached; the record stays pending."""


class AsrClient(Protocol):
    def transcribe(self, audio_path: str) -> str:
        """Return the hypothesis transcript for the audio at `audio_path`."""
        ...


class HttpAsrClient:
    """Minimal remote ASR client: POST WAV bytes, receive {"text": ...}.

    Base URL and timeout come from arguments or the ASR_BASE_URL /
    ASR_TIMEOUT environment variables.
    """

    def __init__(self, base_url: str | None = None, timeout: float | None = None):
        self.base_url = (base_url or os.environ.get("ASR_BASE_URL", "")).rstrip("/")
        if not self.base_url:
            raise ValueError("ASR base URL not configured (set ASR_BASE_URL)")
        self.timeout = timeout if timeout is not None else float(os.environ.get("ASR_TIMEOUT", "30"))

    def transcribe(self, audio_path: str) -> str:
        try:
            with open(audio_path, "rb") as fh:
                response = httpx.post(
                    f"{self.base_url}/transcribe",
                    content=fh.read(),
                    headers={"content-type": "audio/wav"},
                    timeout=self.timeout,
                )
            response.raise_for_status()
            return response.json()["text"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise AsrUnavailableError(f"ASR request failed: {exc}") from exc


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: str
    raw_text: str
    speaker_id: str
    normalized_text: str | None = None
    scenario: str | None = None
    emotion: str | None = None
    qc_status: str = "pending"
    qc_cer: float | None = None
    asr_hypothesis: str | None = None
    retry_count: int = 0

    def __post_init__(self):
        if self.qc_status not in QC_STATUSES:
            raise ValueError(f"unknown qc_status {self.qc_status!r}")
        if self.qc_status == "pass" and not self.normalized_text:
            raise ValueError(f"record {self.id}: pass status requires normalized text")
        if self.scenario is not None and self.scenario not in SCENARIO_NAMES:
            raise ValueError(f"record {self.id}: unknown scenario tag {self.scenario!r}")


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Levenshtein distance over token sequences."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i]
        for j, h in enumerate(hyp, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def cer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Edit distance normalized by reference length (in normalized tokens)."""
    if not reference:
        raise ValueError("reference must be non-empty")
    return edit_distance(reference, hypothesis) / len(reference)


def qc_check(
    rec: UtteranceRecord,
    asr: AsrClient,
    threshold: float = 0.1,
    lexicon: Mapping[str, str] | None = None,
) -> UtteranceRecord:
    """Compare normalized raw text against the normalized ASR hypothesis.

    CER <= threshold passes; anything above is marked mismatch and queued
    for manual review. An unreachable ASR leaves the record pending with
    its retry counter bumped.
    """
    try:
        hypothesis = asr.transcribe(rec.audio_path)
    except AsrUnavailableError:
        return replace(rec, retry_count=rec.retry_count + 1)
    reference = normalize_text(rec.raw_text, lexicon=lexicon)
    hyp_norm = normalize_text(hypothesis, lexicon=lexicon)
    rate = cer(reference.tokens, hyp_norm.tokens)
    return replace(
        rec,
        normalized_text=str(reference),
        asr_hypothesis=hypothesis,
        qc_cer=rate,
        qc_status="pass" if rate <= threshold else "mismatch",
    )


def flag_mispronunciation(rec: UtteranceRecord, reviewer_verdict: bool) -> UtteranceRecord:
    """Apply a manual mispronunciation verdict; flagging is idempotent."""
    if rec.qc_status not in ("pass", "mismatch", "mispronounced"):
        raise ValueError(
            f"record {rec.id} must be reviewed (pass/mismatch) before flagging, "
            f"is {rec.qc_status!r}"
        )
    if not reviewer_verdict:
        return rec
    return replace(rec, qc_status="mispronounced")


def manifest_row(rec: UtteranceRecord) -> dict:
    return {
        "id": rec.id,
        "audio_path": rec.audio_path,
        "text": rec.normalized_text,
        "speaker": rec.speaker_id,
        "scenario": rec.scenario,
        "emotion": rec.emotion,
    }


def build_manifest(records: Iterable[UtteranceRecord], output_path: str | Path) -> int:
    """Write passing utterances as one JSON record per line, ordered by id."""
    by_id: dict[str, UtteranceRecord] = {}
    for rec in records:
        if rec.id in by_id:
            raise ValueError(f"duplicate utterance id: {rec.id}")
        by_id[rec.id] = rec
    exported = [by_id[k] for k in sorted(by_id) if by_id[k].qc_status == "pass"]
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in exported:
            fh.write(json.dumps(manifest_row(rec), ensure_ascii=False, sort_keys=True) + "\n")
    return len(exported)


def load_manifest(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed manifest line {lineno}: {exc}") from exc
        missing = [f for f in MANIFEST_FIELDS if f not in row]
        if missing:
            raise ValueError(f"{path}: manifest line {lineno} missing fields {missing}")
        rows.append(row)
    return rows
