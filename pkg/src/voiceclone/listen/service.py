"""Listening-test backend: sessions, rating collection, durable storage.

Sessions and ratings live in two append-only JSONL logs that are fsynced
before any acknowledgment, so every acked submit survives a crash and a
restarted service resumes every session at the right cursor. Ratings are
immutable once written; nothing in the API mutates or deletes them.
"""

from __future__ import annotations

import json
import os
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..evalstats import AB_CHOICES, MOS_MAX, MOS_MIN, shuffle_samples
from .plan import PlanItem, TestPlan, content_hash


class UnknownSessionError(KeyError):
    pass


class WrongItemError(ValueError):
    """Submitted item is not the session's current cursor item."""


class DuplicateSubmitError(ValueError):
    pass


class InvalidRatingError(ValueError):
    pass


@dataclass
class SessionState:
    session_id: str
    listener_id: str
    seed: int
    order: tuple[int, ...]
    cursor: int = 0
    submitted: dict[int, tuple[str | None, object]] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "complete" if self.cursor >= len(self.order) else "open"

    def view(self) -> dict:
        return {
            "session_id": self.session_id,
            "listener_id": self.listener_id,
            "cursor": self.cursor,
            "total": len(self.order),
            "status": self.status,
        }


def _append_record(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _read_records(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [
        json.loads(line)
        for line in path.read_text("utf-8").splitlines()
        if line.strip()
    ]


class ListenService:
    """Core listening-test logic, independent of any transport."""

    def __init__(self, plan: TestPlan, data_dir: str | Path):
        self.plan = plan
        self.data_dir = Path(data_dir)
        self.sessions_log = self.data_dir / "sessions.jsonl"
        self.ratings_log = self.data_dir / "ratings.jsonl"
        # register audio assets under their content hash
        self._audio_by_hash: dict[str, Path] = {}
        self._refs_by_item: dict[int, tuple[str, ...]] = {}
        for item in plan.items:
            refs = []
            for path in item.audio:
                digest = content_hash(path)
                self._audio_by_hash[digest] = Path(path)
                refs.append(digest)
            self._refs_by_item[item.item_id] = tuple(refs)
        self._sessions: dict[str, SessionState] = {}
        self._replay()

    def _replay(self) -> None:
        for record in _read_records(self.sessions_log):
            self._sessions[record["session_id"]] = SessionState(
                session_id=record["session_id"],
                listener_id=record["listener_id"],
                seed=record["seed"],
                order=tuple(record["order"]),
            )
        for record in _read_records(self.ratings_log):
            state = self._sessions.get(record["session"])
            if state is None:
                continue
            state.submitted[record["item"]] = (record.get("idempotency_key"), record["value"])
            state.cursor += 1

    # -- sessions ---------------------------------------------------------

    def create_session(self, listener_id: str, seed: int | None = None) -> dict:
        if seed is None:
            seed = uuid.uuid4().int % (2**31)
        order = tuple(
            item.item_id for item in shuffle_samples(list(self.plan.items), seed)
        )
        state = SessionState(
            session_id=uuid.uuid4().hex[:12],
            listener_id=listener_id,
            seed=seed,
            order=order,
        )
        _append_record(
            self.sessions_log,
            {
                "session_id": state.session_id,
                "listener_id": listener_id,
                "seed": seed,
                "order": list(order),
                "created_at": time.time(),
            },
        )
        self._sessions[state.session_id] = state
        return state.view()

    def _state(self, session_id: str) -> SessionState:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"unknown session: {session_id}") from None

    def session_view(self, session_id: str) -> dict:
        return self._state(session_id).view()

    # -- items ------------------------------------------------------------

    def item_payload(self, item: PlanItem) -> dict:
        """Listener-facing item descriptor; never exposes system labels."""
        return {
            "item_id": item.item_id,
            "kind": item.kind,
            "text": item.text,
            "scenario": item.scenario,
            "overview": item.overview,
            "audio": list(self._refs_by_item[item.item_id]),
        }

    def next_item(self, session_id: str) -> dict:
        """Current item without advancing; advancing happens on submit."""
        state = self._state(session_id)
        if state.status == "complete":
            return {"complete": True, "total": len(state.order)}
        item = self.plan.items[state.order[state.cursor]]
        return {"complete": False, "position": state.cursor, **self.item_payload(item)}

    # -- ratings ----------------------------------------------------------

    def _validate_value(self, kind: str, value) -> None:
        if kind == "mos":
            if not isinstance(value, int) or not (MOS_MIN <= value <= MOS_MAX):
                raise InvalidRatingError(
                    f"MOS rating must be an integer {MOS_MIN}..{MOS_MAX}, got {value!r}"
                )
        elif value not in AB_CHOICES:
            raise InvalidRatingError(f"A/B choice must be one of {AB_CHOICES}, got {value!r}")

    def submit_rating(
        self,
        session_id: str,
        item_id: int,
        value,
        idempotency_key: str | None = None,
    ) -> dict:
        state = self._state(session_id)
        if item_id in state.submitted:
            stored_key, stored_value = state.submitted[item_id]
            if idempotency_key is not None and stored_key == idempotency_key and stored_value == value:
                # retry of an acked-but-lost submit: nothing new is recorded
                return {"recorded": False, **state.view()}
            raise DuplicateSubmitError(f"item {item_id} already rated in this session")
        if state.status == "complete":
            raise DuplicateSubmitError("session already complete")
        expected = state.order[state.cursor]
        if item_id != expected:
            raise WrongItemError(
                f"out-of-order submit: expected item {expected}, got {item_id}"
            )
        item = self.plan.items[item_id]
        self._validate_value(item.kind, value)
        _append_record(
            self.ratings_log,
            {
                "session": session_id,
                "listener": state.listener_id,
                "item": item_id,
                "kind": item.kind,
                "value": value,
                "timestamp": time.time(),
                "idempotency_key": idempotency_key,
            },
        )
        state.submitted[item_id] = (idempotency_key, value)
        state.cursor += 1
        return {"recorded": True, **state.view()}

    # -- export -----------------------------------------------------------

    def export_results(self, scenario: str | None = None, kind: str | None = None) -> list[dict]:
        """Rating records in the evaluation-statistics input format.

        Item ids are canonical (pre-shuffle) plan ids, so per-sentence and
        per-scenario aggregation works across differently shuffled sessions.
        """
        out = []
        for record in _read_records(self.ratings_log):
            item = self.plan.items[record["item"]]
            if scenario is not None and item.scenario != scenario:
                continue
            if kind is not None and item.kind != kind:
                continue
            out.append(
                {
                    "session": record["session"],
                    "listener": record["listener"],
                    "item": record["item"],
                    "kind": record["kind"],
                    "value": record["value"],
                    "scenario": item.scenario,
                    "systems": list(item.systems),
                }
            )
        return out

    def audio_path(self, ref: str) -> Path:
        try:
            return self._audio_by_hash[ref]
        except KeyError:
            raise FileNotFoundError(f"unknown audio ref: {ref}") from None
