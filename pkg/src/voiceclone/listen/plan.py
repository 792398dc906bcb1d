"""Scenario-based test plans for the subjective listening harness.

A plan is a list of rating items, each bound to a scenario name and a short
overview shown to the listener alongside the audio. The default scenario
table has nine scenarios and twenty sentences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

SCENARIO_TABLE: tuple[tuple[str, str, int], ...] = (
    ("Daily Conversations", "Dating, Current Affairs and Memories", 4),
    ("News Broadcast", "Earthquake and Epidemic", 2),
    ("Public Broadcast", "Lost & Found and Train Terminus", 2),
    ("Human Customer Service", "Welcome and Response", 2),
    ("Phrase Read", "Book Quotes", 2),
    ("Game Voiceover", "Genshin Impact Copywriting", 2),
    ("Guided Tour", "Kong Mansion and Forbidden City", 2),
    ("Faculty Teaching", "Marxism and Linear Algebra", 2),
    ("Whisper", "Comforting", 2),
)

SCENARIO_NAMES = tuple(row[0] for row in SCENARIO_TABLE)
SCENARIO_OVERVIEWS = {name: overview for name, overview, _ in SCENARIO_TABLE}
DEFAULT_COUNTS = {name: count for name, _, count in SCENARIO_TABLE}

ITEM_KINDS = ("mos", "ab")


class PlanError(ValueError):
    """Raised for structurally invalid test plans."""


@dataclass(frozen=True)
class PlanItem:
    item_id: int
    text: str
    scenario: str
    overview: str
    kind: str
    audio: tuple[str, ...]  # file paths before registration, content hashes after
    systems: tuple[str, ...] = ()  # hidden system labels, never shown to listeners

    def __post_init__(self):
        if self.scenario not in SCENARIO_NAMES:
            raise PlanError(f"unknown scenario name: {self.scenario!r}")
        if self.kind not in ITEM_KINDS:
            raise PlanError(f"unknown item kind: {self.kind!r}")
        expected_refs = 1 if self.kind == "mos" else 2
        if len(self.audio) != expected_refs:
            raise PlanError(
                f"{self.kind} item needs {expected_refs} audio ref(s), got {len(self.audio)}"
            )
        if self.kind == "ab" and len(set(self.audio)) != 2:
            raise PlanError("A/B item needs two distinct audio refs")
        if self.systems and len(self.systems) != len(self.audio):
            raise PlanError("systems labels must align with audio refs")


@dataclass(frozen=True)
class TestPlan:
    __test__ = False  # not a pytest class despite the name

    items: tuple[PlanItem, ...]

    def __post_init__(self):
        if not self.items:
            raise PlanError("plan must contain at least one item")
        ids = [item.item_id for item in self.items]
        if ids != list(range(len(ids))):
            raise PlanError("item ids must be 0..n-1 in plan order")

    def __len__(self) -> int:
        return len(self.items)

    def scenario_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for item in self.items:
            counts[item.scenario] = counts.get(item.scenario, 0) + 1
        return counts


def create_plan_from_table3(
    entries: Mapping[str, Sequence[dict]],
    counts: Mapping[str, int] | None = None,
) -> TestPlan:
    """Build a plan from per-scenario entries, enforcing the configured counts.

    Each entry is {"text", "kind", "audio": [paths], "systems": [labels]?}.
    Every referenced audio asset must exist on disk.
    """
    counts = dict(counts) if counts is not None else dict(DEFAULT_COUNTS)
    if not counts:
        raise PlanError("scenario list must be non-empty")
    for scenario in list(counts) + list(entries):
        if scenario not in SCENARIO_NAMES:
            raise PlanError(f"unknown scenario name: {scenario!r}")
    items: list[PlanItem] = []
    for scenario, _, _ in SCENARIO_TABLE:
        if scenario not in counts:
            continue
        scenario_entries = list(entries.get(scenario, ()))
        if len(scenario_entries) != counts[scenario]:
            raise PlanError(
                f"scenario {scenario!r} needs {counts[scenario]} sentences, "
                f"got {len(scenario_entries)}"
            )
        for entry in scenario_entries:
            for ref in entry["audio"]:
                if not Path(ref).exists():
                    raise PlanError(f"missing audio asset: {ref}")
            items.append(
                PlanItem(
                    item_id=len(items),
                    text=entry["text"],
                    scenario=scenario,
                    overview=SCENARIO_OVERVIEWS[scenario],
                    kind=entry["kind"],
                    audio=tuple(entry["audio"]),
                    systems=tuple(entry.get("systems", ())),
                )
            )
    return TestPlan(tuple(items))


def load_plan(path: str | Path) -> TestPlan:
    """Read a JSON plan file: {"items": [{text, scenario, kind, audio, systems?}]}."""
    raw = json.loads(Path(path).read_text("utf-8"))
    items = []
    for i, entry in enumerate(raw["items"]):
        items.append(
            PlanItem(
                item_id=i,
                text=entry["text"],
                scenario=entry["scenario"],
                overview=entry.get("overview", SCENARIO_OVERVIEWS.get(entry["scenario"], "")),
                kind=entry["kind"],
                audio=tuple(entry["audio"]),
                systems=tuple(entry.get("systems", ())),
            )
        )
    return TestPlan(tuple(items))


def save_plan(plan: TestPlan, path: str | Path) -> None:
    payload = {
        "items": [
            {
                "text": item.text,
                "scenario": item.scenario,
                "overview": item.overview,
                "kind": item.kind,
                "audio": list(item.audio),
                **({"systems": list(item.systems)} if item.systems else {}),
            }
            for item in plan.items
        ]
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2), "utf-8")


def content_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
