"""Listening-test and benchmark statistics.

Covers the three report shapes used by the evaluation harness: mean opinion
scores with 95% confidence intervals, two-system preference tests with an
exact binomial sign test over non-tie votes, and real-time-factor timing
averaged over repeated runs of a whole test set.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from scipy import stats

T = TypeVar("T")

MOS_MIN, MOS_MAX = 1, 5
AB_CHOICES = ("A", "B", "Same")

# conventional 95% normal z-score used in the reports
_Z95 = 1.96


@dataclass(frozen=True)
class MosSummary:
    mean: float
    half_width: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a confidence interval needs n >= 2 ratings")
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    def formatted(self) -> str:
        return f"{self.mean:.2f} ± {self.half_width:.2f}"


@dataclass(frozen=True)
class AbResult:
    pct_a: float
    pct_b: float
    pct_same: float
    p_value: float | None
    p_reason: str | None = None

    def __post_init__(self):
        total = self.pct_a + self.pct_b + self.pct_same
        if abs(total - 100.0) > 1e-9:
            raise ValueError(f"percentages must sum to 100, got {total}")
        if self.p_value is not None and not (0 < self.p_value <= 1):
            raise ValueError(f"p_value out of (0, 1]: {self.p_value}")

    def formatted(self) -> str:
        line = f"{self.pct_a:.3f} / {self.pct_b:.3f} / {self.pct_same:.3f}"
        if self.p_value is not None:
            return f"{line}, p = {self.p_value:.3g}"
        return f"{line}, p unavailable ({self.p_reason})"


@dataclass(frozen=True)
class RtfReport:
    rtf: float
    runs: int
    per_run: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_run", tuple(self.per_run))
        if self.rtf <= 0:
            raise ValueError("rtf must be positive")
        if self.runs != len(self.per_run):
            raise ValueError("runs must equal the number of per-run values")


def mos_summary(ratings: Sequence[int]) -> MosSummary:
    """Mean opinion score with a normal-approximation 95% interval."""
    values = [int(r) for r in ratings]
    for r in values:
        if not (MOS_MIN <= r <= MOS_MAX):
            raise ValueError(f"MOS rating out of range 1..5: {r}")
    if len(values) < 2:
        raise ValueError(f"need at least 2 ratings, got {len(values)}")
    arr = np.asarray(values, dtype=np.float64)
    s = float(np.std(arr, ddof=1))
    return MosSummary(
        mean=float(np.mean(arr)),
        half_width=_Z95 * s / np.sqrt(len(values)),
        n=len(values),
    )


def ab_preference(votes: Sequence[str]) -> AbResult:
    """Preference percentages plus a two-sided exact binomial sign test.

    Ties ("Same") count toward the percentages but are excluded from the
    significance test.
    """
    if not votes:
        raise ValueError("need at least one vote")
    counts = {c: 0 for c in AB_CHOICES}
    for v in votes:
        if v not in counts:
            raise ValueError(f"invalid A/B vote: {v!r} (expected one of {AB_CHOICES})")
        counts[v] += 1
    total = len(votes)
    n_decisive = counts["A"] + counts["B"]
    if n_decisive == 0:
        p_value, reason = None, "no non-tie votes"
    else:
        p_value = float(stats.binomtest(counts["A"], n_decisive, 0.5).pvalue)
        reason = None
    return AbResult(
        pct_a=100.0 * counts["A"] / total,
        pct_b=100.0 * counts["B"] / total,
        pct_same=100.0 * counts["Same"] / total,
        p_value=p_value,
        p_reason=reason,
    )


def rtf_measure(
    synth: Callable[[T], float],
    test_set: Sequence[T],
    runs: int = 10,
) -> RtfReport:
    """Real-time factor of `synth` over a test set, averaged over `runs`.

    `synth(item)` must synthesize the item and return the duration in
    seconds of the audio it produced. One untimed warm-up pass over the
    whole set precedes the timed runs.
    """
    if not test_set:
        raise ValueError("test set must be non-empty")
    if runs < 1:
        raise ValueError("runs must be >= 1")

    def one_pass() -> tuple[float, float]:
        synth_time = 0.0
        audio_seconds = 0.0
        for item in test_set:
            start = time.perf_counter()
            duration = synth(item)
            synth_time += time.perf_counter() - start
            if duration <= 0:
                raise ValueError(f"synthesizer produced zero-duration output for {item!r}")
            audio_seconds += duration
        return synth_time, audio_seconds

    one_pass()  # warm-up, excluded from timing
    per_run = []
    for _ in range(runs):
        synth_time, audio_seconds = one_pass()
        per_run.append(synth_time / audio_seconds)
    return RtfReport(rtf=float(np.mean(per_run)), runs=runs, per_run=tuple(per_run))


def shuffle_samples(items: Sequence[T], seed: int) -> list[T]:
    """Seed-deterministic permutation; the input is never mutated."""
    if not items:
        raise ValueError("cannot shuffle an empty item list")
    out = list(items)
    random.Random(seed).shuffle(out)
    return out


RATING_KINDS = ("mos", "ab")
_REQUIRED_FIELDS = ("session", "listener", "item", "kind", "value")


def validate_rating_record(record: dict) -> dict:
    """Check one {session, listener, item, kind, value} rating record."""
    for key in _REQUIRED_FIELDS:
        if key not in record:
            raise ValueError(f"rating record missing field {key!r}: {record}")
    kind = record["kind"]
    if kind not in RATING_KINDS:
        raise ValueError(f"unknown rating kind {kind!r}")
    value = record["value"]
    if kind == "mos":
        if not isinstance(value, int) or not (MOS_MIN <= value <= MOS_MAX):
            raise ValueError(f"MOS value must be an integer 1..5, got {value!r}")
    elif value not in AB_CHOICES:
        raise ValueError(f"A/B value must be one of {AB_CHOICES}, got {value!r}")
    return record


def write_rating_records(records: Iterable[dict], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(validate_rating_record(record), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_rating_records(path: str | Path) -> list[dict]:
    """Parse a line-delimited rating export; errors carry the line number."""
    records = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            validate_rating_record(record)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed rating record at line {lineno}: {exc}") from exc
        records.append(record)
    return records
