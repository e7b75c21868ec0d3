"""Domain model for conversations and topic memos.

A conversation is an ordered list of 1-indexed speaker-tagged lines. A memo
summarizes it as a list of (topic, summary, start, end) records whose spans
tile the covered prefix of the conversation: non-intersecting, ordered, and
(in strict form) contiguous from line 1 to ``covered_until``.

Everything here is an immutable value; updates build new values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .pipeline import PipelineConfig

USER = "user"
BOT = "bot"
SPEAKERS = (USER, BOT)

VALID_MODES = ("strict", "lenient")


class SpanError(ValueError):
    """A span operation was applied to input that violates its preconditions."""


@dataclass(frozen=True)
class DialogueLine:
    """One utterance; ``index`` is the 1-based line number within its conversation."""

    index: int
    speaker: str
    text: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"line index must be >= 1, got {self.index}")
        if self.speaker not in SPEAKERS:
            raise ValueError(f"speaker must be one of {SPEAKERS}, got {self.speaker!r}")
        if not self.text.strip():
            raise ValueError("line text must be non-empty")


@dataclass(frozen=True)
class Conversation:
    """Ordered dialogue lines with indices exactly 1..N."""

    lines: tuple[DialogueLine, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        for k, line in enumerate(self.lines):
            if line.index != k + 1:
                raise ValueError(
                    f"line at position {k} has index {line.index}, expected {k + 1}"
                )

    def __len__(self) -> int:
        return len(self.lines)

    @classmethod
    def from_turns(cls, turns: Iterable[tuple[str, str]]) -> "Conversation":
        """Build a conversation from (speaker, text) pairs, assigning indices."""
        return cls(
            tuple(
                DialogueLine(k + 1, speaker, text)
                for k, (speaker, text) in enumerate(turns)
            )
        )

    def append(self, speaker: str, text: str) -> "Conversation":
        return Conversation(
            self.lines + (DialogueLine(len(self.lines) + 1, speaker, text),)
        )

    def slice(self, start: int, end: int) -> tuple[DialogueLine, ...]:
        """Lines start..end inclusive; spans are 1-based and must be in range."""
        if not (1 <= start <= end <= len(self.lines)):
            raise SpanError(
                f"span {start}..{end} out of range for a {len(self.lines)}-line conversation"
            )
        return self.lines[start - 1 : end]

    def alternates(self) -> bool:
        """True when speakers alternate user/bot starting with user."""
        return all(
            line.speaker == (USER if line.index % 2 else BOT) for line in self.lines
        )


@dataclass(frozen=True)
class MemoRecord:
    """A topic label over the conversation slice [start, end], optionally summarized."""

    topic: str
    start: int
    end: int
    summary: str | None = None

    def __post_init__(self):
        if not self.topic.strip():
            raise ValueError("record topic must be non-empty")
        if self.start < 1 or self.end < 1:
            raise ValueError(f"record bounds must be positive, got {self.start}..{self.end}")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def shifted(self, offset: int) -> "MemoRecord":
        return replace(self, start=self.start + offset, end=self.end + offset)

    def to_obj(self) -> dict:
        """JSON-ready object with the canonical key order; summary key omitted when absent."""
        obj: dict = {"topic": self.topic}
        if self.summary is not None:
            obj["summary"] = self.summary
        obj["start"] = self.start
        obj["end"] = self.end
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "MemoRecord":
        return cls(
            topic=obj["topic"],
            start=obj["start"],
            end=obj["end"],
            summary=obj.get("summary"),
        )


def validate_records(
    records: Sequence[MemoRecord], total_lines: int, mode: str = "strict"
) -> list[str]:
    """Check a record list against a conversation of ``total_lines`` lines.

    Returns every violation found (empty list means valid). Lenient mode
    checks ordering, non-intersection and 1 <= start <= end <= total_lines;
    strict mode additionally requires contiguous coverage of 1..total_lines.
    Violations are data, not faults: this never raises on bad records.
    """
    if total_lines < 1:
        raise ValueError(f"total_lines must be >= 1, got {total_lines}")
    if mode not in VALID_MODES:
        raise ValueError(f"mode must be one of {VALID_MODES}, got {mode!r}")

    violations: list[str] = []
    for rec in records:
        if rec.start > rec.end:
            violations.append(
                f"record '{rec.topic}' has start {rec.start} greater than end {rec.end}"
            )
        if rec.end > total_lines:
            violations.append(
                f"record '{rec.topic}' span {rec.start}..{rec.end} exceeds total lines {total_lines}"
            )
    for prev, nxt in zip(records, records[1:]):
        if nxt.start < prev.start:
            violations.append(
                f"records out of order: '{nxt.topic}' (start {nxt.start}) "
                f"after '{prev.topic}' (start {prev.start})"
            )
    for i, a in enumerate(records):
        for b in records[i + 1 :]:
            if a.start <= b.end and b.start <= a.end:
                violations.append(
                    f"intersecting intervals: '{a.topic}' {a.start}..{a.end} "
                    f"and '{b.topic}' {b.start}..{b.end}"
                )
    if mode == "strict":
        if not records:
            violations.append(f"coverage gap 1..{total_lines}: no records")
        else:
            if records[0].start != 1:
                violations.append(f"coverage gap 1..{records[0].start - 1} before first record")
            for prev, nxt in zip(records, records[1:]):
                if nxt.start > prev.end + 1:
                    violations.append(
                        f"coverage gap {prev.end + 1}..{nxt.start - 1} "
                        f"between '{prev.topic}' and '{nxt.topic}'"
                    )
            if records[-1].end < total_lines:
                violations.append(
                    f"coverage gap {records[-1].end + 1}..{total_lines} after last record"
                )
    return violations


def normalize_records(
    records: Sequence[MemoRecord], total_lines: int
) -> list[MemoRecord]:
    """Repair a lenient-valid record list into strict form.

    Gaps are absorbed forward: each record's end extends to the next record's
    start - 1, the first start is forced to 1 and the last end to
    ``total_lines``. Deterministic and idempotent; the result passes strict
    validation.
    """
    violations = validate_records(records, total_lines, mode="lenient")
    if violations:
        raise SpanError("cannot normalize invalid records: " + "; ".join(violations))
    if not records:
        raise SpanError("cannot normalize an empty record list")
    out = []
    for k, rec in enumerate(records):
        start = 1 if k == 0 else rec.start
        end = records[k + 1].start - 1 if k + 1 < len(records) else total_lines
        out.append(replace(rec, start=start, end=end))
    return out


@dataclass(frozen=True)
class Memo:
    """Strict-valid record list covering conversation lines 1..covered_until."""

    records: tuple[MemoRecord, ...] = ()
    covered_until: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.covered_until < 0:
            raise ValueError(f"covered_until must be >= 0, got {self.covered_until}")
        if self.covered_until == 0:
            if self.records:
                raise SpanError("a memo covering no lines cannot hold records")
            return
        violations = validate_records(self.records, self.covered_until, mode="strict")
        if violations:
            raise SpanError("memo invariants violated: " + "; ".join(violations))

    def __len__(self) -> int:
        return len(self.records)

    def to_obj(self) -> list[dict]:
        return [rec.to_obj() for rec in self.records]


def append_memo(
    memo: Memo,
    new_records: Sequence[MemoRecord],
    chunk_offset: int,
    chunk_len: int,
) -> Memo:
    """Append chunk-local records (strict-valid over 1..chunk_len) to a memo.

    Spans are shifted by ``chunk_offset``, which must equal the memo's current
    covered_until so global indices stay contiguous.
    """
    if chunk_offset != memo.covered_until:
        raise SpanError(
            f"chunk offset {chunk_offset} does not match memo coverage {memo.covered_until}"
        )
    new_records = list(new_records)
    if not new_records and chunk_len == 0:
        return memo
    if chunk_len < 1:
        raise SpanError(f"chunk_len must be >= 1 when appending records, got {chunk_len}")
    violations = validate_records(new_records, chunk_len, mode="strict")
    if violations:
        raise SpanError("chunk records are not strict-valid: " + "; ".join(violations))
    shifted = tuple(rec.shifted(chunk_offset) for rec in new_records)
    return Memo(memo.records + shifted, memo.covered_until + chunk_len)


def serialize_records(records: Sequence[MemoRecord]) -> str:
    """Render records in the single-quoted answer format used by the memo-writing task.

    The summary field is omitted for summary-less records; apostrophes inside
    values are written raw, exactly as the instruction's worked example shows.
    """
    parts = []
    for rec in records:
        fields = [f"'topic': '{rec.topic}'"]
        if rec.summary is not None:
            fields.append(f"'summary': '{rec.summary}'")
        fields.append(f"'start': {rec.start}")
        fields.append(f"'end': {rec.end}")
        parts.append("{" + ", ".join(fields) + "}")
    return "[" + ", ".join(parts) + "]"


@dataclass(frozen=True)
class EvidenceItem:
    """One retrieved record together with its dialogue slice."""

    topic: str
    summary: str | None
    dialog_lines: tuple[DialogueLine, ...]

    def to_obj(self) -> dict:
        return {
            "topic": self.topic,
            "summary": self.summary,
            "dialog_lines": [
                {"index": l.index, "speaker": l.speaker, "text": l.text}
                for l in self.dialog_lines
            ],
        }


@dataclass(frozen=True)
class EvidenceSet:
    """Query-relevant records with their dialogue slices, in memo order."""

    items: tuple[EvidenceItem, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __bool__(self) -> bool:
        return bool(self.items)

    def to_obj(self) -> list[dict]:
        return [item.to_obj() for item in self.items]


@dataclass(frozen=True)
class Session:
    """One chat stream: its conversation, its memo, and the pipeline settings."""

    id: str
    conversation: Conversation
    memo: Memo
    config: "PipelineConfig"

    def __post_init__(self):
        if self.memo.covered_until > len(self.conversation):
            raise SpanError(
                f"memo covers {self.memo.covered_until} lines but the conversation "
                f"has only {len(self.conversation)}"
            )
