"""Rendering of the four instruction templates and parsing of model outputs.

Templates live as plain-text assets under ``templates/`` and are filled
verbatim: every separator, header and dummy variable (M/N line numbers in the
worked examples, "N#M" in the retrieval format rule) is fixed text. The only
instance-specific numbers a rendered prompt may contain outside its input
body are the total line / option counts.

Parsers are lenient-with-ordered-repairs, then strict: unparseable output
raises a distinct, reportable error rather than being silently accepted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Sequence

from .core import (
    USER,
    DialogueLine,
    EvidenceSet,
    MemoRecord,
    normalize_records,
    validate_records,
)

NOTO_TOPIC = "NOTO"
NOTO_SUMMARY = "None of the others."

TASKS = ("memo_writing", "memo_retrieval", "chat_with_memo", "judge")


class PromptError(Exception):
    """Base class for render/parse failures."""


class NoJsonFound(PromptError):
    """The output contains nothing that looks like a JSON array."""


class RepairFailed(PromptError):
    """A JSON-like array was found but could not be repaired into valid JSON."""


class InvalidSpans(PromptError):
    """Parsed records fail lenient span validation even after repair."""


class NoSelectionFound(PromptError):
    """The retrieval output contains no option-number token."""


class SelectionOutOfRange(PromptError):
    """A selected option number falls outside 1..num_options."""


class NoRatingFound(PromptError):
    """The judge output contains no [[integer]] rating."""


class RatingOutOfRange(PromptError):
    """The judge rating falls outside the 1..100 scale."""


@dataclass(frozen=True)
class RetrievalOption:
    """One candidate line of the retrieval prompt's option list."""

    ordinal: int
    topic: str
    summary: str | None = None
    is_noto: bool = False

    def render(self) -> str:
        if self.summary:
            return f"({self.ordinal}) {self.topic}. {self.summary}"
        return f"({self.ordinal}) {self.topic}."

    def to_obj(self) -> dict:
        return {
            "ordinal": self.ordinal,
            "topic": self.topic,
            "summary": self.summary,
            "is_noto": self.is_noto,
        }


def noto_option(ordinal: int) -> RetrievalOption:
    return RetrievalOption(ordinal, NOTO_TOPIC, NOTO_SUMMARY, is_noto=True)


@dataclass(frozen=True)
class JudgeVerdict:
    explanation: str
    rating: int


_templates: dict[str, Template] = {}


def _template(name: str) -> Template:
    if name not in _templates:
        text = (
            resources.files("memoloop")
            .joinpath("templates", f"{name}.txt")
            .read_text(encoding="utf-8")
        )
        _templates[name] = Template(text.removesuffix("\n"))
    return _templates[name]


def speaker_line(line: DialogueLine) -> str:
    return f"{line.speaker}: {line.text}"


def join_dialog(lines: Sequence[DialogueLine]) -> str:
    """Join dialogue turns with the ``###`` separator used in evidence blocks."""
    return " ### ".join(speaker_line(line) for line in lines)


# --- rendering ---------------------------------------------------------


def render_memo_writing(chunk: Sequence[DialogueLine]) -> str:
    """Prompt asking the model to partition and summarize ``chunk``.

    Lines are renumbered locally from 1 regardless of their global indices,
    so the same template applies to any slice of a long session.
    """
    if not chunk:
        raise ValueError("memo-writing chunk must be non-empty")
    conversation = "\n".join(
        f"(line {i}) {line.speaker}: {line.text}" for i, line in enumerate(chunk, 1)
    )
    return _template("memo_writing").substitute(
        total_lines=len(chunk), conversation=conversation
    )


def render_memo_retrieval(query: str, options: Sequence[RetrievalOption]) -> str:
    """Prompt asking the model to pick the options relevant to ``query``."""
    if not options:
        raise ValueError("retrieval prompt needs at least one option")
    ordinals = [opt.ordinal for opt in options]
    if ordinals != list(range(1, len(options) + 1)):
        raise ValueError(f"option ordinals must be exactly 1..{len(options)}, got {ordinals}")
    if sum(opt.is_noto for opt in options) > 1:
        raise ValueError("at most one NOTO option is allowed")
    return _template("memo_retrieval").substitute(
        num_options=len(options),
        query=query,
        options="\n".join(opt.render() for opt in options),
    )


def _render_evidence(evidence: EvidenceSet) -> str:
    if not evidence:
        return "(1) None."
    lines = []
    for k, item in enumerate(evidence.items, 1):
        summary = item.summary or ""
        lines.append(
            f"({k}) {{'Related Topics': '{item.topic}', "
            f"'Related Summaries': '{summary}', "
            f"'Related Dialogs': '{join_dialog(item.dialog_lines)}'}}"
        )
    return "\n".join(lines)


def render_chat_with_memo(
    evidence: EvidenceSet,
    recent: Sequence[DialogueLine],
    user_input: str,
) -> str:
    """Prompt feeding retrieved evidence and recent dialogs ahead of the query."""
    if not user_input.strip():
        raise ValueError("user input must be non-empty")
    return _template("chat_with_memo").substitute(
        evidence=_render_evidence(evidence),
        recent=join_dialog(recent) if recent else "None.",
        user_input=user_input,
    )


def render_judge(history: Sequence[DialogueLine], question: str, response: str) -> str:
    """Faithfulness-rating prompt over the referenced history, question and reply."""
    if not history:
        raise ValueError("judge prompt needs a non-empty history")
    parts: list[str] = []
    for k, line in enumerate(history):
        if k > 0 and line.speaker == USER:
            parts.append("")
        parts.append(speaker_line(line))
    return _template("judge").substitute(
        history="\n".join(parts), question=question, response=response
    )


# --- parsing -----------------------------------------------------------


def _convert_single_quotes(text: str) -> str:
    """Rewrite single-quoted strings as double-quoted JSON strings.

    An apostrophe inside a string (hasn't, bot's) is kept literal: a single
    quote only closes the string when followed by a structural character.
    """
    out: list[str] = []
    i, n = 0, len(text)
    in_string = False
    while i < n:
        ch = text[i]
        if not in_string:
            if ch == "'":
                in_string = True
                out.append('"')
            elif ch == '"':
                out.append(ch)
                i += 1
                while i < n:
                    out.append(text[i])
                    if text[i] == "\\" and i + 1 < n:
                        i += 1
                        out.append(text[i])
                    elif text[i] == '"':
                        break
                    i += 1
            else:
                out.append(ch)
        else:
            if ch == "'":
                j = i + 1
                while j < n and text[j] in " \t\r\n":
                    j += 1
                if j >= n or text[j] in ",:}]":
                    in_string = False
                    out.append('"')
                else:
                    out.append("'")
            elif ch == '"':
                out.append('\\"')
            elif ch == "\\":
                nxt = text[i + 1] if i + 1 < n else ""
                if nxt == "'":
                    out.append("'")
                    i += 1
                elif nxt in '"\\/bfnrtu':
                    out.append(ch + nxt)
                    i += 1
                else:
                    out.append("\\\\")
            elif ch == "\n":
                out.append("\\n")
            else:
                out.append(ch)
        i += 1
    return "".join(out)


def _strip_trailing_commas(text: str) -> str:
    return re.sub(r",\s*([}\]])", r"\1", text)


def _balanced_array(text: str) -> str | None:
    """Extract the first bracket-balanced array, honoring quoted strings."""
    start = text.find("[")
    if start == -1:
        return None
    depth = 0
    quote: str | None = None
    i = start
    n = len(text)
    while i < n:
        ch = text[i]
        if quote:
            if quote == '"':
                if ch == "\\":
                    i += 1
                elif ch == '"':
                    quote = None
            else:  # single quote: closes only before a structural character
                if ch == "'":
                    j = i + 1
                    while j < n and text[j] in " \t\r\n":
                        j += 1
                    if j >= n or text[j] in ",:}]":
                        quote = None
        elif ch in "'\"":
            quote = ch
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
        i += 1
    return None


def _array_candidates(output: str) -> list[str]:
    sources = [
        block for block in re.findall(r"```[^\n]*\n(.*?)```", output, re.DOTALL)
        if "[" in block
    ]
    if "[" in output:
        sources.append(output)
    candidates = []
    for source in sources:
        extracted = _balanced_array(source)
        if extracted:
            candidates.append(extracted)
    first, last = output.find("["), output.rfind("]")
    if first != -1 and last > first:
        candidates.append(output[first : last + 1])
    seen: list[str] = []
    for cand in candidates:
        if cand not in seen:
            seen.append(cand)
    return seen


def _try_load_array(candidate: str) -> list | None:
    attempts = (
        candidate,
        _strip_trailing_commas(candidate),
        _convert_single_quotes(candidate),
        _strip_trailing_commas(_convert_single_quotes(candidate)),
    )
    for attempt in attempts:
        try:
            data = json.loads(attempt)
        except json.JSONDecodeError:
            continue
        if isinstance(data, list):
            return data
    return None


def parse_memo_writing(output: str, chunk_len: int) -> list[MemoRecord]:
    """Recover chunk-local records from a memo-writing completion.

    Repairs are applied in order (strip fences and prose, convert single
    quotes, drop trailing commas); the surviving records must pass lenient
    span validation and are then normalized to strict form over
    1..chunk_len.
    """
    if chunk_len < 1:
        raise ValueError(f"chunk_len must be >= 1, got {chunk_len}")
    candidates = _array_candidates(output)
    if not candidates:
        raise NoJsonFound("no JSON-like array in model output")
    data = None
    for candidate in candidates:
        data = _try_load_array(candidate)
        if data is not None:
            break
    if data is None:
        raise RepairFailed("could not repair model output into a JSON array")

    records: list[MemoRecord] = []
    problems: list[str] = []
    for k, obj in enumerate(data):
        if not isinstance(obj, dict):
            problems.append(f"element {k} is not an object")
            continue
        topic = obj.get("topic")
        start = obj.get("start")
        end = obj.get("end")
        summary = obj.get("summary")
        if not isinstance(topic, str) or not topic.strip():
            problems.append(f"element {k} has no usable topic")
            continue
        if not isinstance(start, int) or isinstance(start, bool) or start < 1:
            problems.append(f"element {k} has invalid start {start!r}")
            continue
        if not isinstance(end, int) or isinstance(end, bool) or end < 1:
            problems.append(f"element {k} has invalid end {end!r}")
            continue
        if summary is not None and not isinstance(summary, str):
            summary = str(summary)
        records.append(MemoRecord(topic=topic, start=start, end=end, summary=summary))
    if problems:
        raise InvalidSpans("; ".join(problems))
    if not records:
        raise InvalidSpans("model output holds no records")
    violations = validate_records(records, chunk_len, mode="lenient")
    if violations:
        raise InvalidSpans("; ".join(violations))
    return normalize_records(records, chunk_len)


def parse_retrieval(output: str, num_options: int) -> set[int]:
    """Extract the selected option ordinals from a retrieval completion.

    Takes the first maximal digits-and-# token, splits on '#', deduplicates,
    and requires every ordinal to lie in 1..num_options.
    """
    if num_options < 1:
        raise ValueError(f"num_options must be >= 1, got {num_options}")
    token = None
    for match in re.finditer(r"[0-9#]+", output):
        if any(c.isdigit() for c in match.group()):
            token = match.group()
            break
    if token is None:
        raise NoSelectionFound("no option numbers in model output")
    ordinals = {int(part) for part in token.split("#") if part}
    bad = sorted(o for o in ordinals if not 1 <= o <= num_options)
    if bad:
        raise SelectionOutOfRange(
            f"option numbers {bad} outside 1..{num_options}"
        )
    return ordinals


_RATING = re.compile(r"\[\[(\d+)\]\]")


def parse_judge(output: str) -> JudgeVerdict:
    """Extract the last [[integer]] rating; judges often restate the format first."""
    matches = list(_RATING.finditer(output))
    if not matches:
        raise NoRatingFound("no [[rating]] in judge output")
    last = matches[-1]
    rating = int(last.group(1))
    if not 1 <= rating <= 100:
        raise RatingOutOfRange(f"rating {rating} outside 1..100")
    return JudgeVerdict(explanation=output[: last.start()].strip(), rating=rating)
