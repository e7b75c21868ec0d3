"""Instruction-set reconstruction from user-supplied dialogue corpora.

Three corpus shapes feed three instruction sets. Span-annotated multi-topic
conversations become memo-writing gold directly (topic + span, no summary).
Single-topic summarized dialogues are concatenated in groups of 2-4 to mimic
multi-topic streams, carrying full topic/summary/span gold. Retrieval
instances pair a contiguous query window with the window's true topics plus
distractors sampled from other dialogues; one NOTO option is inserted with a
configurable probability (and is itself the gold answer for a configurable
share of those). Chat instances hold out a source exchange as the user input,
grounded on the source's record as evidence; single-turn QA rows become
evidence-free instances.

Everything is seeded: identical (corpus, config, seed) produce byte-identical
output files.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .backends import estimate_tokens
from .core import (
    Conversation,
    DialogueLine,
    EvidenceItem,
    EvidenceSet,
    MemoRecord,
    normalize_records,
    serialize_records,
    validate_records,
)
from .prompts import (
    RetrievalOption,
    noto_option,
    render_chat_with_memo,
    render_memo_retrieval,
    render_memo_writing,
)

logger = logging.getLogger(__name__)

MULTI_TOPIC_ANNOTATED = "multi_topic_annotated"
SINGLE_TOPIC_SUMMARIZED = "single_topic_summarized"
SINGLE_TURN_QA = "single_turn_qa"
ORIGINS = (MULTI_TOPIC_ANNOTATED, SINGLE_TOPIC_SUMMARIZED, SINGLE_TURN_QA)

TASK_WRITING = "memo_writing"
TASK_RETRIEVAL = "memo_retrieval"
TASK_CHAT = "chat_with_memo"
TASKS = (TASK_WRITING, TASK_RETRIEVAL, TASK_CHAT)


class CorpusError(ValueError):
    """A corpus file failed validation; carries one message per bad record."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("corpus validation failed:\n" + "\n".join(problems))
        self.problems = list(problems)


class BuildError(RuntimeError):
    """The corpus cannot satisfy the requested build."""


@dataclass(frozen=True)
class SourceDialogue:
    """One corpus row; which fields are set depends on ``origin``."""

    id: str
    lines: tuple[DialogueLine, ...]
    origin: str
    topic: str | None = None
    summary: str | None = None
    records: tuple[MemoRecord, ...] = ()

    def conversation(self) -> Conversation:
        return Conversation(self.lines)


@dataclass(frozen=True)
class InstructionInstance:
    id: str
    task: str
    prompt: str
    answer: str

    def to_obj(self) -> dict:
        return {"id": self.id, "task": self.task, "prompt": self.prompt, "answer": self.answer}

    @classmethod
    def from_obj(cls, obj: dict) -> "InstructionInstance":
        return cls(id=obj["id"], task=obj["task"], prompt=obj["prompt"], answer=obj["answer"])


@dataclass(frozen=True)
class BuildConfig:
    seed: int = 0
    noto_probability: float = 0.10
    noto_gold_share: float = 0.05
    compose_min: int = 2
    compose_max: int = 4
    query_window_min: int = 2
    query_window_max: int = 6
    distractors_min: int = 2
    distractors_max: int = 4
    target_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.noto_probability <= 1.0:
            raise ValueError("noto_probability must be in [0, 1]")
        # gold-NOTO instances are a subset of the NOTO-present ones, so the
        # share can never exceed the insertion probability
        if not 0.0 <= self.noto_gold_share <= self.noto_probability:
            raise ValueError("noto_gold_share must be in [0, noto_probability]")
        if self.compose_min > self.compose_max or self.compose_min < 1:
            raise ValueError("compose bounds must satisfy 1 <= compose_min <= compose_max")
        if self.query_window_min > self.query_window_max or self.query_window_min < 1:
            raise ValueError("query window bounds are inconsistent")
        if self.distractors_min > self.distractors_max or self.distractors_min < 0:
            raise ValueError("distractor bounds are inconsistent")

    def rng(self, task: str) -> random.Random:
        return random.Random(f"{self.seed}:{task}")


# --- corpus loading ------------------------------------------------------


def _parse_lines(raw_lines, where: str, problems: list[str]) -> tuple[DialogueLine, ...] | None:
    lines = []
    for k, raw in enumerate(raw_lines):
        try:
            lines.append(DialogueLine(k + 1, raw["speaker"], raw["text"]))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{where}: line {k + 1}: {exc}")
            return None
    if not lines:
        problems.append(f"{where}: no lines")
        return None
    return tuple(lines)


def source_from_obj(obj: dict, where: str, problems: list[str]) -> SourceDialogue | None:
    source_id = obj.get("id")
    if not source_id:
        problems.append(f"{where}: missing id")
        return None
    where = f"{where} (id={source_id})"
    origin = obj.get("origin")
    if origin not in ORIGINS:
        problems.append(f"{where}: unknown origin {origin!r}")
        return None
    lines = _parse_lines(obj.get("lines", []), where, problems)
    if lines is None:
        return None

    if origin == SINGLE_TOPIC_SUMMARIZED:
        if not obj.get("topic") or not obj.get("summary"):
            problems.append(f"{where}: single-topic sources need topic and summary")
            return None
        return SourceDialogue(source_id, lines, origin, obj["topic"], obj["summary"])

    if origin == MULTI_TOPIC_ANNOTATED:
        raw_records = obj.get("records") or []
        if not raw_records:
            problems.append(f"{where}: multi-topic sources need span records")
            return None
        try:
            records = tuple(
                MemoRecord(topic=r["topic"], start=r["start"], end=r["end"],
                           summary=r.get("summary"))
                for r in raw_records
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{where}: bad record: {exc}")
            return None
        violations = validate_records(records, len(lines), mode="lenient")
        if violations:
            problems.append(f"{where}: " + "; ".join(violations))
            return None
        return SourceDialogue(source_id, lines, origin, records=records)

    # single_turn_qa
    if len(lines) != 2 or lines[0].speaker != "user" or lines[1].speaker != "bot":
        problems.append(f"{where}: single-turn QA needs exactly one user line and one bot line")
        return None
    return SourceDialogue(source_id, lines, origin)


def load_corpus(path: str | Path) -> list[SourceDialogue]:
    """Read one SourceDialogue JSON object per line; all bad rows are reported."""
    sources: list[SourceDialogue] = []
    problems: list[str] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"{path}:{line_no}: not JSON: {exc}")
                continue
            source = source_from_obj(obj, f"{path}:{line_no}", problems)
            if source is not None:
                sources.append(source)
    if problems:
        raise CorpusError(problems)
    return sources


def _by_origin(corpus: Sequence[SourceDialogue], origin: str) -> list[SourceDialogue]:
    return sorted(
        (s for s in corpus if s.origin == origin), key=lambda s: s.id
    )


# --- composition ---------------------------------------------------------


def compose_multi_topic(
    dialogues: Sequence[SourceDialogue],
    k: int,
    rng: random.Random,
    *,
    compose_min: int = 2,
    compose_max: int = 4,
) -> tuple[Conversation, list[MemoRecord]]:
    """Concatenate k sampled single-topic dialogues into one multi-topic stream.

    Gold records carry each source's topic and summary over the exact
    concatenation spans, so they are strict-valid by construction.
    """
    if not compose_min <= k <= compose_max:
        raise ValueError(f"k must be in [{compose_min}, {compose_max}], got {k}")
    if k > len(dialogues):
        raise BuildError(f"need {k} dialogues to compose, have {len(dialogues)}")
    chosen = rng.sample(list(dialogues), k)
    turns: list[tuple[str, str]] = []
    records: list[MemoRecord] = []
    for source in chosen:
        if source.origin != SINGLE_TOPIC_SUMMARIZED:
            raise ValueError(f"source {source.id} is not single-topic summarized")
        start = len(turns) + 1
        turns.extend((line.speaker, line.text) for line in source.lines)
        records.append(
            MemoRecord(topic=source.topic, summary=source.summary,
                       start=start, end=len(turns))
        )
    return Conversation.from_turns(turns), records


# --- memo-writing set ----------------------------------------------------


def _writing_instance(n: int, conversation: Conversation, gold: Sequence[MemoRecord]) -> InstructionInstance:
    return InstructionInstance(
        id=f"{TASK_WRITING}-{n:06d}",
        task=TASK_WRITING,
        prompt=render_memo_writing(conversation.lines),
        answer=serialize_records(gold),
    )


def _annotated_gold(source: SourceDialogue) -> list[MemoRecord]:
    # span-annotated corpora contribute topic + range only, never summaries;
    # lenient annotations are normalized so the gold is always strict
    bare = [replace(rec, summary=None) for rec in source.records]
    return normalize_records(bare, len(source.lines))


def _annotated_gold_with_summaries(source: SourceDialogue) -> list[MemoRecord]:
    # retrieval options keep whatever summaries the annotations carry
    return normalize_records(list(source.records), len(source.lines))


def build_memo_writing_set(
    corpus: Sequence[SourceDialogue], config: BuildConfig
) -> list[InstructionInstance]:
    rng = config.rng(TASK_WRITING)
    target = config.target_counts.get(TASK_WRITING)
    multi = _by_origin(corpus, MULTI_TOPIC_ANNOTATED)
    singles = _by_origin(corpus, SINGLE_TOPIC_SUMMARIZED)
    if not multi and len(singles) < config.compose_min:
        raise BuildError("memo-writing needs annotated or composable sources")

    instances: list[InstructionInstance] = []

    def done() -> bool:
        return target is not None and len(instances) >= target

    for source in multi:
        if done():
            break
        instances.append(
            _writing_instance(len(instances), source.conversation(), _annotated_gold(source))
        )

    if target is None:
        # one pass over the single-topic pool, grouped without replacement
        pool = list(singles)
        rng.shuffle(pool)
        while len(pool) >= config.compose_min:
            k = min(rng.randint(config.compose_min, config.compose_max), len(pool))
            group, pool = pool[:k], pool[k:]
            conversation, gold = compose_multi_topic(
                group, k, rng, compose_min=config.compose_min, compose_max=config.compose_max
            )
            instances.append(_writing_instance(len(instances), conversation, gold))
    else:
        while not done():
            if len(singles) < config.compose_min:
                raise BuildError(
                    f"cannot reach {target} memo-writing instances: "
                    f"only {len(singles)} composable dialogues"
                )
            k = min(rng.randint(config.compose_min, config.compose_max), len(singles))
            conversation, gold = compose_multi_topic(
                singles, k, rng, compose_min=config.compose_min, compose_max=config.compose_max
            )
            instances.append(_writing_instance(len(instances), conversation, gold))
    return instances


# --- retrieval set -------------------------------------------------------


def _topic_pool(corpus: Sequence[SourceDialogue]) -> list[tuple[str, str | None]]:
    pool: list[tuple[str, str | None]] = []
    seen = set()
    for source in sorted(corpus, key=lambda s: s.id):
        entries: list[tuple[str, str | None]] = []
        if source.origin == SINGLE_TOPIC_SUMMARIZED:
            entries = [(source.topic, source.summary)]
        elif source.origin == MULTI_TOPIC_ANNOTATED:
            entries = [(rec.topic, rec.summary) for rec in source.records]
        for topic, summary in entries:
            if topic not in seen:
                seen.add(topic)
                pool.append((topic, summary))
    return pool


def build_retrieval_set(
    corpus: Sequence[SourceDialogue], config: BuildConfig
) -> list[InstructionInstance]:
    rng = config.rng(TASK_RETRIEVAL)
    multi = _by_origin(corpus, MULTI_TOPIC_ANNOTATED)
    singles = _by_origin(corpus, SINGLE_TOPIC_SUMMARIZED)
    can_compose = len(singles) >= config.compose_min
    if not multi and not can_compose:
        raise BuildError("retrieval needs annotated or composable sources")
    pool = _topic_pool(corpus)

    prepared_multi = [
        (source.conversation(), _annotated_gold_with_summaries(source))
        for source in multi
    ]

    target = config.target_counts.get(TASK_RETRIEVAL)
    if target is None:
        target = len(prepared_multi) + (len(singles) // max(config.compose_min, 1) if can_compose else 0)
        target = max(target, 1)

    instances: list[InstructionInstance] = []
    while len(instances) < target:
        use_composition = can_compose and (not prepared_multi or rng.random() < 0.5)
        if use_composition:
            k = min(rng.randint(config.compose_min, config.compose_max), len(singles))
            conversation, records = compose_multi_topic(
                singles, k, rng, compose_min=config.compose_min, compose_max=config.compose_max
            )
        else:
            conversation, records = prepared_multi[rng.randrange(len(prepared_multi))]

        noto_present = rng.random() < config.noto_probability
        noto_gold = noto_present and config.noto_probability > 0 and (
            rng.random() < config.noto_gold_share / config.noto_probability
        )

        window_len = min(
            rng.randint(config.query_window_min, config.query_window_max),
            len(conversation),
        )
        window_start = rng.randint(1, len(conversation) - window_len + 1)
        window_end = window_start + window_len - 1
        query = " ".join(
            line.text for line in conversation.slice(window_start, window_end)
        )
        true_records = [
            rec for rec in records if rec.start <= window_end and window_start <= rec.end
        ]
        own_topics = {rec.topic for rec in records}
        distractor_pool = [(t, s) for t, s in pool if t not in own_topics]
        n_distractors = rng.randint(config.distractors_min, config.distractors_max)
        if len(distractor_pool) < config.distractors_min:
            raise BuildError(
                f"need at least {config.distractors_min} distractor topics, "
                f"have {len(distractor_pool)}"
            )
        distractors = rng.sample(distractor_pool, min(n_distractors, len(distractor_pool)))

        entries: list[tuple[str, str | None, bool]] = [
            (topic, summary, False) for topic, summary in distractors
        ]
        if not noto_gold:
            entries.extend((rec.topic, rec.summary, True) for rec in true_records)
        rng.shuffle(entries)

        options: list[RetrievalOption] = []
        gold_ordinals: list[int] = []
        noto_slot = rng.randint(0, len(entries)) if noto_present else None
        position = 0
        for slot in range(len(entries) + (1 if noto_present else 0)):
            ordinal = slot + 1
            if noto_present and slot == noto_slot:
                options.append(noto_option(ordinal))
                if noto_gold:
                    gold_ordinals.append(ordinal)
                continue
            topic, summary, is_true = entries[position]
            position += 1
            options.append(RetrievalOption(ordinal, topic, summary))
            if is_true:
                gold_ordinals.append(ordinal)

        instances.append(
            InstructionInstance(
                id=f"{TASK_RETRIEVAL}-{len(instances):06d}",
                task=TASK_RETRIEVAL,
                prompt=render_memo_retrieval(query, options),
                answer="#".join(str(o) for o in sorted(gold_ordinals)),
            )
        )
    return instances


# --- chat set ------------------------------------------------------------


def _held_out_exchange(source: SourceDialogue) -> tuple[DialogueLine, DialogueLine]:
    if (
        len(source.lines) < 4
        or source.lines[-2].speaker != "user"
        or source.lines[-1].speaker != "bot"
    ):
        raise BuildError(
            f"source {source.id} lacks a final user/bot exchange to hold out"
        )
    return source.lines[-2], source.lines[-1]


def _evidence_instance(
    n: int,
    source: SourceDialogue,
    others: Sequence[SourceDialogue],
    rng: random.Random,
) -> InstructionInstance:
    user_line, bot_line = _held_out_exchange(source)
    items = [
        EvidenceItem(
            topic=source.topic,
            summary=source.summary,
            dialog_lines=source.lines[:-2],
        )
    ]
    pool = [d for d in others if d.id != source.id]
    for extra in rng.sample(pool, min(2, len(pool))):
        items.append(
            EvidenceItem(
                topic=extra.topic, summary=extra.summary, dialog_lines=extra.lines
            )
        )
    recent_source = rng.choice(pool) if pool else None
    recent = recent_source.lines if recent_source else ()
    return InstructionInstance(
        id=f"{TASK_CHAT}-{n:06d}",
        task=TASK_CHAT,
        prompt=render_chat_with_memo(EvidenceSet(tuple(items)), recent, user_line.text),
        answer=bot_line.text,
    )


def _qa_instance(n: int, source: SourceDialogue) -> InstructionInstance:
    return InstructionInstance(
        id=f"{TASK_CHAT}-{n:06d}",
        task=TASK_CHAT,
        prompt=render_chat_with_memo(EvidenceSet(), (), source.lines[0].text),
        answer=source.lines[1].text,
    )


def build_chat_set(
    corpus: Sequence[SourceDialogue], config: BuildConfig
) -> list[InstructionInstance]:
    rng = config.rng(TASK_CHAT)
    singles = _by_origin(corpus, SINGLE_TOPIC_SUMMARIZED)
    qa = _by_origin(corpus, SINGLE_TURN_QA)
    if not singles and not qa:
        raise BuildError("chat set needs summarized dialogues or single-turn QA rows")
    bad = []
    for source in singles:
        try:
            _held_out_exchange(source)
        except BuildError as exc:
            bad.append(str(exc))
    if bad:
        raise BuildError("; ".join(bad))

    target = config.target_counts.get(TASK_CHAT)
    instances: list[InstructionInstance] = []
    if target is None:
        for source in singles:
            instances.append(_evidence_instance(len(instances), source, singles, rng))
        for source in qa:
            instances.append(_qa_instance(len(instances), source))
        return instances

    while len(instances) < target:
        both = bool(singles) and bool(qa)
        pick_evidence = bool(singles) and (not both or rng.random() < 0.5)
        if pick_evidence:
            source = singles[rng.randrange(len(singles))]
            instances.append(_evidence_instance(len(instances), source, singles, rng))
        else:
            source = qa[rng.randrange(len(qa))]
            instances.append(_qa_instance(len(instances), source))
    return instances


BUILDERS = {
    TASK_WRITING: build_memo_writing_set,
    TASK_RETRIEVAL: build_retrieval_set,
    TASK_CHAT: build_chat_set,
}


# --- emitting / stats ----------------------------------------------------


def emit_instances(instances: Iterable[InstructionInstance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for instance in instances:
            handle.write(json.dumps(instance.to_obj(), ensure_ascii=False))
            handle.write("\n")


def load_instances(path: str | Path) -> list[InstructionInstance]:
    with open(path, encoding="utf-8") as handle:
        return [
            InstructionInstance.from_obj(json.loads(line))
            for line in handle
            if line.strip()
        ]


def dataset_stats(instances: Sequence[InstructionInstance]) -> dict:
    """Count and average estimated tokens per task over prompt + answer."""
    if not instances:
        raise ValueError("no instances to report on")
    stats: dict = {}
    for task in TASKS:
        rows = [i for i in instances if i.task == task]
        if not rows:
            continue
        tokens = [estimate_tokens(i.prompt) + estimate_tokens(i.answer) for i in rows]
        stats[task] = {
            "count": len(rows),
            "avg_tokens": round(sum(tokens) / len(rows), 2),
        }
    return stats


def format_stats(stats: dict) -> str:
    width = max(len(task) for task in stats)
    lines = [f"{'task'.ljust(width)}  {'count':>7}  {'avg tokens':>10}"]
    for task, row in stats.items():
        lines.append(f"{task.ljust(width)}  {row['count']:>7}  {row['avg_tokens']:>10.2f}")
    return "\n".join(lines)


def split_eval(
    instances: Sequence[InstructionInstance], fraction: float, rng: random.Random
) -> tuple[list[InstructionInstance], list[InstructionInstance]]:
    """Deterministically carve an eval split of ``fraction`` from the instances."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("eval fraction must be in [0, 1)")
    shuffled = list(instances)
    rng.shuffle(shuffled)
    n_eval = round(fraction * len(shuffled))
    return shuffled[n_eval:], shuffled[:n_eval]
