"""The memorization-retrieval-response loop.

Per user turn the engine (1) folds any unrecorded history into the memo,
(2) asks the model which memo records relate to the query and materializes
their dialogue slices as evidence, and (3) answers grounded on that evidence
plus a recent-dialog window, trimmed to the token budget.

Parse failures never kill a chat: a failed memo write degrades to a single
"misc" record over the chunk, a failed selection to an empty evidence set.
Both are logged and visible in the turn trace.
"""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .backends import Backend, BackendError, CompletionRequest, estimate_tokens
from .core import (
    BOT,
    USER,
    Conversation,
    EvidenceItem,
    EvidenceSet,
    Memo,
    MemoRecord,
    Session,
    append_memo,
)
from .prompts import (
    PromptError,
    RetrievalOption,
    noto_option,
    parse_memo_writing,
    parse_retrieval,
    render_chat_with_memo,
    render_memo_retrieval,
    render_memo_writing,
)

logger = logging.getLogger(__name__)

STAGE_MEMO_WRITING = "memo_writing"
STAGE_MEMO_RETRIEVAL = "memo_retrieval"
STAGE_CHAT = "chat_with_memo"

FALLBACK_TOPIC = "misc"

TokenCounter = Callable[[str], int]


@dataclass(frozen=True)
class PipelineConfig:
    """Engine knobs; defaults target a 2k-token text window."""

    memorize_after_lines: int = 10
    recent_window_lines: int = 10
    token_budget: int = 2048
    temperature: float = 0.2
    noto_always_in_options: bool = True
    max_evidence_items: int = 3

    def __post_init__(self):
        for name in ("memorize_after_lines", "recent_window_lines", "token_budget",
                     "max_evidence_items"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {self.temperature}")

    def to_obj(self) -> dict:
        return {
            "memorize_after_lines": self.memorize_after_lines,
            "recent_window_lines": self.recent_window_lines,
            "token_budget": self.token_budget,
            "temperature": self.temperature,
            "noto_always_in_options": self.noto_always_in_options,
            "max_evidence_items": self.max_evidence_items,
        }


@dataclass
class TurnTrace:
    """Everything observable about one turn's inner loop."""

    memo_written: bool = False
    retrieval_options: tuple[RetrievalOption, ...] = ()
    selected: frozenset[int] = frozenset()
    evidence: EvidenceSet = field(default_factory=EvidenceSet)
    prompts: dict[str, str] = field(default_factory=dict)
    raw_outputs: dict[str, str] = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "memo_written": self.memo_written,
            "retrieval_options": [opt.to_obj() for opt in self.retrieval_options],
            "selected": sorted(self.selected),
            "evidence": self.evidence.to_obj(),
            "prompts": dict(self.prompts),
            "raw_outputs": dict(self.raw_outputs),
        }


class PromptBudgetError(Exception):
    """The user input alone exceeds the token budget."""


class TurnFailure(Exception):
    """A backend failed mid-turn; carries the stage and the session as it stands.

    The carried session contains the appended user line but no other changes,
    so callers can persist a consistent state and retry the turn.
    """

    def __init__(self, stage: str, session: Session, cause: BackendError):
        super().__init__(f"backend failure during {stage}: {cause}")
        self.stage = stage
        self.session = session
        self.cause = cause


def new_session(
    session_id: str | None = None,
    config: PipelineConfig | None = None,
    conversation: Conversation | None = None,
    memo: Memo | None = None,
) -> Session:
    return Session(
        id=session_id or uuid.uuid4().hex,
        conversation=conversation or Conversation(),
        memo=memo or Memo(),
        config=config or PipelineConfig(),
    )


def _recent_lines(
    session: Session, evidence: Sequence[EvidenceItem]
) -> list:
    """Last recent_window_lines conversation lines not already shown as evidence.

    Duplication is whole-line identity, not index equality: evidence sliced
    from this session matches its conversation lines exactly, while evidence
    carrying foreign dialogues (dataset-built prompts) must not shadow the
    session's own recent lines.
    """
    shown = {line for item in evidence for line in item.dialog_lines}
    lines = [line for line in session.conversation.lines if line not in shown]
    return lines[-session.config.recent_window_lines :]


def should_memorize(
    session: Session,
    user_input: str = "",
    token_counter: TokenCounter = estimate_tokens,
) -> bool:
    """Write a memo when enough lines are unrecorded or the chat prompt overflows.

    Either trigger needs an unrecorded span: with nothing to fold, a memo
    write cannot relieve budget pressure.
    """
    config = session.config
    unrecorded = len(session.conversation) - session.memo.covered_until
    if unrecorded <= 0:
        return False
    if unrecorded >= config.memorize_after_lines:
        return True
    if user_input.strip():
        probe = render_chat_with_memo(
            EvidenceSet(), _recent_lines(session, ()), user_input
        )
        if token_counter(probe) > config.token_budget:
            return True
    return False


def memorize(
    session: Session, backend: Backend
) -> tuple[Session, dict[str, str]]:
    """Fold the unrecorded conversation span into the memo.

    The chunk is renumbered locally for the prompt; parsed records are
    normalized and appended at the stored offset. If the model output cannot
    be parsed even after repairs, the whole chunk is recorded as one
    summary-less "misc" record so no line is lost from memory.
    """
    offset = session.memo.covered_until
    total = len(session.conversation)
    if offset >= total:
        raise ValueError("no unrecorded lines to memorize")
    chunk = session.conversation.slice(offset + 1, total)
    chunk_len = len(chunk)
    prompt = render_memo_writing(chunk)
    raw = backend.complete(
        CompletionRequest(prompt, temperature=session.config.temperature)
    )
    try:
        records = parse_memo_writing(raw, chunk_len)
    except PromptError as exc:
        logger.warning(
            "memo parse failed for session %s (%s); recording chunk as '%s'",
            session.id, exc, FALLBACK_TOPIC,
        )
        records = [MemoRecord(topic=FALLBACK_TOPIC, start=1, end=chunk_len)]
    memo = append_memo(session.memo, records, offset, chunk_len)
    return replace(session, memo=memo), {"prompt": prompt, "raw": raw}


def build_options(memo: Memo, include_noto: bool = True) -> list[RetrievalOption]:
    """One option per memo record in memo order; NOTO appended last.

    An empty memo yields no options at all: the retrieval stage is skipped
    rather than asking the model to choose among nothing.
    """
    if not memo.records:
        return []
    options = [
        RetrievalOption(k, rec.topic, rec.summary)
        for k, rec in enumerate(memo.records, 1)
    ]
    if include_noto:
        options.append(noto_option(len(options) + 1))
    return options


def retrieve(
    query: str, session: Session, backend: Backend
) -> tuple[EvidenceSet, dict]:
    """Select query-related memo records and slice out their dialogue spans.

    Selecting NOTO contributes no evidence; when NOTO arrives together with
    real options the real ones are kept. A selection that cannot be parsed
    (or is out of range) degrades to an empty evidence set.
    """
    config = session.config
    options = build_options(session.memo, include_noto=config.noto_always_in_options)
    fragment: dict = {"options": tuple(options), "selected": frozenset()}
    if not options:
        return EvidenceSet(), fragment
    prompt = render_memo_retrieval(query, options)
    raw = backend.complete(CompletionRequest(prompt, temperature=config.temperature))
    fragment["prompt"] = prompt
    fragment["raw"] = raw
    try:
        selected = parse_retrieval(raw, len(options))
    except PromptError as exc:
        logger.warning(
            "retrieval parse failed for session %s (%s); continuing without evidence",
            session.id, exc,
        )
        return EvidenceSet(), fragment
    fragment["selected"] = frozenset(selected)
    noto_ordinals = {opt.ordinal for opt in options if opt.is_noto}
    chosen = sorted(selected - noto_ordinals)[: config.max_evidence_items]
    items = []
    for ordinal in chosen:
        rec = session.memo.records[ordinal - 1]
        items.append(
            EvidenceItem(
                topic=rec.topic,
                summary=rec.summary,
                dialog_lines=session.conversation.slice(rec.start, rec.end),
            )
        )
    return EvidenceSet(tuple(items)), fragment


def respond(
    session: Session,
    user_input: str,
    evidence: EvidenceSet,
    backend: Backend,
    token_counter: TokenCounter = estimate_tokens,
) -> tuple[str, dict[str, str]]:
    """Generate the grounded reply, trimming context to fit the token budget.

    Trim order: drop evidence items from the end, then shrink the recent
    window from its oldest line. The user input is never dropped; if it alone
    overflows the budget the turn errors.
    """
    if not user_input.strip():
        raise ValueError("user input must be non-empty")
    config = session.config
    items = list(evidence.items[: config.max_evidence_items])
    recent = _recent_lines(session, items)

    def build() -> str:
        return render_chat_with_memo(EvidenceSet(tuple(items)), recent, user_input)

    prompt = build()
    while token_counter(prompt) > config.token_budget:
        if items:
            items.pop()
            recent = _recent_lines(session, items)
        elif recent:
            recent = recent[1:]
        else:
            raise PromptBudgetError(
                f"user input alone exceeds the {config.token_budget}-token budget"
            )
        prompt = build()
    raw = backend.complete(CompletionRequest(prompt, temperature=config.temperature))
    return raw, {"prompt": prompt, "raw": raw}


def handle_user_message(
    session: Session,
    text: str,
    backend: Backend,
    token_counter: TokenCounter = estimate_tokens,
) -> tuple[Session, str, TurnTrace]:
    """Run one full turn: memorization, then retrieval, then response.

    The memo stage covers only completed history, never the in-flight query.
    On a backend failure the raised TurnFailure carries the session with the
    user line appended and everything else untouched.
    """
    if not text.strip():
        raise ValueError("user message must be non-empty")
    trace = TurnTrace()
    working = session
    stage = STAGE_MEMO_WRITING
    try:
        if should_memorize(working, text, token_counter):
            working, fragment = memorize(working, backend)
            trace.memo_written = True
            trace.prompts[STAGE_MEMO_WRITING] = fragment["prompt"]
            trace.raw_outputs[STAGE_MEMO_WRITING] = fragment["raw"]

        stage = STAGE_MEMO_RETRIEVAL
        evidence, fragment = retrieve(text, working, backend)
        trace.retrieval_options = fragment["options"]
        trace.selected = fragment["selected"]
        trace.evidence = evidence
        if "prompt" in fragment:
            trace.prompts[STAGE_MEMO_RETRIEVAL] = fragment["prompt"]
            trace.raw_outputs[STAGE_MEMO_RETRIEVAL] = fragment["raw"]

        stage = STAGE_CHAT
        reply, fragment = respond(working, text, evidence, backend, token_counter)
        trace.prompts[STAGE_CHAT] = fragment["prompt"]
        trace.raw_outputs[STAGE_CHAT] = fragment["raw"]
    except BackendError as exc:
        failed = replace(session, conversation=session.conversation.append(USER, text))
        raise TurnFailure(stage, failed, exc) from exc

    conversation = working.conversation.append(USER, text).append(BOT, reply)
    return replace(working, conversation=conversation), reply, trace
