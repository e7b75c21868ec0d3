"""Conversational memory engine: topic memos, evidence retrieval, grounded replies."""

from .backends import (
    ApiError,
    BackendDescriptor,
    BackendError,
    CompletionRequest,
    RemoteChatBackend,
    ScriptExhausted,
    ScriptedBackend,
    ScriptedExchange,
    build_backend,
    estimate_tokens,
)
from .core import (
    BOT,
    USER,
    Conversation,
    DialogueLine,
    EvidenceItem,
    EvidenceSet,
    Memo,
    MemoRecord,
    Session,
    SpanError,
    append_memo,
    normalize_records,
    serialize_records,
    validate_records,
)
from .pipeline import (
    PipelineConfig,
    TurnFailure,
    TurnTrace,
    build_options,
    handle_user_message,
    memorize,
    new_session,
    respond,
    retrieve,
    should_memorize,
)
from .prompts import (
    JudgeVerdict,
    PromptError,
    RetrievalOption,
    parse_judge,
    parse_memo_writing,
    parse_retrieval,
    render_chat_with_memo,
    render_judge,
    render_memo_retrieval,
    render_memo_writing,
)

__version__ = "0.1.0"

__all__ = [
    "ApiError",
    "BackendDescriptor",
    "BackendError",
    "BOT",
    "CompletionRequest",
    "Conversation",
    "DialogueLine",
    "EvidenceItem",
    "EvidenceSet",
    "JudgeVerdict",
    "Memo",
    "MemoRecord",
    "PipelineConfig",
    "PromptError",
    "RemoteChatBackend",
    "RetrievalOption",
    "ScriptExhausted",
    "ScriptedBackend",
    "ScriptedExchange",
    "Session",
    "SpanError",
    "TurnFailure",
    "TurnTrace",
    "USER",
    "append_memo",
    "build_backend",
    "build_options",
    "estimate_tokens",
    "handle_user_message",
    "memorize",
    "new_session",
    "normalize_records",
    "parse_judge",
    "parse_memo_writing",
    "parse_retrieval",
    "render_chat_with_memo",
    "render_judge",
    "render_memo_retrieval",
    "render_memo_writing",
    "respond",
    "retrieve",
    "serialize_records",
    "should_memorize",
    "validate_records",
]
