from pathlib import Path

import pytest

from memoloop import (
    Conversation,
    EvidenceItem,
    EvidenceSet,
    Memo,
    MemoRecord,
    ScriptedBackend,
    TurnFailure,
    append_memo,
    build_options,
    estimate_tokens,
    handle_user_message,
    memorize,
    new_session,
    respond,
    retrieve,
    should_memorize,
)
from memoloop.core import DialogueLine
from memoloop.pipeline import (
    STAGE_CHAT,
    STAGE_MEMO_RETRIEVAL,
    STAGE_MEMO_WRITING,
    PipelineConfig,
    PromptBudgetError,
)
from prompt_fixtures import (
    WORRY_TAXI_CONVERSATION,
    WORRY_TAXI_GOLD_ANSWER,
    WORRY_TAXI_RECORDS,
    WORRY_TAXI_TURNS,
)

QUESTION = "What was Sabrina so worried about earlier?"
FINAL_REPLY = "Sabrina was worried because she had not heard from her sister for 2 weeks."


def conversation_of(n, text_len=6):
    return Conversation.from_turns(
        [("user" if k % 2 == 0 else "bot", f"x{k:0{text_len}d}") for k in range(n)]
    )


def session_with(n_lines, covered=0, config=None, text_len=6):
    config = config or PipelineConfig()
    conv = conversation_of(n_lines, text_len)
    memo = Memo()
    if covered:
        memo = append_memo(Memo(), [MemoRecord(topic="misc", start=1, end=covered)], 0, covered)
    return new_session("s", config, conv, memo)


def golden_backend():
    replies = [text for speaker, text in WORRY_TAXI_TURNS if speaker == "bot"]
    return ScriptedBackend([*replies, WORRY_TAXI_GOLD_ANSWER, "1", FINAL_REPLY])


def run_golden_flow():
    config = PipelineConfig(memorize_after_lines=20)
    session = new_session("golden", config)
    backend = golden_backend()
    for speaker, text in WORRY_TAXI_TURNS:
        if speaker == "user":
            session, _, _ = handle_user_message(session, text, backend)
    return handle_user_message(session, QUESTION, backend)


# --- should_memorize ----------------------------------------------------


def test_should_memorize_threshold_reached():
    session = session_with(20)
    assert should_memorize(session) is True


def test_should_memorize_below_threshold_and_budget():
    session = session_with(24, covered=20)
    assert should_memorize(session, "short question") is False


def test_should_memorize_budget_overflow():
    # 4 unrecorded lines only, but the probe chat prompt overflows 2048 tokens
    session = session_with(24, covered=20, text_len=900)
    assert should_memorize(session, "short question") is True


def test_should_memorize_never_fires_without_unrecorded_lines():
    # a fully covered (or empty) history has nothing to fold, even when the
    # input alone blows the budget
    empty = new_session("s", PipelineConfig(token_budget=64))
    assert should_memorize(empty, "x" * 5000) is False
    covered = session_with(20, covered=20)
    assert should_memorize(covered, "x" * 50000) is False


# --- memorize -----------------------------------------------------------


def test_memorize_parses_gold_answer():
    config = PipelineConfig()
    session = new_session("s", config, WORRY_TAXI_CONVERSATION)
    backend = ScriptedBackend([WORRY_TAXI_GOLD_ANSWER])
    updated, fragment = memorize(session, backend)
    assert list(updated.memo.records) == WORRY_TAXI_RECORDS
    assert updated.memo.covered_until == 20
    assert fragment["raw"] == WORRY_TAXI_GOLD_ANSWER


def test_memorize_requires_unrecorded_lines():
    session = session_with(10, covered=10)
    with pytest.raises(ValueError):
        memorize(session, ScriptedBackend(["x"]))


def test_memorize_falls_back_to_misc_record(caplog):
    session = session_with(12)
    backend = ScriptedBackend(["I see several topics here but cannot list them."])
    with caplog.at_level("WARNING"):
        updated, _ = memorize(session, backend)
    assert [r.topic for r in updated.memo.records] == ["misc"]
    assert updated.memo.records[0].span == (1, 12)
    assert updated.memo.records[0].summary is None
    assert any("memo parse failed" in r.message for r in caplog.records)


def test_memorize_offsets_second_chunk():
    session = session_with(30)
    backend = ScriptedBackend([
        "[{'topic': 'first', 'start': 1, 'end': 20}]",
        "[{'topic': 'second', 'start': 1, 'end': 10}]",
    ])
    mid, _ = memorize(
        new_session("s", session.config, conversation_of(20)), backend
    )
    grown = new_session("s", session.config, session.conversation, mid.memo)
    updated, _ = memorize(grown, backend)
    assert [r.span for r in updated.memo.records] == [(1, 20), (21, 30)]


# --- build_options ------------------------------------------------------


def test_build_options_appends_noto_last():
    memo = append_memo(Memo(), WORRY_TAXI_RECORDS, 0, 20)
    options = build_options(memo)
    assert [o.topic for o in options] == ["worry", "taxi conversation", "NOTO"]
    assert [o.ordinal for o in options] == [1, 2, 3]
    assert options[-1].is_noto


def test_build_options_empty_memo():
    assert build_options(Memo()) == []


def test_build_options_five_records():
    records = [MemoRecord(topic=f"t{i}", start=i * 2 + 1, end=i * 2 + 2) for i in range(5)]
    memo = append_memo(Memo(), records, 0, 10)
    options = build_options(memo)
    assert len(options) == 6
    assert options[5].ordinal == 6 and options[5].is_noto


def test_build_options_without_noto():
    memo = append_memo(Memo(), WORRY_TAXI_RECORDS, 0, 20)
    options = build_options(memo, include_noto=False)
    assert len(options) == 2 and not any(o.is_noto for o in options)


# --- retrieve -----------------------------------------------------------


def five_record_session():
    records = [MemoRecord(topic=f"t{i}", start=i * 5 + 1, end=i * 5 + 5) for i in range(5)]
    memo = append_memo(Memo(), records, 0, 25)
    return new_session("s", PipelineConfig(), conversation_of(25), memo)


def test_retrieve_selected_records_become_evidence():
    session = five_record_session()
    evidence, fragment = retrieve("q", session, ScriptedBackend(["1#2#4"]))
    assert fragment["selected"] == {1, 2, 4}
    assert [item.topic for item in evidence.items] == ["t0", "t1", "t3"]
    for item, ordinal in zip(evidence.items, (1, 2, 4)):
        rec = session.memo.records[ordinal - 1]
        assert item.dialog_lines == session.conversation.slice(rec.start, rec.end)


def test_retrieve_noto_only_gives_empty_evidence():
    session = five_record_session()
    evidence, fragment = retrieve("q", session, ScriptedBackend(["6"]))
    assert fragment["selected"] == {6}
    assert len(evidence) == 0


def test_retrieve_noto_with_real_options_keeps_real():
    session = five_record_session()
    evidence, _ = retrieve("q", session, ScriptedBackend(["2#6"]))
    assert [item.topic for item in evidence.items] == ["t1"]


def test_retrieve_out_of_range_degrades_to_empty(caplog):
    session = five_record_session()
    with caplog.at_level("WARNING"):
        evidence, fragment = retrieve("q", session, ScriptedBackend(["2#7"]))
    assert len(evidence) == 0
    assert fragment["selected"] == frozenset()
    assert any("retrieval parse failed" in r.message for r in caplog.records)


def test_retrieve_empty_memo_skips_backend():
    session = session_with(4)
    evidence, fragment = retrieve("q", session, ScriptedBackend([]))
    assert len(evidence) == 0 and fragment["options"] == ()


def test_retrieve_caps_evidence_items():
    session = five_record_session()
    evidence, fragment = retrieve("q", session, ScriptedBackend(["1#2#3#4#5"]))
    assert fragment["selected"] == {1, 2, 3, 4, 5}
    assert [item.topic for item in evidence.items] == ["t0", "t1", "t2"]


# --- respond ------------------------------------------------------------


def long_evidence(n_items, text_len=400):
    items = tuple(
        EvidenceItem(
            topic=f"t{i}",
            summary="s",
            dialog_lines=(DialogueLine(1, "user", "y" * text_len),),
        )
        for i in range(n_items)
    )
    return EvidenceSet(items)


def test_respond_returns_backend_reply_verbatim():
    session = session_with(4)
    reply, fragment = respond(session, "hi", EvidenceSet(), ScriptedBackend(["  spaced reply  "]))
    assert reply == "  spaced reply  "
    assert fragment["prompt"].endswith("user: hi ### bot:")


def test_respond_caps_then_trims_evidence_to_budget():
    config = PipelineConfig(token_budget=500)
    session = new_session("s", config, conversation_of(4))
    reply, fragment = respond(session, "hi", long_evidence(4), ScriptedBackend(["ok"]))
    prompt = fragment["prompt"]
    assert prompt.count("'Related Topics':") <= 3
    assert prompt.endswith("user: hi ### bot:")
    assert estimate_tokens(prompt) <= 500


def test_respond_generous_budget_keeps_three_items():
    config = PipelineConfig(token_budget=4096)
    session = new_session("s", config, conversation_of(4))
    _, fragment = respond(session, "hi", long_evidence(4), ScriptedBackend(["ok"]))
    assert fragment["prompt"].count("'Related Topics':") == 3


def test_respond_shrinks_recent_window_after_evidence():
    config = PipelineConfig(token_budget=150)
    session = new_session("s", config, conversation_of(12, text_len=60))
    _, fragment = respond(session, "hi", long_evidence(2), ScriptedBackend(["ok"]))
    prompt = fragment["prompt"]
    # both oversized evidence items dropped, recent window shrunk to fit
    assert "(1) None." in prompt
    assert estimate_tokens(prompt) <= 150
    assert prompt.endswith("user: hi ### bot:")


def test_respond_budget_unsatisfiable():
    config = PipelineConfig(token_budget=64)
    session = new_session("s", config, Conversation())
    with pytest.raises(PromptBudgetError):
        respond(session, "z" * 1000, EvidenceSet(), ScriptedBackend(["ok"]))


def test_respond_salary_fixture_round_trip():
    from prompt_fixtures import (
        SALARY_EVIDENCE,
        SALARY_GOLD_REPLY,
        SALARY_USER_INPUT,
        SCHOOL_RECENT_DIALOGS,
    )

    # seed a session whose recent window is exactly the school-tour dialogue
    session = new_session(
        "s", PipelineConfig(), Conversation(SCHOOL_RECENT_DIALOGS)
    )
    reply, fragment = respond(
        session, SALARY_USER_INPUT, SALARY_EVIDENCE, ScriptedBackend([SALARY_GOLD_REPLY])
    )
    assert reply == SALARY_GOLD_REPLY
    golden = (Path(__file__).parent / "goldens" / "chat_with_memo_salary.txt").read_text(
        encoding="utf-8"
    )
    assert fragment["prompt"] == golden


def test_respond_excludes_evidence_lines_from_recent():
    memo = append_memo(Memo(), WORRY_TAXI_RECORDS, 0, 20)
    session = new_session("s", PipelineConfig(), WORRY_TAXI_CONVERSATION, memo)
    evidence, _ = retrieve("q", session, ScriptedBackend(["2"]))  # taxi 9..20
    _, fragment = respond(session, "ok?", evidence, ScriptedBackend(["done"]))
    recent_block = fragment["prompt"].split("Recent Dialogs:\n")[1].split("\n```")[0]
    # lines 9..20 are shown as evidence, so recent falls back to lines 1..8
    assert "Is this taxi available?" not in recent_block
    assert "How often do you call each other?" in recent_block


# --- handle_user_message ------------------------------------------------


def test_first_message_below_threshold():
    session = new_session("s", PipelineConfig())
    backend = ScriptedBackend(["hello there"])
    updated, reply, trace = handle_user_message(session, "hi", backend)
    assert reply == "hello there"
    assert trace.memo_written is False
    assert len(trace.evidence) == 0
    assert trace.retrieval_options == ()
    assert [l.text for l in updated.conversation.lines] == ["hi", "hello there"]


def test_golden_flow_trace():
    session, reply, trace = run_golden_flow()
    assert reply == FINAL_REPLY
    assert trace.memo_written is True
    assert list(session.memo.records) == WORRY_TAXI_RECORDS
    assert session.memo.covered_until == 20
    assert len(session.conversation) == 22
    assert [o.topic for o in trace.retrieval_options] == ["worry", "taxi conversation", "NOTO"]
    assert trace.selected == {1}
    assert len(trace.evidence) == 1
    assert trace.evidence.items[0].dialog_lines == session.conversation.slice(1, 8)
    # loop order: memo prompt precedes retrieval precedes chat
    assert list(trace.prompts) == [STAGE_MEMO_WRITING, STAGE_MEMO_RETRIEVAL, STAGE_CHAT]
    assert trace.prompts[STAGE_CHAT].endswith(f"user: {QUESTION} ### bot:")
    for prompt in trace.prompts.values():
        assert estimate_tokens(prompt) <= session.config.token_budget


def test_golden_flow_deterministic_across_runs():
    first = run_golden_flow()
    second = run_golden_flow()
    third = run_golden_flow()
    for other in (second, third):
        assert other[0] == first[0]
        assert other[1] == first[1]
        assert other[2].to_obj() == first[2].to_obj()


def test_memory_conservation_over_turns():
    from memoloop import ScriptedExchange

    config = PipelineConfig(memorize_after_lines=4)
    session = new_session("s", config)
    # rule-based backend answering every stage; the memo rule is prose so the
    # misc fallback covers whatever chunk length comes up
    backend = ScriptedBackend([
        ScriptedExchange("no json here", contains="Task Conversation"),
        ScriptedExchange("1", contains="Topic Options"),
        ScriptedExchange("sure", contains="User Input"),
    ])
    for k in range(6):
        session, _, _ = handle_user_message(session, f"msg {k}", backend)
        unrecorded = len(session.conversation) - session.memo.covered_until
        assert 0 <= unrecorded < len(session.conversation) + 1
    # memo never overtakes the conversation and threshold keeps lag bounded
    assert session.memo.covered_until <= len(session.conversation)
    assert len(session.conversation) - session.memo.covered_until <= config.memorize_after_lines + 1


def test_backend_failure_leaves_user_line_only():
    session = new_session("s", PipelineConfig())
    with pytest.raises(TurnFailure) as exc_info:
        handle_user_message(session, "hi", ScriptedBackend([]))
    failure = exc_info.value
    assert failure.stage == STAGE_CHAT  # empty memo skips both earlier stages
    assert [l.text for l in failure.session.conversation.lines] == ["hi"]
    assert failure.session.memo.covered_until == 0


def test_backend_failure_during_memo_stage():
    config = PipelineConfig(memorize_after_lines=2)
    session = session_with(4, config=config)
    with pytest.raises(TurnFailure) as exc_info:
        handle_user_message(session, "hi", ScriptedBackend([]))
    assert exc_info.value.stage == STAGE_MEMO_WRITING
    assert len(exc_info.value.session.conversation) == 5


def test_rejects_empty_message():
    with pytest.raises(ValueError):
        handle_user_message(new_session(), "   ", ScriptedBackend([]))


def test_trace_serializes_to_plain_json_types():
    import json

    _, _, trace = run_golden_flow()
    obj = trace.to_obj()
    assert json.loads(json.dumps(obj)) == obj
    assert obj["selected"] == [1]
    assert obj["retrieval_options"][2]["is_noto"] is True
