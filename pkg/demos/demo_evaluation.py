#!/usr/bin/env python3
"""Score memo writing and retrieval, then run the consistency harness.

All backends are scripted, so the demo is deterministic. The judge returns
ratings 1, 100 and 90 across three long-range cases; the report averages
them per question type and overall.
"""

import json

from memoloop import MemoRecord, PipelineConfig, ScriptedBackend, ScriptedExchange, new_session
from memoloop.evaluation import (
    ConsistencyCase,
    StreamTurn,
    run_consistency_eval,
    score_memo_writing,
    score_retrieval,
)

gold = [
    MemoRecord(topic="worry", start=1, end=8, summary="user comforts the worried bot"),
    MemoRecord(topic="taxi ride", start=9, end=20, summary="a taxi ride to the station"),
]
pred_good = gold
pred_shifted = [
    MemoRecord(topic="worry", start=1, end=7, summary="user comforts the worried bot"),
    MemoRecord(topic="taxi ride", start=8, end=20, summary="a taxi ride to the station"),
]

print("span-matched scoring:")
print("  identical prediction:", score_memo_writing(pred_good, gold).to_obj())
print("  spans off by one:    ", score_memo_writing(pred_shifted, gold).to_obj())

print("\nretrieval scoring:")
print("  {1,2} vs {1,2,4}:", score_retrieval({1, 2}, {1, 2, 4}))

chat_backend = ScriptedBackend([
    ScriptedExchange("not a memo", contains="Task Conversation"),
    ScriptedExchange("1", contains="Topic Options"),
    ScriptedExchange("here is my answer", contains="User Input"),
])
judge_backend = ScriptedBackend(["weak. [[1]]", "flawless. [[100]]", "strong. [[90]]"])


def case(case_id, qtype):
    return ConsistencyCase(
        id=case_id,
        stream=tuple(StreamTurn(f"{case_id} message {k}") for k in range(12)),
        question="what did we cover first?",
        qtype=qtype,
        judge_history_spans=((1, 4),),
    )


report = run_consistency_eval(
    [case("demo-1", "retrospection"), case("demo-2", "continuation"), case("demo-3", "conjunction")],
    lambda: new_session(config=PipelineConfig()),
    chat_backend,
    judge_backend,
)

print("\nconsistency report:")
print(json.dumps({k: v for k, v in report.items() if k != "cases"}, indent=2))
