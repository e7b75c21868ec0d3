#!/usr/bin/env python3
"""Walk one session through the full memorize/retrieve/respond loop.

Uses a scripted backend so the run is deterministic and offline: ten
exchanges about two topics are replayed, then a follow-up question forces a
memo write, a retrieval pass, and a grounded reply. The turn trace shows
every prompt the engine sent.
"""

import json

from memoloop import PipelineConfig, ScriptedBackend, handle_user_message, new_session

EXCHANGES = [
    ("Do you know a good chili recipe?", "Yes: beans, tomatoes, smoked paprika and patience."),
    ("How long should it simmer?", "At least two hours, stirring now and then."),
    ("Can I freeze the leftovers?", "Chili freezes well for up to three months."),
    ("Switching topics: how do I patch a bike tube?", "Find the hole, rough the surface, glue the patch."),
    ("How do I find a slow leak?", "Submerge the inflated tube and watch for bubbles."),
]

MEMO_ANSWER = (
    "[{'topic': 'chili cooking', 'summary': 'user asks about making and storing chili.',"
    " 'start': 1, 'end': 6}, {'topic': 'bike repair', 'summary': 'user learns to patch"
    " a bike tube.', 'start': 7, 'end': 10}]"
)

backend = ScriptedBackend(
    [reply for _, reply in EXCHANGES]
    + [MEMO_ANSWER, "1", "Simmer it at least two hours, as we discussed."]
)

session = new_session(config=PipelineConfig(memorize_after_lines=10))
for text, _ in EXCHANGES:
    session, reply, _ = handle_user_message(session, text, backend)
    print(f"you> {text}\nbot> {reply}\n")

question = "Remind me how long the chili needs?"
session, reply, trace = handle_user_message(session, question, backend)
print(f"you> {question}\nbot> {reply}\n")

print("memo after the turn:")
print(json.dumps(session.memo.to_obj(), indent=2))
print("\nretrieval options:", [o.topic for o in trace.retrieval_options])
print("selected ordinals:", sorted(trace.selected))
print("\nmemo-writing prompt sent to the backend:\n")
print(trace.prompts["memo_writing"])
