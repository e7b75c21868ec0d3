#!/usr/bin/env python3
"""Build a small instruction set from an inline synthetic corpus.

Shows the three builders, the JSONL emitter, and the stats table. Every run
with the same seed produces byte-identical output.
"""

from pathlib import Path

from memoloop.core import DialogueLine
from memoloop.dataset import (
    BuildConfig,
    SourceDialogue,
    build_chat_set,
    build_memo_writing_set,
    build_retrieval_set,
    dataset_stats,
    emit_instances,
    format_stats,
)

TOPICS = ["herb gardens", "kite building", "night photography", "sourdough", "canoeing", "star maps"]


def dialogue(i: int) -> SourceDialogue:
    topic = TOPICS[i % len(TOPICS)]
    lines = []
    for k in range(6):
        speaker = "user" if k % 2 == 0 else "bot"
        lines.append(DialogueLine(k + 1, speaker, f"dialogue {i} line {k + 1} about {topic}"))
    return SourceDialogue(
        id=f"demo-{i:02d}",
        lines=tuple(lines),
        origin="single_topic_summarized",
        topic=f"{topic} {i}",
        summary=f"user and bot talk through {topic} step by step.",
    )


corpus = [dialogue(i) for i in range(12)]
config = BuildConfig(seed=7, target_counts={
    "memo_writing": 8, "memo_retrieval": 12, "chat_with_memo": 6,
})

instances = (
    build_memo_writing_set(corpus, config)
    + build_retrieval_set(corpus, config)
    + build_chat_set(corpus, config)
)

out = Path("demo_instances.jsonl")
emit_instances(instances, out)
print(f"wrote {len(instances)} instances to {out}\n")
print(format_stats(dataset_stats(instances)))

print("\nfirst retrieval instance prompt:\n")
first = next(i for i in instances if i.task == "memo_retrieval")
print(first.prompt)
print("\ngold answer:", first.answer)
