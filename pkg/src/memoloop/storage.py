"""Session snapshot persistence.

One JSON snapshot file per session, rewritten atomically on every turn
(write to a temp file, then rename). A reloaded snapshot rebuilds the exact
session value, so the next turn's prompts are byte-identical to an
uninterrupted run.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .core import Conversation, DialogueLine, Memo, MemoRecord, Session
from .pipeline import PipelineConfig


def snapshot_obj(session: Session, last_trace: dict | None = None) -> dict:
    return {
        "id": session.id,
        "config": session.config.to_obj(),
        "conversation": [
            {"index": line.index, "speaker": line.speaker, "text": line.text}
            for line in session.conversation.lines
        ],
        "memo": {
            "covered_until": session.memo.covered_until,
            "records": session.memo.to_obj(),
        },
        "last_trace": last_trace,
    }


def session_from_snapshot(obj: dict) -> tuple[Session, dict | None]:
    conversation = Conversation(
        tuple(
            DialogueLine(line["index"], line["speaker"], line["text"])
            for line in obj["conversation"]
        )
    )
    memo = Memo(
        tuple(MemoRecord.from_obj(rec) for rec in obj["memo"]["records"]),
        obj["memo"]["covered_until"],
    )
    session = Session(
        id=obj["id"],
        conversation=conversation,
        memo=memo,
        config=PipelineConfig(**obj["config"]),
    )
    return session, obj.get("last_trace")


def snapshot_path(directory: str | Path, session_id: str) -> Path:
    return Path(directory) / f"{session_id}.json"


def save_snapshot(
    session: Session, directory: str | Path, last_trace: dict | None = None
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = snapshot_path(directory, session.id)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(
        json.dumps(snapshot_obj(session, last_trace), ensure_ascii=False),
        encoding="utf-8",
    )
    os.replace(tmp, path)
    return path


def load_snapshot(directory: str | Path, session_id: str) -> tuple[Session, dict | None]:
    path = snapshot_path(directory, session_id)
    obj = json.loads(path.read_text(encoding="utf-8"))
    return session_from_snapshot(obj)


def delete_snapshot(directory: str | Path, session_id: str) -> bool:
    path = snapshot_path(directory, session_id)
    if path.exists():
        path.unlink()
        return True
    return False
