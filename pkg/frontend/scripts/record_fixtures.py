#!/usr/bin/env python3
"""Record service payloads for the UI contract tests.

Replays the golden worry/taxi script through the real HTTP service with a
scripted backend and dumps every request/response pair, so the frontend test
server can replay the exact wire payloads without running Python.

Run from the repository root:  python3 frontend/scripts/record_fixtures.py
"""

import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(ROOT / "tests"))

from prompt_fixtures import WORRY_TAXI_GOLD_ANSWER, WORRY_TAXI_TURNS  # noqa: E402

from memoloop.config import EngineConfig  # noqa: E402
from memoloop.pipeline import PipelineConfig  # noqa: E402
from memoloop.service import create_app  # noqa: E402

QUESTION = "What was Sabrina so worried about earlier?"
FINAL_REPLY = "Sabrina was worried because she had not heard from her sister for 2 weeks."


def record(tmp_dir: Path) -> dict:
    replies = [text for speaker, text in WORRY_TAXI_TURNS if speaker == "bot"]
    config = EngineConfig(
        chat_backend={
            "kind": "scripted",
            "script": [*replies, WORRY_TAXI_GOLD_ANSWER, "1", FINAL_REPLY],
        },
        pipeline=PipelineConfig(memorize_after_lines=20),
        storage_path=tmp_dir / "sessions",
    )
    client = TestClient(create_app(config))

    created = client.post("/sessions")
    session_id = created.json()["id"]
    turns = []
    user_turns = [text for speaker, text in WORRY_TAXI_TURNS if speaker == "user"]
    for text in [*user_turns, QUESTION]:
        response = client.post(f"/sessions/{session_id}/messages", json={"text": text})
        response.raise_for_status()
        turns.append({
            "request": {"text": text},
            "response": response.json(),
            "memo_after": client.get(f"/sessions/{session_id}/memo").json(),
        })

    failing_config = EngineConfig(
        chat_backend={"kind": "scripted", "script": []},
        storage_path=tmp_dir / "failing-sessions",
    )
    failing = TestClient(create_app(failing_config))
    failing_id = failing.post("/sessions").json()["id"]
    failure = failing.post(f"/sessions/{failing_id}/messages", json={"text": "hello"})

    return {
        "create": created.json(),
        "turns": turns,
        "final_memo": client.get(f"/sessions/{session_id}/memo").json(),
        "final_trace": client.get(f"/sessions/{session_id}/trace").json(),
        "failure": {"status": failure.status_code, "body": failure.json()},
    }


def main() -> None:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        fixture = record(Path(tmp))
    out = ROOT / "frontend" / "tests" / "fixtures" / "golden_session.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(fixture, indent=2, ensure_ascii=False), encoding="utf-8")
    print(f"wrote {out} ({len(fixture['turns'])} turns)")


if __name__ == "__main__":
    main()
