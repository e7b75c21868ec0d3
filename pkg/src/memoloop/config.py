"""Engine configuration: backends, pipeline settings, storage, listen address.

The config file is plain JSON:

    {
      "chat_backend": {"kind": "remote_chat_api", "endpoint": "...",
                       "model_name": "...", "auth_env": "CHAT_API_KEY"},
      "judge_backend": {"kind": "scripted", "script": ["[[90]]"]},
      "pipeline": {"memorize_after_lines": 10, "token_budget": 2048},
      "storage_path": "./sessions",
      "listen_address": "127.0.0.1:8080"
    }

Backend secrets never live in the file; ``auth_env`` names the environment
variable to read at call time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import Backend, build_backend
from .pipeline import PipelineConfig


@dataclass
class EngineConfig:
    chat_backend: dict
    judge_backend: dict | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    storage_path: Path = Path("./sessions")
    listen_address: str = "127.0.0.1:8080"

    def build_chat_backend(self) -> Backend:
        return build_backend(self.chat_backend)

    def build_judge_backend(self) -> Backend:
        if self.judge_backend is None:
            raise ValueError("no judge backend configured")
        return build_backend(self.judge_backend)

    def validate(self) -> None:
        """Resolve backends and make the storage path writable, or raise."""
        self.build_chat_backend()
        if self.judge_backend is not None:
            self.build_judge_backend()
        self.storage_path.mkdir(parents=True, exist_ok=True)
        probe = self.storage_path / ".write-probe"
        probe.write_text("")
        probe.unlink()

    @property
    def host(self) -> str:
        return self.listen_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_address.rsplit(":", 1)[1])


def engine_config_from_obj(obj: dict, base_dir: Path | None = None) -> EngineConfig:
    storage = Path(obj.get("storage_path", "./sessions"))
    if base_dir is not None and not storage.is_absolute():
        storage = base_dir / storage
    return EngineConfig(
        chat_backend=obj["chat_backend"],
        judge_backend=obj.get("judge_backend"),
        pipeline=PipelineConfig(**obj.get("pipeline", {})),
        storage_path=storage,
        listen_address=obj.get("listen_address", "127.0.0.1:8080"),
    )


def load_engine_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    return engine_config_from_obj(obj, base_dir=path.resolve().parent)
