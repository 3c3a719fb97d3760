"""Append-only run trace: every stage and every model call of one run."""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Iterator


class Trace:
    def __init__(self, path: str | Path | None = None) -> None:
        self.events: list[dict[str, Any]] = []
        self.prompts: dict[str, str] = {}
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def add(self, event: str, **fields: Any) -> dict[str, Any]:
        entry = {"event": event, **fields}
        with self._lock:
            entry["seq"] = len(self.events)
            self.events.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False, default=_jsonable) + "\n")
        return entry

    def record_call(self, *, prompt_hash: str, prompt: str, **fields: Any) -> None:
        with self._lock:
            first = prompt_hash not in self.prompts
            self.prompts[prompt_hash] = prompt
        if first:
            self.add("prompt", prompt_hash=prompt_hash, text=prompt)
        self.add("provider_call", prompt_hash=prompt_hash, **fields)

    def of(self, event: str) -> Iterator[dict[str, Any]]:
        return (e for e in self.events if e["event"] == event)

    def chains(self) -> list[str]:
        out: list[str] = []
        for e in self.of("subquestion"):
            out.extend(e.get("chains", []))
        return out

    @staticmethod
    def read(path: str | Path) -> list[dict[str, Any]]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
