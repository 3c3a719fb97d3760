from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest
from hypothesis import settings

from hopgraph.corpus import Chunk
from hopgraph.llm import LLMClient, MockProvider, MockScript

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def make_chunk(text: str, chunk_id: str = "d#0") -> Chunk:
    doc_id, _, ordinal = chunk_id.partition("#")
    n = len(text.split())
    return Chunk(chunk_id, doc_id, int(ordinal or 0), 0, n, text)


def mock_client(script: dict | MockScript | None = None, **provider_kw) -> LLMClient:
    if isinstance(script, dict):
        script = MockScript.from_dict(script)
    return LLMClient(MockProvider(script, **provider_kw), sleep=lambda s: None)


def write_jsonl(path: Path, records) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def tmp_corpus(tmp_path):
    def _make(records, name="corpus.jsonl"):
        return write_jsonl(tmp_path / name, records)

    return _make


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
