"""The bundled Horcrux corpus, its mock script and config, for demos and tests."""

from __future__ import annotations

from pathlib import Path

from .pipeline import PipelineConfig, QAEngine

FIXTURE_DIR = Path(__file__).resolve().parent / "data" / "hp_fixture"
CORPUS = FIXTURE_DIR / "corpus.jsonl"
MOCK_SCRIPT = FIXTURE_DIR / "mock_script.json"
CONFIG = FIXTURE_DIR / "config.json"
QUESTION = "Who destroys the last Horcrux of Voldemort?"


def fixture_config(**overrides) -> PipelineConfig:
    cfg = PipelineConfig.load(CONFIG)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


def fixture_engine(config: PipelineConfig | None = None, llm=None) -> QAEngine:
    return QAEngine.from_path(CORPUS, config or fixture_config(), llm)
