"""QA scoring (EM, token F1), dataset loading and a resumable benchmark runner."""

from __future__ import annotations

import json
import logging
import re
import string
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .errors import CorpusParseError, HopGraphError, ValidationError

__all__ = [
    "normalize_answer",
    "exact_match",
    "token_f1",
    "QAExample",
    "EvalReport",
    "load_dataset",
    "run_benchmark",
    "read_report",
    "iter_examples",
]

log = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def _golds(gold_answers: str | Sequence[str]) -> list[str]:
    return [gold_answers] if isinstance(gold_answers, str) else list(gold_answers)


def exact_match(prediction: str, gold_answers: str | Sequence[str]) -> int:
    p = normalize_answer(prediction)
    return int(any(p == normalize_answer(g) for g in _golds(gold_answers)))


def _f1_single(prediction: str, gold: str) -> float:
    p = normalize_answer(prediction).split()
    g = normalize_answer(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, gold_answers: str | Sequence[str]) -> float:
    """Best token-overlap F1 against any gold answer."""
    return max((_f1_single(prediction, g) for g in _golds(gold_answers)), default=0.0)


@dataclass
class QAExample:
    qid: str
    question: str
    gold_answers: list[str]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.gold_answers:
            raise ValidationError(f"example {self.qid!r} has no gold answers")
        for g in self.gold_answers:
            if not g.strip():
                raise ValidationError(f"example {self.qid!r} has a blank gold answer")


# -- dataset adapters ----------------------------------------------------------


def _from_record(rec: dict[str, Any]) -> QAExample:
    """Map one record in any supported layout onto :class:`QAExample`."""
    if "qid" in rec and "answers" in rec:  # native
        extra = {k: v for k, v in rec.items() if k not in ("qid", "question", "answers")}
        return QAExample(str(rec["qid"]), rec["question"], list(rec["answers"]), extra)
    if "_id" in rec and "answer" in rec:  # HotpotQA / 2WikiMultihopQA
        golds = [rec["answer"]] + list(rec.get("answer_aliases", []))
        meta = {k: rec[k] for k in ("type", "level", "supporting_facts") if k in rec}
        return QAExample(str(rec["_id"]), rec["question"], golds, meta)
    if "id" in rec and "answer" in rec:  # MuSiQue
        golds = [rec["answer"]] + list(rec.get("answer_aliases", []))
        meta = {k: rec[k] for k in ("answerable", "question_decomposition") if k in rec}
        return QAExample(str(rec["id"]), rec["question"], golds, meta)
    raise ValidationError(f"unrecognized dataset record with keys {sorted(rec)}")


def load_dataset(path: str | Path, limit: int | None = None) -> list[QAExample]:
    """Load a QA dataset from JSONL or a JSON array.

    Native records look like ``{"qid", "question", "answers"}``; HotpotQA,
    2WikiMultihopQA and MuSiQue validation records are mapped automatically.
    """
    text = Path(path).read_text(encoding="utf-8")
    records: list[dict[str, Any]]
    if text.lstrip().startswith("["):
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    else:
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"{path}:{lineno}: {exc.msg}", lineno) from exc
    out = [_from_record(r) for r in records]
    seen: set[str] = set()
    for ex in out:
        if ex.qid in seen:
            raise ValidationError(f"duplicate qid {ex.qid!r} in {path}")
        seen.add(ex.qid)
    return out[:limit] if limit is not None else out


# -- benchmark -----------------------------------------------------------------


@dataclass
class EvalReport:
    records: list[dict[str, Any]]
    em: float
    f1: float
    config: dict[str, Any] = field(default_factory=dict)
    ablation: dict[str, bool] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.records)

    def summary_line(self) -> str:
        return f"EM {self.em:.2f} F1 {self.f1:.2f}"

    def aggregate_record(self) -> dict[str, Any]:
        return {
            "aggregate": True,
            "n": self.n,
            "em": self.em,
            "f1": self.f1,
            "errors": sum(1 for r in self.records if r.get("error")),
            "ablation": self.ablation,
            "config": self.config,
        }


def _record(ex: QAExample, prediction: str, elapsed_ms: float, error: str | None, n_sub: int | None) -> dict[str, Any]:
    return {
        "qid": ex.qid,
        "question": ex.question,
        "prediction": prediction,
        "gold_answers": ex.gold_answers,
        "em": exact_match(prediction, ex.gold_answers) if error is None else 0,
        "f1": token_f1(prediction, ex.gold_answers) if error is None else 0.0,
        "elapsed_ms": round(elapsed_ms, 3),
        "sub_questions": n_sub,
        "error": error,
    }


def _read_done(out_path: Path) -> dict[str, dict[str, Any]]:
    done: dict[str, dict[str, Any]] = {}
    if not out_path.exists():
        return done
    for line in out_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue  # torn final line from an aborted run
        if rec.get("aggregate") or "qid" not in rec:
            continue
        done[rec["qid"]] = rec
    return done


def run_benchmark(
    dataset: Sequence[QAExample],
    pipeline,
    decompose: bool = True,
    reasoning: bool = True,
    out_path: str | Path | None = None,
    trace_dir: str | Path | None = None,
    jobs: int = 1,
    on_record: Callable[[dict[str, Any]], None] | None = None,
) -> EvalReport:
    """Answer every example and score it.

    ``pipeline`` is a :class:`~hopgraph.pipeline.QAEngine` or a factory
    returning one (a factory gives each worker its own instance when
    ``jobs > 1``). Records are appended to ``out_path`` as they finish; a
    rerun with the same path skips qids already scored. On completion the
    file is rewritten in dataset order followed by one aggregate record.
    """
    out = Path(out_path) if out_path else None
    done = _read_done(out) if out else {}
    if out and out.exists() and not out.read_bytes().endswith(b"\n") and out.stat().st_size:
        with open(out, "a", encoding="utf-8") as fh:
            fh.write("\n")  # fence off a torn last line before appending
    todo = [ex for ex in dataset if ex.qid not in done]
    lock = threading.Lock()
    local = threading.local()

    def engine():
        if not callable(pipeline) or hasattr(pipeline, "answer"):
            return pipeline
        if not hasattr(local, "engine"):
            local.engine = pipeline()
        return local.engine

    def one(ex: QAExample) -> dict[str, Any]:
        trace_path = Path(trace_dir) / f"{_safe(ex.qid)}.jsonl" if trace_dir else None
        t0 = time.perf_counter()
        try:
            rec = engine().answer(ex.question, trace_path, decompose_on=decompose, reasoning_on=reasoning)
            result = _record(ex, rec.final, (time.perf_counter() - t0) * 1000, None, len(rec.sub_questions))
        except (HopGraphError, OSError, ValueError, KeyError, RuntimeError) as exc:
            log.warning("question %s failed: %s", ex.qid, exc)
            result = _record(ex, "", (time.perf_counter() - t0) * 1000, f"{type(exc).__name__}: {exc}", None)
        with lock:
            done[ex.qid] = result
            if out:
                with open(out, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(result) + "\n")
            if on_record:
                on_record(result)
        return result

    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(one, todo))
    else:
        for ex in todo:
            one(ex)

    records = [done[ex.qid] for ex in dataset]
    n = len(records)
    em = 100.0 * sum(r["em"] for r in records) / n if n else 0.0
    f1 = 100.0 * sum(r["f1"] for r in records) / n if n else 0.0
    cfg = getattr(engine(), "config", None)
    report = EvalReport(
        records,
        em,
        f1,
        cfg.to_dict() if cfg is not None else {},
        {"decompose": decompose, "reasoning": reasoning},
    )
    if out:
        _write_final(out, report)
    return report


def _write_final(out: Path, report: EvalReport) -> None:
    tmp = out.with_suffix(out.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in report.records:
            fh.write(json.dumps(r) + "\n")
        fh.write(json.dumps(report.aggregate_record()) + "\n")
    tmp.replace(out)


def _safe(qid: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", qid)


def read_report(path: str | Path) -> tuple[list[dict[str, Any]], dict[str, Any] | None]:
    """Split a report file into per-question records and the aggregate."""
    records, agg = [], None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec.get("aggregate"):
                agg = rec
            else:
                records.append(rec)
    return records, agg


def iter_examples(items: Iterable[tuple[str, str, Sequence[str]]]) -> list[QAExample]:
    """Build examples from ``(qid, question, answers)`` tuples."""
    return [QAExample(q, text, list(a)) for q, text, a in items]
