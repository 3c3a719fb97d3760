"""Score a tiny dataset with and without decomposition and graph reasoning.

The mock script only knows the Horcrux question, so the point here is the
report format and the ablation switches rather than the numbers.
"""

from __future__ import annotations

# %% A two-question dataset and the fixture engine
import tempfile
from pathlib import Path

from hopgraph.eval import QAExample, read_report, run_benchmark
from hopgraph.fixtures import QUESTION, fixture_engine

data = [
    QAExample("hp1", QUESTION, ["Neville", "Neville Longbottom"]),
    QAExample("hp2", "Who destroys the Diary?", ["Harry"]),
]
engine = fixture_engine()

# %% The four ablation settings
for decompose in (True, False):
    for reasoning in (True, False):
        rep = run_benchmark(data, engine, decompose=decompose, reasoning=reasoning)
        preds = [r["prediction"][:40] for r in rep.records]
        print(f"decompose={decompose!s:5} reasoning={reasoning!s:5} {rep.summary_line()}  {preds}")

# %% Reports are JSONL, written as questions finish, so a rerun resumes
with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "report.jsonl"
    run_benchmark(data, engine, out_path=out)
    records, agg = read_report(out)
    print([r["qid"] for r in records], agg["em"], agg["f1"])
