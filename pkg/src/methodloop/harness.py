"""Run strategies over a dataset, score the answers, and aggregate reports.

Also houses the analysis machinery: methodology-sequence mining over persisted
traces and the two ablation modes (drop one methodology / disable the
interpreter).
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .engine import (
    CONCLUSION_NAME,
    LoopConfig,
    Trace,
    run_strategy,
)
from .gateway import Backend, SamplingSettings
from .metrics import extract_answer, score_choice, score_math, score_qa
from .prompts import Question
from .registry import MethodologyRegistry, remove_methodology
from .solver import CodeRunner

METRICS_BY_TASK = {
    "math": ("accuracy",),
    "qa": ("em", "f1", "precision", "recall"),
    "multiple_choice": ("accuracy",),
}

RunnerFactory = Callable[[Question], "CodeRunner | None"]


@dataclass
class EvalRecord:
    question_id: str
    strategy: str
    predicted: str
    gold: str
    scores: dict[str, float]
    llm_calls: int
    steps: int
    wall_time: float


@dataclass
class MetricsReport:
    strategy: str
    count: int
    metric_means: dict[str, float]
    avg_llm_calls: float
    avg_steps: float
    avg_seconds: float


def score_trace(trace: Trace, question: Question) -> EvalRecord:
    """Score one finished trace against its question's gold payload."""
    predicted = extract_answer(trace, question.task)
    gold = "" if question.gold is None else str(question.gold)
    if question.task == "math":
        scores = {"accuracy": score_math(predicted, gold)}
    elif question.task == "qa":
        scores = score_qa(predicted, gold)
    else:
        scores = {"accuracy": score_choice(predicted, gold)}
    return EvalRecord(
        question_id=trace.question_id,
        strategy=trace.strategy,
        predicted=predicted,
        gold=gold,
        scores=scores,
        llm_calls=trace.llm_calls,
        steps=len(trace.steps),
        wall_time=trace.wall_time,
    )


def run_questions(
    backend: Backend,
    reg: MethodologyRegistry,
    questions: Sequence[Question],
    strategy: str,
    cfg: LoopConfig | None = None,
    *,
    settings: SamplingSettings | None = None,
    runner_factory: RunnerFactory | None = None,
    workflow_sequences: dict | None = None,
    concurrency: int = 1,
    progress: Callable[[Trace], None] | None = None,
) -> list[Trace]:
    """Run one strategy over all questions; trace order matches input order."""
    cfg = cfg or LoopConfig()

    def one(question: Question) -> Trace:
        runner = runner_factory(question) if runner_factory else None
        trace = run_strategy(
            strategy,
            backend,
            reg,
            question,
            cfg,
            settings=settings,
            runner=runner,
            workflow_sequences=workflow_sequences,
        )
        if progress:
            progress(trace)
        return trace

    if concurrency <= 1 or len(questions) <= 1:
        return [one(q) for q in questions]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, questions))


def score_all(traces: Sequence[Trace], questions: Sequence[Question]) -> list[EvalRecord]:
    by_id = {q.id: q for q in questions}
    records = []
    for trace in traces:
        question = by_id.get(trace.question_id)
        if question is None:
            raise ValueError(f"trace {trace.question_id!r} has no matching question")
        records.append(score_trace(trace, question))
    return records


def build_report(records: Sequence[EvalRecord]) -> dict[str, MetricsReport]:
    """Per-strategy arithmetic means over records."""
    if not records:
        raise ValueError("no records to report on")
    by_strategy: dict[str, list[EvalRecord]] = {}
    for record in records:
        by_strategy.setdefault(record.strategy, []).append(record)
    report = {}
    for strategy in sorted(by_strategy):
        batch = by_strategy[strategy]
        n = len(batch)
        metric_names = sorted({name for r in batch for name in r.scores})
        means = {
            name: sum(r.scores.get(name, 0.0) for r in batch) / n for name in metric_names
        }
        report[strategy] = MetricsReport(
            strategy=strategy,
            count=n,
            metric_means=means,
            avg_llm_calls=sum(r.llm_calls for r in batch) / n,
            avg_steps=sum(r.steps for r in batch) / n,
            avg_seconds=sum(r.wall_time for r in batch) / n,
        )
    return report


def report_to_json(report: dict[str, MetricsReport]) -> str:
    payload = {
        strategy: {
            "count": r.count,
            "metric_means": r.metric_means,
            "avg_llm_calls": r.avg_llm_calls,
            "avg_steps": r.avg_steps,
            "avg_seconds": r.avg_seconds,
        }
        for strategy, r in report.items()
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def format_report(report: dict[str, MetricsReport]) -> str:
    """Human-readable report table."""
    lines = []
    for strategy, r in report.items():
        lines.append(f"strategy={strategy}  n={r.count}")
        for name, value in r.metric_means.items():
            lines.append(f"  {name:<12} {value:.4f}")
        lines.append(f"  {'llm_calls':<12} {r.avg_llm_calls:.2f} (avg)")
        lines.append(f"  {'steps':<12} {r.avg_steps:.2f} (avg)")
        lines.append(f"  {'seconds':<12} {r.avg_seconds:.2f} (avg)")
    return "\n".join(lines)


def records_to_jsonl(records: Sequence[EvalRecord]) -> str:
    rows = []
    for r in records:
        rows.append(
            json.dumps(
                {
                    "question_id": r.question_id,
                    "strategy": r.strategy,
                    "predicted": r.predicted,
                    "gold": r.gold,
                    "scores": r.scores,
                    "llm_calls": r.llm_calls,
                    "steps": r.steps,
                    "wall_time": r.wall_time,
                },
                ensure_ascii=False,
            )
        )
    return "\n".join(rows) + "\n"


def mine_sequences(traces: Sequence[Trace]) -> list[tuple[str, float]]:
    """Group traces by exact methodology-name sequence.

    Returns (space-joined sequence, fraction of all traces), sorted by
    descending fraction with lexicographic tie-break.
    """
    if not traces:
        raise ValueError("no traces to mine")
    counts = Counter(" ".join(s.methodology_name for s in t.steps) for t in traces)
    total = len(traces)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(sequence, count / total) for sequence, count in ranked]


@dataclass(frozen=True)
class AblationSpec:
    drop_methodology: str | None = None
    disable_interpreter: bool = False


def apply_ablation(
    ablation: AblationSpec, reg: MethodologyRegistry, cfg: LoopConfig
) -> tuple[MethodologyRegistry, LoopConfig]:
    """Derive the ablated registry/config; dropping Conclusion is rejected."""
    if ablation.drop_methodology:
        if ablation.drop_methodology == CONCLUSION_NAME:
            raise ValueError(
                f"cannot drop {CONCLUSION_NAME!r}: the loop could never terminate by conclusion"
            )
        reg = remove_methodology(reg, ablation.drop_methodology)
    if ablation.disable_interpreter:
        # code generation still happens; the model's guessed output stands
        cfg = replace(cfg, solver_enabled=False)
    return reg, cfg


def run_ablation(
    ablation: AblationSpec,
    backend: Backend,
    reg: MethodologyRegistry,
    questions: Sequence[Question],
    cfg: LoopConfig | None = None,
    **run_kwargs,
) -> tuple[list[Trace], list[EvalRecord], dict[str, MetricsReport]]:
    """Run the main strategy over the dataset under one ablation."""
    reg, cfg = apply_ablation(ablation, reg, cfg or LoopConfig())
    traces = run_questions(backend, reg, questions, "com", cfg, **run_kwargs)
    records = score_all(traces, questions)
    return traces, records, build_report(records)
