"""The methodology-reasoning loop and the baseline strategies.

``run_com`` alternates a methodology-selection call and a methodology-guided
reasoning call per step, post-processing each step through the code solver,
until a Conclusion step executes or the step budget runs out.  ``run_cot`` /
``run_mcot`` are single-prompt baselines and ``run_workflow`` replays a fixed
methodology sequence with no selection calls.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .gateway import Backend, GatewayError, SamplingSettings
from .prompts import (
    PromptBundle,
    Question,
    SelectionParseError,
    build_cot_prompt,
    build_mcot_prompt,
    build_reasoning_prompt,
    build_selection_prompt,
    parse_selection,
)
from .registry import MethodologyRegistry
from .solver import CodeRunner, ExecOutcome, postprocess_step

STRATEGIES = ("com", "cot", "mcot", "workflow")
TERMINATIONS = ("conclusion", "budget", "selection_failure", "backend_error")
CONCLUSION_NAME = "Conclusion"

# Fixed per-task sequences for the workflow baseline.  "Variation" in a
# user-supplied sequence is accepted as an alias of Validation.
VARIATION_ALIAS = {"Variation": "Validation"}
DEFAULT_WORKFLOW_SEQUENCES: dict[str, tuple[str, ...]] = {
    "math": ("Analysis", "Coding", "Validation", "Conclusion"),
    "qa": ("Analysis", "Retrieval", "Conclusion"),
    "multiple_choice": ("Analysis", "Retrieval", "Conclusion"),
}

StepCallback = Callable[["ReasoningStep"], None]


@dataclass
class ReasoningStep:
    index: int
    methodology_name: str
    raw_response: str
    final_text: str  # raw_response with real execution output spliced in
    exec: ExecOutcome | None = None
    selection_response: str = ""


@dataclass
class Trace:
    question_id: str
    strategy: str
    steps: list[ReasoningStep]
    terminated_by: str
    llm_calls: int
    wall_time: float


@dataclass(frozen=True)
class LoopConfig:
    max_steps: int = 8
    selection_retry: int = 1
    solver_enabled: bool = True

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.selection_retry < 0:
            raise ValueError("selection_retry must be >= 0")


def _postprocess(text: str, cfg: LoopConfig, runner: CodeRunner | None) -> tuple[str, ExecOutcome | None]:
    if cfg.solver_enabled and runner is not None:
        return postprocess_step(text, runner)
    return text, None


def _clarified(bundle: PromptBundle, reg: MethodologyRegistry) -> PromptBundle:
    note = (
        "\n\n(Your previous reply could not be matched to a single methodology."
        f" Reply with exactly one of: {', '.join(reg.names)} - and nothing else.)"
    )
    return PromptBundle(bundle.system_text, bundle.user_text + note, bundle.kind, bundle.step_index)


def run_com(
    backend: Backend,
    reg: MethodologyRegistry,
    q: Question,
    cfg: LoopConfig | None = None,
    *,
    settings: SamplingSettings | None = None,
    runner: CodeRunner | None = None,
    on_step: StepCallback | None = None,
) -> Trace:
    """Run the selection/reasoning loop for one question.

    A failed selection parse is retried once with an appended clarification
    (``cfg.selection_retry`` times); a second failure ends the trace.  Backend
    errors end the trace with its partial steps preserved.
    """
    cfg = cfg or LoopConfig()
    settings = settings or SamplingSettings()
    if CONCLUSION_NAME not in reg:
        raise ValueError(f"registry must contain a {CONCLUSION_NAME!r} methodology")

    steps: list[ReasoningStep] = []
    calls = 0
    terminated = "budget"
    started = time.perf_counter()
    try:
        for k in range(1, cfg.max_steps + 1):
            sel_bundle = build_selection_prompt(reg, q, steps, max_steps=cfg.max_steps)
            sel_resp = backend.complete(sel_bundle, settings)
            calls += 1
            chosen = None
            try:
                chosen = parse_selection(sel_resp.text, reg)
            except SelectionParseError:
                for _ in range(cfg.selection_retry):
                    sel_resp = backend.complete(_clarified(sel_bundle, reg), settings)
                    calls += 1
                    try:
                        chosen = parse_selection(sel_resp.text, reg)
                        break
                    except SelectionParseError:
                        continue
            if chosen is None:
                terminated = "selection_failure"
                break

            rsn_bundle = build_reasoning_prompt(reg, q, steps, chosen, max_steps=cfg.max_steps)
            rsn_resp = backend.complete(rsn_bundle, settings)
            calls += 1
            final_text, outcome = _postprocess(rsn_resp.text, cfg, runner)
            step = ReasoningStep(k, chosen.name, rsn_resp.text, final_text, outcome, sel_resp.text)
            steps.append(step)
            if on_step:
                on_step(step)
            if chosen.name == CONCLUSION_NAME:
                terminated = "conclusion"
                break
    except GatewayError:
        terminated = "backend_error"
    return Trace(q.id, "com", steps, terminated, calls, time.perf_counter() - started)


def run_cot(backend: Backend, q: Question, *, settings: SamplingSettings | None = None) -> Trace:
    """Single-prompt chain-of-thought baseline; no code execution."""
    started = time.perf_counter()
    try:
        resp = backend.complete(build_cot_prompt(q), settings or SamplingSettings())
    except GatewayError:
        return Trace(q.id, "cot", [], "backend_error", 0, time.perf_counter() - started)
    step = ReasoningStep(1, "CoT", resp.text, resp.text)
    return Trace(q.id, "cot", [step], "budget", 1, time.perf_counter() - started)


def run_mcot(
    backend: Backend,
    reg: MethodologyRegistry,
    q: Question,
    *,
    settings: SamplingSettings | None = None,
) -> Trace:
    """Single-prompt baseline embedding the methodology list; no code execution."""
    started = time.perf_counter()
    try:
        resp = backend.complete(build_mcot_prompt(reg, q), settings or SamplingSettings())
    except GatewayError:
        return Trace(q.id, "mcot", [], "backend_error", 0, time.perf_counter() - started)
    step = ReasoningStep(1, "MCoT", resp.text, resp.text)
    return Trace(q.id, "mcot", [step], "budget", 1, time.perf_counter() - started)


def run_workflow(
    backend: Backend,
    reg: MethodologyRegistry,
    q: Question,
    sequence: Sequence[str],
    cfg: LoopConfig | None = None,
    *,
    settings: SamplingSettings | None = None,
    runner: CodeRunner | None = None,
    on_step: StepCallback | None = None,
) -> Trace:
    """Fixed-methodology multi-turn baseline: one reasoning call per name."""
    cfg = cfg or LoopConfig()
    settings = settings or SamplingSettings()
    names = [VARIATION_ALIAS.get(n, n) for n in sequence]
    if not names:
        raise ValueError("workflow sequence must be non-empty")
    unknown = [n for n in names if n not in reg]
    if unknown:
        raise ValueError(f"workflow sequence names not in registry: {unknown}")

    steps: list[ReasoningStep] = []
    calls = 0
    terminated = "budget"
    started = time.perf_counter()
    try:
        for k, name in enumerate(names, 1):
            bundle = build_reasoning_prompt(reg, q, steps, reg.get(name), max_steps=len(names))
            resp = backend.complete(bundle, settings)
            calls += 1
            final_text, outcome = _postprocess(resp.text, cfg, runner)
            step = ReasoningStep(k, name, resp.text, final_text, outcome)
            steps.append(step)
            if on_step:
                on_step(step)
        if steps[-1].methodology_name == CONCLUSION_NAME:
            terminated = "conclusion"
    except GatewayError:
        terminated = "backend_error"
    return Trace(q.id, "workflow", steps, terminated, calls, time.perf_counter() - started)


def run_strategy(
    strategy: str,
    backend: Backend,
    reg: MethodologyRegistry,
    q: Question,
    cfg: LoopConfig | None = None,
    *,
    settings: SamplingSettings | None = None,
    runner: CodeRunner | None = None,
    workflow_sequences: dict[str, Sequence[str]] | None = None,
    on_step: StepCallback | None = None,
) -> Trace:
    """Dispatch one question to the named strategy."""
    if strategy == "com":
        return run_com(backend, reg, q, cfg, settings=settings, runner=runner, on_step=on_step)
    if strategy == "cot":
        return run_cot(backend, q, settings=settings)
    if strategy == "mcot":
        return run_mcot(backend, reg, q, settings=settings)
    if strategy == "workflow":
        sequences = workflow_sequences or DEFAULT_WORKFLOW_SEQUENCES
        if q.task not in sequences:
            raise ValueError(f"no workflow sequence configured for task {q.task!r}")
        return run_workflow(
            backend, reg, q, sequences[q.task], cfg, settings=settings, runner=runner, on_step=on_step
        )
    raise ValueError(f"unknown strategy {strategy!r} (expected one of {STRATEGIES})")


# -- trace persistence (JSON lines, field names are the contract) -----------


def trace_to_dict(trace: Trace) -> dict:
    return {
        "question_id": trace.question_id,
        "strategy": trace.strategy,
        "steps": [
            {
                "index": s.index,
                "methodology_name": s.methodology_name,
                "raw_response": s.raw_response,
                "final_text": s.final_text,
                "exec": None
                if s.exec is None
                else {
                    "stdout": s.exec.stdout,
                    "stderr": s.exec.stderr,
                    "status": s.exec.status,
                    "duration": s.exec.duration,
                },
                "selection_response": s.selection_response,
            }
            for s in trace.steps
        ],
        "terminated_by": trace.terminated_by,
        "llm_calls": trace.llm_calls,
        "wall_time": trace.wall_time,
    }


def trace_from_dict(data: dict) -> Trace:
    steps = [
        ReasoningStep(
            index=s["index"],
            methodology_name=s["methodology_name"],
            raw_response=s["raw_response"],
            final_text=s["final_text"],
            exec=None if s.get("exec") is None else ExecOutcome(**s["exec"]),
            selection_response=s.get("selection_response", ""),
        )
        for s in data["steps"]
    ]
    return Trace(
        question_id=data["question_id"],
        strategy=data["strategy"],
        steps=steps,
        terminated_by=data["terminated_by"],
        llm_calls=data["llm_calls"],
        wall_time=data["wall_time"],
    )


def write_traces(path: str | Path, traces: Iterable[Trace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_dict(trace), ensure_ascii=False) + "\n")


def read_traces(path: str | Path) -> list[Trace]:
    traces = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                traces.append(trace_from_dict(json.loads(line)))
    return traces
