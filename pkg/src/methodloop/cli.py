"""Command-line entry point: run / eval / analyze / ablate.

Configuration is a JSON file (see README for the schema); CLI flags override
file values.  Every eval writes a manifest so the run is reconstructable from
the config, methodology file, dataset file, and backend identity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .datasets import FORMATS, DatasetError, load_dataset
from .engine import (
    DEFAULT_WORKFLOW_SEQUENCES,
    STRATEGIES,
    LoopConfig,
    read_traces,
    run_strategy,
    write_traces,
)
from .gateway import HttpBackend, SamplingSettings, script_backend
from .harness import (
    AblationSpec,
    apply_ablation,
    build_report,
    format_report,
    mine_sequences,
    records_to_jsonl,
    report_to_json,
    run_questions,
    score_all,
)
from .prompts import TASKS, Question
from .registry import default_registry, load_registry
from .retrieval import make_search_tool
from .solver import ExecutorError, ExecutorHandle

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field."""


@dataclass
class BackendConfig:
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    script: str | None = None  # path to a scripted transcript (JSON)
    timeout_s: float = 120.0
    max_retries: int = 3
    max_concurrency: int = 4


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    methodologies: str | None = None  # None -> packaged default registry
    strategy: str = "com"
    max_steps: int = 8
    selection_retry: int = 1
    solver_enabled: bool = True
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    dataset: str | None = None
    dataset_format: str | None = None
    out_dir: str = "runs"
    concurrency: int = 4
    limit: int | None = None
    failure_budget: int = 0
    workflow_sequences: dict = field(default_factory=lambda: {
        task: list(seq) for task, seq in DEFAULT_WORKFLOW_SEQUENCES.items()
    })
    sandbox: dict = field(default_factory=dict)  # policy overrides for the executor
    executor_cmd: list | None = None  # None -> [sys.executable, -m, sandbox_runner]
    exec_timeout_s: float = 60.0

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy: unknown value {self.strategy!r}")
        if self.max_steps < 1:
            raise ConfigError("max_steps: must be >= 1")
        if self.methodologies and not Path(self.methodologies).exists():
            raise ConfigError(f"methodologies: file not found: {self.methodologies}")
        if self.dataset and not Path(self.dataset).exists():
            raise ConfigError(f"dataset: file not found: {self.dataset}")
        if self.dataset and self.dataset_format not in FORMATS:
            raise ConfigError(f"dataset_format: unknown value {self.dataset_format!r}")
        if self.backend.script and not Path(self.backend.script).exists():
            raise ConfigError(f"backend.script: file not found: {self.backend.script}")
        if not self.backend.script and not self.backend.base_url:
            raise ConfigError("backend: either base_url+model or script is required")
        if self.backend.base_url and not self.backend.model:
            raise ConfigError("backend.model: required with base_url")
        if self.strategy == "workflow":
            bad = [t for t, seq in self.workflow_sequences.items() if not seq]
            if bad:
                raise ConfigError(f"workflow_sequences: empty sequence for task(s) {bad}")


def load_config(path: str | None) -> RunConfig:
    config = RunConfig()
    if path is None:
        return config
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON at line {exc.lineno}")
    known = set(RunConfig.__dataclass_fields__)
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"config: unknown field {key!r}")
        if key == "backend":
            config.backend = BackendConfig(**value)
        elif key == "sampling":
            config.sampling = SamplingSettings(**value)
        else:
            setattr(config, key, value)
    return config


def _apply_flags(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "strategy", None):
        config.strategy = args.strategy
    if getattr(args, "methodologies", None):
        config.methodologies = args.methodologies
    if getattr(args, "dataset", None):
        config.dataset = args.dataset
    if getattr(args, "format", None):
        config.dataset_format = args.format
    if getattr(args, "limit", None) is not None:
        config.limit = args.limit
    if getattr(args, "k", None) is not None:
        config.max_steps = args.k
    if getattr(args, "no_solver", False):
        config.solver_enabled = False
    if getattr(args, "out", None):
        config.out_dir = args.out
    return config


def _build_backend(config: RunConfig):
    if config.backend.script:
        entries = json.loads(Path(config.backend.script).read_text(encoding="utf-8"))
        transcript = [
            e if isinstance(e, str) else (e.get("match"), e["response"]) for e in entries
        ]
        return script_backend(transcript)
    return HttpBackend(
        base_url=config.backend.base_url,
        model=config.backend.model,
        api_key_env=config.backend.api_key_env,
        timeout_s=config.backend.timeout_s,
        max_retries=config.backend.max_retries,
        max_concurrency=config.backend.max_concurrency,
    )


def _load_registry(config: RunConfig):
    if config.methodologies:
        return load_registry(config.methodologies)
    return default_registry()


def _loop_config(config: RunConfig) -> LoopConfig:
    return LoopConfig(
        max_steps=config.max_steps,
        selection_retry=config.selection_retry,
        solver_enabled=config.solver_enabled,
    )


def _no_corpus_search(*_args, **_kwargs):
    raise RuntimeError("no retrieval corpus is attached to this question")


class ExecutorPool:
    """One executor child per worker thread, search tool rebound per question."""

    def __init__(self, command: list[str], policy: dict, default_timeout_s: float):
        self.command = command
        self.policy = policy
        self.default_timeout_s = default_timeout_s
        self._local = threading.local()
        self._handles: list[ExecutorHandle] = []
        self._lock = threading.Lock()

    def runner_for(self, question: Question) -> ExecutorHandle:
        handle = getattr(self._local, "handle", None)
        if handle is None:
            handle = ExecutorHandle(
                self.command,
                tools={"search": _no_corpus_search},
                policy=self.policy,
                default_timeout_s=self.default_timeout_s,
            )
            self._local.handle = handle
            with self._lock:
                self._handles.append(handle)
        if question.corpus is not None and len(question.corpus):
            handle.set_tool("search", make_search_tool(question.corpus))
        else:
            handle.set_tool("search", _no_corpus_search)
        return handle

    def close(self) -> None:
        with self._lock:
            for handle in self._handles:
                handle.close()
            self._handles.clear()


def _make_executor_pool(config: RunConfig) -> ExecutorPool | None:
    if not config.solver_enabled:
        return None
    command = config.executor_cmd or [sys.executable, "-m", "sandbox_runner"]
    pool = ExecutorPool([str(c) for c in command], config.sandbox, config.exec_timeout_s)
    # fail fast if the executor cannot even be spawned
    try:
        probe = ExecutorHandle(pool.command, tools={"search": _no_corpus_search}, policy=pool.policy)
        probe.close()
    except ExecutorError as exc:
        raise ConfigError(
            f"executor_cmd: sandbox executor unavailable ({exc}); "
            "install the sandbox_runner package or pass --no-solver"
        )
    return pool


def _file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, config: RunConfig, reg) -> None:
    backend = {"script": config.backend.script} if config.backend.script else {
        "base_url": config.backend.base_url,
        "model": config.backend.model,
    }
    if config.backend.script:
        backend["digest"] = _file_digest(config.backend.script)
    manifest = {
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": asdict(config),
        "methodology_file": config.methodologies or "(packaged default)",
        "methodology_digest": reg.source_digest,
        "dataset": config.dataset,
        "dataset_digest": _file_digest(config.dataset) if config.dataset else None,
        "backend": backend,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


# -- commands ----------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    config = _apply_flags(load_config(args.config), args)
    config.validate()
    reg = _load_registry(config)
    backend = _build_backend(config)
    question = Question(id="cli", text=args.question, task=args.task)
    pool = _make_executor_pool(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        runner = pool.runner_for(question) if pool else None

        def show(step):
            print(f"--- step {step.index}: {step.methodology_name}")
            print(step.final_text.strip())
            if step.exec is not None:
                print(f"    [exec status={step.exec.status} duration={step.exec.duration:.2f}s]")

        trace = run_strategy(
            config.strategy,
            backend,
            reg,
            question,
            _loop_config(config),
            settings=config.sampling,
            runner=runner,
            workflow_sequences={t: tuple(s) for t, s in config.workflow_sequences.items()},
            on_step=show,
        )
    finally:
        if pool:
            pool.close()
    print(f"terminated_by={trace.terminated_by} steps={len(trace.steps)} llm_calls={trace.llm_calls}")
    write_traces(out_dir / "trace.jsonl", [trace])
    print(f"trace written to {out_dir / 'trace.jsonl'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _apply_flags(load_config(args.config), args)
    if not config.dataset:
        raise ConfigError("dataset: required for eval")
    config.validate()
    reg = _load_registry(config)
    questions = load_dataset(config.dataset, config.dataset_format, limit=config.limit)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces_path = out_dir / "traces.jsonl"

    if args.rescore:
        if not traces_path.exists():
            raise ConfigError(f"--rescore: no traces file at {traces_path}")
        traces = read_traces(traces_path)
    else:
        backend = _build_backend(config)
        pool = _make_executor_pool(config)
        done = {"n": 0}

        def progress(trace):
            done["n"] += 1
            print(f"[{done['n']}/{len(questions)}] {trace.question_id}: "
                  f"{trace.terminated_by} in {len(trace.steps)} step(s)")

        try:
            traces = run_questions(
                backend,
                reg,
                questions,
                config.strategy,
                _loop_config(config),
                settings=config.sampling,
                runner_factory=pool.runner_for if pool else None,
                workflow_sequences={t: tuple(s) for t, s in config.workflow_sequences.items()},
                concurrency=config.concurrency,
                progress=progress,
            )
        finally:
            if pool:
                pool.close()
        write_traces(traces_path, traces)
        _write_manifest(out_dir, config, reg)

    records = score_all(traces, questions)
    report = build_report(records)
    (out_dir / "records.jsonl").write_text(records_to_jsonl(records), encoding="utf-8")
    (out_dir / "report.json").write_text(report_to_json(report), encoding="utf-8")
    (out_dir / "report.txt").write_text(format_report(report) + "\n", encoding="utf-8")
    print(format_report(report))

    failures = sum(1 for t in traces if t.terminated_by == "backend_error")
    if failures > config.failure_budget:
        print(f"error: {failures} backend failure(s) exceed budget {config.failure_budget}",
              file=sys.stderr)
        return 1
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    traces = []
    for path in args.traces:
        traces.extend(read_traces(path))
    for sequence, fraction in mine_sequences(traces):
        print(f"{fraction * 100:5.1f}%  {sequence or '(no steps)'}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _apply_flags(load_config(args.config), args)
    config.strategy = "com"
    if not config.dataset:
        raise ConfigError("dataset: required for ablate")
    config.validate()
    ablation = AblationSpec(
        drop_methodology=args.drop, disable_interpreter=args.no_interpreter
    )
    try:
        reg, loop_cfg = apply_ablation(ablation, _load_registry(config), _loop_config(config))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"--drop: {exc}")
    config.solver_enabled = loop_cfg.solver_enabled
    questions = load_dataset(config.dataset, config.dataset_format, limit=config.limit)
    backend = _build_backend(config)
    pool = _make_executor_pool(config)
    try:
        traces = run_questions(
            backend,
            reg,
            questions,
            "com",
            loop_cfg,
            settings=config.sampling,
            runner_factory=pool.runner_for if pool else None,
            concurrency=config.concurrency,
        )
    finally:
        if pool:
            pool.close()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_traces(out_dir / "traces.jsonl", traces)
    records = score_all(traces, questions)
    report = build_report(records)
    (out_dir / "records.jsonl").write_text(records_to_jsonl(records), encoding="utf-8")
    (out_dir / "report.json").write_text(report_to_json(report), encoding="utf-8")
    print(format_report(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="methodloop",
        description="Methodology-guided LLM reasoning loops with evaluation tooling.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--methodologies", help="methodology Markdown file")
        p.add_argument("--k", type=int, help="max reasoning steps")
        p.add_argument("--no-solver", action="store_true", help="disable code execution")
        p.add_argument("--out", help="output directory")

    p_run = sub.add_parser("run", help="run a single question end to end")
    common(p_run)
    p_run.add_argument("question", help="question text")
    p_run.add_argument("--task", choices=TASKS, default="math")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="run a dataset and write reports")
    common(p_eval)
    p_eval.add_argument("--dataset", help="dataset file")
    p_eval.add_argument("--format", choices=FORMATS, help="dataset format")
    p_eval.add_argument("--limit", type=int, help="cap dataset size")
    p_eval.add_argument("--rescore", action="store_true",
                        help="recompute records/report from persisted traces")
    p_eval.set_defaults(func=cmd_eval)

    p_analyze = sub.add_parser("analyze", help="mine methodology sequences from trace files")
    p_analyze.add_argument("traces", nargs="+", help="trace JSONL file(s)")
    p_analyze.set_defaults(func=cmd_analyze)

    p_ablate = sub.add_parser("ablate", help="run a methodology/interpreter ablation")
    common(p_ablate)
    p_ablate.add_argument("--dataset", help="dataset file")
    p_ablate.add_argument("--format", choices=FORMATS, help="dataset format")
    p_ablate.add_argument("--limit", type=int, help="cap dataset size")
    p_ablate.add_argument("--drop", help="methodology name to remove")
    p_ablate.add_argument("--no-interpreter", action="store_true",
                          help="keep code generation but skip execution")
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
