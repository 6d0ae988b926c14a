"""methodloop: methodology-guided LLM reasoning loops.

An engine that alternates methodology selection and methodology-guided
reasoning against any OpenAI-compatible chat endpoint, with a sandboxed code
solver, a fuzzy-retrieval tool, three baseline strategies, and an evaluation
harness (metrics, sequence mining, ablations, cost accounting).
"""

from .engine import (
    DEFAULT_WORKFLOW_SEQUENCES,
    LoopConfig,
    ReasoningStep,
    Trace,
    read_traces,
    run_com,
    run_cot,
    run_mcot,
    run_strategy,
    run_workflow,
    write_traces,
)
from .gateway import (
    ChatResponse,
    GatewayError,
    HttpBackend,
    SamplingSettings,
    ScriptedBackend,
    complete,
    script_backend,
)
from .harness import (
    AblationSpec,
    EvalRecord,
    MetricsReport,
    build_report,
    mine_sequences,
    run_ablation,
    run_questions,
    score_all,
    score_trace,
)
from .metrics import extract_answer, score_math, score_qa
from .prompts import (
    PromptBundle,
    Question,
    SelectionParseError,
    build_reasoning_prompt,
    build_selection_prompt,
    parse_selection,
)
from .registry import (
    Methodology,
    MethodologyRegistry,
    RegistryError,
    default_registry,
    load_registry,
    parse_registry,
    remove_methodology,
    render_registry,
)
from .retrieval import FactCorpus, levenshtein, make_search_tool, search, similarity
from .solver import (
    ExecOutcome,
    ExecutorHandle,
    StubRunner,
    extract_code_blocks,
    postprocess_step,
    splice_output,
)
from .datasets import DatasetError, load_dataset

__version__ = "0.1.0"
