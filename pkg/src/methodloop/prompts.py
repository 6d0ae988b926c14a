"""Prompt assembly for methodology selection and methodology-guided reasoning.

All builders are pure: identical inputs yield byte-identical prompts.  The
template text lives in ``data/templates/*.txt`` with named ``{placeholder}``
fields, so prompt wording is versioned with the package rather than embedded
in code.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Sequence

from .registry import Methodology, MethodologyRegistry, render_methodology, render_registry
from .retrieval import FactCorpus

TASKS = ("math", "qa", "multiple_choice")

EMPTY_HISTORY = "(no steps yet)"

_ANSWER_FORMATS = {
    "math": "the final number or expression",
    "qa": "a short answer phrase",
    "multiple_choice": "the letter of the chosen option",
}


class SelectionParseError(Exception):
    """A selection response matched zero or several methodology names."""

    def __init__(self, message: str, reason: str, names: tuple[str, ...] = ()):
        super().__init__(message)
        self.reason = reason  # "no_match" | "ambiguous"
        self.names = names


@dataclass(frozen=True)
class Question:
    """One task item; ``gold`` is opaque here and consumed only by scoring."""

    id: str
    text: str
    task: str
    gold: Any = None
    corpus: FactCorpus | None = None  # retrieval context for qa items

    def __post_init__(self):
        if not self.text:
            raise ValueError("question text must be non-empty")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r} (expected one of {TASKS})")


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    kind: str  # "selection" | "reasoning"
    step_index: int

    def __post_init__(self):
        if not self.system_text or not self.user_text:
            raise ValueError("prompt texts must be non-empty")
        if self.kind not in ("selection", "reasoning"):
            raise ValueError(f"unknown prompt kind {self.kind!r}")
        if self.step_index < 1:
            raise ValueError("step_index starts at 1")


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files("methodloop.data.templates").joinpath(f"{name}.txt").read_text(
        encoding="utf-8"
    )


def _steps_of(trace: Any) -> Sequence[Any]:
    """Accept a Trace, a plain step sequence, or None."""
    if trace is None:
        return ()
    return getattr(trace, "steps", trace)


def render_history(steps: Sequence[Any]) -> str:
    """Render prior steps; execution output has already been spliced in."""
    if not steps:
        return EMPTY_HISTORY
    parts = [f"Step {s.index} [{s.methodology_name}]:\n{s.final_text}" for s in steps]
    return "\n\n".join(parts)


def build_selection_prompt(
    reg: MethodologyRegistry, q: Question, trace: Any, max_steps: int = 8
) -> PromptBundle:
    """Assemble the methodology-selection prompt for the next step."""
    steps = _steps_of(trace)
    if len(steps) >= max_steps:
        raise ValueError(f"history already has {len(steps)} steps; budget is {max_steps}")
    k = len(steps) + 1
    user = template("selection").format(
        registry=render_registry(reg),
        question=q.text,
        history=render_history(steps),
        step=k,
        max_steps=max_steps,
        remaining=max_steps - len(steps),
    )
    return PromptBundle(template("system"), user, "selection", k)


def build_reasoning_prompt(
    reg: MethodologyRegistry,
    q: Question,
    trace: Any,
    chosen: Methodology,
    max_steps: int = 8,
) -> PromptBundle:
    """Assemble the reasoning prompt: selection content plus the chosen entry."""
    if chosen.name not in reg:
        raise ValueError(f"methodology {chosen.name!r} is not in the registry")
    steps = _steps_of(trace)
    k = len(steps) + 1
    user = template("reasoning").format(
        registry=render_registry(reg),
        question=q.text,
        history=render_history(steps),
        methodology=render_methodology(chosen),
        step=k,
        max_steps=max_steps,
        remaining=max_steps - len(steps),
    )
    return PromptBundle(template("system"), user, "reasoning", k)


def build_cot_prompt(q: Question) -> PromptBundle:
    user = template("cot").format(question=q.text, answer_format=_ANSWER_FORMATS[q.task])
    return PromptBundle(template("system"), user, "reasoning", 1)


def build_mcot_prompt(reg: MethodologyRegistry, q: Question) -> PromptBundle:
    user = template("mcot").format(
        registry=render_registry(reg),
        question=q.text,
        answer_format=_ANSWER_FORMATS[q.task],
    )
    return PromptBundle(template("system"), user, "reasoning", 1)


def parse_selection(response_text: str, reg: MethodologyRegistry) -> Methodology:
    """Match a selection response to exactly one registry entry.

    Exact line matches win; otherwise a unique case-insensitive substring
    match over registry names is accepted.  Zero or several matches raise
    ``SelectionParseError`` so the engine's retry policy can see the failure.
    """
    lines = {ln.strip() for ln in response_text.splitlines()}
    exact = [m for m in reg.entries if m.name in lines]
    if len(exact) == 1:
        return exact[0]
    if len(exact) > 1:
        names = tuple(m.name for m in exact)
        raise SelectionParseError(
            f"response names several methodologies exactly: {', '.join(names)}", "ambiguous", names
        )

    lowered = response_text.lower()
    present = [m for m in reg.entries if m.name.lower() in lowered]
    if len(present) == 1:
        return present[0]
    if not present:
        raise SelectionParseError(
            f"no methodology name found in response {response_text[:80]!r}", "no_match"
        )
    names = tuple(m.name for m in present)
    raise SelectionParseError(
        f"response mentions several methodologies: {', '.join(names)}", "ambiguous", names
    )
