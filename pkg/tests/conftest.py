from __future__ import annotations

import pytest

from methodloop import Question, default_registry, script_backend
from methodloop.engine import trace_to_dict


@pytest.fixture(scope="session")
def reg():
    return default_registry()


@pytest.fixture
def math_question():
    return Question(id="q1", text="What is 6*7?", task="math", gold="42")


def com_script(step_plan):
    """Build a scripted transcript for a full loop run.

    ``step_plan`` is a list of (selection_response, reasoning_response); the
    engine consumes one selection and one reasoning entry per step.
    """
    entries = []
    for selection, reasoning in step_plan:
        entries.append(selection)
        entries.append(reasoning)
    return script_backend(entries)


def trace_key(trace):
    """Trace contents without wall-clock fields, for determinism checks."""
    data = trace_to_dict(trace)
    data.pop("wall_time")
    for step in data["steps"]:
        if step["exec"] is not None:
            step["exec"].pop("duration")
    return data
