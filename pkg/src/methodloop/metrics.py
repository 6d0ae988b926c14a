"""Answer extraction and scoring.

Math scoring is numeric equivalence over integers, decimals, and simple
fractions; QA scoring is the standard extractive convention (exact match plus
token-multiset precision/recall/F1 after stripping articles and punctuation).
"""

from __future__ import annotations

import re
from collections import Counter
from fractions import Fraction

from .datasets import extract_boxed
from .engine import Trace

_ARTICLES = {"a", "an", "the"}
_NUMBER = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?")
_ANSWER_LABEL = re.compile(r"(?i)answer\s*:")
_CHOICE = re.compile(r"\b([A-Ea-e])\b")

MATH_TOLERANCE = 1e-6


def extract_answer(trace: Trace, task: str) -> str:
    """Pull the final answer string out of a trace's last step."""
    if not trace.steps:
        return ""
    text = trace.steps[-1].final_text
    if task == "math":
        return _extract_math(text)
    if task == "qa":
        return _extract_qa(text)
    if task == "multiple_choice":
        return _extract_choice(text)
    raise ValueError(f"unknown task {task!r}")


def _extract_math(text: str) -> str:
    boxed = extract_boxed(text)
    if boxed is not None:
        return boxed.strip()
    numbers = _NUMBER.findall(text)
    return numbers[-1].replace(",", "") if numbers else ""


def _after_last_answer_label(text: str) -> str | None:
    matches = list(_ANSWER_LABEL.finditer(text))
    if not matches:
        return None
    return text[matches[-1].end():]


def _extract_qa(text: str) -> str:
    tail = _after_last_answer_label(text)
    if tail is not None:
        for line in tail.splitlines():
            if line.strip():
                return line.strip().strip("*_` ").strip()
        return ""
    sentences = [s for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s.strip()]
    return sentences[-1].strip() if sentences else ""


def _extract_choice(text: str) -> str:
    tail = _after_last_answer_label(text)
    if tail is not None:
        match = _CHOICE.search(tail)
        return match.group(1).upper() if match else ""
    matches = _CHOICE.findall(text)
    return matches[-1].upper() if matches else ""


def parse_number(text: str) -> Fraction | None:
    """Parse an integer, decimal, or simple fraction; None when not numeric."""
    s = text.strip().replace(",", "").replace("$", "").rstrip(".").strip()
    if not s:
        return None
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def score_math(pred: str, gold: str) -> float:
    """1.0 iff numerically equivalent (tolerance 1e-6), else normalized equality."""
    p, g = parse_number(pred), parse_number(gold)
    if p is not None and g is not None:
        return 1.0 if abs(float(p - g)) <= MATH_TOLERANCE else 0.0
    return 1.0 if _collapse(pred) == _collapse(gold) and _collapse(gold) else 0.0


def score_choice(pred: str, gold: str) -> float:
    pred, gold = pred.strip().upper(), gold.strip().upper()
    return 1.0 if gold and pred[:1] == gold[:1] else 0.0


def _collapse(text: str) -> str:
    return " ".join(text.lower().split())


def normalize_qa(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    text = re.sub(r"[^\w\s]", " ", text.lower())
    return " ".join(t for t in text.split() if t not in _ARTICLES)


def score_qa(pred: str, gold: str) -> dict[str, float]:
    """Exact match plus token-multiset overlap precision/recall/F1."""
    p_tokens = normalize_qa(pred).split()
    g_tokens = normalize_qa(gold).split()
    em = 1.0 if normalize_qa(pred) == normalize_qa(gold) else 0.0
    if not p_tokens and not g_tokens:
        # both normalize to nothing: exact match decides everything
        return {"em": em, "f1": em, "precision": em, "recall": em}
    common = sum((Counter(p_tokens) & Counter(g_tokens)).values())
    precision = common / len(p_tokens) if p_tokens else 0.0
    recall = common / len(g_tokens) if g_tokens else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"em": em, "f1": f1, "precision": precision, "recall": recall}
