"""Dataset loaders producing Question objects with gold payloads.

Formats match the public files: JSONL for the math and multiple-choice sets,
one JSON array for the multi-hop QA set.  QA items additionally carry a
per-question fact corpus built from their supporting facts.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .prompts import Question
from .retrieval import FactCorpus

FORMATS = ("gsm8k_jsonl", "math500_jsonl", "aime_jsonl", "arc_jsonl", "hotpotqa_json")

_GSM8K_MARKER = re.compile(r"####\s*([^\n]+)")


class DatasetError(ValueError):
    """Malformed dataset file; message names the record or line."""


def load_dataset(path: str | Path, format: str, limit: int | None = None) -> list[Question]:
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r} (expected one of {FORMATS})")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    if format == "hotpotqa_json":
        questions = _load_hotpotqa(path)
    else:
        loader = {
            "gsm8k_jsonl": _gsm8k_question,
            "math500_jsonl": _math_question,
            "aime_jsonl": _aime_question,
            "arc_jsonl": _arc_question,
        }[format]
        questions = _load_jsonl(path, loader)
    return questions[:limit] if limit is not None else questions


def _load_jsonl(path: Path, to_question) -> list[Question]:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path.name} line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                questions.append(to_question(record, lineno))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path.name} line {lineno}: {exc}") from exc
    if not questions:
        raise DatasetError(f"{path.name}: no records")
    return questions


def _text_field(record: dict, *names: str) -> str:
    for name in names:
        value = record.get(name)
        if isinstance(value, str) and value.strip():
            return value
    raise ValueError(f"missing question text (looked for {', '.join(names)})")


def _gsm8k_question(record: dict, lineno: int) -> Question:
    text = _text_field(record, "question", "problem")
    answer = record.get("answer", "")
    matches = _GSM8K_MARKER.findall(str(answer))
    if not matches:
        raise ValueError("answer has no terminal '#### <number>' marker")
    gold = matches[-1].strip().replace(",", "")
    return Question(id=str(record.get("id", f"gsm8k-{lineno}")), text=text, task="math", gold=gold)


def _math_question(record: dict, lineno: int) -> Question:
    text = _text_field(record, "problem", "question")
    gold = record.get("answer")
    if gold is None and isinstance(record.get("solution"), str):
        boxed = extract_boxed(record["solution"])
        gold = boxed if boxed is not None else None
    if gold is None or not str(gold).strip():
        raise ValueError("missing gold answer (no 'answer' field or boxed solution)")
    return Question(id=str(record.get("id", f"math-{lineno}")), text=text, task="math", gold=str(gold))


def _aime_question(record: dict, lineno: int) -> Question:
    text = _text_field(record, "problem", "question")
    try:
        gold = int(str(record["answer"]).strip())
    except (KeyError, ValueError) as exc:
        raise ValueError(f"gold answer is not an integer: {exc}") from exc
    return Question(id=str(record.get("id", f"aime-{lineno}")), text=text, task="math", gold=str(gold))


def _arc_question(record: dict, lineno: int) -> Question:
    q = record.get("question")
    if isinstance(q, dict):  # {"stem": ..., "choices": [{"label","text"}, ...]}
        stem = q.get("stem", "")
        choices = [(c["label"], c["text"]) for c in q.get("choices", [])]
    else:  # flat: question str + {"label": [...], "text": [...]}
        stem = q or ""
        ch = record.get("choices") or {}
        choices = list(zip(ch.get("label", []), ch.get("text", [])))
    if not stem or not choices:
        raise ValueError("missing question stem or choices")
    gold = record.get("answerKey")
    if not gold:
        raise ValueError("missing answerKey")
    rendered = stem.strip() + "\n" + "\n".join(f"{label}. {text}" for label, text in choices)
    return Question(
        id=str(record.get("id", f"arc-{lineno}")), text=rendered, task="multiple_choice", gold=str(gold)
    )


def _load_hotpotqa(path: Path) -> list[Question]:
    try:
        items = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path.name} line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(items, list) or not items:
        raise DatasetError(f"{path.name}: expected a non-empty JSON array")
    questions = []
    for i, item in enumerate(items):
        try:
            qid = str(item.get("_id", f"hotpot-{i}"))
            text = _text_field(item, "question")
            gold = str(item["answer"])
            corpus = _supporting_facts_corpus(item, qid)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path.name} item {i}: {exc}") from exc
        questions.append(Question(id=qid, text=text, task="qa", gold=gold, corpus=corpus))
    return questions


def _supporting_facts_corpus(item: dict, question_id: str) -> FactCorpus:
    """Resolve (title, sentence-index) supporting facts against the context."""
    context = {title: sentences for title, sentences in item.get("context", [])}
    facts = []
    for title, idx in item.get("supporting_facts", []):
        sentences = context.get(title)
        if sentences is not None and 0 <= idx < len(sentences):
            facts.append((title, sentences[idx]))
    return FactCorpus(tuple(facts), question_id=question_id)


def extract_boxed(text: str) -> str | None:
    """Content of the last \\boxed{...} in the text, brace-balanced."""
    result = None
    start = text.find("\\boxed{")
    while start != -1:
        depth = 0
        for i in range(start + 6, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    result = text[start + 7 : i]
                    break
        start = text.find("\\boxed{", start + 1)
    return result
