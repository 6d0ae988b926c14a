"""Fuzzy string matching over a supporting-facts corpus.

Scores are normalized edit-distance ratios; the corpus-backed ``search`` is
what gets registered in the sandbox tool registry for retrieval-augmented
questions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable


def normalize(text: str) -> str:
    """Lowercase and collapse runs of whitespace."""
    return " ".join(text.lower().split())


def levenshtein(a: str, b: str) -> int:
    """Edit distance via two-row dynamic programming."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """1 - dist/maxlen over normalized strings; 1.0 iff they normalize equal."""
    na, nb = normalize(a), normalize(b)
    if na == nb:
        return 1.0
    return 1.0 - levenshtein(na, nb) / max(len(na), len(nb))


@dataclass(frozen=True)
class FactCorpus:
    """Ordered (title, sentence) facts; ``question_id`` set when per-question scoped."""

    facts: tuple[tuple[str, str], ...]
    question_id: str | None = None

    def __len__(self) -> int:
        return len(self.facts)


def search(corpus: FactCorpus, query: str, k: int = 3) -> list[tuple[str, str, float]]:
    """Top-k facts by similarity of query to "title sentence", descending.

    Ties keep corpus order; fewer than k results when the corpus is smaller.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not corpus.facts:
        raise ValueError("cannot search an empty corpus")
    scored = [(title, sentence, similarity(query, f"{title} {sentence}")) for title, sentence in corpus.facts]
    scored.sort(key=lambda row: -row[2])  # stable sort: equal scores keep corpus order
    return scored[:k]


def make_search_tool(corpus: FactCorpus, default_k: int = 3) -> Callable:
    """Bind a corpus into the JSON-friendly ``search(query, k)`` sandbox tool."""

    def search_tool(query, k=default_k):
        rows = search(corpus, str(query), int(k))
        return [{"title": t, "sentence": s, "score": sc} for t, s, sc in rows]

    return search_tool
