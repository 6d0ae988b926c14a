"""Parse, render, and edit the list of methodologies that steers reasoning.

The on-disk format is plain Markdown: one level-2 heading per entry, followed
by labeled blocks::

    ## Coding
    category: coding
    when: A step needs an exact computation.
    what: Write one standalone Python program and print the result.

``when:`` and ``what:`` are mandatory; ``category:`` is optional metadata and
never changes engine behavior.  A block runs until the next label, the next
``## `` heading, or end of file; internal newlines are kept verbatim while
surrounding whitespace is trimmed.  Labels are matched lowercase, at the start
of a line (leading indentation allowed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

CATEGORIES = ("analysis", "coding", "reflection", "other")

_LABELS = ("when:", "what:", "category:")
_DEFAULT_FILE = "methodologies.md"


class RegistryError(ValueError):
    """Malformed methodology source; ``line`` is the 1-based source line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Methodology:
    """One named when/what entry."""

    name: str
    when: str
    what: str
    category: str = "other"

    def __post_init__(self):
        if not self.name or "\n" in self.name:
            raise ValueError("methodology name must be non-empty and single-line")
        if not self.when.strip() or not self.what.strip():
            raise ValueError(f"methodology {self.name!r} needs non-empty when/what text")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r} (expected one of {CATEGORIES})")


@dataclass(frozen=True)
class MethodologyRegistry:
    """Ordered, immutable collection of methodologies.

    ``source_digest`` is the SHA-256 of the source text the registry was
    parsed from (or of its canonical rendering for derived registries); it is
    excluded from equality so that parse/render round-trips compare equal.
    """

    entries: tuple[Methodology, ...]
    source_digest: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("registry must contain at least one methodology")
        names = [m.name for m in self.entries]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise ValueError(f"duplicate methodology name {dup!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.entries)

    def get(self, name: str) -> Methodology:
        for m in self.entries:
            if m.name == name:
                return m
        raise KeyError(name)

    def __contains__(self, name: object) -> bool:
        return any(m.name == name for m in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _match_label(line: str) -> str | None:
    lead = line.lstrip()
    for label in _LABELS:
        if lead.startswith(label):
            return label
    return None


def parse_registry(markdown_text: str) -> MethodologyRegistry:
    """Parse methodology Markdown; every error names its source line."""
    lines = markdown_text.splitlines()
    entries: list[Methodology] = []
    seen: dict[str, int] = {}

    i, n = 0, len(lines)
    while i < n:
        if not lines[i].strip().startswith("## "):
            i += 1
            continue
        heading_line = i + 1
        name = lines[i].strip()[3:].strip()
        if not name:
            raise RegistryError("empty methodology name", heading_line)
        if name in seen:
            raise RegistryError(
                f"duplicate methodology name {name!r} (first defined at line {seen[name]})",
                heading_line,
            )
        seen[name] = heading_line
        i += 1

        blocks: dict[str, str] = {}
        label_lines: dict[str, int] = {}
        while i < n and not lines[i].strip().startswith("## "):
            label = _match_label(lines[i])
            if label is None:
                i += 1
                continue
            key = label[:-1]
            if key in blocks:
                raise RegistryError(f"{name!r}: repeated {label} block", i + 1)
            label_lines[key] = i + 1
            chunk = [lines[i].lstrip()[len(label):]]
            i += 1
            while i < n and _match_label(lines[i]) is None and not lines[i].strip().startswith("## "):
                chunk.append(lines[i])
                i += 1
            blocks[key] = "\n".join(chunk).strip()

        for required in ("when", "what"):
            if not blocks.get(required):
                raise RegistryError(f"{name!r}: missing non-empty {required}: block", heading_line)
        category = blocks.get("category", "other")
        if category not in CATEGORIES:
            raise RegistryError(
                f"{name!r}: unknown category {category!r}", label_lines.get("category", heading_line)
            )
        entries.append(Methodology(name, blocks["when"], blocks["what"], category))

    if not entries:
        raise RegistryError("no methodology entries found", 1)
    return MethodologyRegistry(tuple(entries), _digest(markdown_text))


def render_methodology(m: Methodology) -> str:
    return f"## {m.name}\ncategory: {m.category}\nwhen: {m.when}\nwhat: {m.what}\n"


def render_registry(reg: MethodologyRegistry) -> str:
    """Canonical rendering; ``parse_registry`` recovers the same entries."""
    return "\n".join(render_methodology(m) for m in reg.entries)


def remove_methodology(reg: MethodologyRegistry, name: str) -> MethodologyRegistry:
    """Return a registry without ``name``; order of the rest is unchanged."""
    if name not in reg:
        raise KeyError(f"unknown methodology {name!r}")
    kept = tuple(m for m in reg.entries if m.name != name)
    rendered = "\n".join(render_methodology(m) for m in kept)
    return MethodologyRegistry(kept, _digest(rendered))


def load_registry(path: str | Path) -> MethodologyRegistry:
    return parse_registry(Path(path).read_text(encoding="utf-8"))


def default_registry() -> MethodologyRegistry:
    """The registry shipped with the package (8 general-purpose entries)."""
    text = resources.files("methodloop.data").joinpath(_DEFAULT_FILE).read_text(encoding="utf-8")
    return parse_registry(text)
