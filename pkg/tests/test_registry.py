from __future__ import annotations

import random

import pytest

from methodloop.registry import (
    Methodology,
    MethodologyRegistry,
    RegistryError,
    parse_registry,
    remove_methodology,
    render_registry,
)

TWO_ENTRIES = """\
## Analysis
when: at the start
what: break the problem down

## Coding
category: coding
when: exact computation needed
what: write a program
"""

DEFAULT_NAMES = (
    "Analysis",
    "Coding",
    "Retrieval",
    "Validation",
    "Reflection",
    "Flexibility",
    "Synthesis",
    "Conclusion",
)


def test_parse_two_entries():
    parsed = parse_registry(TWO_ENTRIES)
    assert parsed.names == ("Analysis", "Coding")
    assert parsed.get("Coding").category == "coding"
    assert parsed.get("Analysis").category == "other"
    assert parsed.get("Analysis").when == "at the start"


def test_parse_multiline_blocks_kept_verbatim():
    text = "## A\nwhen: first line\nsecond line\nwhat: body\n"
    entry = parse_registry(text).get("A")
    assert entry.when == "first line\nsecond line"


def test_duplicate_name_reports_line():
    text = TWO_ENTRIES + "\n## Analysis\nwhen: again\nwhat: again\n"
    with pytest.raises(RegistryError) as err:
        parse_registry(text)
    assert "Analysis" in str(err.value)
    assert err.value.line == 10


def test_missing_when_block():
    with pytest.raises(RegistryError) as err:
        parse_registry("## A\nwhat: something\n")
    assert "when" in str(err.value)
    assert err.value.line == 1


def test_missing_what_block():
    with pytest.raises(RegistryError) as err:
        parse_registry("## A\nwhen: something\n")
    assert "what" in str(err.value)


def test_zero_entries_rejected():
    with pytest.raises(RegistryError) as err:
        parse_registry("just some prose\n")
    assert err.value.line == 1


def test_unknown_category_rejected():
    with pytest.raises(RegistryError):
        parse_registry("## A\ncategory: bogus\nwhen: x\nwhat: y\n")


def test_repeated_label_rejected():
    with pytest.raises(RegistryError):
        parse_registry("## A\nwhen: x\nwhen: twice\nwhat: y\n")


def test_shipped_default_has_eight_entries(reg):
    assert reg.names == DEFAULT_NAMES
    assert len(reg.source_digest) == 64
    for entry in reg.entries:
        assert entry.when and entry.what


def test_render_single_entry_has_one_heading():
    single = MethodologyRegistry((Methodology("Solo", "w", "x"),))
    rendered = render_registry(single)
    assert rendered.count("## ") == 1


def test_round_trip_default(reg):
    assert parse_registry(render_registry(reg)) == reg


def test_round_trip_preserves_order():
    parsed = parse_registry(TWO_ENTRIES)
    again = parse_registry(render_registry(parsed))
    assert again.names == parsed.names
    assert again == parsed


def test_random_round_trips():
    rng = random.Random(7)
    words = ["alpha", "beta", "gamma", "delta", "step", "check", "plan"]
    for _ in range(25):
        entries = []
        for i in range(rng.randint(1, 6)):
            text_of = lambda: " ".join(rng.choices(words, k=rng.randint(1, 8)))
            body = text_of() + ("\n" + text_of() if rng.random() < 0.4 else "")
            entries.append(
                Methodology(f"M{i}", body, text_of(), rng.choice(("analysis", "coding", "other")))
            )
        original = MethodologyRegistry(tuple(entries))
        assert parse_registry(render_registry(original)) == original


def test_remove_methodology(reg):
    smaller = remove_methodology(reg, "Coding")
    assert len(smaller) == 7
    assert "Coding" not in smaller
    assert smaller.names == tuple(n for n in DEFAULT_NAMES if n != "Coding")


def test_remove_unknown_name(reg):
    with pytest.raises(KeyError):
        remove_methodology(reg, "Foo")


def test_remove_down_to_one(reg):
    current = reg
    for name in DEFAULT_NAMES:
        if name != "Conclusion":
            current = remove_methodology(current, name)
    assert current.names == ("Conclusion",)


def test_registry_invariants():
    with pytest.raises(ValueError):
        MethodologyRegistry(())
    with pytest.raises(ValueError):
        MethodologyRegistry((Methodology("A", "w", "x"), Methodology("A", "w2", "x2")))
    with pytest.raises(ValueError):
        Methodology("", "w", "x")
    with pytest.raises(ValueError):
        Methodology("two\nlines", "w", "x")
    with pytest.raises(ValueError):
        Methodology("A", "", "x")
