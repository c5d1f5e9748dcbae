import os
from pathlib import Path

import pytest

from toolmem.gateway import CompletionRequest
from toolmem.memory import CATEGORIES, MemoryEntry, ProficiencyCategory, create_tool_memory, new_entry_id, replace_entries

DATA = Path(__file__).resolve().parents[1] / "src" / "toolmem" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"
EPOCH = "1700000000"


@pytest.fixture(autouse=True)
def pinned_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", EPOCH)
    for key in list(os.environ):
        if key.startswith("TOOLMEM_"):
            monkeypatch.delenv(key)


def make_entry(tool_id, category, text, ordinal=0, revision=0, sources=()):
    return MemoryEntry(
        entry_id=new_entry_id(tool_id, 0, ordinal, text),
        tool_id=tool_id,
        category=category,
        text=text,
        source_experience_ids=tuple(sources),
        revision=revision,
    )


def memory_with(tool_id, texts_by_category, overview="A large language model"):
    """Build a memory from ``{category: [text, ...]}`` in one transaction."""
    added = []
    for c in CATEGORIES:
        for t in texts_by_category.get(c, []):
            added.append(make_entry(tool_id, c, t, ordinal=len(added)))
    return replace_entries(create_tool_memory(tool_id, overview), set(), added)


def echo_memory(request: CompletionRequest) -> str:
    """Mock model that returns the refinement prompt's current memory verbatim."""
    text = request.prompt
    start = text.index(':\n    "') + len(':\n    "')
    end = text.index('"\n- Input task prompt')
    return text[start:end]


@pytest.fixture
def minidata():
    return DATA / "minidata.jsonl"


@pytest.fixture
def minifixtures():
    return DATA / "minidata.fixtures.jsonl"


P, G, B, W = (ProficiencyCategory.PROFICIENT, ProficiencyCategory.GOOD,
              ProficiencyCategory.BAD, ProficiencyCategory.WEAK)


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", help="rewrite golden files instead of comparing")


@pytest.fixture
def golden(request):
    """``golden(relpath, text)`` compares ``text`` to ``tests/golden/relpath``."""
    update = request.config.getoption("--update-golden")

    def check(relpath, text):
        path = GOLDEN / relpath
        if update:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(text.encode("utf-8"))
            return
        assert path.read_bytes() == text.encode("utf-8"), f"{relpath} differs from golden"

    return check


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
