"""Categorized capability memory: data model, update transactions, persistence.

A :class:`ToolMemory` is treated as an immutable snapshot. Every update goes
through :func:`replace_entries`, which returns a new snapshot with the version
bumped by one and leaves the input untouched, so a failed step can never leave
a half-applied memory behind.

File format (one JSON object per line, UTF-8)::

    {"record": "header", "format": "toolmem-memory/1", "tool_id": ..., "overview": ..., "version": N}
    {"record": "entry", "entry_id": ..., "category": "proficient|good|bad|weak", "text": ...,
     "source_experience_ids": [...], "revision": N, "created_at": "<RFC 3339>"}

Entry records follow the header in category order, insertion order within a
category.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidArgument, NotFound, ParseError, SchemaError

FORMAT_TAG = "toolmem-memory/1"

# uuid5 namespace for entry ids; fixed so ids are reproducible across runs.
_ENTRY_NAMESPACE = uuid.UUID("6f1c2a4e-1d1b-4c55-9a4e-7d3f0b8e2c11")


class ProficiencyCategory(Enum):
    PROFICIENT = "proficient"
    GOOD = "good"
    BAD = "bad"
    WEAK = "weak"

    @property
    def label(self) -> str:
        return self.value.capitalize()

    @property
    def weight(self) -> int:
        return _WEIGHTS[self]

    @classmethod
    def parse(cls, name: str) -> "ProficiencyCategory":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise InvalidArgument(f"unknown proficiency category {name!r}") from None


_WEIGHTS = {
    ProficiencyCategory.PROFICIENT: 2,
    ProficiencyCategory.GOOD: 1,
    ProficiencyCategory.BAD: -1,
    ProficiencyCategory.WEAK: -2,
}

CATEGORIES: tuple[ProficiencyCategory, ...] = tuple(ProficiencyCategory)


def utcnow() -> datetime:
    """Current UTC time, pinned by ``SOURCE_DATE_EPOCH`` when that is set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    return datetime.now(timezone.utc)


_WS = re.compile(r"\s+")
_BULLET = re.compile(r"^(?:[-*•]+|\d+[.)])\s+")


def normalize_sentence(text: str) -> str:
    """Collapse whitespace, drop list markers, and end the sentence with a period."""
    text = _WS.sub(" ", text).strip()
    text = _BULLET.sub("", text).strip().strip('"').strip()
    if not text:
        return ""
    if text[-1] in "!?;:,":
        text = text[:-1].rstrip() + "."
    elif text[-1] != ".":
        text += "."
    return text


def new_entry_id(tool_id: str, version: int, ordinal: int, text: str) -> str:
    return str(uuid.uuid5(_ENTRY_NAMESPACE, f"{tool_id}\x1f{version}\x1f{ordinal}\x1f{text}"))


@dataclass(frozen=True)
class MemoryEntry:
    entry_id: str
    tool_id: str
    category: ProficiencyCategory
    text: str
    source_experience_ids: tuple[str, ...] = ()
    revision: int = 0
    created_at: datetime = field(default_factory=utcnow)

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidArgument("memory entry text must be non-empty")
        if not isinstance(self.source_experience_ids, tuple):
            object.__setattr__(self, "source_experience_ids", tuple(self.source_experience_ids))
        if self.created_at.tzinfo is None:
            raise InvalidArgument("created_at must be timezone-aware")


@dataclass(frozen=True)
class ToolMemory:
    tool_id: str
    overview: str
    entries_by_category: dict[ProficiencyCategory, tuple[MemoryEntry, ...]]
    version: int = 0

    def entries(self, category: ProficiencyCategory | None = None) -> tuple[MemoryEntry, ...]:
        if category is not None:
            return self.entries_by_category[category]
        return tuple(e for c in CATEGORIES for e in self.entries_by_category[c])

    def __iter__(self) -> Iterator[MemoryEntry]:
        return iter(self.entries())

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries_by_category.values())

    def get(self, entry_id: str) -> MemoryEntry:
        for entry in self:
            if entry.entry_id == entry_id:
                return entry
        raise NotFound(f"no entry {entry_id!r} in memory of {self.tool_id!r}")

    def counts(self) -> dict[str, int]:
        return {c.value: len(self.entries_by_category[c]) for c in CATEGORIES}


def create_tool_memory(tool_id: str, overview: str) -> ToolMemory:
    if not tool_id or not tool_id.strip():
        raise InvalidArgument("tool_id must be non-empty")
    return ToolMemory(tool_id, overview, {c: () for c in CATEGORIES}, version=0)


def replace_entries(
    memory: ToolMemory, removed_ids: Iterable[str], added: Iterable[MemoryEntry]
) -> ToolMemory:
    """Remove ``removed_ids`` and append ``added`` as one transaction.

    Entries that are not named keep their position and identity. Added entries
    go to the end of their category list in the order given.
    """
    removed = set(removed_ids)
    added = list(added)
    present = {e.entry_id for e in memory}
    missing = removed - present
    if missing:
        raise NotFound(f"cannot remove unknown entries: {sorted(missing)}")
    for entry in added:
        if entry.tool_id != memory.tool_id:
            raise InvalidArgument(
                f"entry {entry.entry_id} belongs to {entry.tool_id!r}, not {memory.tool_id!r}"
            )
    surviving = present - removed
    seen: set[str] = set()
    for entry in added:
        if entry.entry_id in surviving or entry.entry_id in seen:
            raise InvalidArgument(f"duplicate entry_id {entry.entry_id}")
        seen.add(entry.entry_id)

    buckets: dict[ProficiencyCategory, tuple[MemoryEntry, ...]] = {}
    for c in CATEGORIES:
        kept = [e for e in memory.entries_by_category[c] if e.entry_id not in removed]
        kept.extend(e for e in added if e.category is c)
        buckets[c] = tuple(kept)
    return replace(memory, entries_by_category=buckets, version=memory.version + 1)


def export_memory(memory: ToolMemory) -> dict:
    """Plain-dict view including the numeric category weights."""
    return {
        "tool_id": memory.tool_id,
        "overview": memory.overview,
        "version": memory.version,
        "categories": [
            {
                "category": c.label,
                "weight": c.weight,
                "entries": [e.text for e in memory.entries_by_category[c]],
            }
            for c in CATEGORIES
        ],
    }


# -- persistence -------------------------------------------------------------


def _entry_record(entry: MemoryEntry) -> dict:
    return {
        "record": "entry",
        "entry_id": entry.entry_id,
        "category": entry.category.value,
        "text": entry.text,
        "source_experience_ids": list(entry.source_experience_ids),
        "revision": entry.revision,
        "created_at": entry.created_at.isoformat(),
    }


def dumps_memory(memory: ToolMemory) -> str:
    header = {
        "record": "header",
        "format": FORMAT_TAG,
        "tool_id": memory.tool_id,
        "overview": memory.overview,
        "version": memory.version,
    }
    lines = [json.dumps(header, ensure_ascii=False)]
    lines.extend(json.dumps(_entry_record(e), ensure_ascii=False) for e in memory)
    return "\n".join(lines) + "\n"


def save_memory(memory: ToolMemory, destination: str | os.PathLike) -> None:
    """Write atomically: a crash mid-write leaves the previous file in place."""
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_memory(memory))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(record: dict, key: str, kind: type | tuple[type, ...], lineno: int):
    if key not in record:
        raise SchemaError(f"line {lineno}: missing key {key!r}")
    value = record[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaError(f"line {lineno}: key {key!r} has wrong type {type(value).__name__}")
    return value


def loads_memory(text: str) -> ToolMemory:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty memory file", line=1)

    records = []
    for lineno, raw in enumerate(lines, start=1):
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record ({exc.msg})", line=lineno) from None
        if not isinstance(record, dict):
            raise ParseError("record is not an object", line=lineno)
        records.append((lineno, record))

    lineno, header = records[0]
    if header.get("record") != "header":
        raise SchemaError(f"line {lineno}: first record must be the header")
    if header.get("format", FORMAT_TAG) != FORMAT_TAG:
        raise SchemaError(f"line {lineno}: unsupported format {header.get('format')!r}")
    tool_id = _require(header, "tool_id", str, lineno)
    overview = _require(header, "overview", str, lineno)
    version = _require(header, "version", int, lineno)

    buckets: dict[ProficiencyCategory, list[MemoryEntry]] = {c: [] for c in CATEGORIES}
    seen: set[str] = set()
    for lineno, rec in records[1:]:
        if rec.get("record") != "entry":
            raise SchemaError(f"line {lineno}: expected an entry record")
        entry_id = _require(rec, "entry_id", str, lineno)
        label = _require(rec, "category", str, lineno)
        try:
            category = ProficiencyCategory.parse(label)
        except InvalidArgument:
            raise SchemaError(f"line {lineno}: unknown category {label!r}") from None
        text = _require(rec, "text", str, lineno)
        sources = _require(rec, "source_experience_ids", list, lineno)
        revision = _require(rec, "revision", int, lineno)
        stamp = _require(rec, "created_at", str, lineno)
        try:
            created_at = datetime.fromisoformat(stamp)
        except ValueError:
            raise SchemaError(f"line {lineno}: bad timestamp {stamp!r}") from None
        if entry_id in seen:
            raise SchemaError(f"line {lineno}: duplicate entry_id {entry_id}")
        seen.add(entry_id)
        try:
            entry = MemoryEntry(
                entry_id, tool_id, category, text, tuple(sources), revision, created_at
            )
        except InvalidArgument as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        buckets[category].append(entry)

    return ToolMemory(tool_id, overview, {c: tuple(v) for c, v in buckets.items()}, version)


def load_memory(source: str | os.PathLike) -> ToolMemory:
    return loads_memory(Path(source).read_text(encoding="utf-8"))
