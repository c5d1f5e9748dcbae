"""Induce capability memory from experiences.

One update step retrieves the ``k_build`` nearest entries from every category,
asks the induction model to merge them with the new experience, parses the
answer back into categorized sentences, and swaps the retrieved entries for the
parsed ones in a single :func:`~toolmem.memory.replace_entries` transaction.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import InvalidArgument, RefinementRejected, ToolMemError
from .gateway import Gateway, load_template, render_template
from .memory import (
    CATEGORIES,
    MemoryEntry,
    ProficiencyCategory,
    ToolMemory,
    create_tool_memory,
    new_entry_id,
    normalize_sentence,
    replace_entries,
    utcnow,
)
from .retrieval import MemoryIndex, RetrievalHit

log = logging.getLogger(__name__)

DEFAULT_K_BUILD = 6

# "weak at" is the taxonomy's own name; the refinement prompt asks for "poor at".
PHRASES: tuple[tuple[str, ProficiencyCategory], ...] = (
    ("proficient at", ProficiencyCategory.PROFICIENT),
    ("good at", ProficiencyCategory.GOOD),
    ("bad at", ProficiencyCategory.BAD),
    ("poor at", ProficiencyCategory.WEAK),
    ("weak at", ProficiencyCategory.WEAK),
)


@dataclass(frozen=True)
class Experience:
    experience_id: str
    tool_id: str
    task_prompt: str
    solution: str
    score: int
    rubric: str = ""
    feedback: str | None = None
    modality: str = "text"

    def __post_init__(self) -> None:
        if not self.task_prompt.strip():
            raise InvalidArgument(f"experience {self.experience_id}: empty task prompt")
        if isinstance(self.score, bool) or self.score not in (1, 2, 3, 4, 5):
            raise InvalidArgument(f"experience {self.experience_id}: score {self.score!r} not in 1..5")
        if self.modality not in ("text", "image"):
            raise InvalidArgument(f"experience {self.experience_id}: unknown modality {self.modality!r}")


@dataclass(frozen=True)
class ParsedMemory:
    entries: list[tuple[ProficiencyCategory, str]]
    remainder: list[str]


@dataclass(frozen=True)
class RefinementResult:
    raw_output: str
    parsed_entries: list[tuple[ProficiencyCategory, str]]
    remainder: list[str] = field(default_factory=list)


@dataclass
class StepLog:
    step: int
    experience_id: str
    retrieved_count: int
    added_count: int
    removed_count: int
    remainder_count: int
    status: str = "ok"
    version: int = 0
    remainder: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


@dataclass
class UpdateOutcome:
    memory: ToolMemory
    log: StepLog
    refinement: RefinementResult
    prompt: str


class BuildFailed(ToolMemError):
    """A build step failed; ``memory`` is the last consistent snapshot."""

    def __init__(self, message: str, memory: ToolMemory, step: int, steps: list[StepLog]) -> None:
        super().__init__(message)
        self.memory = memory
        self.step = step
        self.steps = steps


def leading_category(sentence: str) -> ProficiencyCategory | None:
    low = sentence.lower()
    for phrase, category in PHRASES:
        if low.startswith(phrase):
            rest = low[len(phrase):]
            # require a word boundary and some content after the phrase
            if rest[:1] in (" ", ":", ",") and rest.strip(" :,.") != "":
                return category
    return None


_SPLIT = re.compile(r"(?<=[.!?])\s+(?=[\"'(\[]?[A-Z])")


def split_sentences(blob: str) -> list[str]:
    out = []
    for line in blob.splitlines():
        for piece in _SPLIT.split(line.strip()):
            piece = normalize_sentence(piece)
            if piece:
                out.append(piece)
    return out


def parse_memory_text(blob: str) -> ParsedMemory:
    """Split ``blob`` into sentences and classify each by its leading phrase.

    >>> parse_memory_text("Poor at negation. The model is versatile.").remainder
    ['The model is versatile.']
    """
    entries: list[tuple[ProficiencyCategory, str]] = []
    remainder: list[str] = []
    for sentence in split_sentences(blob):
        category = leading_category(sentence)
        if category is None:
            remainder.append(sentence)
        else:
            entries.append((category, sentence))
    return ParsedMemory(entries, remainder)


def generate_feedback(experience: Experience, gateway: Gateway) -> str:
    if experience.feedback is not None:
        raise InvalidArgument(f"experience {experience.experience_id} already has feedback")
    text = render_template(
        load_template("feedback_generation"),
        {"prompt": experience.task_prompt, "score": experience.score},
    )
    image = experience.solution if experience.modality == "image" else None
    feedback = gateway.ask(text, image_ref=image).strip()
    if not feedback:
        raise RefinementRejected(f"empty feedback for experience {experience.experience_id}")
    return feedback


def format_retrieved(memory: ToolMemory, retrieved: dict[ProficiencyCategory, list[RetrievalHit]]) -> str:
    """One entry per line, category blocks in fixed order, stored order inside a block.

    Stored rather than distance order, so a model that echoes its input leaves
    the memory exactly as it was.
    """
    picked = {h.entry.entry_id for c in CATEGORIES for h in retrieved.get(c, [])}
    return "\n".join(e.text for e in memory.entries() if e.entry_id in picked)


def render_refinement_prompt(
    tool_id: str, current_memory: str, experience: Experience
) -> str:
    return render_template(
        load_template("memory_refinement"),
        {
            "tool_name": tool_id,
            "current_memory": current_memory,
            "task_prompt": experience.task_prompt,
            "response": experience.solution,
            "score_rubric": experience.rubric,
            "score": experience.score,
            "feedback": experience.feedback,
        },
    )


def _unique(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(items))


def induce_and_update(
    memory: ToolMemory,
    experience: Experience,
    index: MemoryIndex,
    gateway: Gateway,
    k_build: int = DEFAULT_K_BUILD,
    step: int | None = None,
    clock: Callable[[], datetime] = utcnow,
) -> UpdateOutcome:
    """Apply one refinement step and return the new snapshot.

    ``memory`` is never modified; on any error the caller still holds the
    pre-step snapshot and the index is left mirroring it.
    """
    if experience.tool_id != memory.tool_id:
        raise InvalidArgument(
            f"experience {experience.experience_id} is for {experience.tool_id!r}, not {memory.tool_id!r}"
        )
    if experience.feedback is None:
        raise InvalidArgument(f"experience {experience.experience_id} has no feedback")
    if k_build < 1:
        raise InvalidArgument("k_build must be >= 1")

    index.sync(memory)
    retrieved = index.retrieve_all_categories(experience.task_prompt, memory.tool_id, k_build)
    hits = [h for c in CATEGORIES for h in retrieved[c]]
    prompt = render_refinement_prompt(memory.tool_id, format_retrieved(memory, retrieved), experience)
    raw = gateway.ask(prompt)

    parsed = parse_memory_text(raw)
    if not parsed.entries and raw.strip():
        raise RefinementRejected(
            f"experience {experience.experience_id}: no categorized sentence in model output"
        )

    removed_ids = {h.entry.entry_id for h in hits}
    revision = max((h.entry.revision for h in hits), default=0) + 1
    all_sources = _unique(s for h in hits for s in h.entry.source_experience_ids)
    by_text = {(h.entry.category, h.entry.text): h.entry for h in hits}
    taken = {
        (e.category, e.text) for e in memory if e.entry_id not in removed_ids
    }
    version = memory.version + 1
    stamp = clock()
    added: list[MemoryEntry] = []
    for ordinal, (category, text) in enumerate(parsed.entries):
        if (category, text) in taken:
            continue
        taken.add((category, text))
        previous = by_text.get((category, text))
        sources = previous.source_experience_ids if previous is not None else all_sources
        added.append(
            MemoryEntry(
                entry_id=new_entry_id(memory.tool_id, version, ordinal, text),
                tool_id=memory.tool_id,
                category=category,
                text=text,
                source_experience_ids=_unique((*sources, experience.experience_id)),
                revision=revision,
                created_at=stamp,
            )
        )

    updated = replace_entries(memory, removed_ids, added)
    index.sync(updated)
    record = StepLog(
        step=step if step is not None else version,
        experience_id=experience.experience_id,
        retrieved_count=len(hits),
        added_count=len(added),
        removed_count=len(removed_ids),
        remainder_count=len(parsed.remainder),
        version=updated.version,
        remainder=list(parsed.remainder),
    )
    for sentence in parsed.remainder:
        log.info("quarantined unclassified sentence for %s: %s", memory.tool_id, sentence)
    return UpdateOutcome(updated, record, RefinementResult(raw, parsed.entries, parsed.remainder), prompt)


@dataclass
class BuildResult:
    memory: ToolMemory
    steps: list[StepLog]

    def write_log(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for s in self.steps:
                fh.write(s.to_json() + "\n")


def build_memory(
    experiences: Sequence[Experience],
    tool_id: str,
    overview: str,
    index: MemoryIndex,
    gateway: Gateway,
    k_build: int = DEFAULT_K_BUILD,
    on_step: Callable[[ToolMemory, StepLog], None] | None = None,
    clock: Callable[[], datetime] = utcnow,
    initial: ToolMemory | None = None,
) -> BuildResult:
    """Fold :func:`induce_and_update` over ``experiences`` in order.

    Missing feedback is generated first. A step whose output has no categorized
    sentence is logged as ``rejected`` and skipped; any other failure stops the
    build with :class:`BuildFailed` carrying the last good snapshot.
    """
    for exp in experiences:
        if exp.tool_id != tool_id:
            raise InvalidArgument(f"experience {exp.experience_id} is for {exp.tool_id!r}, not {tool_id!r}")

    memory = initial if initial is not None else create_tool_memory(tool_id, overview)
    index.sync(memory)
    steps: list[StepLog] = []
    for n, exp in enumerate(experiences, start=1):
        try:
            if exp.feedback is None:
                exp = Experience(**{**asdict(exp), "feedback": generate_feedback(exp, gateway)})
            outcome = induce_and_update(memory, exp, index, gateway, k_build, step=n, clock=clock)
        except RefinementRejected as exc:
            log.warning("step %d rejected: %s", n, exc)
            index.sync(memory)
            record = StepLog(n, exp.experience_id, 0, 0, 0, 0, status="rejected", version=memory.version)
            steps.append(record)
            if on_step is not None:
                on_step(memory, record)
            continue
        except ToolMemError as exc:
            index.sync(memory)
            raise BuildFailed(f"step {n} ({exp.experience_id}) failed: {exc}", memory, n, steps) from exc
        memory = outcome.memory
        steps.append(outcome.log)
        if on_step is not None:
            on_step(memory, outcome.log)
    return BuildResult(memory, steps)
