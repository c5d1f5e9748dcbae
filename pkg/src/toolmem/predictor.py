"""Score prediction, description prediction and pairwise tool selection.

Three prompting modes:

* ``generic``  - the tool name and a one-line overview, nothing else;
* ``fewshot``  - the nearest raw training triplets (task, rubric, score);
* ``toolmem``  - the nearest memory entries from each proficiency category.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, PredictionError, SelectionError, UnparseableScore
from .gateway import Gateway, load_template, render_template
from .memory import CATEGORIES, ToolMemory
from .retrieval import Embedder, MemoryIndex, rank_by_distance

log = logging.getLogger(__name__)

DEFAULT_K_INFER = 12
DEFAULT_SHOT_COUNT = 12
MAX_DESCRIPTION_WORDS = 50

OVERVIEWS = {"text": "A large language model", "image": "A text to image model"}


class Mode(Enum):
    GENERIC = "generic"
    FEWSHOT = "fewshot"
    TOOLMEM = "toolmem"


@dataclass(frozen=True)
class PredictionMode:
    tag: Mode
    k_infer: int = DEFAULT_K_INFER
    shot_count: int = DEFAULT_SHOT_COUNT

    def __post_init__(self) -> None:
        if not isinstance(self.tag, Mode):
            object.__setattr__(self, "tag", Mode(str(self.tag).lower()))
        # k_infer = 0 is the "overview only" point of the top-k ablation
        if self.k_infer < 0:
            raise InvalidArgument("k_infer must be >= 0")
        if self.shot_count < 1:
            raise InvalidArgument("shot_count must be >= 1")

    @property
    def name(self) -> str:
        return self.tag.value


@dataclass(frozen=True)
class TrainingExample:
    task_id: str
    task_prompt: str
    rubric: str
    score: int


class ExamplePool:
    """Training triplets for few-shot prompting, searchable by prompt similarity."""

    def __init__(self, examples: Sequence[TrainingExample], embedder: Embedder) -> None:
        self.examples = sorted(examples, key=lambda e: e.task_id)
        self.embedder = embedder
        self._by_id = {e.task_id: e for e in self.examples}
        if self.examples:
            self._matrix = np.stack([np.asarray(embedder.embed(e.task_prompt), dtype=np.float64) for e in self.examples])
        else:
            self._matrix = np.zeros((0, embedder.dim or 0))

    def __len__(self) -> int:
        return len(self.examples)

    def nearest(self, query: str, k: int) -> list[TrainingExample]:
        keys = [e.task_id for e in self.examples]
        qvec = np.asarray(self.embedder.embed(query), dtype=np.float64)
        return [self._by_id[key] for key, _ in rank_by_distance(qvec, keys, self._matrix, k)]


@dataclass
class ToolContext:
    """Everything the predictor may read about one tool, pinned for a whole run."""

    tool_id: str
    modality: str = "text"
    overview: str | None = None
    memory: ToolMemory | None = None
    index: MemoryIndex | None = None
    pool: ExamplePool | None = None

    def __post_init__(self) -> None:
        if self.modality not in OVERVIEWS:
            raise InvalidArgument(f"unknown modality {self.modality!r}")
        if self.overview is None:
            self.overview = self.memory.overview if self.memory is not None else OVERVIEWS[self.modality]
        if self.memory is not None and self.index is not None:
            self.index.sync(self.memory)


@dataclass
class PredictionRecord:
    task_id: str
    tool_id: str
    mode: str
    predicted_score: int
    raw_response: str
    ground_truth: int | None = None
    clamped: bool = False
    prompt: str = field(default="", repr=False)


@dataclass
class DescriptionResult:
    task_id: str
    tool_id: str
    mode: str
    description: str
    truncated: bool = False
    word_count: int = 0


@dataclass
class Selection:
    choice: str  # "A", "B" or "Tie"
    record_a: PredictionRecord
    record_b: PredictionRecord

    @property
    def score_a(self) -> int:
        return self.record_a.predicted_score

    @property
    def score_b(self) -> int:
        return self.record_b.predicted_score


_INT = re.compile(r"(?<![\w.\-])(-?\d+)(?![\w])(?!\.\d)")


def parse_score_flagged(raw: str) -> tuple[int, bool]:
    """Return ``(score, clamped)`` from the first standalone integer in ``raw``."""
    m = _INT.search(raw)
    if m is None:
        raise UnparseableScore(f"no integer in response {raw[:80]!r}")
    value = int(m.group(1))
    clamped = min(5, max(1, value))
    return clamped, clamped != value


def parse_score(raw: str) -> int:
    score, clamped = parse_score_flagged(raw)
    if clamped:
        log.warning("score in %r clamped to %d", raw[:40], score)
    return score


def format_memory_context(tool: ToolContext, query: str, k: int) -> str:
    """Overview line followed by the retrieved entries, one per line, tagged by category."""
    lines = [tool.overview]
    if k > 0 and tool.memory is not None and tool.index is not None:
        retrieved = tool.index.retrieve_all_categories(query, tool.tool_id, k)
        for c in CATEGORIES:
            lines.extend(f"[{c.label}] {hit.entry.text}" for hit in retrieved[c])
    return "\n".join(lines)


def _format_text_examples(examples: Sequence[TrainingExample]) -> str:
    return "\n\n".join(
        f"Task Prompt: {e.task_prompt}\nRubric: {e.rubric}\nModel's Score: {e.score}" for e in examples
    )


def _format_image_examples(examples: Sequence[TrainingExample]) -> str:
    return "\n".join(f'Prompt: "{e.task_prompt}" Score: {e.score}' for e in examples)


def _shots(tool: ToolContext, query: str, mode: PredictionMode) -> list[TrainingExample]:
    if tool.pool is None:
        raise InvalidArgument(f"fewshot mode needs a training pool for {tool.tool_id}")
    return tool.pool.nearest(query, mode.shot_count)


def render_score_prompt(task_prompt: str, rubric: str, tool: ToolContext, mode: PredictionMode) -> str:
    if mode.tag is Mode.TOOLMEM and tool.memory is None:
        raise InvalidArgument(f"toolmem mode needs a memory for {tool.tool_id}")
    name = f"{tool.modality}_score_{mode.name}"
    bindings: dict[str, object] = {"model_name": tool.tool_id}
    if tool.modality == "text":
        bindings["rubric"] = rubric
        if mode.tag is Mode.FEWSHOT:
            bindings["task_prompt"] = task_prompt
            bindings["few_shot_examples"] = _format_text_examples(_shots(tool, task_prompt, mode))
        else:
            bindings["prompt"] = task_prompt
    else:
        bindings["prompt"] = task_prompt
        if mode.tag is Mode.FEWSHOT:
            bindings["samples_prompt"] = _format_image_examples(_shots(tool, task_prompt, mode))
    if mode.tag is Mode.TOOLMEM:
        bindings["current_memory"] = format_memory_context(tool, task_prompt, mode.k_infer)
    return render_template(load_template(name), bindings)


def render_description_prompt(task_prompt: str, tool: ToolContext, mode: PredictionMode) -> str:
    bindings: dict[str, object] = {"model_name": tool.tool_id, "prompt": task_prompt}
    if mode.tag is Mode.TOOLMEM:
        if tool.memory is None:
            raise InvalidArgument(f"toolmem mode needs a memory for {tool.tool_id}")
        bindings["current_memory"] = format_memory_context(tool, task_prompt, mode.k_infer)
    elif mode.tag is Mode.FEWSHOT:
        bindings["current_memory"] = tool.overview
        bindings["few_shot_memory"] = _format_image_examples(_shots(tool, task_prompt, mode))
    return render_template(load_template(f"image_description_{mode.name}"), bindings)


def predict_score(
    task_prompt: str,
    rubric: str,
    tool: ToolContext,
    mode: PredictionMode,
    gateway: Gateway,
    task_id: str = "",
    image_ref: str | None = None,
) -> PredictionRecord:
    """Ask for a 1-5 score; an unparseable answer is re-asked once, then fails."""
    prompt = render_score_prompt(task_prompt, rubric, tool, mode)
    request = gateway.request(prompt, image_ref)
    raw = ""
    for attempt in (1, 2):
        raw = gateway.complete(request)
        try:
            score, clamped = parse_score_flagged(raw)
        except UnparseableScore:
            log.warning("task %s/%s: unparseable score (attempt %d): %r", task_id, tool.tool_id, attempt, raw[:80])
            continue
        return PredictionRecord(task_id, tool.tool_id, mode.name, score, raw, clamped=clamped, prompt=prompt)
    raise PredictionError(f"unparseable score for task {task_id!r} on {tool.tool_id}: {raw[:80]!r}", task_id)


def predict_description(
    task_prompt: str,
    tool: ToolContext,
    mode: PredictionMode,
    gateway: Gateway,
    task_id: str = "",
) -> DescriptionResult:
    prompt = render_description_prompt(task_prompt, tool, mode)
    text = gateway.ask(prompt).strip()
    if not text:
        raise PredictionError(f"empty description for task {task_id!r} on {tool.tool_id}", task_id)
    words = text.split()
    truncated = len(words) > MAX_DESCRIPTION_WORDS
    if truncated:
        text = " ".join(words[:MAX_DESCRIPTION_WORDS])
    return DescriptionResult(task_id, tool.tool_id, mode.name, text, truncated, len(words))


def compare_scores(score_a: int, score_b: int) -> str:
    if score_a > score_b:
        return "A"
    if score_b > score_a:
        return "B"
    return "Tie"


def select_tool(
    task_prompt: str,
    rubric: str,
    tool_a: ToolContext,
    tool_b: ToolContext,
    mode: PredictionMode,
    gateway: Gateway,
    task_id: str = "",
) -> Selection:
    try:
        rec_a = predict_score(task_prompt, rubric, tool_a, mode, gateway, task_id)
        rec_b = predict_score(task_prompt, rubric, tool_b, mode, gateway, task_id)
    except PredictionError as exc:
        raise SelectionError(f"task {task_id!r}: {exc}") from exc
    return Selection(compare_scores(rec_a.predicted_score, rec_b.predicted_score), rec_a, rec_b)
