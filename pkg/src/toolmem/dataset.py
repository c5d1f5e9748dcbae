"""Benchmark records and their two input schemas.

Text-benchmark lines (one task, several tools)::

    {"task_id": "t1", "system_prompt": "...", "input": "...", "rubric": "...",
     "responses": {"<tool>": {"response": "...", "score": 4, "feedback": "..."}}}

``score`` is the judge score and becomes the ground truth.

Image-benchmark lines::

    {"task_id": "p1", "prompt": "...", "images": {"<tool>": "<locator>"},
     "ratings": {"<tool>": [r1, r2, r3]}, "feedback": {"<tool>": "..."}}

The first rater's score is the ground truth. Either schema may carry a
``"split": "train" | "test"`` key. Lines that already have ``tool_id`` are read
as normalized records.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

from .errors import InvalidArgument, ParseError, SchemaError

# The five-point alignment scale used as the rubric for image tools.
IMAGE_RUBRIC = (
    "1 (Does not match at all); 2 (Has significant discrepancies); "
    "3 (Has several minor discrepancies); 4 (Has a few minor discrepancies); 5 (Matches exactly)"
)


@dataclass(frozen=True)
class DatasetRecord:
    task_id: str
    tool_id: str
    task_prompt: str
    rubric: str
    solution: str
    ground_truth_score: int
    feedback: str | None = None
    split: str | None = None
    modality: str = "text"

    def __post_init__(self) -> None:
        if isinstance(self.ground_truth_score, bool) or self.ground_truth_score not in (1, 2, 3, 4, 5):
            raise InvalidArgument(f"{self.task_id}/{self.tool_id}: score {self.ground_truth_score!r} not in 1..5")
        if self.split not in (None, "train", "test"):
            raise InvalidArgument(f"{self.task_id}: split must be train or test")


def _text_records(raw: dict, lineno: int) -> list[DatasetRecord]:
    try:
        task_id = str(raw["task_id"])
        user_input = raw["input"]
        rubric = raw["rubric"]
        responses = raw["responses"]
    except KeyError as exc:
        raise SchemaError(f"line {lineno}: missing key {exc}") from None
    system = raw.get("system_prompt") or ""
    prompt = f"{system}\n\n{user_input}" if system else user_input
    out = []
    for tool_id, resp in sorted(responses.items()):
        try:
            out.append(DatasetRecord(
                task_id, tool_id, prompt, rubric, resp["response"], int(resp["score"]),
                resp.get("feedback"), raw.get("split"), "text",
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"line {lineno}: bad response for {tool_id}: {exc}") from None
    return out


def _image_records(raw: dict, lineno: int) -> list[DatasetRecord]:
    try:
        task_id = str(raw["task_id"])
        prompt = raw["prompt"]
        images = raw["images"]
        ratings = raw["ratings"]
    except KeyError as exc:
        raise SchemaError(f"line {lineno}: missing key {exc}") from None
    feedback = raw.get("feedback") or {}
    out = []
    for tool_id, locator in sorted(images.items()):
        scores = ratings.get(tool_id)
        if not scores:
            raise SchemaError(f"line {lineno}: no ratings for {tool_id}")
        try:
            out.append(DatasetRecord(
                task_id, tool_id, prompt, raw.get("rubric", IMAGE_RUBRIC), locator, int(scores[0]),
                feedback.get(tool_id), raw.get("split"), "image",
            ))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"line {lineno}: bad rating for {tool_id}: {exc}") from None
    return out


def parse_records(lines: Iterable[str]) -> list[DatasetRecord]:
    records: list[DatasetRecord] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record ({exc.msg})", line=lineno) from None
        if not isinstance(raw, dict):
            raise ParseError("record is not an object", line=lineno)
        try:
            if "tool_id" in raw:
                records.append(DatasetRecord(**raw))
            elif "responses" in raw:
                records.extend(_text_records(raw, lineno))
            elif "images" in raw:
                records.extend(_image_records(raw, lineno))
            else:
                raise SchemaError(f"line {lineno}: unrecognized record schema")
        except (TypeError, InvalidArgument) as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    seen = set()
    for r in records:
        key = (r.task_id, r.tool_id)
        if key in seen:
            raise SchemaError(f"duplicate record for task {r.task_id!r}, tool {r.tool_id!r}")
        seen.add(key)
    return sorted(records, key=lambda r: (r.task_id, r.tool_id))


def load_dataset(path: str | os.PathLike) -> list[DatasetRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh)


def dump_records(records: Iterable[DatasetRecord]) -> str:
    return "".join(json.dumps(asdict(r), ensure_ascii=False) + "\n" for r in records)


def split_dataset(
    records: Sequence[DatasetRecord], seed: int, train_n: int, test_n: int
) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Sample disjoint train/test task sets; every tool's record for a task lands together."""
    task_ids = sorted({r.task_id for r in records})
    if train_n < 0 or test_n < 0 or train_n + test_n > len(task_ids):
        raise InvalidArgument(f"cannot draw {train_n}+{test_n} tasks from {len(task_ids)}")
    chosen = random.Random(seed).sample(task_ids, train_n + test_n)
    train_ids = set(chosen[:train_n])
    test_ids = set(chosen[train_n:])
    train = [replace(r, split="train") for r in records if r.task_id in train_ids]
    test = [replace(r, split="test") for r in records if r.task_id in test_ids]
    return train, test


def tools_of(records: Iterable[DatasetRecord]) -> list[str]:
    return sorted({r.tool_id for r in records})
