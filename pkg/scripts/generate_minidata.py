#!/usr/bin/env python3
"""Regenerate the bundled mini-dataset and its mock-backend fixtures.

Two synthetic tools (alpha, beta) answer 60 text tasks drawn from six topics.
Each tool has a fixed quality per topic plus a little seeded noise. A small
rule-based responder stands in for the language model:

* refinement prompts: keep every retrieved statement, and rewrite the one for
  the task's topic with an updated running average;
* generic score prompts: always 3;
* few-shot score prompts: rounded mean score of all shown examples;
* ToolMem score prompts: rounded running average from the matching statement.

Every prompt the pipeline issues (build, all modes, selection, ablation) goes
through a RecordingBackend, and the recorded table is written as fixtures.

    python scripts/generate_minidata.py            # writes src/toolmem/data/
"""

from __future__ import annotations

import argparse
import json
import os
import random
import re
import sys
import tempfile
from pathlib import Path

from toolmem.config import RunConfig
from toolmem.dataset import load_dataset
from toolmem.gateway import CompletionRequest, Gateway, MockBackend, RecordingBackend
from toolmem.harness import Harness, mode_from

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "toolmem" / "data"
ABLATION_KS = (0, 6, 12, 18, 24)

RUBRIC = (
    "1: the response fails the task; 2: mostly wrong; 3: partially correct; "
    "4: correct with minor issues; 5: fully correct and well presented"
)

TOPICS = {
    "arithmetic": [
        "Arithmetic check: compute {a} plus {b} times {c} and show the steps.",
        "Simple arithmetic: what is the remainder when {a}{b} is divided by {c}?",
    ],
    "python": [
        "Write a python function that returns the {a} largest values of a list of {b} numbers.",
        "Fix the python snippet that loops {a} times but prints only {b} lines.",
    ],
    "poem": [
        "Write a short poem about a lighthouse seen {a} times in {b} winters.",
        "Compose a four line poem on the number {a} and the color of rain.",
    ],
    "history": [
        "Summarize in two sentences the history of the {a}th century printing trade.",
        "Explain one cause and one effect of a trade treaty signed {a} years before {b}00 AD in history.",
    ],
    "translate": [
        "Translate into French: 'The {a} boats left the harbor at {b} o'clock.'",
        "Translate into German: 'We need {a} chairs for {b} guests.'",
    ],
    "summarize": [
        "Summarize this note in one line: the meeting moved from room {a} to room {b} at noon.",
        "Summarize the plot of a story where {a} travelers cross {b} rivers.",
    ],
}

QUALITY = {
    "alpha": {"arithmetic": 5, "python": 4, "poem": 2, "history": 3, "translate": 4, "summarize": 1},
    "beta": {"arithmetic": 2, "python": 3, "poem": 5, "history": 4, "translate": 2, "summarize": 4},
}

VERDICT = {
    1: "fails the request",
    2: "is mostly wrong",
    3: "is partially correct",
    4: "is correct with minor issues",
    5: "is fully correct",
}


def topic_of(text: str) -> str | None:
    low = text.lower()
    for topic in TOPICS:
        if topic in low:
            return topic
    return None


# -- dataset -------------------------------------------------------------------------


def make_dataset(seed: int = 7) -> list[dict]:
    rng = random.Random(seed)
    rows = []
    seen = set()
    n = 0
    for topic, templates in TOPICS.items():
        train_slots = 4 if topic in ("arithmetic", "poem") else 3
        for i in range(10):
            n += 1
            prompt = None
            while prompt is None or prompt in seen:
                prompt = templates[i % 2].format(a=rng.randint(2, 19), b=rng.randint(2, 9), c=rng.randint(2, 9))
            seen.add(prompt)
            responses = {}
            for tool, qual in QUALITY.items():
                score = max(1, min(5, qual[topic] + rng.choice((-1, 0, 0, 0, 1))))
                responses[tool] = {
                    "response": f"[{tool}] answer to task {n:02d}",
                    "score": score,
                    "feedback": f"The {topic} answer {VERDICT[score]}.",
                }
            rows.append({
                "task_id": f"t{n:02d}",
                "input": prompt,
                "rubric": RUBRIC,
                "responses": responses,
                "split": "train" if i < train_slots else "test",
            })
    return rows


# -- synthetic responder -------------------------------------------------------------

_STATEMENT = re.compile(r"at (\w+) tasks, averaging ([\d.]+) over (\d+) seen tasks")
_REFINE_MEMORY = re.compile(r'Review the current memory for model \S+:\n    "(.*?)"\n- Input task prompt', re.S)
_REFINE_TASK = re.compile(r'Input task prompt to the tool was:\n    "(.*?)"\n- Tool', re.S)
_REFINE_SCORE = re.compile(r'The score for tool\'s response was:\n    "(\d)"')
_QUERY = re.compile(r'task prompt: "(.*?)"\.\n', re.S)
_SHOT = re.compile(r"Task Prompt: (.*?)\nRubric: .*?\nModel's Score: (\d)", re.S)


def _round(x: float) -> int:
    return max(1, min(5, int(x + 0.5)))


def _phrase(avg: float) -> str:
    if avg >= 4.5:
        return "Proficient at"
    if avg >= 3.5:
        return "Good at"
    if avg >= 2.0:
        return "Bad at"
    return "Poor at"


def refine(prompt: str) -> str:
    memory = _REFINE_MEMORY.search(prompt).group(1)
    topic = topic_of(_REFINE_TASK.search(prompt).group(1))
    score = int(_REFINE_SCORE.search(prompt).group(1))
    out, total, count = [], float(score), 1
    for line in filter(None, (s.strip() for s in memory.splitlines())):
        m = _STATEMENT.search(line)
        if m and m.group(1) == topic:
            total += float(m.group(2)) * int(m.group(3))
            count += int(m.group(3))
        else:
            out.append(line)
    avg = total / count
    out.append(f"{_phrase(avg)} {topic} tasks, averaging {avg:.2f} over {count} seen tasks.")
    return "\n".join(out)


def predict(prompt: str) -> str:
    query = _QUERY.search(prompt).group(1)
    topic = topic_of(query)
    if "Here are some examples" in prompt:
        # plain mean of the shown scores: neighbours are picked by surface
        # similarity, so off-topic examples dilute the estimate
        shots = [int(s) for _, s in _SHOT.findall(prompt)]
        return str(_round(sum(shots) / len(shots)))
    for line in prompt.splitlines():
        m = _STATEMENT.search(line)
        if m and m.group(1) == topic:
            return str(_round(float(m.group(2))))
    return "3"


def synthetic(request: CompletionRequest) -> str:
    prompt = request.prompt
    if "output ONLY the updated overall memory" in prompt:
        return refine(prompt)
    if "Return a single number only" in prompt:
        return predict(prompt)
    raise ValueError("unexpected prompt:\n" + prompt[:200])


# -- driver --------------------------------------------------------------------------


def record(dataset_path: Path, fixtures_path: Path) -> None:
    recorder = RecordingBackend(MockBackend(responder=synthetic))
    with tempfile.TemporaryDirectory() as tmp:
        config = RunConfig(dataset=str(dataset_path), memory_dir=tmp)
        harness = Harness(load_dataset(dataset_path), config, Gateway(recorder), persist=False)
        for tool in harness.tools:
            harness.memory(tool)
        for name in ("generic", "fewshot", "toolmem"):
            mode = mode_from(name, config)
            for tool in harness.tools:
                harness.score_eval(tool, mode)
            harness.selection_eval("alpha", "beta", mode)
        for tool in harness.tools:
            harness.ablate(tool, ABLATION_KS)
    recorder.save(fixtures_path)
    print(f"{len(recorder.records)} fixtures -> {fixtures_path}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    os.environ.setdefault("SOURCE_DATE_EPOCH", "1700000000")
    args.out.mkdir(parents=True, exist_ok=True)
    dataset_path = args.out / "minidata.jsonl"
    with open(dataset_path, "w", encoding="utf-8", newline="\n") as fh:
        for row in make_dataset():
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"dataset -> {dataset_path}")
    record(dataset_path, args.out / "minidata.fixtures.jsonl")
    return 0


if __name__ == "__main__":
    sys.exit(main())
