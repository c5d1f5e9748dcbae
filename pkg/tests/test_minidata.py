"""Cross-check the frozen mini-dataset report against numbers derived from the data alone."""

import json
import math
from collections import defaultdict

import pytest

import oracles
from conftest import GOLDEN
from toolmem.dataset import load_dataset

TOPICS = ("arithmetic", "python", "poem", "history", "translate", "summarize")


def topic(text):
    return next(t for t in TOPICS if t in text.lower())


def golden_rows(kind):
    path = GOLDEN / "minidata" / "reports" / "report.jsonl"
    return [r for r in map(json.loads, path.read_text().splitlines()) if r["kind"] == kind]


@pytest.mark.parametrize("tool", ["alpha", "beta"])
def test_generic_and_toolmem_rows(minidata, tool):
    recs = [r for r in load_dataset(minidata) if r.tool_id == tool]
    by_topic = defaultdict(list)
    for r in recs:
        if r.split == "train":
            by_topic[topic(r.task_prompt)].append(r.ground_truth_score)
    test = sorted((r for r in recs if r.split == "test"), key=lambda r: r.task_id)
    truth = [r.ground_truth_score for r in test]
    # the synthetic model rounds the per-topic training mean half up
    toolmem = [math.floor(sum(by_topic[topic(r.task_prompt)]) / len(by_topic[topic(r.task_prompt)]) + 0.5)
               for r in test]
    rows = {r["mode"]: r for r in golden_rows("score") if r["tool_id"] == tool}
    assert rows["generic"]["mae"] == pytest.approx(oracles.mae([3] * len(truth), truth), abs=1e-12)
    assert rows["generic"]["pearson"] is None
    assert rows["toolmem"]["mae"] == pytest.approx(oracles.mae(toolmem, truth), abs=1e-12)
    assert rows["toolmem"]["rmse"] == pytest.approx(oracles.rmse(toolmem, truth), abs=1e-12)
    assert rows["toolmem"]["pearson"] == pytest.approx(oracles.pearson(toolmem, truth), abs=1e-12)


def test_generic_selection_is_all_ties():
    row = next(r for r in golden_rows("selection") if r["mode"] == "generic")
    assert row["acc"] == 0 and row["f1_lt"] == 0 and row["f1_gt"] == 0
