"""Evaluation runs: score prediction, pairwise selection, top-k ablation."""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from .builder import BuildResult, Experience, build_memory, render_refinement_prompt
from .config import RunConfig
from .dataset import DatasetRecord, split_dataset, tools_of
from .errors import InvalidArgument, PredictionError, SelectionError, ToolMemError
from .gateway import Gateway, MockBackend, RemoteBackend, TokenBucket, load_template, render_template
from .memory import ToolMemory, load_memory, save_memory
from .metrics import mae, pearson, rmse, selection_metrics
from .predictor import (
    OVERVIEWS,
    DescriptionResult,
    ExamplePool,
    Mode,
    PredictionMode,
    PredictionRecord,
    ToolContext,
    TrainingExample,
    predict_description,
    predict_score,
    render_score_prompt,
    select_tool,
)
from .retrieval import Embedder, HashEmbedder, MemoryIndex, RemoteEmbedder
from .scorer import AlignmentScorer

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class MetricError(ToolMemError):
    """No usable prediction was left to compute a metric on."""


# -- factories -------------------------------------------------------------------


def make_embedder(config: RunConfig) -> Embedder:
    if config.embedder == "hash":
        return HashEmbedder(config.embedding_dim)
    return RemoteEmbedder(config.base_url, config.embedding_model)


def make_gateway(config: RunConfig) -> Gateway:
    if config.backend == "mock":
        if config.fixtures is None:
            raise InvalidArgument("the mock backend needs a fixtures file")
        backend = MockBackend.from_file(config.fixtures)
    else:
        limiter = TokenBucket(config.rate_limit, capacity=config.jobs) if config.rate_limit else None
        backend = RemoteBackend(config.base_url, limiter=limiter)
    return Gateway(
        backend,
        model_id=config.model_id,
        temperature=config.temperature,
        sample_count=config.sample_count,
        max_attempts=config.max_attempts,
        backoff=config.backoff,
    )


def mode_from(name: str | Mode, config: RunConfig, k_infer: int | None = None) -> PredictionMode:
    tag = name if isinstance(name, Mode) else Mode(name.lower())
    return PredictionMode(tag, config.k_infer if k_infer is None else k_infer, config.shot_count)


def safe_name(tool_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", tool_id)


def memory_paths(memory_dir: str | os.PathLike, tool_id: str) -> dict[str, Path]:
    base = Path(memory_dir) / safe_name(tool_id)
    return {
        "memory": base.with_suffix(".memory.jsonl"),
        "log": base.with_suffix(".build.jsonl"),
        "embeddings": base.with_suffix(".embeddings.npz"),
    }


def experience_from(record: DatasetRecord) -> Experience:
    return Experience(
        experience_id=record.task_id,
        tool_id=record.tool_id,
        task_prompt=record.task_prompt,
        solution=record.solution,
        score=record.ground_truth_score,
        rubric=record.rubric,
        feedback=record.feedback,
        modality=record.modality,
    )


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- report sections ---------------------------------------------------------------


@dataclass
class ScoreSection:
    tool_id: str
    mode: str
    k_infer: int | None
    n: int
    excluded: int
    mae: float
    rmse: float
    pearson: float | None
    predictions: list[PredictionRecord] = field(default_factory=list, repr=False)
    errors: list[dict] = field(default_factory=list, repr=False)


@dataclass
class SelectionRow:
    task_id: str
    truth_a: int
    truth_b: int
    pred_a: int
    pred_b: int
    choice: str


@dataclass
class SelectionSection:
    tool_a: str
    tool_b: str
    mode: str
    n: int
    excluded: int
    d_size: int
    ties: int
    f1_lt: float
    f1_gt: float
    acc: float | None
    rows: list[SelectionRow] = field(default_factory=list, repr=False)


@dataclass
class AblationRow:
    tool_id: str
    k: int
    n: int
    excluded: int
    mae: float
    rmse: float
    pearson: float | None


@dataclass
class DescriptionSection:
    tool_id: str
    mode: str
    n: int
    excluded: int
    truncated: int
    mean_alignment: float | None
    results: list[DescriptionResult] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    dataset: str
    scores: list[ScoreSection] = field(default_factory=list)
    selections: list[SelectionSection] = field(default_factory=list)
    ablations: list[AblationRow] = field(default_factory=list)
    descriptions: list[DescriptionSection] = field(default_factory=list)


# -- harness -------------------------------------------------------------------------


class Harness:
    """Holds one dataset split, one embedder and the per-tool memories for a run.

    Memories are read-only once built; all predictions in a run see the same
    snapshot.
    """

    def __init__(
        self,
        records: Sequence[DatasetRecord],
        config: RunConfig,
        gateway: Gateway,
        embedder: Embedder | None = None,
        persist: bool = True,
    ) -> None:
        self.config = config
        self.gateway = gateway
        self.embedder = embedder or make_embedder(config)
        self.index = MemoryIndex(self.embedder)
        self.persist = persist
        self.train, self.test = self._split(records)
        self.tools = tools_of(records)
        self._modality = {r.tool_id: r.modality for r in records}
        self._memories: dict[str, ToolMemory] = {}
        self._pools: dict[str, ExamplePool] = {}
        self.build_results: dict[str, BuildResult] = {}

    def _split(self, records: Sequence[DatasetRecord]) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
        cfg = self.config
        if cfg.train_n is not None or cfg.test_n is not None:
            if cfg.train_n is None or cfg.test_n is None:
                raise InvalidArgument("train_n and test_n must be given together")
            return split_dataset(records, cfg.seed, cfg.train_n, cfg.test_n)
        splits = {r.split for r in records}
        if None in splits:
            raise InvalidArgument("dataset records carry no split; set train_n and test_n")
        train = [r for r in records if r.split == "train"]
        test = [r for r in records if r.split == "test"]
        overlap = {r.task_id for r in train} & {r.task_id for r in test}
        if overlap:
            raise InvalidArgument(f"tasks in both splits: {sorted(overlap)[:5]}")
        return train, test

    def modality(self, tool_id: str) -> str:
        try:
            return self._modality[tool_id]
        except KeyError:
            raise InvalidArgument(f"tool {tool_id!r} is not in the dataset") from None

    def train_records(self, tool_id: str) -> list[DatasetRecord]:
        return [r for r in self.train if r.tool_id == tool_id]

    def test_records(self, tool_id: str) -> list[DatasetRecord]:
        return [r for r in self.test if r.tool_id == tool_id]

    # memory ------------------------------------------------------------------------

    def build(self, tool_id: str, on_step=None) -> BuildResult:
        experiences = [experience_from(r) for r in self.train_records(tool_id)]
        result = build_memory(
            experiences, tool_id, OVERVIEWS[self.modality(tool_id)], self.index, self.gateway,
            k_build=self.config.k_build, on_step=on_step,
        )
        self._memories[tool_id] = result.memory
        self.build_results[tool_id] = result
        return result

    def save(self, tool_id: str) -> dict[str, Path]:
        paths = memory_paths(self.config.memory_dir, tool_id)
        save_memory(self._memories[tool_id], paths["memory"])
        if tool_id in self.build_results:
            self.build_results[tool_id].write_log(paths["log"])
        self.index.save_cache(paths["embeddings"], tool_id)
        return paths

    def memory(self, tool_id: str) -> ToolMemory:
        if tool_id in self._memories:
            return self._memories[tool_id]
        paths = memory_paths(self.config.memory_dir, tool_id)
        if self.persist and paths["memory"].exists() and not self.config.force:
            self.index.load_cache(paths["embeddings"])
            memory = load_memory(paths["memory"])
            if memory.tool_id != tool_id:
                raise InvalidArgument(f"{paths['memory']} holds memory for {memory.tool_id!r}")
            self._memories[tool_id] = memory
            return memory
        self.build(tool_id)
        if self.persist:
            self.save(tool_id)
        return self._memories[tool_id]

    def set_memory(self, memory: ToolMemory) -> None:
        self._memories[memory.tool_id] = memory

    def pool(self, tool_id: str) -> ExamplePool:
        if tool_id not in self._pools:
            examples = [
                TrainingExample(r.task_id, r.task_prompt, r.rubric, r.ground_truth_score)
                for r in self.train_records(tool_id)
            ]
            self._pools[tool_id] = ExamplePool(examples, self.embedder)
        return self._pools[tool_id]

    def context(self, tool_id: str, mode: PredictionMode) -> ToolContext:
        modality = self.modality(tool_id)
        if mode.tag is Mode.TOOLMEM:
            return ToolContext(tool_id, modality, memory=self.memory(tool_id), index=self.index)
        if mode.tag is Mode.FEWSHOT:
            return ToolContext(tool_id, modality, pool=self.pool(tool_id))
        return ToolContext(tool_id, modality)

    # score prediction -----------------------------------------------------------------

    def predict(self, tool_id: str, mode: PredictionMode) -> tuple[list[PredictionRecord], list[dict]]:
        ctx = self.context(tool_id, mode)
        records = self.test_records(tool_id)

        def one(rec: DatasetRecord):
            try:
                pred = predict_score(rec.task_prompt, rec.rubric, ctx, mode, self.gateway, rec.task_id)
            except PredictionError as exc:
                return {"task_id": rec.task_id, "tool_id": tool_id, "mode": mode.name, "error": str(exc)}
            pred.ground_truth = rec.ground_truth_score
            return pred

        results = parallel_map(one, records, self.config.jobs)
        preds = [r for r in results if isinstance(r, PredictionRecord)]
        errors = [r for r in results if isinstance(r, dict)]
        return preds, errors

    def score_eval(self, tool_id: str, mode: PredictionMode) -> ScoreSection:
        preds, errors = self.predict(tool_id, mode)
        preds.sort(key=lambda p: p.task_id)
        if not preds:
            raise MetricError(f"{tool_id}/{mode.name}: every prediction failed ({len(errors)} errors)")
        p = [x.predicted_score for x in preds]
        t = [x.ground_truth for x in preds]
        return ScoreSection(
            tool_id, mode.name, mode.k_infer if mode.tag is Mode.TOOLMEM else None,
            len(preds), len(errors), mae(p, t), rmse(p, t), pearson(p, t) if len(p) >= 2 else None,
            preds, errors,
        )

    # selection -------------------------------------------------------------------------

    def shared_test_tasks(self, tool_a: str, tool_b: str) -> list[tuple[DatasetRecord, DatasetRecord]]:
        a = {r.task_id: r for r in self.test_records(tool_a)}
        b = {r.task_id: r for r in self.test_records(tool_b)}
        return [(a[t], b[t]) for t in sorted(a.keys() & b.keys())]

    def selection_eval(self, tool_a: str, tool_b: str, mode: PredictionMode) -> SelectionSection:
        if tool_a == tool_b:
            raise InvalidArgument("a selection pair needs two different tools")
        ctx_a = self.context(tool_a, mode)
        ctx_b = self.context(tool_b, mode)
        pairs = self.shared_test_tasks(tool_a, tool_b)

        def one(pair):
            ra, rb = pair
            try:
                sel = select_tool(ra.task_prompt, ra.rubric, ctx_a, ctx_b, mode, self.gateway, ra.task_id)
            except SelectionError as exc:
                log.warning("%s", exc)
                return None
            return SelectionRow(ra.task_id, ra.ground_truth_score, rb.ground_truth_score,
                                sel.score_a, sel.score_b, sel.choice)

        results = parallel_map(one, pairs, self.config.jobs)
        rows = [r for r in results if r is not None]
        m = selection_metrics((r.truth_a, r.truth_b, r.pred_a, r.pred_b) for r in rows)
        ties = sum(1 for r in rows if r.choice == "Tie")
        return SelectionSection(tool_a, tool_b, mode.name, len(rows), len(results) - len(rows),
                                m.d_size, ties, m.f1_lt, m.f1_gt, m.acc, rows)

    # ablation ----------------------------------------------------------------------------

    def ablate(self, tool_id: str, k_values: Iterable[int]) -> list[AblationRow]:
        k_values = list(k_values)
        if not k_values:
            raise InvalidArgument("k_values must be non-empty")
        rows = []
        for k in k_values:
            if k < 0:
                raise InvalidArgument(f"k must be >= 0, got {k}")
            sec = self.score_eval(tool_id, PredictionMode(Mode.TOOLMEM, k, self.config.shot_count))
            rows.append(AblationRow(tool_id, k, sec.n, sec.excluded, sec.mae, sec.rmse, sec.pearson))
        return rows

    # description prediction ----------------------------------------------------------------

    def description_eval(
        self, tool_id: str, mode: PredictionMode, scorer: AlignmentScorer | None = None
    ) -> DescriptionSection:
        ctx = self.context(tool_id, mode)
        records = self.test_records(tool_id)

        def one(rec: DatasetRecord):
            try:
                return predict_description(rec.task_prompt, ctx, mode, self.gateway, rec.task_id)
            except PredictionError as exc:
                log.warning("%s", exc)
                return None

        results = parallel_map(one, records, self.config.jobs)
        kept = [(rec, res) for rec, res in zip(records, results) if res is not None]
        mean = None
        if scorer is not None and kept:
            scores = scorer.score([(rec.solution, res.description) for rec, res in kept])
            mean = sum(scores) / len(scores)
        return DescriptionSection(
            tool_id, mode.name, len(kept), len(records) - len(kept),
            sum(1 for _, r in kept if r.truncated), mean, [r for _, r in kept],
        )

    # dry run ------------------------------------------------------------------------------

    def render_prediction_prompts(self, tool_id: str, mode: PredictionMode) -> list[tuple[str, str]]:
        ctx = self.context(tool_id, mode)
        return [
            (r.task_id, render_score_prompt(r.task_prompt, r.rubric, ctx, mode))
            for r in self.test_records(tool_id)
        ]

    def render_build_prompts(self, tool_id: str) -> list[tuple[str, str]]:
        """Prompts of every build step, each rendered against an empty memory."""
        out = []
        for rec in self.train_records(tool_id):
            exp = experience_from(rec)
            if exp.feedback is None:
                text = render_template(
                    load_template("feedback_generation"), {"prompt": exp.task_prompt, "score": exp.score}
                )
                out.append((f"{rec.task_id}.feedback", text))
                exp = Experience(**{**exp.__dict__, "feedback": "<generated feedback>"})
            out.append((f"{rec.task_id}.refine", render_refinement_prompt(tool_id, "", exp)))
        return out


# -- functional entry points ---------------------------------------------------------------


def run_score_eval(harness: Harness, tool_id: str, mode: PredictionMode) -> ScoreSection:
    return harness.score_eval(tool_id, mode)


def run_selection_eval(harness: Harness, tool_pair: tuple[str, str], mode: PredictionMode) -> SelectionSection:
    return harness.selection_eval(tool_pair[0], tool_pair[1], mode)


def ablate_k(harness: Harness, tool_id: str, k_values: Iterable[int]) -> list[AblationRow]:
    return harness.ablate(tool_id, k_values)
