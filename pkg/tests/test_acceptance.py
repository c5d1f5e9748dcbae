"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Lines are printed as each criterion finishes and repeated in the pytest
terminal summary under "acceptance criteria".
"""

import itertools
import json
import os
import random
import time
from contextlib import contextmanager

import pytest

import oracles
from conftest import ACCEPTANCE_LINES, GOLDEN, echo_memory, memory_with
from pipeline import write_oracle_fixtures
from prompt_bindings import BINDINGS
from toolmem.builder import Experience, build_memory, induce_and_update, leading_category
from toolmem.cli import main
from toolmem.config import RunConfig
from toolmem.dataset import load_dataset
from toolmem.errors import ModelError, TransportError
from toolmem.gateway import TEMPLATE_NAMES, Gateway, MockBackend, RemoteBackend, load_template, render_template
from toolmem.harness import Harness, mode_from
from toolmem.memory import CATEGORIES, create_tool_memory, dumps_memory
from toolmem.metrics import mae, pearson, rmse, selection_metrics
from toolmem.retrieval import HashEmbedder, MemoryIndex

# read before the autouse fixture scrubs TOOLMEM_* from the environment
LIVE_KEY = os.environ.get("TOOLMEM_API_KEY")
LIVE_URL = os.environ.get("TOOLMEM_BASE_URL", "https://api.openai.com/v1")


@contextmanager
def criterion(name, budget):
    """Time the block, enforce the budget, and record one result line."""
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"FAIL  {name}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {extra}{', ' if extra else ''}{elapsed:.2f}s < {budget}s"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_metric_oracle_suite():
    with criterion("metric oracle suite", 5) as d:
        rng = random.Random(20240501)
        worst = 0.0
        for i in range(1000):
            n = rng.randint(2, 60)
            if i % 2:
                p = [rng.randint(1, 5) for _ in range(n)]
                t = [rng.randint(1, 5) for _ in range(n)]
            else:
                p = [rng.uniform(-10, 10) for _ in range(n)]
                t = [rng.uniform(-10, 10) for _ in range(n)]
            for ours, ref in ((mae(p, t), oracles.mae(p, t)), (rmse(p, t), oracles.rmse(p, t))):
                worst = max(worst, abs(ours - ref))
            ours, ref = pearson(p, t), oracles.pearson(p, t)
            assert (ours is None) == (ref is None)
            if ref is not None:
                worst = max(worst, abs(ours - ref))
        assert worst <= 1e-9, worst
        assert abs(mae([1, 2, 3], [2, 2, 4]) - 0.6667) <= 1e-4
        assert abs(rmse([1, 2, 3], [2, 2, 4]) - 0.8165) <= 1e-4
        assert abs(pearson([1, 2, 3], [2, 2, 4]) - 0.8660) <= 1e-4
        d["vectors"] = 1000
        d["max_abs_err"] = f"{worst:.1e}"


def test_selection_metric_enumeration():
    with criterion("selection-metric enumeration", 10) as d:
        def same(pairs):
            m = selection_metrics(pairs)
            assert (m.f1_lt, m.f1_gt, m.acc, m.d_size) == oracles.selection(pairs), pairs

        tuples = list(itertools.product(range(1, 6), repeat=4))
        for t in tuples:
            same([t])
        rng = random.Random(7)
        for _ in range(10_000):
            same([tuple(rng.randint(1, 5) for _ in range(4)) for _ in range(rng.randint(0, 20))])
        m = selection_metrics([(3, 4, 2, 5), (5, 2, 4, 4), (4, 4, 3, 3), (2, 3, 4, 2)])
        assert (m.d_size, round(m.f1_lt, 4), m.f1_gt, round(m.acc, 4)) == (3, 0.6667, 0, 0.3333)
        d["singletons"] = len(tuples)
        d["random_lists"] = 10_000


VOCAB = "red blue cat dog count text render face hand sky tree car word sign birds water light".split()


def test_retrieval_correctness():
    with criterion("retrieval correctness", 10) as d:
        rng = random.Random(99)
        emb = HashEmbedder()
        hits_checked = 0
        for trial in range(500):
            n = rng.randint(1, 50)
            k = rng.randint(1, 24)
            texts = {c: [] for c in CATEGORIES}
            for i in range(n):
                c = rng.choice(CATEGORIES)
                words = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 6)))
                texts[c].append(f"{c.label} at {words} {i}.")
            mem = memory_with(f"tool{trial}", texts)
            index = MemoryIndex(emb)
            index.sync(mem)
            query = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 5)))
            qv = emb.embed(query).tolist()
            for c in CATEGORIES:
                bucket = mem.entries(c)
                hits = index.retrieve_top_k(query, mem.tool_id, c, k)
                ref = sorted((oracles.cosine_distance(qv, emb.embed(e.text).tolist()), e.entry_id) for e in bucket)
                assert len(hits) == min(k, len(bucket))
                for h, (rd, _) in zip(hits, ref):
                    assert h.entry.category is c
                    assert abs(h.distance - rd) <= 1e-9
                dists = [h.distance for h in hits]
                assert all(b >= a - 1e-12 for a, b in zip(dists, dists[1:]))
                # ids agree wherever the reference order is not a float-level tie
                for j, h in enumerate(hits):
                    neighbours = [rd for rd, _ in ref[max(0, j - 1): j + 2]]
                    if all(abs(x - ref[j][0]) > 1e-9 for x in neighbours if x is not ref[j][0]):
                        assert h.entry.entry_id == ref[j][1]
                hits_checked += len(hits)
            probe = rng.choice(mem.entries())
            top = index.retrieve_top_k(probe.text, mem.tool_id, probe.category, 1)[0]
            assert top.distance <= 1e-12
        d["buckets"] = 500
        d["hits"] = hits_checked


PHRASES = ("Proficient at", "Good at", "Bad at", "Poor at", "Weak at")


def _random_refiner(rng):
    def fn(req):
        if rng.random() < 0.98:
            kept = [s for s in echo_memory(req).splitlines() if rng.random() < 0.97]
        else:
            kept = []
        new = [f"{rng.choice(PHRASES)} {' '.join(rng.sample(VOCAB, 3))}." for _ in range(rng.randint(0, 3))]
        junk = ["The model is interesting."] if rng.random() < 0.2 else []
        lines = kept + new + junk
        if not kept and not new:
            lines = [f"Good at {rng.choice(VOCAB)}."]
        return "\n".join(lines)

    return fn


def test_memory_update_invariants():
    with criterion("memory-update invariants", 30) as d:
        index = MemoryIndex(HashEmbedder())

        def exp(i, rng=None):
            words = " ".join((rng or random).sample(VOCAB, 4)) if rng else f"task {i}"
            return Experience(f"e{i}", "t", words, "sol", 1 + i % 5, "rubric", "feedback")

        # echo fixed point
        mem = memory_with("t", {c: [f"{c.label} at skill {i}." for i in range(3)] for c in CATEGORIES})
        out = induce_and_update(mem, exp(0), index, Gateway(MockBackend(responder=echo_memory)))
        assert out.memory.version == mem.version + 1
        assert all([e.text for e in out.memory.entries(c)] == [e.text for e in mem.entries(c)] for c in CATEGORIES)
        assert build_memory([exp(i) for i in range(7)], "t", "o", index,
                            Gateway(MockBackend(responder=echo_memory))).memory.version == 7

        # 200-step randomized build: category-phrase consistency and frame property at every step
        rng = random.Random(5)
        gw = Gateway(MockBackend(responder=_random_refiner(rng)))
        probe = MemoryIndex(HashEmbedder())
        mem = create_tool_memory("t", "A large language model")
        faults = framed = 0
        for step in range(200):
            e = exp(step, rng)
            probe.sync(mem)
            retrieved = {h.entry.entry_id for hs in probe.retrieve_all_categories(e.task_prompt, "t", 6).values()
                         for h in hs}
            before = dumps_memory(mem)
            if rng.random() < 0.1:
                faults += 1
                err = rng.choice([TransportError("reset"), ModelError("refused")])

                def boom(req, err=err):
                    raise err

                with pytest.raises(type(err)):
                    induce_and_update(mem, e, index, Gateway(MockBackend(responder=boom), sleep=lambda s: None))
                assert dumps_memory(mem) == before
                continue
            new = induce_and_update(mem, e, index, gw, k_build=6).memory
            assert dumps_memory(mem) == before
            untouched = [entry for entry in mem if entry.entry_id not in retrieved]
            for entry in untouched:
                assert new.get(entry.entry_id) == entry
            framed += bool(untouched)
            survivors = {x.entry_id for x in mem} & {x.entry_id for x in new}
            assert survivors == {x.entry_id for x in mem} - retrieved
            for c in CATEGORIES:
                for entry in new.entries(c):
                    assert leading_category(entry.text) is c, entry.text
            assert new.version == mem.version + 1
            mem = new
        d["steps"] = 200
        d["faults"] = faults
        d["steps_with_untouched_entries"] = framed
        d["final_entries"] = len(mem)


def test_prompt_fidelity():
    with criterion("prompt fidelity", 5) as d:
        for name in TEMPLATE_NAMES:
            text = render_template(load_template(name), BINDINGS[name])
            assert (GOLDEN / "prompts" / f"{name}.txt").read_bytes() == text.encode("utf-8"), name
        joined = {n: render_template(load_template(n), BINDINGS[n]) for n in TEMPLATE_NAMES}
        assert all("Return a single number only" in joined[n] for n in TEMPLATE_NAMES if "_score_" in n)
        assert all("no more than 50 English words" in joined[n] for n in TEMPLATE_NAMES if "description" in n)
        assert "output ONLY the updated overall memory" in joined["memory_refinement"]
        d["templates"] = len(TEMPLATE_NAMES)


GOLDEN_RUN = [
    "memory/alpha.memory.jsonl", "memory/beta.memory.jsonl",
    "memory/alpha.build.jsonl", "memory/beta.build.jsonl",
    "reports/report.txt", "reports/report.jsonl",
    "reports/ablation.txt", "reports/ablation.jsonl",
    *[f"reports/predictions/{t}.{m}.jsonl" for t in ("alpha", "beta") for m in ("generic", "fewshot", "toolmem")],
    *[f"reports/selections/alpha__beta.{m}.jsonl" for m in ("generic", "fewshot", "toolmem")],
]


def test_end_to_end_hermetic_run(tmp_path, monkeypatch, minidata, minifixtures, request):
    update = request.config.getoption("--update-golden")
    with criterion("end-to-end hermetic run", 60) as d:
        monkeypatch.chdir(tmp_path)
        c = ["--dataset", str(minidata), "--fixtures", str(minifixtures)]
        assert main(["build", *c]) == 0
        for tool in ("alpha", "beta"):
            for mode in ("generic", "fewshot", "toolmem"):
                assert main(["predict", *c, "--tool", tool, "--mode", mode]) == 0
        for mode in ("generic", "fewshot", "toolmem"):
            assert main(["select", *c, "--tool-a", "alpha", "--tool-b", "beta", "--mode", mode]) == 0
        assert main(["eval", *c]) == 0
        assert main(["ablate", *c, "--k", "0,6,12,18,24"]) == 0
        for rel in GOLDEN_RUN:
            golden = GOLDEN / "minidata" / rel
            if update:
                golden.parent.mkdir(parents=True, exist_ok=True)
                golden.write_bytes((tmp_path / rel).read_bytes())
            assert (tmp_path / rel).read_bytes() == golden.read_bytes(), rel
        assert len((tmp_path / "reports/ablation.jsonl").read_text().splitlines()) == 10

        # perfect-oracle fixtures
        oracle = write_oracle_fixtures(minidata, minifixtures, tmp_path / "oracle.jsonl", tmp_path / "oracle-mem")
        assert main(["eval", *c[:2], "--fixtures", str(oracle), "--report-dir", "oracle",
                     "--memory-dir", "oracle-mem"]) == 0
        records = [json.loads(x) for x in (tmp_path / "oracle/report.jsonl").read_text().splitlines()]
        scores = [r for r in records if r["kind"] == "score"]
        selections = [r for r in records if r["kind"] == "selection"]
        assert len(scores) == 6 and len(selections) == 3
        assert all(r["mae"] == 0 and r["rmse"] == 0 for r in scores)
        assert all(r["acc"] == 1 and r["d_size"] > 0 for r in selections)
        d["golden_files"] = len(GOLDEN_RUN)
        d["oracle_mae"] = 0


def test_defaults_audit(tmp_path, monkeypatch, capsys):
    with criterion("defaults audit", 5) as d:
        monkeypatch.chdir(tmp_path)
        assert main(["config"]) == 0
        dump = json.loads(capsys.readouterr().out)
        expected = {"temperature": 0.0, "sample_count": 1, "k_build": 6, "k_infer": 12, "shot_count": 12}
        assert {k: dump[k] for k in expected} == expected
        assert dump["model_id"] == "gpt-4o-mini-2024-07-18"
        req = Gateway(MockBackend()).request("x")
        assert (req.temperature, req.sample_count) == (0.0, 1)
        d.update(expected)


@pytest.mark.skipif(not LIVE_KEY, reason="TOOLMEM_API_KEY not set; live smoke run skipped")
def test_live_smoke(tmp_path, monkeypatch, minidata):
    monkeypatch.setenv("TOOLMEM_API_KEY", LIVE_KEY)
    with criterion("live smoke run", 600) as d:
        config = RunConfig(backend="remote", base_url=LIVE_URL, dataset=str(minidata),
                           memory_dir=str(tmp_path / "mem"), report_dir=str(tmp_path / "rep"))
        records = load_dataset(minidata)
        test_ids = sorted({r.task_id for r in records if r.split == "test"})[:10]
        subset = [r for r in records if r.split == "train" or r.task_id in test_ids]
        gw = Gateway(RemoteBackend(LIVE_URL), model_id=config.model_id)
        harness = Harness(subset, config, gw, persist=False)
        from toolmem.harness import EvalReport
        from toolmem.report import render_text

        report = EvalReport("minidata-live")
        for mode in ("generic", "fewshot"):
            sec = harness.score_eval("alpha", mode_from(mode, config))
            assert sec.excluded == 0 and sec.n == 10
            report.scores.append(sec)
        text = render_text(report)
        assert text.startswith("dataset: minidata-live")
        d["tasks"] = 10
