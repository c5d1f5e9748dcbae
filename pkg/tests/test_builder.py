import json

import pytest

from conftest import B, G, P, W, echo_memory, memory_with
from toolmem.builder import (
    BuildFailed,
    Experience,
    build_memory,
    generate_feedback,
    induce_and_update,
    leading_category,
    parse_memory_text,
)
from toolmem.errors import InvalidArgument, ModelError, RefinementRejected, TransportError
from toolmem.gateway import Gateway, MockBackend
from toolmem.memory import CATEGORIES, create_tool_memory, dumps_memory
from toolmem.retrieval import HashEmbedder, MemoryIndex


def exp(i=1, tool="t", score=3, feedback="fine", prompt=None, modality="text", solution="answer"):
    return Experience(f"e{i}", tool, prompt or f"task number {i}", solution, score, "rubric", feedback, modality)


def gateway(fn):
    return Gateway(MockBackend(responder=fn), sleep=lambda s: None)


@pytest.mark.parametrize("blob, entries, remainder", [
    ("Good at rendering text. Bad at counting objects.",
     [(G, "Good at rendering text."), (B, "Bad at counting objects.")], []),
    ("Poor at negation.", [(W, "Poor at negation.")], []),
    ("weak at rhyme", [(W, "weak at rhyme.")], []),
    ("The model is versatile.", [], ["The model is versatile."]),
    ("", [], []),
    ("- Proficient at code\n- Goodness is relative.", [(P, "Proficient at code.")], ["Goodness is relative."]),
])
def test_parse_memory_text(blob, entries, remainder):
    parsed = parse_memory_text(blob)
    assert parsed.entries == entries
    assert parsed.remainder == remainder


@pytest.mark.parametrize("sentence", ["Good at.", "goodat x.", "Badly at x.", "Not good at x."])
def test_leading_phrase_needs_boundary_and_content(sentence):
    assert leading_category(sentence) is None


def test_experience_validation():
    with pytest.raises(InvalidArgument):
        exp(score=0)
    with pytest.raises(InvalidArgument):
        exp(prompt="   ")


def test_generate_feedback():
    prompts = []

    def fn(req):
        prompts.append(req)
        return "Matches all elements."

    e = exp(score=5, prompt="Three birds on a wire", feedback=None, modality="image", solution="a.png")
    assert generate_feedback(e, gateway(fn)) == "Matches all elements."
    assert "This image scored 5" in prompts[0].prompt
    assert prompts[0].messages[0].image_ref == "a.png"
    with pytest.raises(InvalidArgument):
        generate_feedback(exp(feedback="already"), gateway(fn))


def test_echo_fixed_point():
    mem = memory_with("t", {P: ["Proficient at a."], G: ["Good at b.", "Good at c."], W: ["Poor at d."]})
    index = MemoryIndex(HashEmbedder())
    out = induce_and_update(mem, exp(), index, gateway(echo_memory))
    assert out.memory.version == mem.version + 1
    for c in CATEGORIES:
        assert [e.text for e in out.memory.entries(c)] == [e.text for e in mem.entries(c)]
    assert out.log.removed_count == out.log.added_count == 4
    # sources extended, revision bumped
    assert all(e.source_experience_ids[-1] == "e1" and e.revision == 1 for e in out.memory)


def test_new_sentence_adds_one_entry():
    mem = memory_with("t", {G: ["Good at b."], B: ["Bad at c."]})
    out = induce_and_update(mem, exp(), MemoryIndex(HashEmbedder()),
                            gateway(lambda r: echo_memory(r) + "\nGood at spatial layouts."))
    assert len(out.memory) == len(mem) + 1
    assert "Good at spatial layouts." in [e.text for e in out.memory.entries(G)]


def test_omitted_entries_are_removed_and_remainder_quarantined():
    mem = memory_with("t", {G: ["Good at b."], B: ["Bad at c."]})
    out = induce_and_update(mem, exp(), MemoryIndex(HashEmbedder()),
                            gateway(lambda r: "Good at b. It is fast."))
    assert [e.text for e in out.memory] == ["Good at b."]
    assert out.log.remainder == ["It is fast."]


def test_duplicates_keep_the_first():
    out = induce_and_update(create_tool_memory("t", "o"), exp(), MemoryIndex(HashEmbedder()),
                            gateway(lambda r: "Good at x. Good at x. Bad at x."))
    assert [e.text for e in out.memory] == ["Good at x.", "Bad at x."]


def test_retrieval_scope_with_ten_per_category():
    texts = {c: [f"{c.label} at skill {i} of kind {c.value}." for i in range(10)] for c in CATEGORIES}
    mem = memory_with("t", texts)
    index = MemoryIndex(HashEmbedder())
    out = induce_and_update(mem, exp(), index, gateway(lambda r: "Good at fresh things."), k_build=6)
    assert out.log.retrieved_count == out.log.removed_count == 24
    untouched = [e for e in mem if e.entry_id in {x.entry_id for x in out.memory}]
    assert len(untouched) == 16
    # frame property: the survivors are identical objects by value
    for e in untouched:
        assert out.memory.get(e.entry_id) == e


def test_rejected_output_applies_nothing():
    mem = memory_with("t", {G: ["Good at b."]})
    with pytest.raises(RefinementRejected):
        induce_and_update(mem, exp(), MemoryIndex(HashEmbedder()), gateway(lambda r: "I cannot help."))


def test_empty_output_clears_retrieved():
    mem = memory_with("t", {G: ["Good at b."]})
    out = induce_and_update(mem, exp(), MemoryIndex(HashEmbedder()), gateway(lambda r: ""))
    assert len(out.memory) == 0 and out.memory.version == mem.version + 1


def test_gateway_failure_leaves_memory_and_index_intact():
    mem = memory_with("t", {G: ["Good at b."], B: ["Bad at c."]})
    before = dumps_memory(mem)
    index = MemoryIndex(HashEmbedder())

    def boom(req):
        raise TransportError("down")

    with pytest.raises(TransportError):
        induce_and_update(mem, exp(), index, gateway(boom))
    assert dumps_memory(mem) == before
    assert index.bucket_size("t", G) == 1 and index.bucket_size("t", B) == 1


def test_build_empty_and_echo_versions():
    index = MemoryIndex(HashEmbedder())
    assert build_memory([], "t", "o", index, gateway(echo_memory)).memory.version == 0
    result = build_memory([exp(i) for i in range(5)], "t", "o", index, gateway(echo_memory))
    assert result.memory.version == 5
    assert [s.step for s in result.steps] == [1, 2, 3, 4, 5]


def test_build_generates_missing_feedback():
    def fn(req):
        if "tell me why" in req.prompt:
            return "Looks right."
        assert '"Looks right."' in req.prompt
        return "Good at birds."

    result = build_memory([exp(feedback=None)], "t", "o", MemoryIndex(HashEmbedder()), gateway(fn))
    assert [e.text for e in result.memory] == ["Good at birds."]


def test_build_skips_rejected_steps(tmp_path):
    replies = iter(["Good at a.", "no phrases here", "Good at a. Bad at b."])
    result = build_memory([exp(i) for i in range(3)], "t", "o", MemoryIndex(HashEmbedder()),
                          gateway(lambda r: next(replies)))
    assert [s.status for s in result.steps] == ["ok", "rejected", "ok"]
    assert result.memory.version == 2
    log_path = tmp_path / "build.jsonl"
    result.write_log(log_path)
    rows = [json.loads(x) for x in log_path.read_text().splitlines()]
    assert {"step", "experience_id", "retrieved_count", "added_count", "removed_count",
            "remainder_count"} <= set(rows[0])


def test_build_fails_fast_with_last_snapshot():
    calls = {"n": 0}

    def fn(req):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ModelError("refused")
        return f"Good at thing {calls['n']}."

    with pytest.raises(BuildFailed) as info:
        build_memory([exp(i) for i in range(5)], "t", "o", MemoryIndex(HashEmbedder()), gateway(fn))
    assert info.value.step == 3
    assert info.value.memory.version == 2
    assert len(info.value.steps) == 2


def test_build_rejects_mixed_tools():
    with pytest.raises(InvalidArgument):
        build_memory([exp(tool="other")], "t", "o", MemoryIndex(HashEmbedder()), gateway(echo_memory))
