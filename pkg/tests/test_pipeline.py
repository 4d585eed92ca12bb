import random
from collections import Counter

import pytest

from conftest import cand
from mpnav.alignment import AlignmentConfig, CandidateSet, select_aligned_exhaustive, select_related
from mpnav.clients import AugmentStore, FixtureDetector, FixtureExtractor
from mpnav.errors import ClientUnavailable, InvalidSpanFromClient
from mpnav.instruction import MultiModalInstruction, Setting, VisualPrompt, interleave, validate_instruction
from mpnav.metrics import NavGraph
from mpnav.pipeline import (
    PipelineConfig,
    build_settings,
    explore_positions,
    pre_explore_build,
    run_detection,
    run_extraction,
    run_pipeline,
    sample_augmented,
    write_outputs,
)


class Down:
    def extract(self, instruction):
        raise ClientUnavailable("extractor offline")

    def detect(self, request):
        raise ClientUnavailable("detector offline")


def test_extraction_passes_valid_spans(instr):
    fx = FixtureExtractor({"i1": [{"text": "the sofa", "start": 3, "end": 4}, {"text": "the lamp", "start": 8, "end": 9}]})
    assert [p.text for p in run_extraction(instr, fx)] == ["the sofa", "the lamp"]


def test_extraction_rejects_bad_spans(instr):
    fx = FixtureExtractor({"i1": [{"text": "x", "start": 3, "end": 40}]})
    with pytest.raises(InvalidSpanFromClient):
        run_extraction(instr, fx)
    with pytest.raises(ClientUnavailable):
        run_extraction(instr, Down())


def test_extraction_from_text():
    fx = FixtureExtractor({"": [{"text": "stairs", "start": 3, "end": 3}]})
    assert run_extraction("go up stairs", fx)[0].end == 3


def test_detection_hits_and_misses(instr):
    three = validate_instruction({**instr.to_record(),
                                  "phrases": [{"text": "walk", "start": 1, "end": 1}] + instr.to_record()["phrases"]})
    table = {("i1", i): [cand(0.5, i)] for i in range(3)}
    assert len(run_detection(three.phrases, three.path_node_ids, FixtureDetector(table), "i1").sets) == 3
    del table[("i1", 1)]
    res = run_detection(three.phrases, three.path_node_ids, FixtureDetector(table), "i1")
    assert [s.phrase_index for s in res.sets] == [0, 2] and res.misses == [1]
    assert run_detection([], three.path_node_ids, FixtureDetector(table)).sets == []
    with pytest.raises(ClientUnavailable):
        run_detection(three.phrases, three.path_node_ids, Down())


def test_detection_resolves_nodes(instr):
    table = {("i1", 0): [cand(0.5, 2), cand(0.6, 9), cand(0.7, 0, node="Z")]}
    res = run_detection(instr.phrases[:1], instr.path_node_ids, FixtureDetector(table), "i1")
    (s,) = res.sets
    assert [(c.node_id, c.path_position) for c in s.candidates] == [("C", 2)]


def test_build_settings_single_phrase():
    one = validate_instruction({"id": "s", "tokens": ["find", "the", "sofa"],
                                "phrases": [{"text": "the sofa", "start": 2, "end": 3}], "path": ["A", "B"]})
    out = build_settings(one, [CandidateSet(0, (cand(0.8, 1), cand(0.4, 0)))], PipelineConfig())
    prompts = {s: m.prompts for s, m in out.items()}
    assert prompts[Setting.ALIGNED] == prompts[Setting.RELATED] == prompts[Setting.TERMINAL]
    assert len(prompts[Setting.ALIGNED]) == 1


def test_build_settings_decoy(instr, decoy_sets):
    out = build_settings(instr, decoy_sets, PipelineConfig())
    assert [p.image_ref for p in out[Setting.ALIGNED].prompts] == ["sofa", "lamp"]
    assert [p.image_ref for p in out[Setting.RELATED].prompts] == ["decoy", "lamp"]
    assert out[Setting.ALIGNED].info["scores"]["s_all"] == pytest.approx(1.375, abs=1e-9)
    term = out[Setting.TERMINAL].prompts
    assert len(term) == 1 and term[0].phrase_index == max(p.phrase_index for p in out[Setting.ALIGNED].prompts)
    assert out[Setting.ALIGNED].info["scores"]["s_all"] >= out[Setting.RELATED].info["scores"]["s_all"]


def test_build_settings_switches_to_beam(instr):
    sets = [CandidateSet(i, tuple(cand(0.5 + 0.01 * j, j) for j in range(10))) for i in range(2)]
    out = build_settings(instr, sets, PipelineConfig(oracle_bound=10))
    assert out[Setting.ALIGNED].info["search"] == "beam"
    exact = select_aligned_exhaustive(sets)
    assert out[Setting.ALIGNED].info["scores"]["s_all"] == exact.s_all


def _many_prompts(n=10_000):
    tokens = [f"w{i}" for i in range(n)]
    instr = validate_instruction({"id": "big", "tokens": tokens, "path": ["A"],
                                  "phrases": [{"text": t, "start": i + 1, "end": i + 1} for i, t in enumerate(tokens)]})
    prompts = [VisualPrompt(i, f"im{i}", (0, 0, 1, 1), (4, 4)) for i in range(n)]
    store = AugmentStore({f"im{i}": [f"im{i}_a", f"im{i}_b"] for i in range(n)})
    return interleave(instr, prompts), store


def test_sample_augmented_extremes():
    mmi, store = _many_prompts(200)
    assert sample_augmented(mmi, store, 0.0, 1) == mmi
    full = sample_augmented(mmi, store, 1.0, 1)
    assert all(p.image_ref != q.image_ref for p, q in zip(full.prompts, mmi.prompts))
    assert all(p.image_ref in store.variants(q.image_ref) for p, q in zip(full.prompts, mmi.prompts))
    no_variants = sample_augmented(mmi, AugmentStore({}), 1.0, 1)
    assert no_variants == mmi


def test_sample_augmented_rate_and_determinism():
    mmi, store = _many_prompts()
    a = sample_augmented(mmi, store, 0.2, 42)
    assert a == sample_augmented(mmi, store, 0.2, 42)
    frac = len(a.info["augmented"]) / len(mmi.prompts)
    assert 0.18 <= frac <= 0.22
    picks = Counter(p.image_ref.rsplit("_", 1)[1] for p in a.prompts if p.image_ref.count("_"))
    assert set(picks) == {"a", "b"}


def test_explore_positions(line_graph):
    pos = explore_positions(["A", "B"], line_graph)
    assert pos == {"A": 0, "B": 1, "C": 1}


def test_pre_explore_restricts_sources(line_graph, instr):
    table = {("i1", 0): [cand(0.9, 0, node="D", ref="far"), cand(0.4, 0, node="C", ref="near")],
             ("i1", 1): [cand(0.5, 0, node="B", ref="lamp")]}
    out = pre_explore_build(instr, ["A", "B"], line_graph, FixtureDetector(table), PipelineConfig())
    assert out.setting is Setting.ALIGNED
    assert {p.node_id for p in out.prompts} <= {"A", "B", "C"}
    assert [p.image_ref for p in out.prompts] == ["near", "lamp"]


def test_pre_explore_empty_yield(line_graph, instr):
    out = pre_explore_build(instr, ["A", "B"], line_graph, FixtureDetector({}), PipelineConfig())
    assert out.setting is Setting.TEXT_ONLY and out.info["misses"] == [0, 1]


def test_pre_explore_matches_oracle_on_restricted_sets(world):
    g = world["graph"]
    det = FixtureDetector.from_records(world["candidates"])
    cfg = PipelineConfig(oracle_bound=0)  # force the beam
    for instr in world["instructions"][1:]:
        pseudo = list(instr.path_node_ids[:2])
        out = pre_explore_build(instr, pseudo, g, det, cfg)
        allowed = set(explore_positions(pseudo, g))
        assert {p.node_id for p in out.prompts} <= allowed
        res = run_detection(instr.phrases, list(explore_positions(pseudo, g)), det, instr.id,
                            explore_positions(pseudo, g))
        if res.sets:
            exact = select_aligned_exhaustive(res.sets)
            assert out.info["scores"]["s_all"] == exact.s_all


def test_run_pipeline_world(world, tmp_path):
    det = FixtureDetector.from_records(world["candidates"])
    res = run_pipeline(world["instructions"], det, PipelineConfig())
    aligned = res.datasets[Setting.ALIGNED]
    assert [m.id for m in aligned] == sorted(i.id for i in world["instructions"])
    assert aligned[0].setting is Setting.TEXT_ONLY
    assert any(m.reason == "no landmark detected" for m in res.misses)
    for s, records in res.datasets.items():
        for m in records:
            assert MultiModalInstruction.from_record(m.to_record()) == m
    for a, r in zip(aligned, res.datasets[Setting.RELATED]):
        if a.prompts:
            assert a.info["scores"]["s_all"] >= r.info["scores"]["s_all"]
    files = write_outputs(res, tmp_path / "out")
    assert sorted(p.rsplit("/", 1)[1] for p in files) == ["aligned.jsonl", "misses.jsonl", "related.jsonl", "terminal.jsonl"]


def test_run_pipeline_threads_match_serial(world):
    det = FixtureDetector.from_records(world["candidates"])
    store = AugmentStore({})
    a = run_pipeline(world["instructions"], det, PipelineConfig(), store=store)
    b = run_pipeline(list(reversed(world["instructions"])), det, PipelineConfig(), store=store, jobs=4)
    assert a == b


def test_run_pipeline_with_extractor(world):
    inst = world["instructions"][3]
    stripped = validate_instruction({**inst.to_record(), "phrases": []})
    ext = FixtureExtractor({inst.id: [p.to_record() for p in inst.phrases]})
    det = FixtureDetector.from_records(world["candidates"])
    a = run_pipeline([stripped], det, extractor=ext)
    b = run_pipeline([inst], det)
    assert a.datasets == b.datasets
