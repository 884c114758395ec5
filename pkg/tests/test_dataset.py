from __future__ import annotations

import json
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlnharness.dataset import (
    DEFAULT_TRANSLATION_TEMPLATE,
    EpisodeSpec,
    Instruction,
    Language,
    TranslationCache,
    TranslationTemplate,
    dump_r2r,
    identifier_tokens,
    json_skeleton,
    load_r2r,
    load_r2r_file,
    pair_corpora,
    sidecar_path,
    translate_corpus,
    translate_observation_store,
    translate_text,
    write_r2r_file,
)
from vlnharness.errors import (
    DatasetError,
    LanguageMismatch,
    MalformedRecord,
    MissingCounterpart,
    PathNotInGraph,
    PlaceholderLost,
    StructuralMismatch,
)
from vlnharness.lm_client import FunctionBackend, ScriptedBackend
from vlnharness.synthetic import (
    arabic_counterparts,
    grid_graph,
    synthetic_episodes,
    synthetic_store,
    toy_translate,
    toy_translator,
)

REC = {"path_id": 1, "scan": "square", "path": ["A", "B", "C"], "instructions": ["go right"], "heading": 0, "distance": 9.9}


def test_load_square_record_recomputes_distance(square):
    (ep,) = load_r2r([REC], graphs={"square": square})
    assert ep.shortest_distance == 10.0
    assert ep.recorded_distance == 9.9
    assert ep.start == "A" and ep.goal == "C"
    # without graphs the recorded value is trusted
    assert load_r2r([REC])[0].shortest_distance == 9.9


@pytest.mark.parametrize(
    "patch",
    [
        {"path": []},
        {"path": "ABC"},
        {"instructions": []},
        {"instructions": [""]},
        {"path_id": "1"},
        {"heading": "north"},
        {"distance": float("nan")},
        {"scan": ""},
    ],
)
def test_malformed_records(patch):
    with pytest.raises(MalformedRecord):
        load_r2r([dict(REC, **patch)])


def test_missing_field_and_bad_document():
    rec = dict(REC)
    del rec["heading"]
    with pytest.raises(MalformedRecord):
        load_r2r([rec])
    with pytest.raises(MalformedRecord):
        load_r2r("{not json")
    with pytest.raises(MalformedRecord):
        load_r2r({"path_id": 1})


def test_path_not_in_graph(square):
    with pytest.raises(PathNotInGraph):
        load_r2r([dict(REC, path=["A", "C"])], graphs={"square": square})
    with pytest.raises(PathNotInGraph):
        load_r2r([dict(REC, path=["A", "Q"])], graphs={"square": square})
    with pytest.raises(PathNotInGraph):
        load_r2r([dict(REC, scan="elsewhere")], graphs={"square": square})


def test_language_tag_checked():
    with pytest.raises(LanguageMismatch):
        load_r2r([REC], Language.ARABIC)
    with pytest.raises(LanguageMismatch):
        Instruction("اذهب يمينا", Language.ENGLISH)
    assert Instruction("اذهب إلى 1a2b", Language.ARABIC).text == "اذهب إلى 1a2b"


def test_load_order_and_lossless_round_trip(tmp_path):
    recs = [dict(REC, path_id=i, instr_id=f"x{i}") for i in (5, 2, 9)]
    eps = load_r2r(json.dumps(recs))
    assert [e.path_id for e in eps] == [5, 2, 9]
    path = tmp_path / "out.json"
    write_r2r_file(path, eps, {"source_hash": "abc"})
    assert json.loads(path.read_text()) == recs
    assert json.loads(sidecar_path(path).read_text()) == {"source_hash": "abc"}
    assert load_r2r_file(path) == eps


def test_identifier_tokens():
    text = "Go to viewpoint 1a2b, pass room 42 and the R2R sign, not the sofa."
    assert identifier_tokens(text) == ["1a2b", "42", "R2R"]
    assert identifier_tokens("نقطة 3f4e") == ["3f4e"]


# --- translation --------------------------------------------------------------------


def english_fixture(n=10, seed=0):
    g = grid_graph(3, 4, scan_id="fix")
    return g, synthetic_episodes(g, n, random.Random(seed))


def test_translate_keeps_structure_and_ids():
    g, eps = english_fixture(3)
    out = translate_corpus(eps, toy_translator())
    assert [e.path_id for e in out] == [e.path_id for e in eps]
    assert [e.ground_truth_path for e in out] == [e.ground_truth_path for e in eps]
    for src, dst in zip(eps, out):
        assert dst.language is Language.ARABIC
        assert json_skeleton(src.to_record()) == json_skeleton(dst.to_record())
        for tok in identifier_tokens(src.instructions[0].text):
            assert tok in dst.instructions[0].text


def test_translate_viewpoint_example():
    ep = EpisodeSpec(1, "s", 0.0, ("A",), (Instruction("Go to viewpoint 1a2b"),), 0.0)
    (out,) = translate_corpus([ep], toy_translator())
    assert "1a2b" in out.instructions[0].text


def test_translate_empty_makes_no_calls():
    b = ScriptedBackend([])
    assert translate_corpus([], b) == []
    assert b.send_count == 0


def test_placeholder_lost_is_rejected_and_not_cached(tmp_path):
    cache = TranslationCache(tmp_path / "c.jsonl")
    b = ScriptedBackend(["اذهب إلى نقطة المشاهدة"])
    with pytest.raises(PlaceholderLost) as err:
        translate_text("Go to viewpoint 1a2b", b, cache=cache)
    assert err.value.missing == ["1a2b"]
    assert len(cache) == 0


def test_cache_makes_second_run_free(tmp_path):
    _, eps = english_fixture(10)
    path = tmp_path / "cache.jsonl"
    first = toy_translator()
    out1 = translate_corpus(eps, first, cache=TranslationCache(path))
    assert first.send_count == len({e.instructions[0].text for e in eps})
    second = toy_translator()
    out2 = translate_corpus(eps, second, cache=TranslationCache(path))
    assert second.send_count == 0
    assert out1 == out2


def test_cache_is_keyed_by_template(tmp_path):
    cache = TranslationCache(tmp_path / "c.jsonl")
    other = TranslationTemplate("Translate.", "{text}")
    translate_text("Go left", toy_translator(), cache=cache)
    b = toy_translator(other)
    translate_text("Go left", b, other, cache=cache)
    assert b.send_count == 1 and len(cache) == 2


def test_cache_skips_torn_lines(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"key": "k1", "text": "نص"}\n{"key": "k2", "te', encoding="utf-8")
    cache = TranslationCache(path)
    assert cache.get("k1") == "نص" and cache.get("k2") is None


def test_parallel_translation_matches_serial(tmp_path):
    _, eps = english_fixture(12, seed=3)
    serial = translate_corpus(eps, toy_translator())
    parallel = translate_corpus(eps, toy_translator(), cache=TranslationCache(tmp_path / "c.jsonl"), workers=4)
    assert serial == parallel


def test_translation_must_be_arabic():
    b = FunctionBackend(lambda m: "still English 1a2b")
    ep = EpisodeSpec(1, "s", 0.0, ("A",), (Instruction("Go to 1a2b"),), 0.0)
    with pytest.raises(DatasetError):
        translate_corpus([ep], b)
    with pytest.raises(LanguageMismatch):
        translate_corpus(translate_corpus([ep], toy_translator()), toy_translator())


def test_translate_observation_store():
    g = grid_graph(2, 2, scan_id="obs")
    store = synthetic_store(g, random.Random(0))
    out = translate_observation_store(store, toy_translator())
    assert set(out.views) == set(store.views)
    for vp in store.views:
        for a, b in zip(store.get(vp), out.get(vp)):
            assert a.absolute_heading == b.absolute_heading
            assert b.caption == toy_translate(a.caption)


def test_template_source_text_inverts_messages():
    msgs = DEFAULT_TRANSLATION_TEMPLATE.messages("Go left at 42.")
    assert DEFAULT_TRANSLATION_TEMPLATE.source_text(msgs[-1]["content"]) == "Go left at 42."
    with pytest.raises(ValueError):
        TranslationTemplate("s", "no slot")


# --- pairing ------------------------------------------------------------------------


def test_pair_corpora_examples():
    _, eps = english_fixture(10)
    ar = arabic_counterparts(eps)
    corpus = pair_corpora(eps, ar)
    assert len(corpus) == 10
    with pytest.raises(MissingCounterpart):
        pair_corpora(eps, [e for e in ar if e.path_id != 7])
    from dataclasses import replace

    bent = [replace(e, ground_truth_path=e.ground_truth_path[:1]) if e.path_id == 3 else e for e in ar]
    with pytest.raises(StructuralMismatch):
        pair_corpora(eps, bent)
    with pytest.raises(StructuralMismatch):
        pair_corpora(eps + eps[:1], ar + ar[:1])


def test_pair_corpora_hundred():
    g = grid_graph(5, 5, scan_id="big")
    eps = synthetic_episodes(g, 100, random.Random(11))
    assert len(pair_corpora(eps, arabic_counterparts(eps))) == 100


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_pairing_with_translation_always_succeeds(seed, n):
    _, eps = english_fixture(n, seed)
    out = translate_corpus(eps, toy_translator())
    pair_corpora(eps, out)
    assert json_skeleton(dump_r2r(eps)) == json_skeleton(dump_r2r(out))


def test_cache_is_thread_safe(tmp_path):
    cache = TranslationCache(tmp_path / "c.jsonl")

    def work(i):
        for j in range(50):
            cache.put(f"k{i}-{j}", f"نص {i} {j}")

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(TranslationCache(tmp_path / "c.jsonl")) == 200
