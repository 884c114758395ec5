"""Acceptance suite: one test (or a small group) per criterion.

A summary line per criterion is printed at the end of the run by the
reporting hook in ``conftest.py``.
"""

from __future__ import annotations

import json
import math
import random
import time
from pathlib import Path

import pytest
from oracles import brute_geodesic, brute_ndtw

from vlnharness import cli
from vlnharness.agent_loop import (
    AgentPolicy,
    Environment,
    Outcome,
    TrajectoryRecord,
    prompt_hash,
    run_episode,
    run_suite,
    write_record,
)
from vlnharness.dataset import (
    DEFAULT_TRANSLATION_TEMPLATE,
    EpisodeSpec,
    Instruction,
    Language,
    identifier_tokens,
    json_skeleton,
    load_r2r_file,
    pair_corpora,
    translate_corpus,
    translate_text,
    write_json,
    write_r2r_file,
)
from vlnharness.env_graph import (
    AgentState,
    NavGraph,
    Node,
    candidates,
    dump_graph,
    geodesic,
    load_graph_file,
    load_observation_store_file,
    observe,
)
from vlnharness.errors import ContextOverflow, PlaceholderLost
from vlnharness.lm_client import (
    FunctionBackend,
    ScriptedBackend,
    find_current_viewpoint,
    oracle_response,
)
from vlnharness.metrics import (
    aggregate,
    cls,
    evaluate,
    navigation_error,
    ndtw,
    spl,
    trajectory_length,
)
from vlnharness.prompting import HistoryBuffer, builtin_template, render_prompt
from vlnharness.react_parser import FailureKind, ParsedStep, parse, validate
from vlnharness.synthetic import (
    grid_graph,
    random_connected_graph,
    random_graph,
    square_graph,
    synthetic_episodes,
    synthetic_store,
    toy_translate,
    write_workspace,
)

GOLDEN = Path(__file__).parent / "golden"


def _spec(path, d, scan="square", pid=1):
    return EpisodeSpec(pid, scan, 0.0, tuple(path), (Instruction("go", Language.ENGLISH),), d)


# --- 1 ------------------------------------------------------------------------------


@pytest.mark.criterion(1, "metric-oracle equivalence (nDTW DP vs brute force, geodesic vs simple paths)")
def test_criterion_1_metric_oracle_equivalence():
    t0 = time.perf_counter()
    rng = random.Random(20240601)
    worst = 0.0
    for i in range(200):
        n = rng.randint(2, 8)
        g = random_connected_graph(rng, n, 0.3, scan_id=f"r{i}")
        ids = sorted(g.nodes)
        p = [rng.choice(ids) for _ in range(rng.randint(1, 6))]
        r = [rng.choice(ids) for _ in range(rng.randint(1, 6))]
        table = {(a, b): brute_geodesic(g, a, b) for a in ids for b in ids}
        for (a, b), want in table.items():
            assert geodesic(g, a, b) == want, (i, a, b)
        got = ndtw(p, _spec(r, 0.0, g.scan_id), g, 3.0)
        want = brute_ndtw(lambda a, b: table[(a, b)], p, r, 3.0)
        worst = max(worst, abs(got - want))
        assert abs(got - want) <= 1e-9
        # sparse graphs too, where some pairs are disconnected
        h = random_graph(rng, n, 0.3, scan_id=f"s{i}")
        for a in h.nodes:
            for b in h.nodes:
                want = brute_geodesic(h, a, b)
                if math.isfinite(want):
                    assert geodesic(h, a, b) == want
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"took {elapsed:.1f}s"


# --- 2 ------------------------------------------------------------------------------


@pytest.mark.criterion(2, "hand-value suite on the square graph")
def test_criterion_2_hand_values():
    g = square_graph()
    ref = _spec(["A", "B", "C"], 10.0)
    assert trajectory_length(["A", "B", "C"], g) == 10.0
    assert navigation_error(["A"], "C", g) == 10.0
    assert abs(ndtw(["A"], ref, g, 3.0) - math.exp(-5 / 3)) <= 1e-9
    assert abs(cls(["A"], ref, g, 3.0) - 0.2049) <= 1e-3
    # success, TL = 20, d* = 10
    assert trajectory_length(["A", "B", "C", "D", "C"], g) == 20.0
    assert spl(["A", "B", "C", "D", "C"], ref, g, 3.0) == 0.5


# --- 3 ------------------------------------------------------------------------------


@pytest.mark.criterion(3, "oracle end-to-end over synthetic episodes")
def test_criterion_3_oracle_end_to_end(tmp_path):
    t0 = time.perf_counter()
    write_workspace(tmp_path, n_episodes=25, seed=7)
    (tmp_path / "run.yaml").write_text(
        "run_id: oracle\nscans_dir: scans\ndatasets:\n  english: data/r2r_en.json\n"
        "backend:\n  kind: oracle\n  model_id: oracle\n",
        encoding="utf-8",
    )
    assert cli.main(["run", "--config", str(tmp_path / "run.yaml")]) == 0
    report = cli.score_run(tmp_path / "runs" / "oracle")
    elapsed = time.perf_counter() - t0
    agg = report.aggregate
    assert report.total == 25 and report.succ_count == 25
    assert agg["SR"] == 100.0
    assert abs(agg["NE"]) <= 1e-9
    assert abs(agg["SPL"] - 100.0) <= 0.1
    assert abs(agg["nDTW"] - 1.0) <= 1e-6
    assert all(row["outcome"] == "Stopped" for row in report.per_trajectory.values())
    assert elapsed < 30.0


# --- 4 ------------------------------------------------------------------------------

APPENDIX_REPLIES = {
    "well-formed": "Thought: The kitchen is ahead, I should go there.\nAction: move\nAction Input: B",
    "missing action": "Thought: I have explored enough of this hallway and the stairs are next.",
    "hallucinated viewpoint": "Thought: I will take the door.\nAction: move\nAction Input: 7c3fa2e1",
    "refusal": "I'm sorry, but I cannot perform navigation tasks as I am a text-based model.",
}
EXPECTED = {
    "well-formed": ParsedStep,
    "missing action": FailureKind.MISSING_ACTION,
    "hallucinated viewpoint": FailureKind.UNKNOWN_VIEWPOINT,
    "refusal": FailureKind.REFUSAL,
}


def _classify(result):
    return ParsedStep if isinstance(result, ParsedStep) else result.kind


@pytest.mark.criterion(4, "failure-taxonomy conformance and Succ accounting")
def test_criterion_4_taxonomy_classification(square_store):
    g = square_graph()
    cands = candidates(g, AgentState("A"), square_store)
    got = {name: _classify(validate(parse(raw), cands, raw)) for name, raw in APPENDIX_REPLIES.items()}
    assert got == EXPECTED
    # the same corpus through the agent loop, with retries disabled so the first reply is final
    spec = _spec(["A", "B", "C"], 10.0)
    for name, raw in APPENDIX_REPLIES.items():
        policy = AgentPolicy(ScriptedBackend([raw, "Thought: done\nAction: stop\nAction Input: stop"]),
                             builtin_template("en"), retry_budget=0)
        rec = run_episode(spec, policy, g, square_store)
        first = rec.steps[0]["result"]
        kind = ParsedStep if first["type"] == "ParsedStep" else FailureKind(first["kind"])
        assert kind == EXPECTED[name]
        assert first.get("raw", raw) == raw


def _overflow_backend(spec, graph, k):
    calls = [0]

    def reply(messages):
        calls[0] += 1
        if calls[0] == k:
            raise ContextOverflow(f"overflow injected at step {k}")
        return oracle_response(spec, graph, find_current_viewpoint(messages))

    return FunctionBackend(reply, model_id="oracle")


@pytest.mark.criterion(4, "failure-taxonomy conformance and Succ accounting")
@pytest.mark.parametrize("n_overflow", [82, 59, 18, 0])
def test_criterion_4_context_overflow_succ(n_overflow):
    rng = random.Random(n_overflow)
    g = grid_graph(6, 6, scan_id="g")
    env = Environment({"g": g}, {"g": synthetic_store(g, rng)})
    eps = synthetic_episodes(g, 100, rng, min_hops=3, max_hops=8)
    injected = {ep.path_id: 1 + (ep.path_id % 3) for ep in eps[:n_overflow]}

    def factory(spec):
        k = injected.get(spec.path_id)
        return _overflow_backend(spec, g, k) if k else _overflow_backend(spec, g, 10**9)

    recs = run_suite(eps, AgentPolicy(factory, builtin_template("en")), env)
    specs = {ep.path_id: ep for ep in eps}
    for rec in recs:
        if rec.path_id in injected:
            k = injected[rec.path_id]
            assert rec.outcome is Outcome.CONTEXT_OVERFLOW
            assert len(rec.visited) == k
            assert rec.visited == list(specs[rec.path_id].ground_truth_path[:k])
        else:
            assert rec.outcome is Outcome.STOPPED
    report = aggregate(recs, specs, {"g": g})
    assert report.succ_count == 100 - n_overflow
    assert report.total == 100


# --- 5 ------------------------------------------------------------------------------


@pytest.mark.criterion(5, "bilingual integrity")
def test_criterion_5_translation_schema(tmp_path):
    paths = write_workspace(tmp_path, n_episodes=10, seed=3, arabic=False)
    english = load_r2r_file(paths["english"])
    unique = list(dict.fromkeys(i.text for ep in english for i in ep.instructions))
    translator = ScriptedBackend(
        [lambda m: toy_translate(DEFAULT_TRANSLATION_TEMPLATE.source_text(m[-1]["content"]))] * len(unique), model_id="scripted-translator"
    )
    arabic = translate_corpus(english, translator)
    assert translator.remaining == 0
    out = tmp_path / "data" / "r2r_ar.json"
    write_r2r_file(out, arabic)
    en_doc = json.loads(paths["english"].read_text(encoding="utf-8"))
    ar_doc = json.loads(out.read_text(encoding="utf-8"))
    assert json_skeleton(en_doc) == json_skeleton(ar_doc)
    corpus = pair_corpora(english, load_r2r_file(out, Language.ARABIC))
    assert len(corpus) == 10
    for en, ar in corpus.alignment.values():
        for tok in identifier_tokens(en.instructions[0].text):
            assert tok in ar.instructions[0].text


@pytest.mark.criterion(5, "bilingual integrity")
def test_criterion_5_arabic_round_trip(tmp_path, capsys):
    paths = write_workspace(tmp_path, n_episodes=10, seed=5)
    (tmp_path / "run.yaml").write_text(
        "run_id: ar\nscans_dir: scans\nlanguage_mode: ar\ndatasets:\n  english: data/r2r_en.json\n"
        "  arabic: data/r2r_ar.json\nbackend:\n  kind: oracle\n  model_id: oracle\n",
        encoding="utf-8",
    )
    assert cli.main(["run", "--config", str(tmp_path / "run.yaml")]) == 0
    assert cli.main(["score", str(tmp_path / "runs" / "ar"), "--out", str(tmp_path / "rep")]) == 0
    arabic = {ep.path_id: ep for ep in load_r2r_file(paths["arabic"], Language.ARABIC)}
    report = json.loads((tmp_path / "rep" / "report.json").read_bytes().decode("utf-8"))
    run_dir = tmp_path / "runs" / "ar"

    # prompt: re-render the first step and compare its hash with the logged one
    graph = load_graph_file(paths["scans"] / "gridscan_connectivity.json")
    store = load_observation_store_file(paths["scans"] / "gridscan_observations.ar.json")
    tpl = builtin_template("ar")
    for pid, ep in arabic.items():
        text = ep.instructions[0].text
        raw = (run_dir / f"{pid}.json").read_bytes()
        decoded = raw.decode("utf-8")
        assert "�" not in decoded
        assert text.encode("utf-8") in raw  # byte-for-byte, unescaped
        log = json.loads(decoded)
        assert log["instruction"] == text
        state = AgentState(ep.start, ep.initial_heading)
        msgs = render_prompt(
            tpl, ep.instructions[0], observe(graph, state, store), candidates(graph, state, store),
            HistoryBuffer(3, summary_cap=tpl.summary_cap, digest_cap=tpl.digest_cap), viewpoint=ep.start,
        )
        assert text in msgs[1]["content"]
        assert prompt_hash(msgs) == log["steps"][0]["prompt_hash"]
        assert report[0]["per_trajectory"][str(pid)]["instruction"] == text
    for f in ("report.txt", "report.json", "plot_data.csv"):
        assert "�" not in (tmp_path / "rep" / f).read_bytes().decode("utf-8")
    capsys.readouterr()
    assert cli.main(["inspect", str(run_dir), "--path-id", "1"]) == 0
    assert arabic[1].instructions[0].text in capsys.readouterr().out


@pytest.mark.criterion(5, "bilingual integrity")
def test_criterion_5_placeholder_lost():
    planted = ScriptedBackend(["اذهب إلى نقطة المشاهدة ثم توقف"])
    with pytest.raises(PlaceholderLost) as err:
        translate_text("Go to viewpoint 1a2b then stop.", planted)
    assert err.value.missing == ["1a2b"]


# --- 6 ------------------------------------------------------------------------------


@pytest.mark.criterion(6, "metric inequality fuzz over 1000 random walks")
def test_criterion_6_inequality_fuzz():
    rng = random.Random(6)
    violations = 0
    graphs = [random_connected_graph(rng, rng.randint(3, 12), 0.25, scan_id=f"f{i}") for i in range(50)]
    for i in range(1000):
        g = graphs[i % len(graphs)]
        ids = sorted(g.nodes)
        ref = [rng.choice(ids)]
        for _ in range(rng.randint(0, 6)):
            ref.append(rng.choice(list(g.neighbors(ref[-1]))))
        spec = EpisodeSpec(i, g.scan_id, 0.0, tuple(ref), (Instruction("go"),), geodesic(g, ref[0], ref[-1]))
        walk = [ref[0]]
        for _ in range(rng.randint(0, 10)):
            walk.append(rng.choice(list(g.neighbors(walk[-1]))))
        m = evaluate(walk, spec, g, rng.choice([1.0, 3.0, 5.0]))
        ok = m["SPL"] <= m["SR"] and m["SDTW"] <= min(m["SR"], m["nDTW"]) and m["OSR"] >= m["SR"]
        violations += not ok
    assert violations == 0


# --- 7 ------------------------------------------------------------------------------

# visited paths against the reference [v10, v20] (d* = 10 m) and how many records use each
_GOLDEN_MIX = [
    ([10, 20], 5),
    ([10, 5, 20], 16),
    ([10, 20, 24], 25),
    ([10, 0, 9], 43),
    ([10, 0, 10, 9], 9),
    ([10, 0, 7], 2),
]


def _vp(x):
    return f"v{x:02d}"


@pytest.mark.criterion(7, "report fidelity against the golden table")
def test_criterion_7_golden_table(tmp_path, capsys):
    # viewpoints on a line 1 m apart, all mutually visible, so geodesic = |dx|
    nodes = {_vp(x): Node(_vp(x), (float(x), 0.0, 0.0)) for x in range(41)}
    g = NavGraph("line", nodes, [(a, b) for a in nodes for b in nodes if a < b])
    scans = tmp_path / "scans"
    write_json(scans / "line_connectivity.json", dump_graph(g))
    specs, recs = [], []
    pid = 0
    for visited, count in _GOLDEN_MIX:
        for _ in range(count):
            pid += 1
            specs.append(_spec([_vp(10), _vp(20)], 10.0, "line", pid))
            recs.append(TrajectoryRecord(pid, "line", "en", "gpt-4o-mini", "go", [_vp(x) for x in visited],
                                         outcome=Outcome.STOPPED))
    assert pid == 100
    dataset = tmp_path / "data" / "r2r_en.json"
    write_r2r_file(dataset, specs)
    run_dir = tmp_path / "runs" / "gpt4omini-en"
    for rec in recs:
        write_record(run_dir, rec)
    write_json(run_dir / "manifest.json", {
        "run_id": "gpt4omini-en", "model_id": "gpt-4o-mini", "model_label": "GPT-4o mini",
        "language_mode": "en", "dataset": str(dataset), "scans_dir": str(scans), "d_th": 3.0,
    })
    out = tmp_path / "report"
    assert cli.main(["score", str(run_dir), "--out", str(out)]) == 0
    golden = (GOLDEN / "table1_gpt4o_mini_eng.txt").read_bytes()
    assert (out / "report.txt").read_bytes() == golden
    assert capsys.readouterr().out.encode("utf-8") == golden
