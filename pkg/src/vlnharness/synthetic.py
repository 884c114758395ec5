"""Synthetic scans, observation stores and episodes for tests and demos."""

from __future__ import annotations

import math
import random
import re
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

import networkx as nx

from .dataset import (
    DEFAULT_TRANSLATION_TEMPLATE,
    IDENTIFIER_TOKEN,
    EpisodeSpec,
    Instruction,
    Language,
    TranslationTemplate,
    has_arabic,
    write_json,
    write_r2r_file,
)
from .env_graph import (
    NavGraph,
    Node,
    ObservationStore,
    ViewRecord,
    dump_graph,
    dump_observation_store,
    geodesic,
)
from .lm_client import FunctionBackend

OBJECTS_AR = {
    "sofa": "أريكة",
    "table": "طاولة",
    "door": "باب",
    "kitchen": "مطبخ",
    "stairs": "درج",
    "bed": "سرير",
    "window": "نافذة",
    "painting": "لوحة",
    "plant": "نبتة",
    "chair": "كرسي",
    "lamp": "مصباح",
    "rug": "سجادة",
}
WORDS_AR = {
    **OBJECTS_AR,
    "a": "",
    "the": "",
    "near": "بالقرب من",
    "go": "اذهب",
    "walk": "امشِ",
    "past": "متجاوزًا",
    "to": "إلى",
    "and": "و",
    "stop": "توقف",
    "at": "عند",
    "turn": "استدر",
    "left": "يسارًا",
    "right": "يمينًا",
    "viewpoint": "نقطة المشاهدة",
    "then": "ثم",
    "wait": "انتظر",
    "by": "بجانب",
    "with": "مع",
    "room": "غرفة",
}


def square_graph() -> NavGraph:
    """Four viewpoints on a 5 m square: A(0,0) B(5,0) C(5,5) D(0,5), edges around the rim."""
    nodes = {
        "A": Node("A", (0.0, 0.0, 0.0)),
        "B": Node("B", (5.0, 0.0, 0.0)),
        "C": Node("C", (5.0, 5.0, 0.0)),
        "D": Node("D", (0.0, 5.0, 0.0)),
    }
    return NavGraph("square", nodes, [("A", "B"), ("B", "C"), ("C", "D"), ("A", "D")])


def random_graph(rng: random.Random, n_nodes: int, edge_prob: float = 0.4, scan_id: str = "rand", scale: float = 10.0) -> NavGraph:
    """Random points in a box with independently sampled edges (possibly disconnected)."""
    nodes = {}
    for i in range(n_nodes):
        vp = f"n{i}"
        nodes[vp] = Node(vp, (rng.uniform(0, scale), rng.uniform(0, scale), rng.uniform(0, scale / 10)))
    ids = list(nodes)
    edges = [(u, v) for i, u in enumerate(ids) for v in ids[i + 1 :] if rng.random() < edge_prob]
    return NavGraph(scan_id, nodes, edges)


def random_connected_graph(rng: random.Random, n_nodes: int, extra_edge_prob: float = 0.3, scan_id: str = "rand") -> NavGraph:
    """Random geometric graph made connected by a random spanning tree."""
    nodes = {}
    for i in range(n_nodes):
        vp = f"v{i:02d}"
        nodes[vp] = Node(vp, (rng.uniform(0, 20), rng.uniform(0, 20), 0.0))
    ids = list(nodes)
    edges = set()
    order = ids[:]
    rng.shuffle(order)
    for i in range(1, len(order)):
        a, b = order[i], order[rng.randrange(i)]
        edges.add((min(a, b), max(a, b)))
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            if rng.random() < extra_edge_prob:
                edges.add((u, v))
    return NavGraph(scan_id, nodes, sorted(edges))


def grid_graph(rows: int = 4, cols: int = 4, spacing: float = 3.0, scan_id: str = "grid", diagonal: bool = True) -> NavGraph:
    """Lattice scan with 32-hex-like viewpoint ids (``<scan>r<i>c<j>`` padded)."""
    nodes = {}
    for i in range(rows):
        for j in range(cols):
            vp = grid_id(scan_id, i, j)
            nodes[vp] = Node(vp, (j * spacing, i * spacing, 1.5))
    edges = []
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                edges.append((grid_id(scan_id, i, j), grid_id(scan_id, i, j + 1)))
            if i + 1 < rows:
                edges.append((grid_id(scan_id, i, j), grid_id(scan_id, i + 1, j)))
            if diagonal and i + 1 < rows and j + 1 < cols and (i + j) % 2 == 0:
                edges.append((grid_id(scan_id, i, j), grid_id(scan_id, i + 1, j + 1)))
    return NavGraph(scan_id, nodes, edges)


def grid_id(scan_id: str, i: int, j: int) -> str:
    return f"{scan_id}{i:02d}{j:02d}".ljust(12, "0")


def synthetic_store(graph: NavGraph, rng: random.Random, language: Language = Language.ENGLISH, n_views: int = 4) -> ObservationStore:
    """Captions at evenly spaced headings for every viewpoint."""
    objects = sorted(OBJECTS_AR)
    views = {}
    for vp in sorted(graph.nodes):
        items = []
        for k in range(n_views):
            a, b = rng.sample(objects, 2)
            caption = f"a {a} near a {b}"
            objs = (a, b)
            if language is Language.ARABIC:
                caption = toy_translate(caption)
                objs = tuple(OBJECTS_AR[o] for o in objs)
            items.append(ViewRecord(2 * math.pi * k / n_views, 0.0, caption, objs))
        views[vp] = tuple(items)
    return ObservationStore(views)


def translate_store(store: ObservationStore) -> ObservationStore:
    return ObservationStore(
        {
            vp: tuple(
                ViewRecord(v.absolute_heading, v.absolute_elevation, toy_translate(v.caption), tuple(toy_translate(o) for o in v.objects))
                for v in views
            )
            for vp, views in store.views.items()
        }
    )


_WORD = re.compile(r"[A-Za-z0-9_]+|[^A-Za-z0-9_\s]+")


def toy_translate(text: str) -> str:
    """Deterministic word-by-word English-to-Arabic gloss; identifier tokens kept."""
    out = []
    for tok in _WORD.findall(text):
        if IDENTIFIER_TOKEN.fullmatch(tok):
            out.append(tok)
        elif tok.lower() in WORDS_AR:
            if WORDS_AR[tok.lower()]:
                out.append(WORDS_AR[tok.lower()])
        elif tok.isalpha():
            out.append("كلمة")
        else:
            out.append(tok)
    result = " ".join(out).strip()
    return result if has_arabic(result) else f"ترجمة {result}".strip()


def toy_translator(template: TranslationTemplate = DEFAULT_TRANSLATION_TEMPLATE, model_id: str = "toy-translator") -> FunctionBackend:
    """Offline stand-in for a translation model: :func:`toy_translate` on the slot text."""
    return FunctionBackend(lambda msgs: toy_translate(template.source_text(msgs[-1]["content"])), model_id=model_id)


def random_instruction(rng: random.Random, goal: str) -> str:
    a, b = rng.sample(sorted(OBJECTS_AR), 2)
    turn = rng.choice(["left", "right"])
    return f"Walk past the {a} and turn {turn}, then stop at the {b} near viewpoint {goal}."


def synthetic_episodes(
    graph: NavGraph, n: int, rng: random.Random, min_hops: int = 1, max_hops: int = 6, first_path_id: int = 1
) -> list[EpisodeSpec]:
    """Episodes whose ground truth is a shortest path between random viewpoints."""
    g = nx.Graph()
    for u, v, w in graph.edges():
        g.add_edge(u, v, weight=w)
    ids = sorted(graph.nodes)
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise RuntimeError("could not sample enough episodes from this graph")
        s, t = rng.sample(ids, 2)
        try:
            path = nx.dijkstra_path(g, s, t, weight="weight")
        except (nx.NetworkXNoPath, nx.NodeNotFound):
            continue
        if not (min_hops <= len(path) - 1 <= max_hops):
            continue
        pid = first_path_id + len(out)
        text = random_instruction(rng, t)
        out.append(
            EpisodeSpec(
                path_id=pid,
                scan_id=graph.scan_id,
                initial_heading=round(rng.uniform(0, 2 * math.pi), 6),
                ground_truth_path=tuple(path),
                instructions=(Instruction(text, Language.ENGLISH),),
                shortest_distance=geodesic(graph, s, t),
            )
        )
    return out


def arabic_counterparts(episodes: Sequence[EpisodeSpec]) -> list[EpisodeSpec]:
    return [
        replace(ep, instructions=tuple(Instruction(toy_translate(i.text), Language.ARABIC) for i in ep.instructions))
        for ep in episodes
    ]


def write_scan(scans_dir: str | Path, graph: NavGraph, stores: dict[Language, ObservationStore]) -> None:
    """Lay out one scan the way the CLI expects it."""
    scans_dir = Path(scans_dir)
    write_json(scans_dir / f"{graph.scan_id}_connectivity.json", dump_graph(graph))
    for lang, store in stores.items():
        write_json(scans_dir / f"{graph.scan_id}_observations.{lang.value}.json", dump_observation_store(store))


def write_workspace(root: str | Path, n_episodes: int = 20, seed: int = 0, arabic: bool = True) -> dict[str, Path]:
    """A complete on-disk workspace: one grid scan, English (and Arabic) datasets."""
    root = Path(root)
    rng = random.Random(seed)
    graph = grid_graph(4, 5, scan_id="gridscan")
    store_en = synthetic_store(graph, rng)
    stores = {Language.ENGLISH: store_en}
    if arabic:
        stores[Language.ARABIC] = translate_store(store_en)
    write_scan(root / "scans", graph, stores)
    episodes = synthetic_episodes(graph, n_episodes, rng, min_hops=1, max_hops=5)
    paths = {"scans": root / "scans", "english": root / "data" / "r2r_en.json"}
    write_r2r_file(paths["english"], episodes)
    if arabic:
        paths["arabic"] = root / "data" / "r2r_ar.json"
        write_r2r_file(paths["arabic"], arabic_counterparts(episodes))
    return paths
