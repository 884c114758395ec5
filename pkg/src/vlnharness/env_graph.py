"""Discrete navigation over viewpoint graphs.

Headings follow the Matterport/R2R convention: measured clockwise from the
+y axis in the horizontal plane, so ``heading = atan2(dx, dy)``. A positive
relative heading therefore means "to the right".
"""

from __future__ import annotations

import json
import math
import threading
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any

import networkx as nx

from .errors import (
    AsymmetricAdjacency,
    Disconnected,
    IllegalMove,
    IsolatedNode,
    MalformedDocument,
    MissingObservation,
    UnknownNodeReference,
)

TWO_PI = 2.0 * math.pi


def normalize_heading(angle: float) -> float:
    """Wrap an absolute heading into [0, 2*pi)."""
    a = math.fmod(angle, TWO_PI)
    if a < 0:
        a += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    return 0.0 if a >= TWO_PI else a


def normalize_relative(angle: float) -> float:
    """Wrap a relative angle into (-pi, pi]."""
    a = math.remainder(angle, TWO_PI)
    return math.pi if a <= -math.pi else a


def clamp_elevation(angle: float) -> float:
    return max(-math.pi / 2, min(math.pi / 2, angle))


def heading_between(src: tuple[float, float, float], dst: tuple[float, float, float]) -> float:
    return normalize_heading(math.atan2(dst[0] - src[0], dst[1] - src[1]))


@dataclass(frozen=True)
class Node:
    viewpoint_id: str
    position: tuple[float, float, float]
    included: bool = True


class NavGraph:
    """Immutable weighted viewpoint graph for one scan.

    Edge weights are the Euclidean distances between node positions. Shortest
    path distances are computed lazily per source and cached; the cache is
    guarded so a graph can be shared between worker threads.
    """

    def __init__(self, scan_id: str, nodes: Mapping[str, Node], edges: Iterable[tuple[str, str]]):
        self.scan_id = scan_id
        self._nodes = MappingProxyType(dict(nodes))
        adj: dict[str, dict[str, float]] = {vp: {} for vp in self._nodes}
        for u, v in edges:
            if u not in adj or v not in adj:
                missing = u if u not in adj else v
                raise UnknownNodeReference(f"{scan_id}: edge references unknown viewpoint {missing!r}")
            if u == v:
                continue
            length = math.dist(self._nodes[u].position, self._nodes[v].position)
            if not length > 0:
                raise MalformedDocument(f"{scan_id}: zero-length edge {u}-{v}")
            adj[u][v] = length
            adj[v][u] = length
        self._adj = MappingProxyType(
            {vp: MappingProxyType(dict(sorted(nbrs.items()))) for vp, nbrs in adj.items()}
        )
        self._nx = nx.Graph()
        self._nx.add_nodes_from(self._nodes)
        for u, nbrs in self._adj.items():
            for v, w in nbrs.items():
                self._nx.add_edge(u, v, weight=w)
        self._dist: dict[str, dict[str, float]] = {}
        self._lock = threading.Lock()

    @property
    def nodes(self) -> Mapping[str, Node]:
        return self._nodes

    def __contains__(self, viewpoint: object) -> bool:
        return viewpoint in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def neighbors(self, viewpoint: str) -> Mapping[str, float]:
        """Adjacent viewpoints mapped to edge length, ordered by id."""
        try:
            return self._adj[viewpoint]
        except KeyError:
            raise UnknownNodeReference(f"{self.scan_id}: unknown viewpoint {viewpoint!r}") from None

    def has_edge(self, u: str, v: str) -> bool:
        return v in self._adj.get(u, ())

    def edge_length(self, u: str, v: str) -> float:
        try:
            return self._adj[u][v]
        except KeyError:
            raise IllegalMove(f"{self.scan_id}: no edge {u}-{v}") from None

    def edges(self) -> list[tuple[str, str, float]]:
        return [(u, v, w) for u, nbrs in self._adj.items() for v, w in nbrs.items() if u < v]

    def position(self, viewpoint: str) -> tuple[float, float, float]:
        return self._nodes[viewpoint].position

    def distances_from(self, source: str) -> Mapping[str, float]:
        if source not in self._nodes:
            raise UnknownNodeReference(f"{self.scan_id}: unknown viewpoint {source!r}")
        with self._lock:
            cached = self._dist.get(source)
        if cached is None:
            _, paths = nx.single_source_dijkstra(self._nx, source, weight="weight")
            # an exactly rounded sum along the path makes the result independent
            # of traversal direction, so geodesic(a, b) == geodesic(b, a) bit for bit
            cached = {
                vp: math.fsum(self._adj[u][v] for u, v in zip(path, path[1:])) for vp, path in paths.items()
            }
            with self._lock:
                self._dist[source] = cached
        return cached

    def __repr__(self) -> str:
        return f"NavGraph(scan_id={self.scan_id!r}, nodes={len(self._nodes)}, edges={len(self.edges())})"


def geodesic(graph: NavGraph, source: str, target: str) -> float:
    """Shortest-path distance in meters between two viewpoints."""
    if target not in graph:
        raise UnknownNodeReference(f"{graph.scan_id}: unknown viewpoint {target!r}")
    dist = graph.distances_from(source)
    try:
        return dist[target]
    except KeyError:
        raise Disconnected(f"{graph.scan_id}: {source} and {target} are not connected") from None


def _parse_document(document: Any) -> Any:
    if isinstance(document, (str, bytes, bytearray)):
        try:
            return json.loads(document)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedDocument(f"connectivity document is not valid JSON: {exc}") from exc
    return document


def _record_position(rec: Mapping[str, Any]) -> tuple[float, float, float]:
    if "position" in rec:
        pos = rec["position"]
        if not isinstance(pos, (list, tuple)) or len(pos) != 3:
            raise MalformedDocument(f"position must be [x, y, z], got {pos!r}")
        return (float(pos[0]), float(pos[1]), float(pos[2]))
    if "pose" in rec:
        # Matterport stores a row-major 4x4 camera-to-world matrix
        pose = rec["pose"]
        if not isinstance(pose, (list, tuple)) or len(pose) != 16:
            raise MalformedDocument("pose must hold 16 numbers")
        return (float(pose[3]), float(pose[7]), float(pose[11]))
    raise MalformedDocument("record has neither 'position' nor 'pose'")


def load_graph(document: Any, scan_id: str) -> NavGraph:
    """Build a :class:`NavGraph` from a connectivity document.

    Each record carries ``viewpoint_id`` (or Matterport's ``image_id``), a
    ``position`` ``[x, y, z]`` (or a 16-element ``pose``), an ``included``
    flag and adjacency given either as an ``unobstructed`` bitvector aligned
    with record order or a ``neighbors`` id list. Excluded nodes are dropped.
    """
    records = _parse_document(document)
    if not isinstance(records, list):
        raise MalformedDocument("connectivity document must be a list of records")

    ids: list[str] = []
    for rec in records:
        if not isinstance(rec, Mapping):
            raise MalformedDocument(f"record is not an object: {rec!r}")
        vp = rec.get("viewpoint_id", rec.get("image_id"))
        if not isinstance(vp, str) or not vp:
            raise MalformedDocument(f"record without viewpoint id: {rec!r}")
        ids.append(vp)
    if len(set(ids)) != len(ids):
        raise MalformedDocument(f"{scan_id}: duplicate viewpoint ids")

    known = set(ids)
    nodes: dict[str, Node] = {}
    raw_adj: dict[str, set[str]] = {}
    for vp, rec in zip(ids, records):
        included = bool(rec.get("included", True))
        node = Node(vp, _record_position(rec), included)
        if "unobstructed" in rec:
            bits = rec["unobstructed"]
            if not isinstance(bits, list) or len(bits) != len(records):
                raise MalformedDocument(f"{scan_id}/{vp}: unobstructed must have one entry per record")
            nbrs = {ids[j] for j, b in enumerate(bits) if b}
        elif "neighbors" in rec:
            nbrs = set(rec["neighbors"])
            unknown = nbrs - known
            if unknown:
                raise UnknownNodeReference(f"{scan_id}/{vp}: unknown neighbor(s) {sorted(unknown)}")
        else:
            nbrs = set()
        nbrs.discard(vp)
        if included:
            nodes[vp] = node
            raw_adj[vp] = nbrs

    if not nodes:
        raise MalformedDocument(f"{scan_id}: no included viewpoints")

    edges: list[tuple[str, str]] = []
    for u, nbrs in raw_adj.items():
        for v in nbrs:
            if v not in nodes:
                continue
            if u not in raw_adj[v]:
                raise AsymmetricAdjacency(f"{scan_id}: {u} lists {v} but not the reverse")
            if u < v:
                edges.append((u, v))
    return NavGraph(scan_id, nodes, edges)


def load_graph_file(path: str | Path, scan_id: str | None = None) -> NavGraph:
    path = Path(path)
    if scan_id is None:
        scan_id = path.name.removesuffix(".json").removesuffix("_connectivity")
    return load_graph(path.read_text(encoding="utf-8"), scan_id)


def dump_graph(graph: NavGraph) -> list[dict[str, Any]]:
    """Serialize a graph into the id-list form accepted by :func:`load_graph`."""
    return [
        {
            "viewpoint_id": vp,
            "position": list(node.position),
            "included": node.included,
            "neighbors": list(graph.neighbors(vp)),
        }
        for vp, node in sorted(graph.nodes.items())
    ]


# --- agent state and observations -------------------------------------------


@dataclass(frozen=True)
class AgentState:
    viewpoint: str
    heading: float = 0.0
    elevation: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_heading(self.heading))
        object.__setattr__(self, "elevation", clamp_elevation(self.elevation))


@dataclass(frozen=True)
class ViewRecord:
    """One stored panorama view, in absolute angles."""

    absolute_heading: float
    absolute_elevation: float
    caption: str
    objects: tuple[str, ...] = ()


@dataclass(frozen=True)
class View:
    caption: str
    relative_heading: float
    relative_elevation: float


@dataclass(frozen=True)
class Observation:
    views: tuple[View, ...]
    objects: tuple[str, ...] = ()


@dataclass(frozen=True)
class Candidate:
    viewpoint_id: str
    relative_heading: float
    distance: float
    caption: str = ""


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __contains__(self, viewpoint: object) -> bool:
        return any(c.viewpoint_id == viewpoint for c in self.candidates)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.viewpoint_id for c in self.candidates)


@dataclass(frozen=True)
class ObservationStore:
    """Precomputed textual panoramas, keyed by viewpoint id."""

    views: Mapping[str, tuple[ViewRecord, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "views", MappingProxyType(dict(self.views)))

    def __contains__(self, viewpoint: object) -> bool:
        return viewpoint in self.views

    def get(self, viewpoint: str) -> tuple[ViewRecord, ...]:
        try:
            return self.views[viewpoint]
        except KeyError:
            raise MissingObservation(f"no stored observation for viewpoint {viewpoint!r}") from None


def load_observation_store(document: Any) -> ObservationStore:
    """Parse ``{viewpoint_id: [{absolute_heading, absolute_elevation, caption, objects}]}``."""
    data = _parse_document(document)
    if not isinstance(data, Mapping):
        raise MalformedDocument("observation store must map viewpoint ids to view lists")
    views: dict[str, tuple[ViewRecord, ...]] = {}
    for vp, items in data.items():
        if not isinstance(items, list) or not items:
            raise MalformedDocument(f"observation for {vp!r} must be a nonempty list")
        try:
            views[vp] = tuple(
                ViewRecord(
                    float(it["absolute_heading"]),
                    float(it.get("absolute_elevation", 0.0)),
                    str(it["caption"]),
                    tuple(str(o) for o in it.get("objects", ())),
                )
                for it in items
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad view record for {vp!r}: {exc}") from exc
    return ObservationStore(views)


def load_observation_store_file(path: str | Path) -> ObservationStore:
    return load_observation_store(Path(path).read_text(encoding="utf-8"))


def dump_observation_store(store: ObservationStore) -> dict[str, list[dict[str, Any]]]:
    return {
        vp: [
            {
                "absolute_heading": v.absolute_heading,
                "absolute_elevation": v.absolute_elevation,
                "caption": v.caption,
                "objects": list(v.objects),
            }
            for v in views
        ]
        for vp, views in sorted(store.views.items())
    }


def observe(graph: NavGraph, state: AgentState, store: ObservationStore) -> Observation:
    """Textual panorama at the agent's viewpoint, in agent-relative angles."""
    if state.viewpoint not in graph:
        raise UnknownNodeReference(f"{graph.scan_id}: unknown viewpoint {state.viewpoint!r}")
    records = store.get(state.viewpoint)
    views = sorted(
        (
            View(
                r.caption,
                normalize_relative(r.absolute_heading - state.heading),
                r.absolute_elevation - state.elevation,
            )
            for r in records
        ),
        key=lambda v: (v.relative_heading, v.relative_elevation, v.caption),
    )
    objects: dict[str, None] = {}
    for r in records:
        for obj in r.objects:
            objects.setdefault(obj, None)
    return Observation(tuple(views), tuple(objects))


def _caption_toward(records: Iterable[ViewRecord], heading: float) -> str:
    best = min(
        records,
        key=lambda r: (abs(normalize_relative(r.absolute_heading - heading)), abs(r.absolute_elevation)),
        default=None,
    )
    return best.caption if best is not None else ""


def candidates(graph: NavGraph, state: AgentState, store: ObservationStore | None = None) -> CandidateSet:
    """Navigable neighbors of the current viewpoint, ordered by viewpoint id.

    Each candidate's caption is the stored view at the current viewpoint that
    faces the candidate most directly (empty when no views are stored).
    """
    nbrs = graph.neighbors(state.viewpoint)
    if not nbrs:
        raise IsolatedNode(f"{graph.scan_id}: viewpoint {state.viewpoint!r} has no neighbors")
    here = graph.position(state.viewpoint)
    records = store.views.get(state.viewpoint, ()) if store is not None else ()
    out = []
    for vp, length in nbrs.items():
        direction = heading_between(here, graph.position(vp))
        out.append(
            Candidate(
                vp,
                normalize_relative(direction - state.heading),
                length,
                _caption_toward(records, direction),
            )
        )
    return CandidateSet(tuple(out))


def step(graph: NavGraph, state: AgentState, target: str) -> AgentState:
    """Move to an adjacent viewpoint, facing along the direction of travel."""
    if target == state.viewpoint or not graph.has_edge(state.viewpoint, target):
        raise IllegalMove(f"{graph.scan_id}: {target!r} is not adjacent to {state.viewpoint!r}")
    heading = heading_between(graph.position(state.viewpoint), graph.position(target))
    return AgentState(target, heading, 0.0)
