"""R2R-style instruction datasets, bilingual pairing and LM-driven translation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any

import yaml

from .env_graph import NavGraph, ObservationStore, ViewRecord, geodesic
from .errors import (
    DatasetError,
    GraphError,
    LanguageMismatch,
    MalformedRecord,
    MissingCounterpart,
    PathNotInGraph,
    PlaceholderLost,
    StructuralMismatch,
)

if TYPE_CHECKING:
    from .lm_client import LMBackend

log = logging.getLogger(__name__)

ARABIC_SCRIPT = re.compile(r"[\u0600-\u06ff\u0750-\u077f\u08a0-\u08ff\ufb50-\ufdff\ufe70-\ufeff]")
# Latin alphanumeric tokens that carry at least one digit: viewpoint ids, numbers.
IDENTIFIER_TOKEN = re.compile(r"(?<![A-Za-z0-9_])(?=[A-Za-z_]*[0-9])[A-Za-z0-9_]+(?![A-Za-z0-9_])")

R2R_FIELDS = ("distance", "scan", "path_id", "path", "heading", "instructions")


class Language(str, Enum):
    ENGLISH = "en"
    ARABIC = "ar"

    @property
    def display(self) -> str:
        return {"en": "English", "ar": "Arabic"}[self.value]


def has_arabic(text: str) -> bool:
    return ARABIC_SCRIPT.search(text) is not None


def identifier_tokens(text: str) -> list[str]:
    """Tokens that a translation must carry over verbatim."""
    return IDENTIFIER_TOKEN.findall(text)


def missing_identifiers(source: str, translated: str) -> list[str]:
    return [tok for tok in dict.fromkeys(identifier_tokens(source)) if tok not in translated]


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Instruction:
    text: str
    language: Language = Language.ENGLISH
    token_hint: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise MalformedRecord("instruction text must be a nonempty string")
        object.__setattr__(self, "language", Language(self.language))
        arabic = has_arabic(self.text)
        if self.language is Language.ARABIC and not arabic:
            raise LanguageMismatch(f"instruction declared Arabic has no Arabic script: {self.text[:60]!r}")
        if self.language is Language.ENGLISH and arabic:
            raise LanguageMismatch(f"instruction declared English contains Arabic script: {self.text[:60]!r}")
        if self.token_hint is None:
            object.__setattr__(self, "token_hint", len(self.text.split()))


@dataclass(frozen=True)
class EpisodeSpec:
    path_id: int
    scan_id: str
    initial_heading: float
    ground_truth_path: tuple[str, ...]
    instructions: tuple[Instruction, ...]
    shortest_distance: float
    # source value of the "distance" field and unrecognized keys, kept for lossless writing
    recorded_distance: float | None = None
    extras: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_truth_path", tuple(self.ground_truth_path))
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if not self.ground_truth_path:
            raise MalformedRecord(f"episode {self.path_id}: empty ground-truth path")
        if self.shortest_distance < 0:
            raise MalformedRecord(f"episode {self.path_id}: negative shortest distance")

    @property
    def start(self) -> str:
        return self.ground_truth_path[0]

    @property
    def goal(self) -> str:
        return self.ground_truth_path[-1]

    @property
    def language(self) -> Language | None:
        return self.instructions[0].language if self.instructions else None

    def to_record(self) -> dict[str, Any]:
        rec = dict(self.extras)
        rec.update(
            distance=self.recorded_distance if self.recorded_distance is not None else self.shortest_distance,
            scan=self.scan_id,
            path_id=self.path_id,
            path=list(self.ground_truth_path),
            heading=self.initial_heading,
            instructions=[ins.text for ins in self.instructions],
        )
        return rec


def _parse_records(document: Any) -> list[Any]:
    if isinstance(document, (str, bytes, bytearray)):
        try:
            document = json.loads(document)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedRecord(f"dataset is not valid JSON: {exc}") from exc
    if not isinstance(document, list):
        raise MalformedRecord("dataset must be a list of episode records")
    return document


def check_path(graph: NavGraph, path: Sequence[str], path_id: Any = None) -> None:
    for vp in path:
        if vp not in graph:
            raise PathNotInGraph(f"episode {path_id}: viewpoint {vp!r} not in scan {graph.scan_id}")
    for u, v in zip(path, path[1:]):
        if not graph.has_edge(u, v):
            raise PathNotInGraph(f"episode {path_id}: {u} -> {v} is not an edge of scan {graph.scan_id}")


def episode_from_record(
    rec: Mapping[str, Any],
    language: Language = Language.ENGLISH,
    graphs: Mapping[str, NavGraph] | None = None,
) -> EpisodeSpec:
    if not isinstance(rec, Mapping):
        raise MalformedRecord(f"record is not an object: {rec!r}")
    missing = [k for k in R2R_FIELDS if k not in rec]
    if missing:
        raise MalformedRecord(f"record {rec.get('path_id')!r} missing fields {missing}")
    path_id = rec["path_id"]
    if isinstance(path_id, bool) or not isinstance(path_id, int):
        raise MalformedRecord(f"path_id must be an integer, got {path_id!r}")
    path = rec["path"]
    if not isinstance(path, list) or not path or not all(isinstance(p, str) and p for p in path):
        raise MalformedRecord(f"episode {path_id}: path must be a nonempty list of viewpoint ids")
    texts = rec["instructions"]
    if not isinstance(texts, list) or not texts:
        raise MalformedRecord(f"episode {path_id}: instructions must be a nonempty list")
    try:
        heading = float(rec["heading"])
        recorded = float(rec["distance"])
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(f"episode {path_id}: {exc}") from exc
    if not (math.isfinite(heading) and math.isfinite(recorded)):
        raise MalformedRecord(f"episode {path_id}: non-finite heading or distance")
    scan = rec["scan"]
    if not isinstance(scan, str) or not scan:
        raise MalformedRecord(f"episode {path_id}: scan must be a nonempty string")
    try:
        instructions = tuple(Instruction(t, language) for t in texts)
    except (MalformedRecord, TypeError) as exc:
        raise MalformedRecord(f"episode {path_id}: {exc}") from exc

    shortest = recorded
    if graphs is not None:
        graph = graphs.get(scan)
        if graph is None:
            raise PathNotInGraph(f"episode {path_id}: scan {scan!r} not loaded")
        check_path(graph, path, path_id)
        try:
            shortest = geodesic(graph, path[0], path[-1])
        except GraphError as exc:
            raise PathNotInGraph(f"episode {path_id}: {exc}") from exc
    extras = {k: v for k, v in rec.items() if k not in R2R_FIELDS}
    return EpisodeSpec(path_id, scan, heading, tuple(path), instructions, shortest, recorded, extras)


def load_r2r(
    document: Any,
    language: Language | str = Language.ENGLISH,
    graphs: Mapping[str, NavGraph] | None = None,
) -> list[EpisodeSpec]:
    """Parse an R2R instruction file, preserving record order.

    When ``graphs`` is given, each ground-truth path is checked against its
    scan and ``shortest_distance`` is recomputed as the start-goal geodesic.
    """
    language = Language(language)
    return [episode_from_record(rec, language, graphs) for rec in _parse_records(document)]


def load_r2r_file(
    path: str | Path,
    language: Language | str = Language.ENGLISH,
    graphs: Mapping[str, NavGraph] | None = None,
) -> list[EpisodeSpec]:
    return load_r2r(Path(path).read_text(encoding="utf-8"), language, graphs)


def dump_r2r(episodes: Iterable[EpisodeSpec]) -> list[dict[str, Any]]:
    return [ep.to_record() for ep in episodes]


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_json(path: str | Path, data: Any) -> None:
    """Write UTF-8 JSON atomically (Arabic text kept unescaped)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    tmp.replace(path)


def write_r2r_file(path: str | Path, episodes: Iterable[EpisodeSpec], metadata: Mapping[str, Any] | None = None) -> None:
    write_json(path, dump_r2r(episodes))
    if metadata is not None:
        write_json(sidecar_path(path), dict(metadata))


def json_skeleton(value: Any) -> Any:
    """Structure of a JSON value with every string leaf blanked out."""
    if isinstance(value, Mapping):
        return {k: json_skeleton(v) for k, v in sorted(value.items())}
    if isinstance(value, list):
        return [json_skeleton(v) for v in value]
    if isinstance(value, str):
        return "<text>"
    return value


# --- translation -------------------------------------------------------------


@dataclass(frozen=True)
class TranslationTemplate:
    """Chat prompt used to translate one text field; ``user`` holds a ``{text}`` slot."""

    system: str
    user: str
    source_language: Language = Language.ENGLISH
    target_language: Language = Language.ARABIC

    def __post_init__(self) -> None:
        if self.user.count("{text}") != 1:
            raise ValueError("translation template needs exactly one {text} slot")

    @property
    def template_hash(self) -> str:
        payload = json.dumps(
            [self.system, self.user, Language(self.source_language).value, Language(self.target_language).value],
            ensure_ascii=False,
        )
        return sha256_text(payload)

    def messages(self, text: str) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": self.user.replace("{text}", text)},
        ]

    def source_text(self, user_content: str) -> str:
        """Inverse of the user slot fill: recover the text being translated."""
        head, tail = self.user.split("{text}")
        if not (user_content.startswith(head) and user_content.endswith(tail)):
            raise ValueError("message was not produced by this template")
        return user_content[len(head) : len(user_content) - len(tail)]


def _translation_template_from_yaml(text: str) -> TranslationTemplate:
    data = yaml.safe_load(text)
    return TranslationTemplate(
        system=data["system"],
        user=data["user"],
        source_language=Language(data.get("source_language", "en")),
        target_language=Language(data.get("target_language", "ar")),
    )


def load_translation_template(path: str | Path) -> TranslationTemplate:
    return _translation_template_from_yaml(Path(path).read_text(encoding="utf-8"))


DEFAULT_TRANSLATION_TEMPLATE = _translation_template_from_yaml(
    resources.files("vlnharness.templates").joinpath("translate_ar.yaml").read_text(encoding="utf-8")
)


class TranslationCache:
    """Content-addressed translation cache backed by an append-only JSONL file.

    Keys are ``<sha256(source)>:<template_hash>``. Every new entry is flushed
    immediately so an interrupted run resumes where it stopped.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        item = json.loads(line)
                    except json.JSONDecodeError:
                        # a torn final line from an interrupted write
                        log.warning("skipping unreadable cache line in %s", self.path)
                        continue
                    self._entries[item["key"]] = item["text"]

    @staticmethod
    def key(source: str, template: TranslationTemplate) -> str:
        return f"{sha256_text(source)}:{template.template_hash}"

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._entries.get(key)

    def put(self, key: str, text: str) -> None:
        with self._lock:
            if self._entries.get(key) == text:
                return
            self._entries[key] = text
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "text": text}, ensure_ascii=False) + "\n")


def translate_text(
    text: str,
    backend: LMBackend,
    template: TranslationTemplate = DEFAULT_TRANSLATION_TEMPLATE,
    cache: TranslationCache | None = None,
) -> str:
    """Translate one field, checking that identifier tokens survive verbatim."""
    key = TranslationCache.key(text, template)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    translated = backend.complete(template.messages(text)).strip()
    lost = missing_identifiers(text, translated)
    if lost:
        raise PlaceholderLost(text, translated, lost)
    if cache is not None:
        cache.put(key, translated)
    return translated


def _translate_all(
    texts: Iterable[str],
    backend: LMBackend,
    template: TranslationTemplate,
    cache: TranslationCache | None,
    workers: int,
) -> dict[str, str]:
    unique = list(dict.fromkeys(texts))
    if workers <= 1 or len(unique) <= 1:
        return {t: translate_text(t, backend, template, cache) for t in unique}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = pool.map(lambda t: translate_text(t, backend, template, cache), unique)
        return dict(zip(unique, results))


def translate_corpus(
    episodes: Sequence[EpisodeSpec],
    backend: LMBackend,
    template: TranslationTemplate = DEFAULT_TRANSLATION_TEMPLATE,
    cache: TranslationCache | None = None,
    workers: int = 1,
) -> list[EpisodeSpec]:
    """Translate every instruction, leaving ids, paths and numbers untouched.

    One backend call is made per distinct instruction text not already in
    ``cache``. A translation that drops an identifier token raises
    :class:`PlaceholderLost` and is never cached.
    """
    if not episodes:
        return []
    source_lang = Language(template.source_language)
    for ep in episodes:
        for ins in ep.instructions:
            if ins.language is not source_lang:
                raise LanguageMismatch(f"episode {ep.path_id}: expected {source_lang.display} instructions")
    texts = [ins.text for ep in episodes for ins in ep.instructions]
    table = _translate_all(texts, backend, template, cache, workers)
    target = Language(template.target_language)
    out = []
    for ep in episodes:
        try:
            instructions = tuple(Instruction(table[ins.text], target) for ins in ep.instructions)
        except LanguageMismatch as exc:
            raise DatasetError(f"episode {ep.path_id}: translation is not {target.display}: {exc}") from exc
        out.append(replace(ep, instructions=instructions))
    return out


def translate_observation_store(
    store: ObservationStore,
    backend: LMBackend,
    template: TranslationTemplate = DEFAULT_TRANSLATION_TEMPLATE,
    cache: TranslationCache | None = None,
    workers: int = 1,
) -> ObservationStore:
    """Translate captions and object labels; angles and viewpoint keys are kept."""
    texts = [t for views in store.views.values() for v in views for t in (v.caption, *v.objects) if t.strip()]
    table = _translate_all(texts, backend, template, cache, workers)

    def tr(t: str) -> str:
        return table.get(t, t)

    return ObservationStore(
        {
            vp: tuple(
                ViewRecord(v.absolute_heading, v.absolute_elevation, tr(v.caption), tuple(tr(o) for o in v.objects))
                for v in views
            )
            for vp, views in store.views.items()
        }
    )


# --- bilingual pairing -------------------------------------------------------


@dataclass(frozen=True)
class BilingualCorpus:
    english: tuple[EpisodeSpec, ...]
    arabic: tuple[EpisodeSpec, ...]
    alignment: Mapping[int, tuple[EpisodeSpec, EpisodeSpec]]

    def __len__(self) -> int:
        return len(self.alignment)


def _structure(ep: EpisodeSpec) -> tuple:
    return (ep.scan_id, ep.ground_truth_path, ep.initial_heading, len(ep.instructions), ep.shortest_distance)


def pair_corpora(english: Sequence[EpisodeSpec], arabic: Sequence[EpisodeSpec]) -> BilingualCorpus:
    """Align English and Arabic episodes by ``path_id``."""
    en_ids = Counter(ep.path_id for ep in english)
    ar_ids = Counter(ep.path_id for ep in arabic)
    dupes = [pid for pid, n in (en_ids + ar_ids).items() if n > 2 or en_ids[pid] > 1 or ar_ids[pid] > 1]
    if dupes:
        raise StructuralMismatch(f"duplicate path_ids {sorted(dupes)[:10]}")
    if en_ids != ar_ids:
        only_en = sorted(set(en_ids) - set(ar_ids))
        only_ar = sorted(set(ar_ids) - set(en_ids))
        raise MissingCounterpart(f"unpaired path_ids: english-only {only_en[:10]}, arabic-only {only_ar[:10]}")
    by_id = {ep.path_id: ep for ep in arabic}
    alignment: dict[int, tuple[EpisodeSpec, EpisodeSpec]] = {}
    for en in english:
        ar = by_id[en.path_id]
        if _structure(en) != _structure(ar):
            raise StructuralMismatch(f"episode {en.path_id}: English and Arabic records differ beyond text")
        alignment[en.path_id] = (en, ar)
    return BilingualCorpus(tuple(english), tuple(arabic), alignment)
