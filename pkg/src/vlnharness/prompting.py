"""Per-step prompt construction and the rolling history buffer."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING

import yaml

from .dataset import Instruction, Language
from .env_graph import CandidateSet, Observation
from .errors import EmptyCandidates, LanguageMismatch
from .lm_client import CURRENT_VIEWPOINT_LABELS

if TYPE_CHECKING:
    from .lm_client import LMBackend

log = logging.getLogger(__name__)

SLOTS = ("instruction", "observation", "candidates", "history")
_SLOT_RE = re.compile(r"\{(" + "|".join(SLOTS) + r")\}")

# upper bound on the non-caption part of one rendered view/candidate line,
# assuming viewpoint ids of at most MAX_ID_CHARS characters
MAX_ID_CHARS = 32
LINE_OVERHEAD = MAX_ID_CHARS + 64


class LanguageMode(str, Enum):
    ENGLISH = "en"
    ARABIC = "ar"
    MIXED = "mixed"

    @classmethod
    def parse(cls, value: str | LanguageMode) -> LanguageMode:
        if isinstance(value, LanguageMode):
            return value
        aliases = {"english": "en", "arabic": "ar", "eng": "en"}
        return cls(aliases.get(value.lower(), value.lower()))

    @property
    def data_language(self) -> Language:
        """Language of instructions and observations under this mode."""
        return Language.ENGLISH if self is LanguageMode.ENGLISH else Language.ARABIC

    @property
    def table_label(self) -> str:
        return {"en": "Eng", "ar": "Ar", "mixed": "Mixed"}[self.value]


_CLOCK_PHRASES = {
    Language.ENGLISH: (
        "straight ahead",
        "slightly right",
        "ahead to the right",
        "right",
        "behind to the right",
        "behind, slightly right",
        "behind",
        "behind, slightly left",
        "behind to the left",
        "left",
        "ahead to the left",
        "slightly left",
    ),
    Language.ARABIC: (
        "أمامك مباشرة",
        "إلى اليمين قليلًا",
        "أمامك إلى اليمين",
        "على يمينك",
        "خلفك إلى اليمين",
        "خلفك مائلًا لليمين",
        "خلفك",
        "خلفك مائلًا لليسار",
        "خلفك إلى اليسار",
        "على يسارك",
        "أمامك إلى اليسار",
        "إلى اليسار قليلًا",
    ),
}

_LABELS = {
    Language.ENGLISH: {
        "current": CURRENT_VIEWPOINT_LABELS[0],
        "objects": "Objects",
        "none": "(none)",
        "summary": "Summary",
        "recent": "Recent steps",
        "up": "looking up",
        "level": "eye level",
        "down": "looking down",
    },
    Language.ARABIC: {
        "current": CURRENT_VIEWPOINT_LABELS[1],
        "objects": "الأشياء",
        "none": "(لا يوجد)",
        "summary": "الملخص",
        "recent": "الخطوات الأخيرة",
        "up": "للأعلى",
        "level": "مستوى النظر",
        "down": "للأسفل",
    },
}


def clock_hour(relative_heading: float) -> int:
    """Clock-face hour (1..12) for a relative heading; 12 is straight ahead, 3 is right."""
    hour = round(relative_heading / (math.pi / 6)) % 12
    return 12 if hour == 0 else hour


def clock_words(relative_heading: float, language: Language = Language.ENGLISH) -> str:
    hour = clock_hour(relative_heading)
    phrase = _CLOCK_PHRASES[language][hour % 12]
    if language is Language.ARABIC:
        return f"{phrase} عند الساعة {hour}"
    return f"{phrase} at {hour} o'clock"


def _elevation_word(elevation: float, language: Language) -> str:
    labels = _LABELS[language]
    if elevation > math.pi / 12:
        return labels["up"]
    if elevation < -math.pi / 12:
        return labels["down"]
    return labels["level"]


def _clip(text: str, cap: int) -> str:
    text = " ".join(text.split())
    return text if len(text) <= cap else text[: max(cap - 1, 0)] + "…"


@dataclass(frozen=True)
class PromptTemplate:
    language_mode: LanguageMode
    system_preamble: str
    step_frame: str
    format_reminder: str
    caption_cap: int = 300
    digest_cap: int = 160
    summary_cap: int = 600

    def __post_init__(self) -> None:
        object.__setattr__(self, "language_mode", LanguageMode.parse(self.language_mode))
        for slot in SLOTS:
            n = self.step_frame.count("{" + slot + "}")
            if n != 1:
                raise ValueError(f"step_frame must contain {{{slot}}} exactly once, found {n}")

    @property
    def data_language(self) -> Language:
        return self.language_mode.data_language

    @property
    def template_hash(self) -> str:
        payload = json.dumps(
            [self.language_mode.value, self.system_preamble, self.step_frame, self.format_reminder],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def max_prompt_chars(self, instruction_chars: int, n_views: int, n_candidates: int, k: int) -> int:
        """A priori bound on the rendered length of both prompt messages."""
        per_line = self.caption_cap + LINE_OVERHEAD
        return (
            len(self.system_preamble)
            + len(self.step_frame)
            + instruction_chars
            + (n_views + n_candidates + 2) * per_line
            + k * (self.digest_cap + LINE_OVERHEAD)
            + self.summary_cap
            + LINE_OVERHEAD
        )


def load_template(path: str | Path) -> PromptTemplate:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return PromptTemplate(**data)


def builtin_template(mode: str | LanguageMode) -> PromptTemplate:
    mode = LanguageMode.parse(mode)
    text = resources.files("vlnharness.templates").joinpath(f"{mode.value}.yaml").read_text(encoding="utf-8")
    return PromptTemplate(**yaml.safe_load(text))


# --- history -----------------------------------------------------------------


@dataclass(frozen=True)
class StepDigest:
    viewpoint: str
    action: str  # target viewpoint id or "stop"
    thought: str

    def line(self, cap: int) -> str:
        return _clip(f"{self.viewpoint} -> {self.action}: {self.thought}", cap)


@dataclass(frozen=True)
class HistoryBuffer:
    capacity: int = 3
    summary: str = ""
    recent_steps: tuple[StepDigest, ...] = field(default_factory=tuple)
    summary_cap: int = 600
    digest_cap: int = 160

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("history capacity must be at least 1")
        if len(self.recent_steps) > self.capacity:
            raise ValueError("more recent steps than capacity")


_SUMMARY_SYSTEM = "You condense navigation histories. Reply with one sentence and nothing else."


def _fallback_summary(summary: str, evicted: Sequence[StepDigest], digest_cap: int, cap: int) -> str:
    text = " ".join([summary, *(d.line(digest_cap) for d in evicted)]).strip()
    # keep the most recent part when over the cap
    return text if len(text) <= cap else text[len(text) - cap :]


def update_history(history: HistoryBuffer, step: StepDigest, backend: LMBackend | None = None) -> HistoryBuffer:
    """Append a step, folding evicted steps into the summary.

    With a backend, the summary is rewritten by one summarization call; any
    backend error falls back to deterministic concatenation.
    """
    recent = (*history.recent_steps, step)
    evicted = recent[: max(0, len(recent) - history.capacity)]
    recent = recent[len(evicted) :]
    summary = history.summary
    if evicted:
        fallback = _fallback_summary(summary, evicted, history.digest_cap, history.summary_cap)
        summary = fallback
        if backend is not None:
            prompt = [
                {"role": "system", "content": _SUMMARY_SYSTEM},
                {
                    "role": "user",
                    "content": "Summary so far: "
                    + (history.summary or "(none)")
                    + "\nNew steps:\n"
                    + "\n".join(d.line(history.digest_cap) for d in evicted),
                },
            ]
            try:
                summary = _clip(backend.complete(prompt), history.summary_cap)
            except Exception as exc:  # summarization is best effort
                log.warning("history summarization failed, using truncation fallback: %s", exc)
                summary = fallback
    return HistoryBuffer(history.capacity, summary, recent, history.summary_cap, history.digest_cap)


# --- rendering ---------------------------------------------------------------


def render_observation(obs: Observation, viewpoint: str, language: Language, caption_cap: int) -> str:
    labels = _LABELS[language]
    lines = [f"{labels['current']}: {viewpoint}"]
    for v in obs.views:
        lines.append(
            f"- {clock_words(v.relative_heading, language)}, "
            f"{_elevation_word(v.relative_elevation, language)}: {_clip(v.caption, caption_cap)}"
        )
    objects = ", ".join(obs.objects) if obs.objects else labels["none"]
    lines.append(f"{labels['objects']}: {_clip(objects, caption_cap)}")
    return "\n".join(lines)


def render_candidate_line(candidate, language: Language, caption_cap: int) -> str:
    return (
        f"{candidate.viewpoint_id} ({clock_words(candidate.relative_heading, language)}, "
        f"{candidate.distance:.1f} m): {_clip(candidate.caption, caption_cap)}"
    )


def render_history(history: HistoryBuffer, language: Language) -> str:
    labels = _LABELS[language]
    lines = [f"{labels['summary']}: {history.summary or labels['none']}", f"{labels['recent']}:"]
    if history.recent_steps:
        lines.extend(f"- {d.line(history.digest_cap)}" for d in history.recent_steps)
    else:
        lines.append(f"- {labels['none']}")
    return "\n".join(lines)


def render_prompt(
    template: PromptTemplate,
    instruction: Instruction,
    obs: Observation,
    cands: CandidateSet,
    history: HistoryBuffer,
    *,
    viewpoint: str,
) -> list[dict[str, str]]:
    """System and user messages for one navigation step."""
    lang = template.data_language
    if instruction.language is not lang:
        raise LanguageMismatch(
            f"{template.language_mode.value} template expects {lang.display} instructions, "
            f"got {instruction.language.display}"
        )
    if len(cands) == 0:
        raise EmptyCandidates(f"no navigable viewpoints at {viewpoint}")
    slots = {
        "instruction": instruction.text,
        "observation": render_observation(obs, viewpoint, lang, template.caption_cap),
        "candidates": "\n".join(render_candidate_line(c, lang, template.caption_cap) for c in cands),
        "history": render_history(history, lang),
    }
    user = _SLOT_RE.sub(lambda m: slots[m.group(1)], template.step_frame)
    return [
        {"role": "system", "content": template.system_preamble},
        {"role": "user", "content": user},
    ]


def reminder_messages(messages: Sequence[dict[str, str]], raw: str, template: PromptTemplate) -> list[dict[str, str]]:
    """Conversation for the single format retry after an unusable reply."""
    return [*messages, {"role": "assistant", "content": raw}, {"role": "user", "content": template.format_reminder}]
