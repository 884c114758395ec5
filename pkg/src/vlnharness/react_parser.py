"""Parsing of Thought / Action / Action Input replies and failure classification.

The accepted grammar is three labeled lines, in order::

    Thought: <text, may span lines>
    Action: move | stop
    Action Input: <viewpoint id> | stop

Labels are case-insensitive and may be surrounded by whitespace; any text
before the first ``Thought:`` is ignored, and the first complete triple wins.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .env_graph import CandidateSet

STOP_TOKEN = "stop"
VIEWPOINT_ID = re.compile(r"[A-Za-z0-9][A-Za-z0-9_\-]*")

_TRIPLE = re.compile(
    r"^[ \t]*thought[ \t]*:[ \t]*(?P<thought>.*?)[ \t]*\n"
    r"(?:[ \t]*\n)*"
    r"[ \t]*action[ \t]*:[ \t]*(?P<action>[^\n]*?)[ \t]*\n"
    r"(?:[ \t]*\n)*"
    r"[ \t]*action[ \t]+input[ \t]*:[ \t]*(?P<input>[^\n]*?)[ \t]*$",
    re.IGNORECASE | re.MULTILINE | re.DOTALL,
)
_THOUGHT_LABEL = re.compile(r"^[ \t]*thought[ \t]*:", re.IGNORECASE | re.MULTILINE)
_ACTION_LABEL = re.compile(r"^[ \t]*action(?:[ \t]+input)?[ \t]*:", re.IGNORECASE | re.MULTILINE)

DEFAULT_REFUSAL_PATTERNS = (
    r"\bI\s*(?:am|'m)\s+(?:unable|not able|not capable)\b",
    r"\bI\s+(?:cannot|can\s*not|can't|can’t)\s+(?:perform|help|assist|navigate|do|complete|physically|move|provide)\b",
    r"\bas an (?:ai|a\.i\.|language model)\b",
    r"\bI\s+(?:do not|don't|don’t)\s+have the (?:ability|capability)\b",
    r"\bI\s+(?:do not|don't|don’t)\s+understand the (?:question|task|request)\b",
    r"لا\s+(?:أستطيع|استطيع|يمكنني|أقدر|اقدر)",
    r"(?:لست|غير)\s+قادر",
    r"بصفتي\s+(?:نموذج|ذكاء)",
    r"لا\s+أفهم\s+(?:السؤال|المهمة|الطلب)",
)


class Action(str, Enum):
    MOVE = "move"
    STOP = "stop"


class FailureKind(str, Enum):
    FORMAT_ERROR = "FormatError"
    MISSING_ACTION = "MissingAction"
    UNKNOWN_VIEWPOINT = "UnknownViewpoint"
    REFUSAL = "Refusal"


@dataclass(frozen=True)
class ParsedStep:
    thought: str
    action: Action
    action_input: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", Action(self.action))
        if self.action is Action.STOP and self.action_input != STOP_TOKEN:
            raise ValueError("a stop step must carry the stop token")
        if self.action is Action.MOVE and (
            self.action_input.lower() == STOP_TOKEN or not VIEWPOINT_ID.fullmatch(self.action_input)
        ):
            raise ValueError(f"invalid viewpoint id {self.action_input!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"thought": self.thought, "action": self.action.value, "action_input": self.action_input}


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    raw: str
    detail: str = ""

    def to_dict(self, step_index: int | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "raw": self.raw, "detail": self.detail}
        if step_index is not None:
            out["step_index"] = step_index
        return out


def render(step: ParsedStep) -> str:
    """Canonical three-line form."""
    return f"Thought: {step.thought}\nAction: {step.action.value}\nAction Input: {step.action_input}"


def compile_refusal_patterns(patterns: Iterable[str] = DEFAULT_REFUSAL_PATTERNS) -> tuple[re.Pattern, ...]:
    return tuple(re.compile(p, re.IGNORECASE) for p in patterns)


_DEFAULT_REFUSALS = compile_refusal_patterns()


def _clean_input(token: str) -> str:
    # wrappers and trailing punctuation, in any nesting order: `B`. or "B."
    return token.strip().strip("`'\"*<>[]().,; \t")


def parse(raw: str | bytes, refusal_patterns: Sequence[re.Pattern] | None = None) -> ParsedStep | ParseFailure:
    """Parse one model reply. Never raises; failures come back as :class:`ParseFailure`."""
    if isinstance(raw, (bytes, bytearray)):
        try:
            text = bytes(raw).decode("utf-8")
        except UnicodeDecodeError as exc:
            return ParseFailure(FailureKind.FORMAT_ERROR, bytes(raw).decode("utf-8", "replace"), f"invalid UTF-8: {exc}")
    elif isinstance(raw, str):
        text = raw
    else:
        return ParseFailure(FailureKind.FORMAT_ERROR, repr(raw), "reply is not text")
    if not text.strip():
        return ParseFailure(FailureKind.FORMAT_ERROR, text, "empty reply")
    if refusal_patterns is None:
        refusal_patterns = _DEFAULT_REFUSALS

    normalized = text.replace("\r\n", "\n").replace("\r", "\n")
    match = _TRIPLE.search(normalized)
    if match:
        thought = match.group("thought").strip()
        action = match.group("action").strip().strip("*`").strip().lower()
        arg = _clean_input(match.group("input"))
        if action == Action.STOP.value:
            return ParsedStep(thought, Action.STOP, STOP_TOKEN)
        if action == Action.MOVE.value:
            if arg.lower() == STOP_TOKEN:
                return ParsedStep(thought, Action.STOP, STOP_TOKEN)
            if VIEWPOINT_ID.fullmatch(arg):
                return ParsedStep(thought, Action.MOVE, arg)
            return ParseFailure(FailureKind.FORMAT_ERROR, text, f"malformed viewpoint id {arg!r}")
        return ParseFailure(FailureKind.FORMAT_ERROR, text, f"unknown action {action!r}")

    for pat in refusal_patterns:
        if pat.search(normalized):
            return ParseFailure(FailureKind.REFUSAL, text, f"refusal pattern {pat.pattern!r}")
    if _THOUGHT_LABEL.search(normalized) and not _ACTION_LABEL.search(normalized):
        return ParseFailure(FailureKind.MISSING_ACTION, text, "thought without action")
    return ParseFailure(FailureKind.FORMAT_ERROR, text, "no Thought/Action/Action Input triple")


def validate(
    step: ParsedStep | ParseFailure, cands: CandidateSet, raw: str | None = None
) -> ParsedStep | ParseFailure:
    """Reject moves to viewpoints that are not navigable from here.

    ``raw`` is the original reply, kept verbatim on the failure; the
    canonical rendering of ``step`` is used when it is not given.
    """
    if isinstance(step, ParseFailure) or step.action is Action.STOP:
        return step
    if step.action_input in cands:
        return step
    return ParseFailure(
        FailureKind.UNKNOWN_VIEWPOINT,
        raw if raw is not None else render(step),
        f"{step.action_input!r} is not among candidates {list(cands.ids)}",
    )
