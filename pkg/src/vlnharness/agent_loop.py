"""Episode execution: prompt, complete, parse, validate, step, until the agent stops."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .dataset import EpisodeSpec, write_json
from .env_graph import AgentState, NavGraph, ObservationStore, candidates, observe, step
from .errors import BackendFailure, ContextOverflow
from .lm_client import LMBackend
from .prompting import (
    HistoryBuffer,
    PromptTemplate,
    StepDigest,
    reminder_messages,
    render_prompt,
    update_history,
)
from .react_parser import Action, ParsedStep, ParseFailure, parse, validate

log = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 15
DEFAULT_RETRY_BUDGET = 1


class Outcome(str, Enum):
    STOPPED = "Stopped"
    STEP_CAP_REACHED = "StepCapReached"
    FATAL_PARSE = "FatalParse"
    CONTEXT_OVERFLOW = "ContextOverflow"
    BACKEND_FAILURE = "BackendFailure"

    @property
    def succ_eligible(self) -> bool:
        """True when the agent produced a complete trajectory."""
        return self in (Outcome.STOPPED, Outcome.STEP_CAP_REACHED)


BackendSource = LMBackend | Callable[[EpisodeSpec], LMBackend]


@dataclass
class AgentPolicy:
    """How an episode is driven.

    ``backend`` is either one shared backend or a factory called once per
    episode (the oracle backend is built that way).
    """

    backend: BackendSource
    template: PromptTemplate
    max_steps: int = DEFAULT_MAX_STEPS
    retry_budget: int = DEFAULT_RETRY_BUDGET
    history_capacity: int = 3
    summarizer: LMBackend | None = None
    instruction_index: int = 0

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be nonnegative")

    def backend_for(self, spec: EpisodeSpec) -> LMBackend:
        if isinstance(self.backend, LMBackend):
            return self.backend
        return self.backend(spec)


@dataclass
class Environment:
    """Loaded scans: graphs and observation stores keyed by scan id."""

    graphs: Mapping[str, NavGraph]
    stores: Mapping[str, ObservationStore]


def _state_dict(state: AgentState) -> dict[str, Any]:
    return {"viewpoint": state.viewpoint, "heading": state.heading, "elevation": state.elevation}


def _result_dict(result: ParsedStep | ParseFailure, step_index: int) -> dict[str, Any]:
    if isinstance(result, ParsedStep):
        return {"type": "ParsedStep", **result.to_dict()}
    return {"type": "ParseFailure", **result.to_dict(step_index)}


def prompt_hash(messages: Sequence[Mapping[str, str]]) -> str:
    payload = json.dumps([dict(m) for m in messages], ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class TrajectoryRecord:
    path_id: int
    scan_id: str
    language_mode: str
    model_id: str
    instruction: str
    visited: list[str]
    steps: list[dict[str, Any]] = field(default_factory=list)
    outcome: Outcome = Outcome.STOPPED
    llm_calls: int = 0
    wall_time: float = 0.0
    detail: str = ""

    @property
    def final_viewpoint(self) -> str:
        return self.visited[-1]

    @property
    def move_count(self) -> int:
        return len(self.visited) - 1

    @property
    def succ_eligible(self) -> bool:
        return self.outcome.succ_eligible

    def failures(self) -> list[dict[str, Any]]:
        out = []
        for s in self.steps:
            out.extend(s.get("retries", []))
            if s["result"]["type"] == "ParseFailure":
                out.append(s["result"])
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "path_id": self.path_id,
            "scan_id": self.scan_id,
            "language_mode": self.language_mode,
            "model_id": self.model_id,
            "instruction": self.instruction,
            "visited": list(self.visited),
            "steps": self.steps,
            "outcome": self.outcome.value,
            "llm_calls": self.llm_calls,
            "action_steps": self.move_count,
            "total_steps": len(self.steps),
            "wall_time": self.wall_time,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrajectoryRecord:
        return cls(
            path_id=data["path_id"],
            scan_id=data["scan_id"],
            language_mode=data["language_mode"],
            model_id=data["model_id"],
            instruction=data["instruction"],
            visited=list(data["visited"]),
            steps=list(data["steps"]),
            outcome=Outcome(data["outcome"]),
            llm_calls=data.get("llm_calls", 0),
            wall_time=data.get("wall_time", 0.0),
            detail=data.get("detail", ""),
        )


def run_episode(
    spec: EpisodeSpec,
    policy: AgentPolicy,
    graph: NavGraph,
    store: ObservationStore,
) -> TrajectoryRecord:
    """Run one episode to completion.

    Model-side failures end the episode with the matching :class:`Outcome`
    instead of raising. Environment errors (a missing observation, an
    isolated viewpoint) are data defects and propagate.
    """
    t0 = time.perf_counter()
    backend = policy.backend_for(spec)
    template = policy.template
    instruction = spec.instructions[policy.instruction_index]
    state = AgentState(spec.start, spec.initial_heading, 0.0)
    history = HistoryBuffer(policy.history_capacity, summary_cap=template.summary_cap, digest_cap=template.digest_cap)
    record = TrajectoryRecord(
        path_id=spec.path_id,
        scan_id=spec.scan_id,
        language_mode=template.language_mode.value,
        model_id=backend.model_id,
        instruction=instruction.text,
        visited=[spec.start],
    )
    outcome = Outcome.STEP_CAP_REACHED

    for t in range(policy.max_steps):
        obs = observe(graph, state, store)
        cands = candidates(graph, state, store)
        messages = render_prompt(template, instruction, obs, cands, history, viewpoint=state.viewpoint)
        entry: dict[str, Any] = {"index": t, "prompt_hash": prompt_hash(messages), "retries": []}
        record.steps.append(entry)

        result: ParsedStep | ParseFailure | None = None
        convo = messages
        for attempt in range(1 + policy.retry_budget):
            record.llm_calls += 1
            try:
                raw = backend.complete(convo)
            except ContextOverflow as exc:
                outcome, record.detail = Outcome.CONTEXT_OVERFLOW, str(exc)
                break
            except BackendFailure as exc:
                outcome, record.detail = Outcome.BACKEND_FAILURE, str(exc)
                break
            result = validate(parse(raw), cands, raw)
            if isinstance(result, ParsedStep):
                entry["raw_response"] = raw
                break
            if attempt < policy.retry_budget:
                entry["retries"].append({"raw_response": raw, **result.to_dict(t)})
                convo = reminder_messages(messages, raw, template)
            else:
                entry["raw_response"] = raw

        if outcome in (Outcome.CONTEXT_OVERFLOW, Outcome.BACKEND_FAILURE):
            entry["result"] = {"type": "Error", "kind": outcome.value, "detail": record.detail}
            entry["state_after"] = _state_dict(state)
            break
        assert result is not None
        entry["result"] = _result_dict(result, t)
        if isinstance(result, ParseFailure):
            entry["state_after"] = _state_dict(state)
            outcome, record.detail = Outcome.FATAL_PARSE, f"{result.kind.value}: {result.detail}"
            break
        if result.action is Action.STOP:
            entry["state_after"] = _state_dict(state)
            outcome = Outcome.STOPPED
            break
        prev = state.viewpoint
        state = step(graph, state, result.action_input)
        record.visited.append(state.viewpoint)
        entry["state_after"] = _state_dict(state)
        history = update_history(
            history, StepDigest(prev, result.action_input, result.thought.splitlines()[0] if result.thought else ""),
            policy.summarizer,
        )

    record.outcome = outcome
    record.wall_time = time.perf_counter() - t0
    return record


# --- suites ------------------------------------------------------------------


def record_path(run_dir: str | Path, path_id: int) -> Path:
    return Path(run_dir) / f"{path_id}.json"


def write_record(run_dir: str | Path, record: TrajectoryRecord) -> Path:
    path = record_path(run_dir, record.path_id)
    write_json(path, record.to_dict())
    return path


def load_record(path: str | Path) -> TrajectoryRecord:
    return TrajectoryRecord.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_run_records(run_dir: str | Path) -> list[TrajectoryRecord]:
    """All per-episode logs in a run directory, ordered by path_id."""
    out = []
    for p in Path(run_dir).glob("*.json"):
        if p.stem.lstrip("-").isdigit():
            out.append(load_record(p))
    return sorted(out, key=lambda r: r.path_id)


def run_suite(
    corpus: Iterable[EpisodeSpec],
    policy: AgentPolicy,
    env: Environment,
    workers: int = 1,
    run_dir: str | Path | None = None,
    force: bool = False,
    on_record: Callable[[TrajectoryRecord, bool], None] | None = None,
) -> list[TrajectoryRecord]:
    """Run every episode, returning records ordered by path_id.

    With ``run_dir``, each record is written to ``<run_dir>/<path_id>.json``
    as soon as its episode finishes, and episodes whose log already exists
    are loaded instead of re-run unless ``force`` is set. ``on_record`` is
    called with ``(record, resumed)`` for every episode.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    episodes = list(corpus)
    done: dict[int, TrajectoryRecord] = {}
    todo: list[EpisodeSpec] = []
    for spec in episodes:
        if run_dir is not None and not force and record_path(run_dir, spec.path_id).exists():
            done[spec.path_id] = load_record(record_path(run_dir, spec.path_id))
            if on_record:
                on_record(done[spec.path_id], True)
        else:
            todo.append(spec)

    def work(spec: EpisodeSpec) -> TrajectoryRecord:
        rec = run_episode(spec, policy, env.graphs[spec.scan_id], env.stores[spec.scan_id])
        if run_dir is not None:
            write_record(run_dir, rec)
        if on_record:
            on_record(rec, False)
        return rec

    if workers == 1:
        fresh = [work(s) for s in todo]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(work, todo))
    done.update((r.path_id, r) for r in fresh)
    return [done[pid] for pid in sorted(done)]
