"""Bilingual (English/Arabic) evaluation harness for zero-shot LLM navigation agents."""

from .agent_loop import (
    AgentPolicy,
    Environment,
    Outcome,
    TrajectoryRecord,
    run_episode,
    run_suite,
)
from .dataset import (
    BilingualCorpus,
    EpisodeSpec,
    Instruction,
    Language,
    TranslationCache,
    load_r2r,
    pair_corpora,
    translate_corpus,
)
from .env_graph import (
    AgentState,
    CandidateSet,
    NavGraph,
    Observation,
    ObservationStore,
    candidates,
    geodesic,
    load_graph,
    observe,
    step,
)
from .lm_client import LMBackend, OracleBackend, ScriptedBackend, make_oracle_backend
from .metrics import MetricsReport, aggregate
from .prompting import (
    HistoryBuffer,
    LanguageMode,
    PromptTemplate,
    builtin_template,
    render_prompt,
    update_history,
)
from .react_parser import FailureKind, ParsedStep, ParseFailure, parse, validate

__version__ = "0.1.0"

__all__ = [
    "AgentPolicy",
    "AgentState",
    "BilingualCorpus",
    "CandidateSet",
    "Environment",
    "EpisodeSpec",
    "FailureKind",
    "HistoryBuffer",
    "Instruction",
    "LMBackend",
    "Language",
    "LanguageMode",
    "MetricsReport",
    "NavGraph",
    "Observation",
    "ObservationStore",
    "OracleBackend",
    "Outcome",
    "ParseFailure",
    "ParsedStep",
    "PromptTemplate",
    "ScriptedBackend",
    "TrajectoryRecord",
    "TranslationCache",
    "aggregate",
    "builtin_template",
    "candidates",
    "geodesic",
    "load_graph",
    "load_r2r",
    "make_oracle_backend",
    "observe",
    "pair_corpora",
    "parse",
    "render_prompt",
    "run_episode",
    "run_suite",
    "step",
    "translate_corpus",
    "update_history",
    "validate",
]
