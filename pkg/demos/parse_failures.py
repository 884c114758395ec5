"""How the reply parser classifies well-formed and broken model output.

    python demos/parse_failures.py
"""

from __future__ import annotations

from vlnharness.env_graph import AgentState, candidates
from vlnharness.react_parser import ParseFailure, parse, validate
from vlnharness.synthetic import square_graph

graph = square_graph()
cands = candidates(graph, AgentState("A", 0.0, 0.0))

replies = {
    "ok": "Thought: the hallway is ahead\nAction: move\nAction Input: B",
    "stop": "Thought: I am at the kitchen\nAction: stop\nAction Input: stop",
    "decorated": "Sure!\nThought: east\nAction: **move**\nAction Input: `D`.",
    "thought only": "Thought: I should probably go to B",
    "not adjacent": "Thought: shortcut\nAction: move\nAction Input: C",
    "refusal": "I'm unable to navigate physical spaces.",
    "prose": "Let's head towards B and see.",
}

for name, raw in replies.items():
    result = validate(parse(raw), cands, raw)
    if isinstance(result, ParseFailure):
        print(f"{name:<13} {result.kind.value:<17} {result.detail}")
    else:
        print(f"{name:<13} {result.action.value:<17} {result.action_input}")
