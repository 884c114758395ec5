"""Per-episode metrics on the 5 m square for a few hand-picked trajectories.

    python demos/square_metrics.py
"""

from __future__ import annotations

from vlnharness.dataset import EpisodeSpec, Instruction, Language
from vlnharness.metrics import evaluate
from vlnharness.synthetic import square_graph

graph = square_graph()
spec = EpisodeSpec(
    path_id=1,
    scan_id="square",
    initial_heading=0.0,
    ground_truth_path=("A", "B", "C"),
    instructions=(Instruction("Go east to B, then north to C.", Language.ENGLISH),),
    shortest_distance=10.0,
)

trajectories = {
    "perfect": ["A", "B", "C"],
    "the long way": ["A", "D", "C"],
    "overshoot": ["A", "B", "C", "D"],
    "gave up at B": ["A", "B"],
    "never moved": ["A"],
}

cols = ("TL", "NE", "SR", "OSR", "SPL", "nDTW", "SDTW", "CLS")
print(f"{'trajectory':<14}" + "".join(f"{c:>8}" for c in cols))
for name, path in trajectories.items():
    m = evaluate(path, spec, graph)
    print(f"{name:<14}" + "".join(f"{m[c]:>8.3f}" for c in cols))
