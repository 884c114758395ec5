"""End-to-end CLI walkthrough on a synthetic workspace with the oracle backend.

Builds a grid scan with English and Arabic data, runs the shortest-path
oracle in both language modes, then scores the two runs into one table.

    python demos/oracle_run.py [workdir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from vlnharness.cli import main
from vlnharness.synthetic import write_workspace

CONFIG = """run_id: {run_id}
output_dir: runs
scans_dir: scans
language_mode: {lang}
datasets:
  english: data/r2r_en.json
  arabic: data/r2r_ar.json
backend:
  kind: oracle
  model_id: Oracle
"""


def demo(root: Path) -> None:
    write_workspace(root, n_episodes=15, seed=7)
    runs = []
    for lang in ("en", "ar"):
        cfg = root / f"{lang}.yaml"
        cfg.write_text(CONFIG.format(run_id=f"oracle-{lang}", lang=lang), encoding="utf-8")
        main(["run", "--config", str(cfg)])
        runs.append(str(root / "runs" / f"oracle-{lang}"))
    print()
    main(["score", *runs, "--out", str(root / "report")])
    print()
    main(["inspect", runs[1], "--path-id", "1"])


if __name__ == "__main__":
    if len(sys.argv) > 1:
        demo(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            demo(Path(tmp))
