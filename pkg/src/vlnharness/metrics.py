"""Navigation metrics: TL, NE, SR, OSR, SPL, nDTW, SDTW and CLS.

All node-to-node distances are geodesic (shortest path over the navigation
graph). ``d_th`` is the success radius in meters; 3.0 is the R2R standard.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from .agent_loop import TrajectoryRecord
from .dataset import EpisodeSpec
from .env_graph import NavGraph, geodesic
from .errors import EmptySuite

DEFAULT_D_TH = 3.0
METRIC_KEYS = ("TL", "NE", "SR", "OSR", "SPL", "nDTW", "SDTW", "CLS")
# reported as percentages in aggregates
PERCENT_KEYS = ("SR", "OSR", "SPL")

PathLike = Union[TrajectoryRecord, Sequence[str]]


def _nodes(path: PathLike) -> list[str]:
    if isinstance(path, TrajectoryRecord):
        return list(path.visited)
    return list(path)


def path_length(graph: NavGraph, path: Sequence[str]) -> float:
    return float(sum(graph.edge_length(u, v) for u, v in zip(path, path[1:])))


def trajectory_length(record: PathLike, graph: NavGraph) -> float:
    """Meters traveled; revisits count every time."""
    return path_length(graph, _nodes(record))


def navigation_error(record: PathLike, goal: str, graph: NavGraph) -> float:
    return geodesic(graph, _nodes(record)[-1], goal)


def oracle_error(record: PathLike, goal: str, graph: NavGraph) -> float:
    return min(geodesic(graph, v, goal) for v in _nodes(record))


def success(record: PathLike, goal: str, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> int:
    if d_th <= 0:
        raise ValueError("d_th must be positive")
    return int(navigation_error(record, goal, graph) <= d_th)


def oracle_success(record: PathLike, goal: str, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> int:
    if d_th <= 0:
        raise ValueError("d_th must be positive")
    return int(oracle_error(record, goal, graph) <= d_th)


def spl(record: PathLike, spec: EpisodeSpec, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> float:
    sr = success(record, spec.goal, graph, d_th)
    shortest = spec.shortest_distance
    if shortest == 0:
        return float(sr)
    return sr * shortest / max(trajectory_length(record, graph), shortest)


def dtw(graph: NavGraph, query: Sequence[str], reference: Sequence[str]) -> float:
    """Classic DTW cost with geodesic node distances (steps (1,0), (0,1), (1,1))."""
    n, m = len(query), len(reference)
    if n == 0 or m == 0:
        raise ValueError("DTW needs two nonempty sequences")
    cost = np.array([[geodesic(graph, q, r) for r in reference] for q in query], dtype=float)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(record: PathLike, spec: EpisodeSpec, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> float:
    reference = spec.ground_truth_path
    return math.exp(-dtw(graph, _nodes(record), reference) / (len(reference) * d_th))


def sdtw(record: PathLike, spec: EpisodeSpec, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> float:
    return success(record, spec.goal, graph, d_th) * ndtw(record, spec, graph, d_th)


def cls(record: PathLike, spec: EpisodeSpec, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> float:
    """Coverage weighted by length score."""
    path = _nodes(record)
    reference = spec.ground_truth_path
    coverage = sum(math.exp(-min(geodesic(graph, r, p) for p in path) / d_th) for r in reference) / len(reference)
    expected = coverage * path_length(graph, reference)
    traveled = path_length(graph, path)
    denom = expected + abs(expected - traveled)
    length_score = 1.0 if denom == 0 else expected / denom
    return coverage * length_score


def evaluate(record: PathLike, spec: EpisodeSpec, graph: NavGraph, d_th: float = DEFAULT_D_TH) -> dict[str, float]:
    """Every per-trajectory metric for one record."""
    sr = success(record, spec.goal, graph, d_th)
    nd = ndtw(record, spec, graph, d_th)
    return {
        "TL": trajectory_length(record, graph),
        "NE": navigation_error(record, spec.goal, graph),
        "OE": oracle_error(record, spec.goal, graph),
        "SR": float(sr),
        "OSR": float(oracle_success(record, spec.goal, graph, d_th)),
        "SPL": spl(record, spec, graph, d_th),
        "nDTW": nd,
        "SDTW": sr * nd,
        "CLS": cls(record, spec, graph, d_th),
    }


# --- aggregation -------------------------------------------------------------


def _means(rows: Sequence[Mapping[str, float]]) -> dict[str, float]:
    keys = ("TL", "NE", "OE", *METRIC_KEYS[2:])
    if not rows:
        return {k: math.nan for k in keys}
    out = {k: math.fsum(r[k] for r in rows) / len(rows) for k in keys}
    for k in PERCENT_KEYS:
        out[k] *= 100.0
    return out


@dataclass
class MetricsReport:
    per_trajectory: dict[int, dict[str, Any]]
    aggregate: dict[str, float]
    aggregate_all: dict[str, float]
    succ_count: int
    total: int
    d_th: float
    model: str = ""
    data: str = ""
    run_id: str = ""

    def table_row(self) -> TableRow:
        a = self.aggregate
        return TableRow(self.model, self.data, self.succ_count, a["TL"], a["NE"], a["SR"], a["OSR"], a["SPL"])

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "model": self.model,
            "data": self.data,
            "d_th": self.d_th,
            "succ_count": self.succ_count,
            "total": self.total,
            "aggregate": {k: _json_float(v) for k, v in self.aggregate.items()},
            "aggregate_all": {k: _json_float(v) for k, v in self.aggregate_all.items()},
            "per_trajectory": {str(k): v for k, v in sorted(self.per_trajectory.items())},
        }


def _json_float(v: float) -> float | None:
    return None if math.isnan(v) else v


def aggregate(
    records: Sequence[TrajectoryRecord],
    specs: Mapping[int, EpisodeSpec],
    graphs: Mapping[str, NavGraph],
    d_th: float = DEFAULT_D_TH,
    *,
    model: str = "",
    data: str = "",
    run_id: str = "",
) -> MetricsReport:
    """Per-trajectory metrics plus means over Succ-eligible records.

    Means over every record, eligible or not, are kept in ``aggregate_all``.
    """
    if not records:
        raise EmptySuite("no trajectory records to score")
    per: dict[int, dict[str, Any]] = {}
    eligible, everything = [], []
    for rec in records:
        spec = specs[rec.path_id]
        row = evaluate(rec, spec, graphs[spec.scan_id], d_th)
        everything.append(row)
        if rec.succ_eligible:
            eligible.append(row)
        per[rec.path_id] = {
            **row,
            "outcome": rec.outcome.value,
            "succ_eligible": rec.succ_eligible,
            "action_steps": rec.move_count,
            "total_steps": len(rec.steps),
            "llm_calls": rec.llm_calls,
            "instruction": rec.instruction,
        }
    return MetricsReport(
        per_trajectory=per,
        aggregate=_means(eligible),
        aggregate_all=_means(everything),
        succ_count=len(eligible),
        total=len(records),
        d_th=d_th,
        model=model,
        data=data,
        run_id=run_id,
    )


# --- report rendering --------------------------------------------------------

TABLE_HEADER = ("Model", "Data", "Succ.", "TL", "NE↓", "SR↑", "OSR↑", "SPL↑")


@dataclass(frozen=True)
class TableRow:
    model: str
    data: str
    succ: int
    tl: float
    ne: float
    sr: float
    osr: float
    spl: float


def format_value(v: float) -> str:
    """Three significant figures, trailing zeros kept; one decimal from 100 up."""
    if v is None or math.isnan(v):
        return "-"
    v = v + 0.0  # no "-0.00"
    if abs(v) < 0.01:
        return f"{v:.2f}"
    s = f"{v:#.3g}"
    if abs(v) >= 100 or s.endswith(".") or "e" in s:
        return f"{v:.1f}"
    return s


def render_table(rows: Sequence[TableRow]) -> str:
    """Aligned plain-text table; consecutive rows of one model share its label."""
    cells = [list(TABLE_HEADER)]
    prev = None
    for r in rows:
        label = "" if r.model == prev else r.model
        prev = r.model
        cells.append(
            [label, r.data, str(r.succ), *(format_value(x) for x in (r.tl, r.ne, r.sr, r.osr, r.spl))]
        )
    widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_HEADER))]

    def line(row: Sequence[str]) -> str:
        parts = [row[i].ljust(widths[i]) if i < 2 else row[i].rjust(widths[i]) for i in range(len(row))]
        return "  ".join(parts).rstrip()

    out = [line(cells[0]), "-" * (sum(widths) + 2 * (len(widths) - 1))]
    out.extend(line(row) for row in cells[1:])
    return "\n".join(out) + "\n"


PLOT_COLUMNS = ("run_id", "model", "data", "path_id", "outcome", "succ_eligible", *METRIC_KEYS)


def plot_data_csv(reports: Sequence[MetricsReport]) -> str:
    """Per-trajectory metric tuples for external charting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_COLUMNS)
    for rep in reports:
        for pid, row in sorted(rep.per_trajectory.items()):
            writer.writerow(
                [rep.run_id, rep.model, rep.data, pid, row["outcome"], int(row["succ_eligible"])]
                + [repr(float(row[k])) for k in METRIC_KEYS]
            )
    return buf.getvalue()


__all__ = [
    "DEFAULT_D_TH",
    "MetricsReport",
    "TableRow",
    "aggregate",
    "cls",
    "dtw",
    "evaluate",
    "format_value",
    "navigation_error",
    "ndtw",
    "oracle_success",
    "plot_data_csv",
    "render_table",
    "sdtw",
    "spl",
    "success",
    "trajectory_length",
]
