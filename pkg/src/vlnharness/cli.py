"""Command-line entry points: translate, run, score, inspect.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .agent_loop import (
    AgentPolicy,
    Environment,
    TrajectoryRecord,
    load_record,
    load_run_records,
    run_suite,
)
from .config import RunConfig, load_config
from .dataset import (
    DEFAULT_TRANSLATION_TEMPLATE,
    Language,
    TranslationCache,
    load_r2r,
    load_r2r_file,
    load_translation_template,
    sha256_text,
    translate_corpus,
    translate_observation_store,
    write_json,
    write_r2r_file,
)
from .env_graph import (
    NavGraph,
    ObservationStore,
    dump_observation_store,
    load_graph_file,
    load_observation_store_file,
)
from .errors import (
    BackendFailure,
    ConfigError,
    EmptySuite,
    HarnessError,
    LanguageMismatch,
)
from .lm_client import build_backend
from .metrics import MetricsReport, aggregate, plot_data_csv, render_table
from .prompting import LanguageMode, builtin_template, load_template

log = logging.getLogger("vlnharness")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MANIFEST = "manifest.json"


def connectivity_path(scans_dir: Path, scan: str) -> Path:
    return scans_dir / f"{scan}_connectivity.json"


def observations_path(scans_dir: Path, scan: str, language: Language) -> Path:
    return scans_dir / f"{scan}_observations.{language.value}.json"


def load_graphs(scans_dir: Path, scans: Sequence[str]) -> dict[str, NavGraph]:
    graphs = {}
    for scan in sorted(set(scans)):
        path = connectivity_path(scans_dir, scan)
        if not path.is_file():
            raise ConfigError(f"connectivity file {path} not found")
        graphs[scan] = load_graph_file(path, scan)
    return graphs


def load_stores(scans_dir: Path, scans: Sequence[str], language: Language) -> dict[str, ObservationStore]:
    stores = {}
    for scan in sorted(set(scans)):
        path = observations_path(scans_dir, scan, language)
        if not path.is_file():
            raise ConfigError(f"observation store {path} not found")
        stores[scan] = load_observation_store_file(path)
    return stores


def _scans_in(dataset: Path) -> list[str]:
    try:
        records = json.loads(dataset.read_text(encoding="utf-8"))
        return [r["scan"] for r in records]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read scans from {dataset}: {exc}") from None


def _print(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    sys.stdout.flush()


# --- translate ---------------------------------------------------------------


def cmd_translate(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.translator is None:
        raise ConfigError("config has no translator backend block")
    if cfg.english is None or not cfg.english.is_file():
        raise ConfigError("translate needs an existing English dataset")
    if cfg.arabic is None:
        raise ConfigError("translate needs datasets.arabic as the output path")
    template = (
        load_translation_template(cfg.translation_template) if cfg.translation_template else DEFAULT_TRANSLATION_TEMPLATE
    )
    backend = build_backend(cfg.translator)
    cache = TranslationCache(cfg.translation_cache)
    source_bytes = cfg.english.read_bytes()
    episodes = load_r2r(source_bytes, Language.ENGLISH)
    if args.sample:
        episodes = episodes[: args.sample]
    before = backend.send_count
    try:
        translated = translate_corpus(episodes, backend, template, cache, cfg.translation_workers)
        scans = sorted({ep.scan_id for ep in episodes})
        for scan in scans:
            src = observations_path(cfg.scans_dir, scan, Language.ENGLISH)
            if not src.is_file():
                continue
            store = translate_observation_store(
                load_observation_store_file(src), backend, template, cache, cfg.translation_workers
            )
            write_json(observations_path(cfg.scans_dir, scan, Language.ARABIC), dump_observation_store(store))
    except BackendFailure as exc:
        log.error("translation backend failed (cache kept at %s): %s", cache.path, exc)
        return EXIT_CONFIG
    write_r2r_file(
        cfg.arabic,
        translated,
        {
            "source_hash": sha256_text(source_bytes.decode("utf-8")),
            "translator_model": cfg.translator.model_id,
            "template_hash": template.template_hash,
        },
    )
    _print(f"translated {len(translated)} episodes -> {cfg.arabic} ({backend.send_count - before} backend calls)")
    return EXIT_OK


# --- run ---------------------------------------------------------------------


def _manifest(cfg: RunConfig, mode: LanguageMode, dataset: Path, template_hash: str, path_ids: list[int]) -> dict:
    return {
        "run_id": cfg.run_id,
        "model_id": cfg.backend.model_id,
        "model_label": cfg.backend.display_label,
        "backend_kind": cfg.backend.kind,
        "language_mode": mode.value,
        "dataset": str(dataset.resolve()),
        "scans_dir": str(cfg.scans_dir.resolve()),
        "d_th": cfg.d_th,
        "max_steps": cfg.max_steps,
        "retry_budget": cfg.retry_budget,
        "history_capacity": cfg.history_capacity,
        "template_hash": template_hash,
        "sample_size": len(path_ids),
        "selection": "first N in file order",
        "path_ids": path_ids,
    }


def cmd_run(cfg: RunConfig, args: argparse.Namespace) -> int:
    mode = LanguageMode.parse(args.lang) if args.lang else cfg.language_mode
    if args.sample is not None:
        cfg.sample_size = args.sample
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate(mode)
    dataset = cfg.dataset_path(mode)
    graphs = load_graphs(cfg.scans_dir, _scans_in(dataset))
    episodes = load_r2r_file(dataset, mode.data_language, graphs)
    if cfg.sample_size is not None:
        if cfg.sample_size > len(episodes):
            raise ConfigError(f"sample_size {cfg.sample_size} exceeds corpus size {len(episodes)}")
        episodes = episodes[: cfg.sample_size]
    scans = [ep.scan_id for ep in episodes]
    stores = load_stores(cfg.scans_dir, scans, mode.data_language)
    template = load_template(cfg.template) if cfg.template else builtin_template(mode)
    if template.language_mode is not mode:
        raise LanguageMismatch(f"template is for {template.language_mode.value}, run is {mode.value}")

    if cfg.backend.kind == "oracle":
        backend: Any = lambda spec: build_backend(cfg.backend, spec, graphs[spec.scan_id])  # noqa: E731
    else:
        backend = build_backend(cfg.backend)
    summarizer = build_backend(cfg.summarizer) if cfg.summarizer else None
    policy = AgentPolicy(
        backend,
        template,
        max_steps=cfg.max_steps,
        retry_budget=cfg.retry_budget,
        history_capacity=cfg.history_capacity,
        summarizer=summarizer,
    )
    run_dir = cfg.run_dir
    manifest_path = run_dir / MANIFEST
    manifest = _manifest(cfg, mode, dataset, template.template_hash, [ep.path_id for ep in episodes])
    if manifest_path.exists() and not args.force:
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        if {k: old.get(k) for k in ("model_id", "language_mode", "template_hash")} != {
            k: manifest[k] for k in ("model_id", "language_mode", "template_hash")
        }:
            raise ConfigError(f"{run_dir} holds a different run; pick another run_id or pass --force")
    write_json(manifest_path, manifest)

    total = len(episodes)
    seen = [0]

    def report(rec: TrajectoryRecord, resumed: bool) -> None:
        seen[0] += 1
        tag = " (resumed)" if resumed else ""
        _print(
            f"[{seen[0]}/{total}] path {rec.path_id}: {rec.outcome.value}, "
            f"{rec.move_count} moves, {rec.llm_calls} LM calls{tag}"
        )

    records = run_suite(
        episodes, policy, Environment(graphs, stores), cfg.workers, run_dir, force=args.force, on_record=report
    )
    eligible = sum(r.succ_eligible for r in records)
    _print(f"run {cfg.run_id}: {len(records)} episodes, {eligible} Succ-eligible -> {run_dir}")
    return EXIT_OK


# --- score -------------------------------------------------------------------


def score_run(run_dir: Path) -> MetricsReport:
    manifest_path = run_dir / MANIFEST
    if not manifest_path.is_file():
        raise ConfigError(f"{run_dir} has no {MANIFEST}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    records = load_run_records(run_dir)
    if not records:
        raise EmptySuite(f"{run_dir} has no episode records")
    mode = LanguageMode.parse(manifest["language_mode"])
    dataset = Path(manifest["dataset"])
    scans_dir = Path(manifest["scans_dir"])
    graphs = load_graphs(scans_dir, _scans_in(dataset))
    specs = {ep.path_id: ep for ep in load_r2r_file(dataset, mode.data_language, graphs)}
    return aggregate(
        records,
        specs,
        graphs,
        float(manifest.get("d_th", 3.0)),
        model=manifest.get("model_label") or manifest["model_id"],
        data=mode.table_label,
        run_id=manifest["run_id"],
    )


def cmd_score(args: argparse.Namespace) -> int:
    reports = [score_run(Path(d)) for d in args.run_dirs]
    table = render_table([r.table_row() for r in reports])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(table, encoding="utf-8")
    write_json(out / "report.json", [r.to_dict() for r in reports])
    (out / "plot_data.csv").write_text(plot_data_csv(reports), encoding="utf-8")
    _print(table)
    return EXIT_OK


# --- inspect -----------------------------------------------------------------


def format_record(rec: TrajectoryRecord) -> str:
    lines = [
        f"path_id {rec.path_id}  scan {rec.scan_id}  mode {rec.language_mode}  model {rec.model_id}",
        f"outcome {rec.outcome.value}  moves {rec.move_count}  steps {len(rec.steps)}  LM calls {rec.llm_calls}",
        f"instruction: {rec.instruction}",
        f"visited: {' -> '.join(rec.visited)}",
    ]
    if rec.detail:
        lines.append(f"detail: {rec.detail}")
    for s in rec.steps:
        lines.append(f"--- step {s['index']}")
        for r in s.get("retries", []):
            lines.append(f"  [retry after {r['kind']}] {r['raw_response']}")
        result = s.get("result", {})
        if result.get("type") == "ParsedStep":
            lines.append(f"  Thought: {result['thought']}")
            lines.append(f"  Action: {result['action']}  Action Input: {result['action_input']}")
        else:
            lines.append(f"  {result.get('type')}: {result.get('kind')} {result.get('detail', '')}")
            if "raw_response" in s:
                lines.append(f"  raw: {s['raw_response']}")
        if "state_after" in s:
            lines.append(f"  now at {s['state_after']['viewpoint']}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args: argparse.Namespace) -> int:
    target = Path(args.log)
    if target.is_dir():
        if args.path_id is None:
            raise ConfigError("inspecting a run directory needs --path-id")
        target = target / f"{args.path_id}.json"
    if not target.is_file():
        raise ConfigError(f"{target} not found")
    _print(format_record(load_record(target)))
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlnharness", description="Bilingual zero-shot VLN evaluation harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("translate", help="translate the English dataset and observations to Arabic")
    p.add_argument("--config", required=True)
    p.add_argument("--sample", type=int)

    p = sub.add_parser("run", help="run the agent over a dataset sample")
    p.add_argument("--config", required=True)
    p.add_argument("--lang", choices=["en", "ar", "mixed"])
    p.add_argument("--sample", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true", help="re-run episodes that already have logs")

    p = sub.add_parser("score", help="score run directories into a comparison table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="report")

    p = sub.add_parser("inspect", help="pretty-print one episode log")
    p.add_argument("log", help="episode log file, or a run directory with --path-id")
    p.add_argument("--path-id", type=int)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if hasattr(sys.stdout, "reconfigure"):
        sys.stdout.reconfigure(encoding="utf-8")
    try:
        if args.command == "score":
            return cmd_score(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        cfg = load_config(args.config)
        if args.command == "translate":
            return cmd_translate(cfg, args)
        return cmd_run(cfg, args)
    except (ConfigError, LanguageMismatch) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except HarnessError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
