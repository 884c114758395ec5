"""Run configuration: one YAML file, ``${VAR}`` interpolated from the environment."""

from __future__ import annotations

import os
import re
import string
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, LanguageMismatch
from .lm_client import BackendConfig
from .prompting import LanguageMode

RUN_ID = re.compile(r"[A-Za-z0-9][A-Za-z0-9._\-]*")


def interpolate(value: Any, env: Mapping[str, str] | None = None) -> Any:
    """Substitute ``${VAR}`` in every string of a nested structure."""
    env = os.environ if env is None else env
    if isinstance(value, str):
        try:
            return string.Template(value).substitute(env)
        except KeyError as exc:
            raise ConfigError(f"environment variable {exc.args[0]} is not set") from None
        except ValueError as exc:
            raise ConfigError(f"bad placeholder in {value!r}: {exc}") from None
    if isinstance(value, Mapping):
        return {k: interpolate(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


@dataclass
class RunConfig:
    run_id: str
    output_dir: Path
    scans_dir: Path
    english: Path | None = None
    arabic: Path | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    language_mode: LanguageMode = LanguageMode.ENGLISH
    max_steps: int = 15
    retry_budget: int = 1
    workers: int = 1
    d_th: float = 3.0
    sample_size: int | None = None
    history_capacity: int = 3
    template: Path | None = None
    summarizer: BackendConfig | None = None
    translator: BackendConfig | None = None
    translation_template: Path | None = None
    translation_cache: Path | None = None
    translation_workers: int = 1

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.run_id

    def dataset_path(self, mode: LanguageMode | None = None) -> Path:
        mode = mode or self.language_mode
        path = self.english if mode is LanguageMode.ENGLISH else self.arabic
        if path is None:
            lang = mode.data_language.display
            raise LanguageMismatch(f"--lang {mode.value} needs an {lang} dataset, none is configured")
        return path

    def validate(self, mode: LanguageMode | None = None) -> None:
        if not RUN_ID.fullmatch(self.run_id):
            raise ConfigError(f"run_id {self.run_id!r} is not filesystem-safe")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if self.retry_budget < 0:
            raise ConfigError("retry_budget must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.d_th <= 0:
            raise ConfigError("d_th must be positive")
        if self.sample_size is not None and self.sample_size < 1:
            raise ConfigError("sample_size must be positive")
        if not self.scans_dir.is_dir():
            raise ConfigError(f"scans_dir {self.scans_dir} does not exist")
        dataset = self.dataset_path(mode)
        if not dataset.is_file():
            raise ConfigError(f"dataset {dataset} does not exist")
        if self.template is not None and not self.template.is_file():
            raise ConfigError(f"template {self.template} does not exist")


def _path(base: Path, value: Any) -> Path | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _backend(data: Any, what: str) -> BackendConfig | None:
    if data is None:
        return None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{what} must be a mapping")
    return BackendConfig.from_mapping(data)


_TOP_KEYS = {
    "run_id", "output_dir", "scans_dir", "datasets", "backend", "language_mode", "max_steps",
    "retry_budget", "workers", "d_th", "sample_size", "history_capacity", "template",
    "summarizer", "translator", "translation",
}


def config_from_mapping(data: Mapping[str, Any], base_dir: Path) -> RunConfig:
    data = interpolate(dict(data))
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("run_id", "scans_dir"):
        if key not in data:
            raise ConfigError(f"config is missing {key!r}")
    datasets = data.get("datasets") or {}
    translation = data.get("translation") or {}
    try:
        mode = LanguageMode.parse(data.get("language_mode", "en"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    output_dir = _path(base_dir, data.get("output_dir", "runs"))
    try:
        cfg = RunConfig(
            run_id=str(data["run_id"]),
            output_dir=output_dir,
            scans_dir=_path(base_dir, data["scans_dir"]),
            english=_path(base_dir, datasets.get("english")),
            arabic=_path(base_dir, datasets.get("arabic")),
            backend=_backend(data.get("backend", {}), "backend") or BackendConfig(),
            language_mode=mode,
            max_steps=int(data.get("max_steps", 15)),
            retry_budget=int(data.get("retry_budget", 1)),
            workers=int(data.get("workers", 1)),
            d_th=float(data.get("d_th", 3.0)),
            sample_size=None if data.get("sample_size") is None else int(data["sample_size"]),
            history_capacity=int(data.get("history_capacity", 3)),
            template=_path(base_dir, data.get("template")),
            summarizer=_backend(data.get("summarizer"), "summarizer"),
            translator=_backend(data.get("translator"), "translator"),
            translation_template=_path(base_dir, translation.get("template")),
            translation_cache=_path(base_dir, translation.get("cache", str(output_dir / "translation_cache.jsonl"))),
            translation_workers=int(translation.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a mapping")
    return config_from_mapping(data, path.resolve().parent)
