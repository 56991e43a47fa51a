"""Config files, config hashing, and the run manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone

from urca.embedding import EmbedderConfig
from urca.generation import ChatConfig, OrderingStrategy, default_template, load_template
from urca.pipeline import PipelineConfig
from urca.reduction import ReducerParams
from urca.retrieval import RetrievalConfig


class ConfigError(ValueError):
    """A config file could not be parsed into a PipelineConfig."""


_SECTION_TYPES = {
    "embedder": EmbedderConfig,
    "chat": ChatConfig,
    "retrieval": RetrievalConfig,
    "reducer": ReducerParams,
    "ordering": OrderingStrategy,
}

_SCALAR_FIELDS = (
    "chunk_size",
    "chunk_overlap",
    "max_components",
    "assign_threshold",
    "char_budget",
    "seed",
    "extraction_template_path",
    "answer_template_path",
)


def _build_section(cls, obj: dict, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(map(repr, unknown))}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str) -> PipelineConfig:
    """Load a JSON config whose sections mirror PipelineConfig; omitted parts take defaults."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")

    allowed = set(_SECTION_TYPES) | set(_SCALAR_FIELDS)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(map(repr, unknown))}")

    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name in obj:
            kwargs[name] = _build_section(cls, obj[name], name)
    for name in _SCALAR_FIELDS:
        if name in obj:
            kwargs[name] = obj[name]
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: PipelineConfig) -> dict:
    return dataclasses.asdict(config)


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def templates_hash(config: PipelineConfig) -> str:
    """Content hash over the extraction and answer templates actually in use."""
    extraction = (
        load_template(config.extraction_template_path)
        if config.extraction_template_path
        else default_template("extraction")
    )
    answer = (
        load_template(config.answer_template_path)
        if config.answer_template_path
        else default_template("answer")
    )
    canonical = json.dumps(
        [dataclasses.asdict(extraction), dataclasses.asdict(answer)],
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Everything that determines a run (plus when it happened).

    With deterministic backends, two runs sharing all fields but the
    timestamp produce identical run logs; the timestamp is therefore kept
    out of the run-log header and only reported alongside it.
    """

    config: dict
    config_hash: str
    dataset_path: str
    templates_hash: str
    seed: int
    variant: str
    model_name: str
    timestamp: str

    def header(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "dataset_path": self.dataset_path,
            "templates_hash": self.templates_hash,
            "seed": self.seed,
            "variant": self.variant,
            "model_name": self.model_name,
        }


def make_manifest(config: PipelineConfig, dataset_path: str, variant: str, model_name: str) -> RunManifest:
    return RunManifest(
        config=config_to_dict(config),
        config_hash=config_hash(config),
        dataset_path=dataset_path,
        templates_hash=templates_hash(config),
        seed=config.seed,
        variant=variant,
        model_name=model_name,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
