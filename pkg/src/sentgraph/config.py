"""Run configuration: TOML file sections mirrored 1:1 by command-line flags."""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .builder import BuildConfig
from .llm import ChatClient, HTTPProvider, RetryPolicy, ScriptedProvider, load_script
from .pipeline import PipelineConfig
from .retrieval import DenseRanker, EmbeddingCache, HashingEmbedder, HTTPEmbeddingProvider, LexicalRanker

__all__ = ["ConfigError", "LLMSettings", "RetrievalSettings", "RunConfig", "SECTIONS"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LLMSettings:
    provider: str = "http"
    script: str | None = None
    model: str = ""
    base_url: str = ""
    api_key_env: str = "SENTGRAPH_LLM_API_KEY"
    max_attempts: int = 3
    timeout: float = 60.0
    temperature: float = 0.0
    ledger: str | None = None

    def __post_init__(self):
        if self.provider not in ("http", "scripted"):
            raise ValueError("provider must be 'http' or 'scripted'")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class RetrievalSettings:
    ranker: str = "lexical"
    k1: float = 1.2
    b: float = 0.75
    embedder: str = "hashing"
    embed_dim: int = 256
    embed_model: str = ""
    embed_base_url: str = ""
    embed_api_key_env: str = "SENTGRAPH_EMBED_API_KEY"
    embed_cache: str | None = None

    def __post_init__(self):
        if self.ranker not in ("lexical", "dense"):
            raise ValueError("ranker must be 'lexical' or 'dense'")
        if self.embedder not in ("hashing", "http"):
            raise ValueError("embedder must be 'hashing' or 'http'")


SECTIONS: dict[str, type] = {
    "build": BuildConfig,
    "pipeline": PipelineConfig,
    "llm": LLMSettings,
    "retrieval": RetrievalSettings,
}


def _env_defaults() -> dict[str, dict[str, Any]]:
    env = os.environ
    llm = {k: env[v] for k, v in (("base_url", "SENTGRAPH_LLM_BASE_URL"), ("model", "SENTGRAPH_LLM_MODEL")) if v in env}
    ret = {
        k: env[v]
        for k, v in (("embed_base_url", "SENTGRAPH_EMBED_BASE_URL"), ("embed_model", "SENTGRAPH_EMBED_MODEL"))
        if v in env
    }
    return {"llm": llm, "retrieval": ret}


def _coerce(value: Any, example: Any, annotation: str) -> Any:
    if value is None or annotation.endswith("| None") and value == "":
        return None
    if "tuple" in annotation:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(value)
    if "bool" in annotation:
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    if annotation.startswith("int"):
        return int(value)
    if annotation.startswith("float"):
        return float(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    build: BuildConfig = field(default_factory=BuildConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    llm: LLMSettings = field(default_factory=LLMSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)

    @classmethod
    def flag_map(cls) -> dict[str, tuple[str, str]]:
        """Flag destination -> (section, key) for every configurable key."""
        out = {}
        for section, klass in SECTIONS.items():
            for f in fields(klass):
                out[f.name] = (section, f.name)
        return out

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
        """Defaults, then environment, then the config file, then ``overrides``."""
        merged: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
        for section, values in _env_defaults().items():
            merged[section].update(values)
        if path is not None:
            try:
                data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"invalid config {path}: {exc}") from exc
            for section, values in data.items():
                if section not in SECTIONS:
                    raise ConfigError(f"unknown config section [{section}]")
                if not isinstance(values, dict):
                    raise ConfigError(f"[{section}] must be a table")
                known = {f.name for f in fields(SECTIONS[section])}
                for key in values:
                    if key not in known:
                        raise ConfigError(f"unknown key {key!r} in [{section}]")
                merged[section].update(values)
        flag_map = cls.flag_map()
        for key, value in (overrides or {}).items():
            if key not in flag_map:
                raise ConfigError(f"unknown setting {key!r}")
            if value is not None:
                section, name = flag_map[key]
                merged[section][name] = value

        built = {}
        for section, klass in SECTIONS.items():
            types = {f.name: str(f.type) for f in fields(klass)}
            defaults = klass()
            try:
                values = {k: _coerce(v, getattr(defaults, k), types[k]) for k, v in merged[section].items()}
                built[section] = replace(defaults, **values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {exc}") from exc
        return cls(**built)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def make_client(self, concurrency: int | None = None) -> ChatClient:
        s = self.llm
        policy = RetryPolicy(max_attempts=s.max_attempts, timeout=s.timeout)
        if s.provider == "scripted":
            if not s.script:
                raise ConfigError("the scripted provider needs a script file (--script)")
            try:
                provider = ScriptedProvider(load_script(s.script))
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot load script {s.script}: {exc}") from exc
            model = s.model or "scripted"
        else:
            if not s.base_url or not s.model:
                raise ConfigError(
                    "the http provider needs a base URL and model "
                    "(SENTGRAPH_LLM_BASE_URL / SENTGRAPH_LLM_MODEL or --base-url / --model)"
                )
            provider = HTTPProvider(s.base_url, os.environ.get(s.api_key_env), timeout=s.timeout)
            model = s.model
        return ChatClient(
            provider,
            model=model,
            policy=policy,
            concurrency=concurrency or self.build.llm_concurrency,
            temperature=s.temperature,
            ledger_path=s.ledger,
            seed=self.build.seed,
        )

    def make_embedder(self):
        r = self.retrieval
        if r.embedder == "hashing":
            return HashingEmbedder(r.embed_dim)
        if not r.embed_base_url or not r.embed_model:
            raise ConfigError("the http embedder needs --embed-base-url and --embed-model")
        return HTTPEmbeddingProvider(r.embed_base_url, r.embed_model, os.environ.get(r.embed_api_key_env))

    def make_ranker(self, graph):
        r = self.retrieval
        if r.ranker == "lexical":
            return LexicalRanker.from_graph(graph, k1=r.k1, b=r.b)
        return DenseRanker.from_graph(graph, self.make_embedder(), EmbeddingCache(r.embed_cache))

    def make_similarity(self):
        """Text similarity in [0, 1] used by the builder."""
        if self.retrieval.ranker == "dense":
            from .retrieval import cosine

            embedder = self.make_embedder()
            cache = EmbeddingCache(self.retrieval.embed_cache)

            def similarity(a: str, b: str) -> float:
                va, vb = cache.embed(embedder, [a, b])
                try:
                    return max(0.0, cosine(va, vb))
                except ValueError:
                    return 0.0

            return similarity
        from .retrieval import lexical_cosine

        return lexical_cosine
