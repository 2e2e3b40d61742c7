"""Run configuration, read from one JSON file.

Paths inside the file are resolved relative to the file's own directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .corpus import DEFAULT_MAX_TOKENS, MIN_MAX_TOKENS
from .diffusion import DiffusionParams
from .embedding import DEFAULT_DIM, Embedder, HashingEmbedder, HTTPEmbedder
from .extraction import Extractor, HTTPProvider, MockProvider, Provider
from .rerank import DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_N_DENSE


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "mock"
    endpoint: str | None = None
    model: str | None = None
    key_env: str = "GISTGRAPH_API_KEY"
    max_workers: int = 4
    timeout: float = 60.0


@dataclass(frozen=True)
class EmbedderConfig:
    mode: str = "mock"
    dim: int = DEFAULT_DIM
    bigrams: bool = True
    endpoint: str | None = None
    model: str | None = None
    key_env: str = "GISTGRAPH_API_KEY"
    query_instruction: str = ""
    batch_size: int = 64


@dataclass(frozen=True)
class Config:
    corpus: str = "corpus.jsonl"
    dataset: str | None = None
    workdir: str = "index"
    max_tokens: int = DEFAULT_MAX_TOKENS
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    epsilon: float = DEFAULT_EPSILON
    delta: float = DEFAULT_DELTA
    k_final: int = 5
    m_split: int = 2
    n_dense: int = DEFAULT_N_DENSE
    recall_ks: tuple[int, ...] = (5, 10)
    generate_answers: bool = True
    eval_workers: int = 1

    def __post_init__(self):
        for part in (self.provider, self.embedder):
            if part.mode not in ("mock", "http"):
                raise ConfigError(f"mode must be 'mock' or 'http', got {part.mode!r}")
            if part.mode == "http" and not (part.endpoint and part.model):
                raise ConfigError("http mode needs 'endpoint' and 'model'")
        if self.embedder.dim < 1:
            raise ConfigError("embedder dim must be positive")
        if self.max_tokens < MIN_MAX_TOKENS:
            raise ConfigError(f"max_tokens must be >= {MIN_MAX_TOKENS}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if self.k_final < 1 or self.m_split < 2:
            raise ConfigError("k_final must be >= 1 and m_split >= 2")
        if self.n_dense < self.k_final:
            raise ConfigError("n_dense must be >= k_final")
        if not self.recall_ks or min(self.recall_ks) < 1:
            raise ConfigError("recall_ks must be positive integers")

    @property
    def workdir_path(self) -> Path:
        return Path(self.workdir)

    def with_overrides(self, **changes) -> "Config":
        """Copy with top-level or diffusion fields replaced (``alpha=...`` etc.)."""
        names = {f.name for f in fields(DiffusionParams)}
        diff = {k: changes.pop(k) for k in list(changes) if k in names}
        try:
            params = replace(self.diffusion, **diff) if diff else self.diffusion
            return replace(self, diffusion=params, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["recall_ks"] = list(self.recall_ks)
        return rec


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def config_from_dict(data: dict, base: Path | str = ".") -> Config:
    base = Path(base)
    data = dict(data)
    known = {f.name for f in fields(Config)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if "provider" in data:
            data["provider"] = ProviderConfig(**data["provider"])
        if "embedder" in data:
            data["embedder"] = EmbedderConfig(**data["embedder"])
        if "diffusion" in data:
            data["diffusion"] = DiffusionParams(**data["diffusion"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section: {exc}") from exc
    if "recall_ks" in data:
        data["recall_ks"] = tuple(int(k) for k in data["recall_ks"])
    for key in ("corpus", "dataset", "workdir"):
        if key in data:
            data[key] = _resolve(base, data[key])
    data.setdefault("corpus", _resolve(base, "corpus.jsonl"))
    data.setdefault("workdir", _resolve(base, "index"))
    try:
        return Config(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data, path.parent)


def make_provider(cfg: ProviderConfig) -> Provider:
    if cfg.mode == "mock":
        return MockProvider()
    return HTTPProvider(cfg.endpoint, cfg.model, key_env=cfg.key_env, timeout=cfg.timeout)


def make_extractor(config: Config, provider: Provider | None = None) -> Extractor:
    return Extractor(provider or make_provider(config.provider), max_workers=config.provider.max_workers)


def make_embedder(cfg: EmbedderConfig) -> Embedder:
    if cfg.mode == "mock":
        return HashingEmbedder(cfg.dim, bigrams=cfg.bigrams)
    instructions = {"query": cfg.query_instruction} if cfg.query_instruction else None
    return HTTPEmbedder(
        cfg.endpoint, cfg.model, cfg.dim, key_env=cfg.key_env,
        instructions=instructions, batch_size=cfg.batch_size,
    )
