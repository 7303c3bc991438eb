"""Run configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .index import IndexConfig
from .read import ReadingConfig

METHODS = ("bm25", "dense", "merged")
# fields that do not change results
_NON_SEMANTIC = ("output_dir", "cache_dir", "workers")


class ConfigValidationError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class RetrievalConfig:
    method: str = "bm25"
    k: int = 10
    time_expansion: bool = False
    include_session_dates: bool = True
    merge_pathways: tuple[str, ...] = ("value_only", "fact_only")
    pathway_method: str = "bm25"

    def problems(self) -> list[str]:
        out = []
        if self.method not in METHODS:
            out.append(f"retrieval.method: unknown value {self.method!r}")
        if self.pathway_method not in ("bm25", "dense"):
            out.append(f"retrieval.pathway_method: unknown value {self.pathway_method!r}")
        if not isinstance(self.k, int) or self.k <= 0:
            out.append(f"retrieval.k: must be a positive integer, got {self.k!r}")
        if self.method == "merged" and len(self.merge_pathways) < 2:
            out.append("retrieval.merge_pathways: merged retrieval needs at least two pathways")
        return out


@dataclass(frozen=True)
class EndpointConfig:
    kind: str = "stub"          # stub | http
    url: str = ""
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    batch_size: int = 64


@dataclass(frozen=True)
class ProvidersConfig:
    generator: EndpointConfig = EndpointConfig()
    reader: EndpointConfig = EndpointConfig()
    judge: EndpointConfig = EndpointConfig()
    embedder: EndpointConfig | None = None

    def problems(self) -> list[str]:
        out = []
        for name in ("generator", "reader", "judge", "embedder"):
            ep = getattr(self, name)
            if ep is None:
                continue
            if ep.kind not in ("stub", "http"):
                out.append(f"providers.{name}.kind: unknown value {ep.kind!r}")
            elif ep.kind == "http" and not (ep.url and ep.model):
                out.append(f"providers.{name}: http endpoints need url and model")
        return out


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = (5, 10)
    strict: bool = False


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str = ""
    dataset_format: str = "native"      # native | released
    output_dir: str = "runs/default"
    cache_dir: str | None = None
    seed: int = 0
    workers: int = 1
    tolerant: bool = False
    index: IndexConfig = IndexConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    reading: ReadingConfig = ReadingConfig()
    providers: ProvidersConfig = ProvidersConfig()
    eval: EvalConfig = EvalConfig()
    grid: dict | None = None            # {"granularity": [...], "key_strategy": [...], "k": [...]}

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        problems: list[str] = []
        cfg = _build(cls, d, "", problems)
        if cfg is not None:
            problems += cfg.problems()
        if problems:
            raise ConfigValidationError(problems)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def problems(self) -> list[str]:
        out = []
        if not self.dataset_path:
            out.append("dataset_path: required")
        if self.dataset_format not in ("native", "released"):
            out.append(f"dataset_format: unknown value {self.dataset_format!r}")
        if self.workers < 1:
            out.append("workers: must be >= 1")
        out += [f"index.{p}" for p in self.index.problems()]
        out += self.retrieval.problems()
        out += [f"reading.{p}" for p in self.reading.problems()]
        out += self.providers.problems()
        if self.retrieval.method == "dense" or (self.retrieval.method == "merged" and self.retrieval.pathway_method == "dense"):
            if self.providers.embedder is None:
                out.append("providers.embedder: required for dense retrieval")
        if self.retrieval.method == "merged":
            for p in self.retrieval.merge_pathways:
                sub = replace(self.index, key_strategy=p).problems()
                out += [f"retrieval.merge_pathways[{p}]: {x}" for x in sub]
        if any(k <= 0 for k in self.eval.ks):
            out.append("eval.ks: cutoffs must be positive")
        if self.grid:
            unknown = set(self.grid) - {"granularity", "key_strategy", "k"}
            if unknown:
                out.append(f"grid: unknown axes {sorted(unknown)}")
            else:
                for cell in self.expand_grid():
                    out += [f"grid[{cell.cell_name()}].{p}" for p in cell.index.problems() + cell.retrieval.problems()]
        return out

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def fingerprint(self) -> str:
        d = self.to_dict()
        for k in _NON_SEMANTIC:
            d.pop(k, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def with_overrides(self, **flat) -> "RunConfig":
        """Apply dotted overrides such as ``{"retrieval.k": 5}``; ``None`` values are ignored."""
        d = self.to_dict()
        for key, value in flat.items():
            if value is None:
                continue
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
        return RunConfig.from_dict(d)

    def expand_grid(self) -> list["RunConfig"]:
        if not self.grid:
            return [self]
        axes = {
            "granularity": self.grid.get("granularity") or [self.index.granularity],
            "key_strategy": self.grid.get("key_strategy") or [self.index.key_strategy],
            "k": self.grid.get("k") or [self.retrieval.k],
        }
        cells = []
        for g, ks, k in itertools.product(axes["granularity"], axes["key_strategy"], axes["k"]):
            cells.append(replace(
                self, grid=None,
                index=replace(self.index, granularity=g, key_strategy=ks),
                retrieval=replace(self.retrieval, k=k),
                eval=replace(self.eval, ks=tuple(sorted(set(self.eval.ks) | {k}))),
            ))
        return cells

    def cell_name(self) -> str:
        return f"{self.index.granularity}-{self.index.key_strategy}-k{self.retrieval.k}"


def _build(cls, d, prefix: str, problems: list[str]):
    """Instantiate a (nested) frozen dataclass from a dict, collecting problems."""
    if not isinstance(d, dict):
        problems.append(f"{prefix.rstrip('.') or 'config'}: expected an object")
        return None
    known = {f.name: f for f in fields(cls)}
    for k in d:
        if k not in known:
            problems.append(f"{prefix}{k}: unknown field")
    kwargs = {}
    nested = {
        "index": IndexConfig, "retrieval": RetrievalConfig, "reading": ReadingConfig,
        "providers": ProvidersConfig, "eval": EvalConfig,
        "generator": EndpointConfig, "reader": EndpointConfig, "judge": EndpointConfig,
        "embedder": EndpointConfig,
    }
    for name, f in known.items():
        if name not in d:
            continue
        value = d[name]
        if name in nested and value is not None and name != "grid":
            value = _build(nested[name], value, f"{prefix}{name}.", problems)
            if value is None:
                continue
        elif isinstance(value, list) and name != "grid":
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        problems.append(f"{prefix.rstrip('.') or 'config'}: {e}")
        return None
