"""Turn chat sessions into key-value memory items and index them.

Values are sessions, rounds, or derived text (summary / facts). Keys are the
user-only projection of the value, optionally expanded with derived text.
Item ids depend only on the source session, so indexing is online: a
session's items never depend on later sessions.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import derive
from .memstore import ChatSession, EmptyContentError, Timestamp, transcript, user_only_text
from .providers import Embedder, TextGenerator, tokenize

log = logging.getLogger(__name__)

GRANULARITIES = ("session", "round", "summary", "facts")
KEY_STRATEGIES = (
    "value_only", "value_plus_fact", "value_plus_summary", "value_plus_keyphrase",
    "fact_only", "summary_only", "keyphrase_only",
)
# derived kind each strategy needs
_STRATEGY_KIND = {
    "value_plus_fact": "facts", "fact_only": "facts",
    "value_plus_summary": "summary", "summary_only": "summary",
    "value_plus_keyphrase": "keyphrases", "keyphrase_only": "keyphrases",
}
FORMAT_TAG = "longmem-index/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IndexConfig:
    granularity: str = "session"
    key_strategy: str = "value_only"
    time_indexing: bool = False

    def problems(self) -> list[str]:
        out = []
        if self.granularity not in GRANULARITIES:
            out.append(f"granularity: unknown value {self.granularity!r}")
        if self.key_strategy not in KEY_STRATEGIES:
            out.append(f"key_strategy: unknown value {self.key_strategy!r}")
        if self.key_strategy in ("summary_only", "value_plus_summary") and self.granularity != "session":
            out.append(f"key_strategy: {self.key_strategy} requires granularity=session")
        elif self.granularity in ("summary", "facts") and self.key_strategy != "value_only":
            out.append(f"key_strategy: derived granularity {self.granularity} only supports value_only")
        return out

    def validate(self) -> "IndexConfig":
        probs = self.problems()
        if probs:
            raise ConfigError("; ".join(probs))
        return self

    @property
    def derived_kind(self) -> str | None:
        return _STRATEGY_KIND.get(self.key_strategy)


@dataclass(frozen=True)
class MemoryItem:
    item_id: str
    value_text: str
    user_text: str                      # user-only projection of the value source
    source_session_id: str
    timestamp: Timestamp
    key_text: str = ""
    source_round_index: int | None = None
    turn_indices: tuple[int, ...] = ()  # session turns the value came from
    event_dates: tuple[dt.date, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timestamp"] = str(self.timestamp)
        d["turn_indices"] = list(self.turn_indices)
        d["event_dates"] = [Timestamp(x).date_str() for x in self.event_dates]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MemoryItem":
        d = dict(d)
        d["timestamp"] = Timestamp.parse(d["timestamp"])
        d["turn_indices"] = tuple(d.get("turn_indices", ()))
        d["event_dates"] = tuple(Timestamp.parse(x).date for x in d.get("event_dates", ()))
        return cls(**d)


def _rounds(session: ChatSession) -> list[tuple[int, ...]]:
    """Turn-index groups: each user turn plus the assistant turn right after it.

    Assistant turns that do not follow a user turn belong to no round.
    """
    turns = session.turns
    out = []
    i = 0
    while i < len(turns):
        if turns[i].speaker == "user":
            if i + 1 < len(turns) and turns[i + 1].speaker == "assistant":
                out.append((i, i + 1))
                i += 2
                continue
            out.append((i,))
        i += 1
    return out


def decompose(session: ChatSession, granularity: str,
              generator: TextGenerator | None = None) -> list[MemoryItem]:
    """Split a session into value-only items (keys unset)."""
    try:
        user_text = user_only_text(session)
    except EmptyContentError:
        log.warning("session %s has no user turns; skipped", session.session_id)
        return []
    sid, ts = session.session_id, session.timestamp
    every = tuple(range(len(session.turns)))
    if granularity == "session":
        return [MemoryItem(sid, transcript(session.turns), user_text, sid, ts, turn_indices=every)]
    if granularity == "round":
        items = []
        for r, idx in enumerate(_rounds(session)):
            turns = [session.turns[i] for i in idx]
            items.append(MemoryItem(
                f"{sid}:r{r}", transcript(turns), user_only_text(turns), sid, ts,
                source_round_index=r, turn_indices=idx,
            ))
        return items
    if generator is None:
        raise ConfigError(f"granularity={granularity} needs a generation provider")
    if granularity == "summary":
        s = derive.derive_summary(user_text, generator, sid).payload
        return [MemoryItem(f"{sid}:s", s, s, sid, ts, turn_indices=every)]
    if granularity == "facts":
        facts = derive.derive_facts(user_text, generator, sid).payload
        return [MemoryItem(f"{sid}:f{j}", f, f, sid, ts, turn_indices=every) for j, f in enumerate(facts)]
    raise ConfigError(f"unknown granularity {granularity!r}")


def expand_key(item: MemoryItem, key_strategy: str,
               derived: Mapping[str, derive.DerivedText] | None = None) -> MemoryItem:
    """Return a copy of ``item`` with ``key_text`` set; ``value_text`` is untouched."""
    if key_strategy == "value_only":
        return replace(item, key_text=item.user_text)
    kind = _STRATEGY_KIND.get(key_strategy)
    if kind is None:
        raise ConfigError(f"unknown key strategy {key_strategy!r}")
    if kind == "summary" and item.source_round_index is not None:
        raise ConfigError(f"{key_strategy} requires session granularity")
    if not derived or kind not in derived:
        raise ConfigError(f"{key_strategy} needs derived {kind} for item {item.item_id}")
    extra = "\n".join(derived[kind].texts())
    if key_strategy.startswith("value_plus_"):
        key = f"{extra}\n{item.user_text}" if extra else item.user_text
    else:
        key = extra
        if not key:
            log.warning("item %s: no derived %s; falling back to the value as key", item.item_id, kind)
            key = item.user_text
    return replace(item, key_text=key)


class LexicalIndex:
    """Inverted index over key tokens with per-document term frequencies."""

    def __init__(self, docs: Sequence[Sequence[str]] = ()):
        self.postings: dict[str, dict[int, int]] = defaultdict(dict)
        self.doc_len: list[int] = []
        for toks in docs:
            self.add(toks)

    def add(self, tokens: Sequence[str]) -> int:
        doc = len(self.doc_len)
        self.doc_len.append(len(tokens))
        for tok, tf in Counter(tokens).items():
            self.postings[tok][doc] = tf
        return doc

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    @property
    def avgdl(self) -> float:
        return sum(self.doc_len) / self.n_docs if self.doc_len else 0.0

    def df(self, token: str) -> int:
        return len(self.postings.get(token, ()))

    def to_dict(self) -> dict:
        return {
            "doc_len": self.doc_len,
            "postings": {t: {str(d): tf for d, tf in p.items()} for t, p in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LexicalIndex":
        idx = cls()
        idx.doc_len = list(d["doc_len"])
        for t, p in d["postings"].items():
            idx.postings[t] = {int(k): v for k, v in p.items()}
        return idx


@dataclass
class IndexedMemory:
    items: list[MemoryItem]
    lexical: LexicalIndex
    time_index: dict[dt.date, set[str]] = field(default_factory=dict)
    dense: np.ndarray | None = None
    config: IndexConfig = field(default_factory=IndexConfig)

    def __post_init__(self):
        self._pos = {it.item_id: i for i, it in enumerate(self.items)}
        if len(self._pos) != len(self.items):
            raise ValueError("duplicate item ids")

    def item(self, item_id: str) -> MemoryItem:
        return self.items[self._pos[item_id]]

    def position(self, item_id: str) -> int:
        return self._pos[item_id]

    def __len__(self) -> int:
        return len(self.items)


def index_session(session: ChatSession, config: IndexConfig,
                  generator: TextGenerator | None = None) -> list[MemoryItem]:
    """All finished items (keys and event dates set) for one session."""
    items = decompose(session, config.granularity, generator)
    kind = config.derived_kind
    out = []
    for it in items:
        derived = {}
        if kind is not None:
            if generator is None:
                raise ConfigError(f"key strategy {config.key_strategy} needs a generation provider")
            fn = {"facts": derive.derive_facts, "summary": derive.derive_summary,
                  "keyphrases": derive.derive_keyphrases}[kind]
            derived[kind] = fn(it.user_text, generator, it.item_id)
        it = expand_key(it, config.key_strategy, derived)
        if config.time_indexing:
            if generator is None:
                raise ConfigError("time indexing needs a generation provider")
            ev = derive.derive_timed_events(it.user_text, session.timestamp, generator, it.item_id)
            it = replace(it, event_dates=tuple(sorted({e.date.date for e in ev.payload})))
        out.append(it)
    return out


def build_index(sessions: Iterable[ChatSession], config: IndexConfig,
                generator: TextGenerator | None = None, embedder: Embedder | None = None,
                tolerant: bool = False) -> IndexedMemory:
    """Index sessions in ingestion order.

    With ``tolerant=True`` a session whose derivation fails is logged and
    skipped instead of aborting the build.
    """
    config.validate()
    items: list[MemoryItem] = []
    for s in sessions:
        try:
            items.extend(index_session(s, config, generator))
        except (derive.DerivationError, RuntimeError) as e:
            if not tolerant:
                raise
            log.warning("session %s skipped: %s", s.session_id, e)
    return assemble(items, config, embedder)


def assemble(items: list[MemoryItem], config: IndexConfig, embedder: Embedder | None = None) -> IndexedMemory:
    lexical = LexicalIndex(tokenize(it.key_text) for it in items)
    time_index: dict[dt.date, set[str]] = {}
    if config.time_indexing:
        for it in items:
            for d in {*it.event_dates, it.timestamp.date}:
                time_index.setdefault(d, set()).add(it.item_id)
    dense = embedder.embed_batch([it.key_text for it in items]) if (embedder and items) else None
    return IndexedMemory(items, lexical, time_index, dense, config)


# ---------------------------------------------------------------------------
# persistence

def save_index(memory: IndexedMemory, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "items.jsonl", "w", encoding="utf-8") as f:
        for it in memory.items:
            f.write(json.dumps(it.to_dict(), ensure_ascii=False) + "\n")
    (d / "lexical.json").write_text(json.dumps(memory.lexical.to_dict()), encoding="utf-8")
    ti = {Timestamp(k).date_str(): sorted(v) for k, v in sorted(memory.time_index.items())}
    (d / "time_index.json").write_text(json.dumps(ti, indent=1), encoding="utf-8")
    if memory.dense is not None:
        mat = np.ascontiguousarray(memory.dense, dtype="<f4")
        mat.tofile(d / "dense.f32")
        (d / "dense.json").write_text(json.dumps({"count": mat.shape[0], "dim": mat.shape[1]}))
    manifest = {"format": FORMAT_TAG, "config": asdict(memory.config), "count": len(memory)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return d


def load_index(directory) -> IndexedMemory:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT_TAG:
        raise ValueError(f"{d}: unsupported index format {manifest.get('format')!r}")
    with open(d / "items.jsonl", encoding="utf-8") as f:
        items = [MemoryItem.from_dict(json.loads(line)) for line in f if line.strip()]
    lexical = LexicalIndex.from_dict(json.loads((d / "lexical.json").read_text(encoding="utf-8")))
    ti_raw = json.loads((d / "time_index.json").read_text(encoding="utf-8"))
    time_index = {Timestamp.parse(k).date: set(v) for k, v in ti_raw.items()}
    dense = None
    if (d / "dense.json").exists():
        meta = json.loads((d / "dense.json").read_text())
        dense = np.fromfile(d / "dense.f32", dtype="<f4").reshape(meta["count"], meta["dim"])
    return IndexedMemory(items, lexical, time_index, dense, IndexConfig(**manifest["config"]))
