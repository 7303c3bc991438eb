"""Scoring and ranking memory items for a question."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import prompts
from .derive import parse_json_lenient, DerivationError
from .index import ConfigError, IndexedMemory
from .memstore import Timestamp
from .providers import Embedder, GenerationRequest, TextGenerator, tokenize

log = logging.getLogger(__name__)

K1 = 1.2
B = 0.75


class EmptyQueryError(ValueError):
    pass


class ExpansionError(ValueError):
    pass


@dataclass(frozen=True)
class TimeRange:
    start: Timestamp
    end: Timestamp

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"time range start {self.start} after end {self.end}")

    def contains(self, date) -> bool:
        return self.start.date <= date <= self.end.date

    def to_dict(self) -> dict:
        return {"start": self.start.date_str(), "end": self.end.date_str()}


@dataclass(frozen=True)
class QueryPlan:
    question: str
    question_date: Timestamp
    k: int = 10
    time_range: TimeRange | None = None

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")


@dataclass(frozen=True)
class RankedEntry:
    item_id: str
    score: float


@dataclass
class RankedList:
    entries: list[RankedEntry]
    method: str
    time_range: TimeRange | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return [e.item_id for e in self.entries]

    def top(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k], self.method, self.time_range, dict(self.meta))

    def __len__(self):
        return len(self.entries)


def _rank(scores: Sequence[float], memory: IndexedMemory, method: str) -> RankedList:
    """Sort by score desc, then earlier timestamp, then item id."""
    order = sorted(
        range(len(memory.items)),
        key=lambda i: (-scores[i], memory.items[i].timestamp.sort_key, memory.items[i].item_id),
    )
    return RankedList([RankedEntry(memory.items[i].item_id, float(scores[i])) for i in order], method)


def bm25_raw(query_tokens: Sequence[str], memory: IndexedMemory, k1: float = K1, b: float = B) -> list[float]:
    """Okapi BM25 of every item, summed over query tokens (repeats count)."""
    lex = memory.lexical
    n = lex.n_docs
    scores = [0.0] * n
    if n == 0:
        return scores
    avgdl = lex.avgdl or 1.0
    for tok in query_tokens:
        posting = lex.postings.get(tok)
        if not posting:
            continue
        df = len(posting)
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        for doc, tf in posting.items():
            norm = k1 * (1.0 - b + b * lex.doc_len[doc] / avgdl)
            scores[doc] += idf * tf * (k1 + 1.0) / (tf + norm)
    return scores


def bm25_scores(query, memory: IndexedMemory) -> RankedList:
    tokens = tokenize(query) if isinstance(query, str) else list(query)
    if not tokens:
        raise EmptyQueryError("query has no tokens")
    return _rank(bm25_raw(tokens, memory), memory, "bm25")


def dense_scores(question: str, memory: IndexedMemory, embedder: Embedder) -> RankedList:
    if memory.dense is None:
        raise ConfigError("index has no dense vectors; build it with an embedder")
    q = embedder.embed_batch([question])[0].astype(np.float64)
    mat = memory.dense.astype(np.float64)
    norms = np.linalg.norm(mat, axis=1) * np.linalg.norm(q)
    sims = (mat @ q) / np.where(norms == 0, 1.0, norms)
    return _rank(sims.tolist(), memory, "dense")


def time_range_prompt(question: str, question_date: Timestamp, shots=None) -> str:
    shots = prompts.examples("time_range") if shots is None else shots
    return prompts.render(
        "time_range",
        examples=prompts.render_examples("time_range", shots),
        question=question,
        question_date=question_date.date_str(),
    )


def parse_time_range(raw: str) -> TimeRange | None:
    text = raw.strip().strip("\"'`").strip()
    if text.upper().startswith("N/A"):
        return None
    try:
        data = parse_json_lenient(text, "{", "}")
        if not isinstance(data, dict):
            raise ExpansionError(f"expected a JSON object, got {data!r:.60}")
        return TimeRange(Timestamp.parse(str(data["start"])), Timestamp.parse(str(data["end"])))
    except (DerivationError, KeyError, ValueError) as e:
        if isinstance(e, ExpansionError):
            raise
        raise ExpansionError(f"cannot parse time range from {raw[:80]!r}: {e}") from None


def expand_query_time(question: str, question_date: Timestamp, generator: TextGenerator,
                      shots=None) -> TimeRange | None:
    """Ask the model for a date range; ``None`` when it answers N/A."""
    raw = generator.generate(GenerationRequest(time_range_prompt(question, question_date, shots)))
    return parse_time_range(raw)


def in_range_ids(memory: IndexedMemory, time_range: TimeRange, include_session_dates: bool = True) -> set[str]:
    hits: set[str] = set()
    if include_session_dates:
        for d, ids in memory.time_index.items():
            if time_range.contains(d):
                hits |= ids
        hits |= {it.item_id for it in memory.items if time_range.contains(it.timestamp.date)}
    else:
        hits = {it.item_id for it in memory.items if any(time_range.contains(d) for d in it.event_dates)}
    return hits


def time_filter(ranking: RankedList, time_range: TimeRange | None, memory: IndexedMemory,
                k: int | None = None, include_session_dates: bool = True) -> RankedList:
    """Keep in-range items in their original order; backfill to ``k`` from the rest.

    Entries keep their original scores, so after backfill the scores may no
    longer be monotone; order is what matters downstream.
    """
    if time_range is None:
        return ranking
    keep = in_range_ids(memory, time_range, include_session_dates)
    inside = [e for e in ranking.entries if e.item_id in keep]
    if k is not None and len(inside) < k:
        outside = [e for e in ranking.entries if e.item_id not in keep]
        inside += outside[:k - len(inside)]
    meta = dict(ranking.meta, n_in_range=sum(1 for e in ranking.entries if e.item_id in keep))
    return RankedList(inside, ranking.method, time_range, meta)


def rank_merge(rankings: Sequence[RankedList], k: int | None = None) -> RankedList:
    """Round-robin interleave by rank position, first occurrence wins."""
    if len(rankings) < 2:
        raise ValueError("rank_merge needs at least two rankings")
    seen: set[str] = set()
    merged: list[str] = []
    depth = max(len(r) for r in rankings)
    for pos in range(depth):
        for r in rankings:
            if pos < len(r.entries):
                iid = r.entries[pos].item_id
                if iid not in seen:
                    seen.add(iid)
                    merged.append(iid)
    if k is not None:
        merged = merged[:k]
    return RankedList([RankedEntry(iid, 1.0 / (i + 1)) for i, iid in enumerate(merged)], "merged")


def score(question: str, memory: IndexedMemory, method: str, embedder: Embedder | None = None) -> RankedList:
    if method == "bm25":
        return bm25_scores(question, memory)
    if method == "dense":
        if embedder is None:
            raise ConfigError("dense retrieval needs an embedder")
        return dense_scores(question, memory, embedder)
    raise ConfigError(f"unknown retrieval method {method!r}")


def search(plan: QueryPlan, memory: IndexedMemory | Sequence[IndexedMemory], method: str = "bm25",
           embedder: Embedder | None = None, generator: TextGenerator | None = None,
           time_expansion: bool = False, include_session_dates: bool = True,
           pathway_method: str = "bm25") -> RankedList:
    """Optional time-range expansion, scoring, time filter, truncation to k.

    For ``method="merged"`` pass one memory per key pathway; each is scored
    with ``pathway_method`` and the rankings are rank-merged. The first
    memory is used for time filtering.
    """
    time_range = plan.time_range
    if time_expansion and time_range is None:
        if generator is None:
            raise ConfigError("time expansion needs a generation provider")
        try:
            time_range = expand_query_time(plan.question, plan.question_date, generator)
        except ExpansionError as e:
            log.warning("time expansion failed, searching without a range: %s", e)
            time_range = None
    if method == "merged":
        memories = list(memory) if isinstance(memory, (list, tuple)) else [memory]
        ranking = rank_merge([score(plan.question, m, pathway_method, embedder) for m in memories])
        base = memories[0]
    else:
        base = memory[0] if isinstance(memory, (list, tuple)) else memory
        ranking = score(plan.question, base, method, embedder)
    ranking = time_filter(ranking, time_range, base, plan.k, include_session_dates)
    out = ranking.top(plan.k)
    out.time_range = time_range
    return out


def trace_record(question_id: str, ranking: RankedList, memory: IndexedMemory, k: int) -> dict:
    rec = {"question_id": question_id, "method": ranking.method, "k": k}
    if ranking.time_range is not None:
        rec["time_range"] = ranking.time_range.to_dict()
    rec["entries"] = [
        {"item_id": e.item_id, "source_session_id": memory.item(e.item_id).source_session_id,
         "score": e.score, "rank": r}
        for r, e in enumerate(ranking.entries, 1)
    ]
    return rec


def ranking_from_trace(rec: dict) -> RankedList:
    tr = rec.get("time_range")
    time_range = TimeRange(Timestamp.parse(tr["start"]), Timestamp.parse(tr["end"])) if tr else None
    entries = [RankedEntry(e["item_id"], e["score"]) for e in sorted(rec["entries"], key=lambda e: e["rank"])]
    return RankedList(entries, rec["method"], time_range)


def dumps_trace(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, sort_keys=True)
