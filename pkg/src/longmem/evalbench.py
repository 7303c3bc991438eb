"""Retrieval metrics, LLM-judge QA scoring and per-type reports."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import prompts
from .index import IndexedMemory
from .memstore import QUESTION_TYPES, BenchmarkInstance
from .providers import GenerationRequest, TextGenerator
from .retrieve import RankedList

log = logging.getLogger(__name__)


class ReportError(ValueError):
    def __init__(self, msg: str, orphans: Sequence[str] = ()):
        super().__init__(msg)
        self.orphans = list(orphans)


def recall_at_k(sources: Sequence[str | None], evidence: Iterable[str], k: int | None = None) -> float | None:
    """Fraction of evidence sessions among the top-k sources.

    ``None`` entries never count (used for strict turn-level credit).
    Returns ``None`` when the evidence set is empty (not applicable).
    """
    evidence = set(evidence)
    if not evidence:
        return None
    top = sources if k is None else sources[:k]
    return len(evidence.intersection(top)) / len(evidence)


def ndcg_at_k(sources: Sequence[str | None], evidence: Iterable[str], k: int | None = None) -> float | None:
    """Binary-gain NDCG where each evidence session is credited at its first hit."""
    evidence = set(evidence)
    if not evidence:
        return None
    top = sources if k is None else sources[:k]
    k_eff = len(top) if k is None else k
    credited: set[str] = set()
    dcg = 0.0
    for rank, src in enumerate(top, 1):
        if src in evidence and src not in credited:
            credited.add(src)
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(evidence), k_eff) + 1))
    return dcg / ideal if ideal else 0.0


def credited_sources(ranking: RankedList, memory: IndexedMemory, instance: BenchmarkInstance,
                     strict: bool = False) -> list[str | None]:
    """Source session of each ranked item.

    In strict mode an item earns credit only if one of its turns carries the
    ``has_evidence`` flag; otherwise its slot is ``None``.
    """
    out = []
    for e in ranking.entries:
        it = memory.item(e.item_id)
        if strict:
            turns = instance.session(it.source_session_id).turns
            if not any(turns[i].has_evidence for i in it.turn_indices):
                out.append(None)
                continue
        out.append(it.source_session_id)
    return out


@dataclass(frozen=True)
class RetrievalScore:
    question_id: str
    k: int
    recall: float
    ndcg: float


def score_retrieval(question_id: str, sources: Sequence[str | None], evidence, ks: Sequence[int]) -> list[RetrievalScore]:
    out = []
    for k in ks:
        r = recall_at_k(sources, evidence, k)
        if r is None:
            return []
        out.append(RetrievalScore(question_id, k, r, ndcg_at_k(sources, evidence, k)))
    return out


# ---------------------------------------------------------------------------
# judging

JUDGE_TEMPLATES = {
    "temporal-reasoning": "judge_temporal",
    "knowledge-update": "judge_knowledge_update",
    "single-session-preference": "judge_preference",
}


@dataclass(frozen=True)
class JudgeVerdict:
    question_id: str
    correct: bool
    judge_raw: str
    indeterminate: bool = False


def judge_template_name(question_type: str) -> str:
    return JUDGE_TEMPLATES.get(question_type, "judge_generic")


def judge_prompt(instance: BenchmarkInstance, answer_text: str) -> str:
    return prompts.render(
        judge_template_name(instance.question_type),
        question=instance.question, answer=instance.answer, response=answer_text,
    )


def parse_verdict(question_id: str, raw: str) -> JudgeVerdict:
    norm = raw.strip().lower().lstrip("\"'*`([ ")
    if norm.startswith("yes"):
        return JudgeVerdict(question_id, True, raw)
    if norm.startswith("no"):
        return JudgeVerdict(question_id, False, raw)
    log.warning("question %s: indeterminate judge output %r counted as incorrect", question_id, raw[:60])
    return JudgeVerdict(question_id, False, raw, indeterminate=True)


def judge_answer(instance: BenchmarkInstance, answer_text: str, judge: TextGenerator) -> JudgeVerdict:
    raw = judge.generate(GenerationRequest(judge_prompt(instance, answer_text), max_tokens=10))
    return parse_verdict(instance.question_id, raw)


# ---------------------------------------------------------------------------
# reports

@dataclass
class Report:
    config_fingerprint: str
    ks: list[int]
    per_type: dict[str, dict]
    overall: dict
    qa_present: bool = True

    def to_dict(self) -> dict:
        return {"config_fingerprint": self.config_fingerprint, "per_type": self.per_type, "overall": self.overall}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        cols = [f"{m}@{k}" for k in self.ks for m in ("recall", "ndcg")] + ["accuracy", "n"]
        header = f"{'question type':<28}" + "".join(f"{c:>11}" for c in cols)
        lines = [header, "-" * len(header)]
        rows = list(self.per_type.items()) + [("overall", self.overall)]
        for name, row in rows:
            cells = []
            for c in cols:
                v = row.get(c)
                cells.append(f"{'-':>11}" if v is None else (f"{v:>11d}" if c == "n" else f"{v:>11.3f}"))
            lines.append(f"{name:<28}" + "".join(cells))
        if not self.qa_present:
            lines.append("(QA section absent: no judge verdicts)")
        return "\n".join(lines)


def _mean(xs: list[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def aggregate_report(scores: Iterable[RetrievalScore], verdicts: Iterable[JudgeVerdict],
                     dataset: Sequence[BenchmarkInstance], config_fingerprint: str = "") -> Report:
    """Per-type and overall means. Abstention questions carry no retrieval scores."""
    by_id = {inst.question_id: inst for inst in dataset}
    scores = list(scores)
    verdicts = list(verdicts)
    orphans = sorted({s.question_id for s in scores} - by_id.keys())
    orphans += sorted({v.question_id for v in verdicts} - by_id.keys())
    if orphans:
        raise ReportError(f"ids not in dataset: {', '.join(orphans)}", orphans)
    scored = {s.question_id for s in scores}
    missing_scores = sorted(q for q, inst in by_id.items() if not inst.is_abstention and q not in scored)
    if scores and missing_scores:
        raise ReportError(f"missing retrieval scores for: {', '.join(missing_scores)}", missing_scores)
    qa_present = bool(verdicts)
    if qa_present:
        judged = {v.question_id for v in verdicts}
        missing = sorted(by_id.keys() - judged)
        if missing:
            raise ReportError(f"missing verdicts for: {', '.join(missing)}", missing)

    ks = sorted({s.k for s in scores})
    qtype = {q: inst.question_type for q, inst in by_id.items()}
    groups: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for s in scores:
        for g in (qtype[s.question_id], "__all__"):
            groups[g][f"recall@{s.k}"].append(s.recall)
            groups[g][f"ndcg@{s.k}"].append(s.ndcg)
    for v in verdicts:
        for g in (qtype[v.question_id], "__all__"):
            groups[g]["accuracy"].append(1.0 if v.correct else 0.0)
    counts: dict[str, int] = defaultdict(int)
    for inst in dataset:
        counts[inst.question_type] += 1
        counts["__all__"] += 1

    def row(g: str) -> dict:
        r: dict = {}
        for k in ks:
            r[f"recall@{k}"] = _mean(groups[g][f"recall@{k}"])
            r[f"ndcg@{k}"] = _mean(groups[g][f"ndcg@{k}"])
        r["accuracy"] = _mean(groups[g]["accuracy"]) if qa_present else None
        r["n"] = counts[g]
        return r

    types = [t for t in QUESTION_TYPES if counts.get(t)]
    types += sorted(t for t in counts if t not in QUESTION_TYPES and t != "__all__")
    return Report(config_fingerprint, ks, {t: row(t) for t in types}, row("__all__"), qa_present)
