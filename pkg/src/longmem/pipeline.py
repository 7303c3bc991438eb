"""Resumable pipeline stages: index, search, answer, evaluate, run, compile.

Each stage writes per-question outputs under ``config.output_dir`` and skips
questions whose outputs already exist unless ``force`` is set.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import evalbench, histcompile, index as idx, read, retrieve
from .config import EndpointConfig, RunConfig
from .memstore import (
    BenchmarkInstance, Timestamp, adapt_released, dump_dataset, load_dataset,
    sequential_view, session_from_dict,
)
from .providers import (
    ChatCompletionsGenerator, Embedder, HashEmbedder, HTTPEmbedder, ResponseCache, TextGenerator,
)
from .stubs import offline_generator

log = logging.getLogger(__name__)

TRACE_FILE = "retrieval_trace.jsonl"
ANSWER_FILE = "answers.jsonl"
VERDICT_FILE = "verdicts.jsonl"


@dataclass
class Providers:
    generator: TextGenerator
    reader: TextGenerator
    judge: TextGenerator
    embedder: Embedder | None = None

    def generation_calls(self) -> int:
        gens = {id(g): g for g in (self.generator, self.reader, self.judge)}
        return sum(g.calls for g in gens.values())


def _make_generator(ep: EndpointConfig, cache: ResponseCache, stub: bool) -> TextGenerator:
    if stub or ep.kind == "stub":
        return offline_generator(cache=cache)
    return ChatCompletionsGenerator(ep.url, ep.model, ep.api_key_env, cache=cache)


def build_providers(config: RunConfig, stub: bool = False) -> Providers:
    cache = ResponseCache(config.cache_path())
    p = config.providers
    gen = _make_generator(p.generator, cache, stub)
    reader = gen if p.reader == p.generator else _make_generator(p.reader, cache, stub)
    judge = gen if p.judge == p.generator else _make_generator(p.judge, cache, stub)
    emb = None
    if p.embedder is not None:
        if stub or p.embedder.kind == "stub":
            emb = HashEmbedder()
        else:
            emb = HTTPEmbedder(p.embedder.url, p.embedder.model, p.embedder.api_key_env, p.embedder.batch_size)
    return Providers(gen, reader, judge, emb)


def load_instances(config: RunConfig) -> list[BenchmarkInstance]:
    adapter = adapt_released if config.dataset_format == "released" else None
    return load_dataset(config.dataset_path, adapter=adapter)


def _pmap(fn: Callable, xs: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in xs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, xs))


def _read_jsonl(path: Path) -> dict[str, dict]:
    out = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").split("\n"):
            if line.strip():
                rec = json.loads(line)
                out[rec["question_id"]] = rec
    return out


def _write_jsonl(path: Path, records: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# index

def _pathways(config: RunConfig) -> list[str]:
    if config.retrieval.method == "merged":
        return list(config.retrieval.merge_pathways)
    return [config.index.key_strategy]


def index_dir(config: RunConfig, question_id: str, key_strategy: str) -> Path:
    return Path(config.output_dir) / "index" / question_id / key_strategy


def cmd_index(config: RunConfig, providers: Providers, force: bool = False,
              instances: Sequence[BenchmarkInstance] | None = None) -> Path:
    instances = load_instances(config) if instances is None else instances
    pathways = _pathways(config)
    embed = providers.embedder if (config.retrieval.method == "dense" or config.retrieval.pathway_method == "dense") else None

    def work(inst: BenchmarkInstance):
        for ks in pathways:
            d = index_dir(config, inst.question_id, ks)
            if (d / "manifest.json").exists() and not force:
                continue
            cfg = replace(config.index, key_strategy=ks)
            mem = idx.build_index(sequential_view(inst), cfg, providers.generator, embed, config.tolerant)
            idx.save_index(mem, d)

    _pmap(work, list(instances), config.workers)
    return Path(config.output_dir) / "index"


def _load_memories(config: RunConfig, question_id: str) -> list[idx.IndexedMemory]:
    return [idx.load_index(index_dir(config, question_id, ks)) for ks in _pathways(config)]


# ---------------------------------------------------------------------------
# search

def cmd_search(config: RunConfig, providers: Providers, force: bool = False, question_id: str | None = None,
               instances: Sequence[BenchmarkInstance] | None = None) -> Path:
    instances = load_instances(config) if instances is None else instances
    if question_id is not None:
        instances = [i for i in instances if i.question_id == question_id]
        if not instances:
            raise KeyError(f"question {question_id!r} not in dataset")
    path = Path(config.output_dir) / TRACE_FILE
    existing = _read_jsonl(path)
    rc = config.retrieval

    def work(inst: BenchmarkInstance):
        if inst.question_id in existing and not force:
            return existing[inst.question_id]
        memories = _load_memories(config, inst.question_id)
        plan = retrieve.QueryPlan(inst.question, inst.question_date, rc.k)
        target = memories if rc.method == "merged" else memories[0]
        ranking = retrieve.search(
            plan, target, rc.method, providers.embedder, providers.generator,
            rc.time_expansion, rc.include_session_dates, rc.pathway_method,
        )
        return retrieve.trace_record(inst.question_id, ranking, memories[0], rc.k)

    new = {r["question_id"]: r for r in _pmap(work, list(instances), config.workers)}
    merged = {**existing, **new}
    all_ids = [i.question_id for i in load_instances(config)] if question_id else [i.question_id for i in instances]
    _write_jsonl(path, [merged[q] for q in all_ids if q in merged])
    return path


# ---------------------------------------------------------------------------
# answer

def cmd_answer(config: RunConfig, providers: Providers, force: bool = False,
               instances: Sequence[BenchmarkInstance] | None = None) -> Path:
    instances = load_instances(config) if instances is None else instances
    path = Path(config.output_dir) / ANSWER_FILE
    existing = {} if force else _read_jsonl(path)
    rcfg = config.reading
    traces = {} if rcfg.mode == "offline_full_history" else _read_jsonl(Path(config.output_dir) / TRACE_FILE)

    def work(inst: BenchmarkInstance):
        if inst.question_id in existing:
            return existing[inst.question_id]
        items = None
        if rcfg.mode == "retrieved":
            if inst.question_id not in traces:
                raise FileNotFoundError(f"no retrieval trace for {inst.question_id}; run search first")
            ranking = retrieve.ranking_from_trace(traces[inst.question_id])
            memory = _load_memories(config, inst.question_id)[0]
            items = read.items_for_ranking(ranking, memory)
        ans = read.answer(inst, items, rcfg, providers.reader)
        return {
            "question_id": inst.question_id,
            "config": asdict(rcfg),
            "prompt_hash": ans.prompt_hash,
            "answer_text": ans.answer_text,
        }

    recs = _pmap(work, list(instances), config.workers)
    _write_jsonl(path, recs)
    return path


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(config: RunConfig, providers: Providers | None, force: bool = False,
                 instances: Sequence[BenchmarkInstance] | None = None) -> evalbench.Report:
    instances = load_instances(config) if instances is None else instances
    out = Path(config.output_dir)
    traces = _read_jsonl(out / TRACE_FILE)
    answers = _read_jsonl(out / ANSWER_FILE)

    scores: list[evalbench.RetrievalScore] = []
    if traces:
        for inst in instances:
            if inst.is_abstention or inst.question_id not in traces:
                continue
            rec = traces[inst.question_id]
            if config.eval.strict:
                ranking = retrieve.ranking_from_trace(rec)
                memory = _load_memories(config, inst.question_id)[0]
                sources = evalbench.credited_sources(ranking, memory, inst, strict=True)
            else:
                sources = [e["source_session_id"] for e in sorted(rec["entries"], key=lambda e: e["rank"])]
            scores += evalbench.score_retrieval(inst.question_id, sources, inst.evidence_session_ids, config.eval.ks)

    verdicts: list[evalbench.JudgeVerdict] = []
    if answers:
        vpath = out / VERDICT_FILE
        existing = {} if force else _read_jsonl(vpath)

        def work(inst: BenchmarkInstance):
            rec = existing.get(inst.question_id)
            if rec is not None and rec.get("answer_text") == answers[inst.question_id]["answer_text"]:
                return rec
            v = evalbench.judge_answer(inst, answers[inst.question_id]["answer_text"], providers.judge)
            return {"question_id": v.question_id, "correct": v.correct, "judge_raw": v.judge_raw,
                    "indeterminate": v.indeterminate, "answer_text": answers[inst.question_id]["answer_text"]}

        judged = [i for i in instances if i.question_id in answers]
        recs = _pmap(work, judged, config.workers)
        _write_jsonl(vpath, recs)
        verdicts = [evalbench.JudgeVerdict(r["question_id"], r["correct"], r["judge_raw"], r["indeterminate"])
                    for r in recs]

    report = evalbench.aggregate_report(scores, verdicts, instances, config.fingerprint())
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# run

def cmd_run(config: RunConfig, providers: Providers, force: bool = False) -> evalbench.Report | dict:
    """index -> search -> answer -> evaluate; grid configs run each cell in its own subdirectory."""
    if config.grid:
        summary = {}
        for cell in config.expand_grid():
            cell = replace(cell, output_dir=str(Path(config.output_dir) / cell.cell_name()),
                           cache_dir=str(config.cache_path()))
            rep = cmd_run(cell, providers, force)
            summary[cell.cell_name()] = rep.to_dict()
        blob = json.dumps({"config_fingerprint": config.fingerprint(), "cells": summary}, indent=2, sort_keys=True)
        (Path(config.output_dir) / "grid_report.json").write_text(blob + "\n", encoding="utf-8")
        return summary
    instances = load_instances(config)
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    cmd_index(config, providers, force, instances)
    cmd_search(config, providers, force, instances=instances)
    cmd_answer(config, providers, force, instances)
    return cmd_evaluate(config, providers, force, instances)


# ---------------------------------------------------------------------------
# compile

def cmd_compile(spec_path, out_path, force: bool = False) -> Path:
    """Compile one benchmark instance's history from a JSON spec.

    Spec keys: question_id, question_type, question, question_date, answer,
    evidence (sessions, optional "date"), evidence_ordered, total_sessions,
    mixture, pools {name: path}, default_period [start, end], seed,
    exclude_tags.
    """
    out_path = Path(out_path)
    if out_path.exists() and not force:
        log.info("%s exists; skipping (use --force to rebuild)", out_path)
        return out_path
    spec_path = Path(spec_path)
    raw = json.loads(spec_path.read_text(encoding="utf-8"))
    base = spec_path.parent
    pools = {name: histcompile.SessionPool.from_jsonl(name, base / p) for name, p in raw["pools"].items()}
    evidence = [session_from_dict(s) for s in raw["evidence"]]
    period = raw.get("default_period")
    period = tuple(Timestamp.parse(x) for x in period) if period else histcompile.MAY_2023
    qdate = Timestamp.parse(raw["question_date"])
    period = histcompile.period_before(qdate, period)
    spec = histcompile.CompileSpec(
        total_sessions=raw["total_sessions"],
        evidence=evidence,
        mixture=raw.get("mixture", dict(histcompile.DEFAULT_MIXTURE)),
        default_period=period,
        seed=raw.get("seed", 0),
        evidence_ordered=raw.get("evidence_ordered", True),
        exclude_tags=frozenset(raw.get("exclude_tags", ())),
    )
    history = histcompile.compile_history(spec, pools)
    inst = BenchmarkInstance(
        question_id=raw["question_id"],
        question_type=raw["question_type"],
        question=raw["question"],
        question_date=Timestamp.parse(raw["question_date"]),
        answer=raw["answer"],
        history=tuple(history),
        evidence_session_ids=frozenset(s.session_id for s in evidence) if raw["question_type"] != "abstention" else frozenset(),
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dump_dataset(out_path, [inst])
    load_dataset(out_path)  # validate what we wrote
    return out_path
