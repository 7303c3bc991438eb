"""Reading: format retrieved items into a prompt and ask the reader model."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

from . import prompts
from .index import IndexedMemory, MemoryItem, decompose
from .memstore import BenchmarkInstance, Timestamp, sequential_view
from .providers import GenerationRequest, TextGenerator
from .retrieve import RankedList

STYLES = ("plain", "json_structured")
MODES = ("retrieved", "offline_full_history")


class BudgetError(ValueError):
    def __init__(self, estimate: int, budget: int):
        super().__init__(f"prompt is ~{estimate} tokens, {estimate - budget} over the budget of {budget}")
        self.estimate = estimate
        self.budget = budget
        self.overflow = estimate - budget


@dataclass(frozen=True)
class ReadingConfig:
    style: str = "json_structured"
    chain_of_note: bool = True
    mode: str = "retrieved"
    max_tokens: int = 800
    context_budget: int | None = None

    def problems(self) -> list[str]:
        out = []
        if self.style not in STYLES:
            out.append(f"style: unknown value {self.style!r}")
        if self.mode not in MODES:
            out.append(f"mode: unknown value {self.mode!r}")
        if not isinstance(self.max_tokens, int) or self.max_tokens <= 0:
            out.append(f"max_tokens: must be a positive integer, got {self.max_tokens!r}")
        if self.context_budget is not None and (not isinstance(self.context_budget, int) or self.context_budget <= 0):
            out.append(f"context_budget: must be a positive integer, got {self.context_budget!r}")
        return out


@dataclass(frozen=True)
class Answer:
    answer_text: str
    prompt: str
    token_estimate: int

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text.split()) * 1.3)


def format_items(items: Sequence[MemoryItem], style: str = "json_structured") -> str:
    if not items:
        raise ValueError("no items to format")
    ordered = sorted(items, key=lambda it: (it.timestamp.sort_key, it.item_id))
    if style == "json_structured":
        return json.dumps(
            [{"timestamp": it.timestamp.date_str(), "content": it.value_text} for it in ordered],
            ensure_ascii=False, indent=2,
        )
    if style == "plain":
        return "\n\n".join(f"[{it.timestamp.date_str()}]\n{it.value_text}" for it in ordered)
    raise ValueError(f"unknown style {style!r}")


def build_prompt(question: str, question_date: Timestamp, formatted_history: str, chain_of_note: bool) -> str:
    return prompts.render(
        "reading_con" if chain_of_note else "reading_plain",
        chat_history=formatted_history,
        question_date=question_date.date_str(),
        question=question,
    )


def items_for_ranking(ranking: RankedList, memory: IndexedMemory) -> list[MemoryItem]:
    return [memory.item(e.item_id) for e in ranking.entries]


def full_history_items(instance: BenchmarkInstance) -> list[MemoryItem]:
    items = []
    for s in sequential_view(instance):
        items.extend(decompose(s, "session"))
    return items


def answer(instance: BenchmarkInstance, items: Sequence[MemoryItem] | None, config: ReadingConfig,
           generator: TextGenerator) -> Answer:
    """Build the reading prompt from ``items`` (or the whole history in
    offline mode) and return the model's raw answer with the exact prompt."""
    if config.mode == "offline_full_history":
        items = full_history_items(instance)
    if not items:
        raise ValueError(f"{instance.question_id}: nothing to read")
    prompt = build_prompt(
        instance.question, instance.question_date,
        format_items(items, config.style), config.chain_of_note,
    )
    est = estimate_tokens(prompt)
    if config.context_budget is not None and est > config.context_budget:
        raise BudgetError(est, config.context_budget)
    text = generator.generate(GenerationRequest(prompt, max_tokens=config.max_tokens))
    return Answer(text, prompt, est)
