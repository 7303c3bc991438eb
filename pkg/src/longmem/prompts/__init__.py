"""Prompt templates and in-context examples shipped as package data.

Templates use ``str.format`` slots. Few-shot templates carry an
``{examples}`` slot; each example is rendered with the same query layout as
the real input, followed by its expected output.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

TEMPLATE_NAMES = (
    "summary", "keyphrases", "facts", "timed_events", "time_range",
    "reading_con", "reading_plain",
    "judge_temporal", "judge_knowledge_update", "judge_preference", "judge_generic",
)


@lru_cache(maxsize=None)
def template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}")
    text = resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


@lru_cache(maxsize=None)
def examples(task: str) -> tuple[dict, ...]:
    """Bundled in-context examples for ``facts``, ``timed_events`` or ``time_range``."""
    raw = resources.files(__name__).joinpath(f"{task}_examples.json").read_text(encoding="utf-8")
    return tuple(json.loads(raw))


def _query_part(name: str) -> str:
    return template(name).split("{examples}", 1)[1]


def render_examples(task: str, shots) -> str:
    """Format few-shot examples into the block that fills ``{examples}``."""
    query = _query_part(task)
    blocks = []
    for ex in shots:
        out = ex["output"]
        answer = "N/A" if out is None else json.dumps(out, ensure_ascii=False)
        if task == "facts":
            head = query.format(messages=ex["messages"])
        elif task == "timed_events":
            head = query.format(messages=ex["messages"], session_time=ex["session_time"])
        elif task == "time_range":
            head = query.format(question=ex["question"], question_date=ex["question_date"])
        else:
            raise KeyError(task)
        blocks.append(f"{head} {answer}\n\n")
    return "".join(blocks)


def render(name: str, **slots) -> str:
    return template(name).format(**slots)
