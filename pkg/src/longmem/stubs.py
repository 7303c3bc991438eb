"""Deterministic offline responder for every prompt kind in the pipeline.

Used by ``--stub-providers``: it recognizes a prompt by its template prefix
and answers with a cheap, reproducible heuristic. The reader stub echoes the
history it was shown, so the stub judge (substring match) scores a question
correct exactly when the answer text was retrieved.
"""

from __future__ import annotations

import json
import re
from collections import Counter

from . import prompts
from .providers import StubGenerator, echo_response, tokenize

_DATE_RE = re.compile(r"\b(\d{4}/\d{2}/\d{2})\b")
_FIRST_PERSON = {"i", "my", "me", "i'm", "im", "we", "our"}


def _prefix(name: str) -> str:
    return prompts.template(name).split("{", 1)[0]


def _between(prompt: str, start: str, end: str | None = None) -> str:
    body = prompt.rsplit(start, 1)[-1]
    if end is not None:
        body = body.split(end, 1)[0]
    return body.strip()


def _summary(prompt: str) -> str:
    words = _between(prompt, "Dialogue content: ").split()
    return " ".join(words[:40]) or "empty dialogue"


def _keyphrases(prompt: str) -> str:
    toks = [t for t in tokenize(_between(prompt, "Dialogue content: ")) if len(t) > 3]
    top = [t for t, _ in sorted(Counter(toks).items(), key=lambda kv: (-kv[1], kv[0]))[:5]]
    return "; ".join(top) or "conversation"


def _facts(prompt: str) -> str:
    msgs = _between(prompt, "Human user messages: ", "\n\nPersonal facts about the user")
    facts = []
    for sent in re.split(r"(?<=[.!?])\s+|\n", msgs):
        sent = sent.strip()
        if sent and _FIRST_PERSON & set(re.findall(r"[a-z']+", sent.lower())):
            facts.append(f"The user said: {sent}")
    return json.dumps(facts, ensure_ascii=False)


def _timed_events(prompt: str) -> str:
    msgs = _between(prompt, "Human user messages: ", "\n\nConversation time:")
    events = []
    for line in msgs.splitlines():
        for d in _DATE_RE.findall(line):
            events.append({"date": d, "event": line.strip()})
    return json.dumps(events, ensure_ascii=False)


def _time_range(prompt: str) -> str:
    q = _between(prompt, "Question: ", "\n\nQuestion date:")
    dates = sorted(_DATE_RE.findall(q))
    if len(dates) >= 2:
        return json.dumps({"start": dates[0], "end": dates[-1]})
    return "N/A"


def _reading(prompt: str) -> str:
    return _between(prompt, "History Chats: ", "\n\nCurrent Date:") or "I don't know."


def _judge(prompt: str) -> str:
    key = "Rubric: " if "\n\nRubric: " in prompt else "Correct Answer: "
    answer = _between(prompt, key, "\n\nModel Response: ").lower()
    response = _between(prompt, "Model Response: ", "\n\nIs the model response correct?").lower()
    return "yes" if answer and answer in response else "no"


_HANDLERS = [
    ("summary", _summary),
    ("keyphrases", _keyphrases),
    ("facts", _facts),
    ("timed_events", _timed_events),
    ("time_range", _time_range),
    ("reading_con", _reading),
    ("reading_plain", _reading),
    ("judge_temporal", _judge),
    ("judge_knowledge_update", _judge),
    ("judge_preference", _judge),
    ("judge_generic", _judge),
]


def offline_responder(prompt: str) -> str:
    for name, fn in _HANDLERS:
        if prompt.startswith(_prefix(name)):
            return fn(prompt)
    return echo_response(prompt)


def offline_generator(**kw) -> StubGenerator:
    return StubGenerator(fallback=offline_responder, **kw)
