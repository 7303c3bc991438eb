"""LLM-derived texts used as compressed values and key expansions.

All extractors operate on user-only text. Facts, timed events and time
ranges use few-shot prompts; summaries and keyphrases are zero-shot.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Any

from . import prompts
from .memstore import Timestamp
from .providers import GenerationRequest, TextGenerator

log = logging.getLogger(__name__)

KINDS = ("summary", "keyphrases", "facts", "timed_events")


class DerivationError(ValueError):
    pass


@dataclass(frozen=True)
class TimedEvent:
    date: Timestamp
    event: str


@dataclass(frozen=True)
class DerivedText:
    kind: str
    source_item_id: str
    payload: Any  # str | tuple[str, ...] | tuple[TimedEvent, ...]

    def texts(self) -> list[str]:
        """The payload flattened to strings, as used for key expansion."""
        if self.kind == "summary":
            return [self.payload]
        if self.kind == "timed_events":
            return [e.event for e in self.payload]
        return list(self.payload)


_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def parse_json_lenient(raw: str, opener: str = "[", closer: str = "]"):
    """json.loads with exactly one repair pass: strip code fences, then keep
    the span between the outermost brackets."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    text = _FENCE_RE.sub("", raw.strip())
    lo, hi = text.find(opener), text.rfind(closer)
    if lo < 0 or hi < lo:
        raise DerivationError(f"no JSON {opener}{closer} in response: {raw[:80]!r}")
    try:
        return json.loads(text[lo:hi + 1])
    except json.JSONDecodeError as e:
        raise DerivationError(f"unparseable JSON ({e.msg}): {raw[:80]!r}") from None


def _require_text(text: str) -> None:
    if not text or not text.strip():
        raise DerivationError("cannot derive from empty text")


def _generate(generator: TextGenerator, prompt: str) -> str:
    out = generator.generate(GenerationRequest(prompt))
    if not out.strip():
        raise DerivationError("empty generation")
    return out


def summary_prompt(text: str) -> str:
    return prompts.render("summary", dialogue=text)


def keyphrase_prompt(text: str) -> str:
    return prompts.render("keyphrases", dialogue=text)


def facts_prompt(text: str, shots=None) -> str:
    shots = prompts.examples("facts") if shots is None else shots
    return prompts.render("facts", examples=prompts.render_examples("facts", shots), messages=text)


def timed_events_prompt(text: str, session_time: Timestamp, shots=None) -> str:
    shots = prompts.examples("timed_events") if shots is None else shots
    return prompts.render(
        "timed_events",
        examples=prompts.render_examples("timed_events", shots),
        messages=text,
        session_time=str(session_time),
    )


def derive_summary(text: str, generator: TextGenerator, source_item_id: str = "") -> DerivedText:
    _require_text(text)
    out = _generate(generator, summary_prompt(text))
    return DerivedText("summary", source_item_id, " ".join(out.split()))


def derive_keyphrases(text: str, generator: TextGenerator, source_item_id: str = "") -> DerivedText:
    _require_text(text)
    out = _generate(generator, keyphrase_prompt(text))
    phrases = tuple(p.strip() for p in out.split(";") if p.strip())
    if not phrases:
        raise DerivationError(f"no keyphrases in response {out!r}")
    return DerivedText("keyphrases", source_item_id, phrases)


def derive_facts(text: str, generator: TextGenerator, source_item_id: str = "", shots=None) -> DerivedText:
    _require_text(text)
    data = parse_json_lenient(_generate(generator, facts_prompt(text, shots)))
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise DerivationError(f"facts must be a JSON list of strings, got {data!r:.80}")
    return DerivedText("facts", source_item_id, tuple(x.strip() for x in data if x.strip()))


def derive_timed_events(text: str, session_time: Timestamp, generator: TextGenerator,
                        source_item_id: str = "", shots=None) -> DerivedText:
    _require_text(text)
    data = parse_json_lenient(_generate(generator, timed_events_prompt(text, session_time, shots)))
    if not isinstance(data, list):
        raise DerivationError(f"timed events must be a JSON list, got {data!r:.80}")
    events = []
    for entry in data:
        try:
            date = Timestamp.parse(str(entry["date"]))
            event = str(entry["event"]).strip()
        except (KeyError, TypeError, ValueError) as e:
            log.warning("dropping timed event %r: %s", entry, e)
            continue
        if event:
            events.append(TimedEvent(Timestamp(date.date), event))
    return DerivedText("timed_events", source_item_id, tuple(events))
