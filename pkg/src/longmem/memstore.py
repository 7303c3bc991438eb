"""Chat-history data model and the JSON-lines dataset loader.

A benchmark instance is a question asked at some date, plus the timestamped
chat sessions that precede it. Everything here is immutable after load.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

log = logging.getLogger(__name__)

QUESTION_TYPES = (
    "single-session-user",
    "single-session-assistant",
    "single-session-preference",
    "multi-session",
    "knowledge-update",
    "temporal-reasoning",
    "abstention",
)
ROLES = ("user", "assistant")

# "2023/05/20", "2023/05/20 14:03", "2023/05/20 14:03:10", "2023/05/20 (Sat) 14:03"
_TS_RE = re.compile(
    r"^\s*(\d{4})/(\d{1,2})/(\d{1,2})"
    r"(?:\s*\([A-Za-z]{3}\))?"
    r"(?:\s+(\d{1,2}):(\d{2})(?::(\d{2}))?)?\s*$"
)


class DatasetError(Exception):
    """Base class for dataset problems."""


class DatasetParseError(DatasetError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class ValidationError(DatasetError):
    def __init__(self, instance_id: str, field_name: str, msg: str):
        super().__init__(f"instance {instance_id!r}, field {field_name!r}: {msg}")
        self.instance_id = instance_id
        self.field = field_name


class EmptyContentError(ValueError):
    pass


@dataclass(frozen=True, eq=True)
class Timestamp:
    """Calendar date with an optional time of day (seconds since midnight).

    Ordering treats a date-only stamp as midnight, so ``2023/05/10`` and
    ``2023/05/10 00:00`` are neither less nor greater than one another.
    """

    date: dt.date
    time_of_day: int | None = None

    def __post_init__(self):
        if self.time_of_day is not None and not 0 <= self.time_of_day < 86400:
            raise ValueError(f"time_of_day out of range: {self.time_of_day}")

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        m = _TS_RE.match(text)
        if not m:
            raise ValueError(f"bad timestamp {text!r}, expected YYYY/MM/DD [HH:MM]")
        y, mo, d, hh, mm, ss = m.groups()
        date = dt.date(int(y), int(mo), int(d))  # raises on 2023/13/40
        if hh is None:
            return cls(date)
        hh, mm, ss = int(hh), int(mm), int(ss or 0)
        if hh > 23 or mm > 59 or ss > 59:
            raise ValueError(f"bad time of day in {text!r}")
        return cls(date, hh * 3600 + mm * 60 + ss)

    @classmethod
    def of(cls, value: "Timestamp | str | dt.date") -> "Timestamp":
        if isinstance(value, Timestamp):
            return value
        if isinstance(value, dt.date):
            return cls(value)
        return cls.parse(value)

    def date_str(self) -> str:
        return f"{self.date.year:04d}/{self.date.month:02d}/{self.date.day:02d}"

    def __str__(self) -> str:
        if self.time_of_day is None:
            return self.date_str()
        h, rem = divmod(self.time_of_day, 3600)
        m, s = divmod(rem, 60)
        if s:
            return f"{self.date_str()} {h:02d}:{m:02d}:{s:02d}"
        return f"{self.date_str()} {h:02d}:{m:02d}"

    @property
    def sort_key(self) -> tuple[int, int]:
        return (self.date.toordinal(), self.time_of_day or 0)

    def __lt__(self, other: "Timestamp") -> bool:
        return self.sort_key < other.sort_key

    def __le__(self, other: "Timestamp") -> bool:
        return self.sort_key <= other.sort_key

    def __gt__(self, other: "Timestamp") -> bool:
        return self.sort_key > other.sort_key

    def __ge__(self, other: "Timestamp") -> bool:
        return self.sort_key >= other.sort_key


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str
    has_evidence: bool = False

    def __post_init__(self):
        if self.speaker not in ROLES:
            raise ValueError(f"unknown speaker {self.speaker!r}")
        if not self.text.strip():
            raise ValueError("turn text is empty")


@dataclass(frozen=True)
class ChatSession:
    session_id: str
    timestamp: Timestamp | None
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))

    def check(self) -> None:
        """Raise ValueError if the turn structure is invalid."""
        if not any(t.speaker == "user" for t in self.turns):
            raise ValueError(f"session {self.session_id!r} has no user turn")
        for a, b in zip(self.turns, self.turns[1:]):
            if a.speaker == b.speaker:
                raise ValueError(f"session {self.session_id!r}: speakers do not alternate")


@dataclass(frozen=True)
class BenchmarkInstance:
    question_id: str
    question_type: str
    question: str
    question_date: Timestamp
    answer: str
    history: tuple[ChatSession, ...]
    evidence_session_ids: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "evidence_session_ids", frozenset(self.evidence_session_ids))

    @property
    def is_abstention(self) -> bool:
        return self.question_type == "abstention"

    def session(self, session_id: str) -> ChatSession:
        for s in self.history:
            if s.session_id == session_id:
                return s
        raise KeyError(session_id)


def validate_instance(inst: BenchmarkInstance) -> None:
    """Check every instance invariant; raise ValidationError on the first failure."""
    qid = inst.question_id
    if inst.question_type not in QUESTION_TYPES:
        raise ValidationError(qid, "question_type", f"unknown type {inst.question_type!r}")
    if not inst.question.strip():
        raise ValidationError(qid, "question", "empty question")
    seen: set[str] = set()
    for s in inst.history:
        if s.session_id in seen:
            raise ValidationError(qid, "haystack_sessions", f"duplicate session_id {s.session_id!r}")
        seen.add(s.session_id)
        if s.timestamp is None:
            raise ValidationError(qid, "haystack_sessions", f"session {s.session_id!r} has no date")
        try:
            s.check()
        except ValueError as e:
            raise ValidationError(qid, "haystack_sessions", str(e)) from None
        if s.timestamp > inst.question_date:
            raise ValidationError(
                qid, "question_date",
                f"question date {inst.question_date} precedes session {s.session_id!r} ({s.timestamp})",
            )
        if not s.timestamp < inst.question_date:
            log.warning("instance %s: session %s shares the question timestamp", qid, s.session_id)
    missing = sorted(inst.evidence_session_ids - seen)
    if missing:
        raise ValidationError(qid, "evidence_session_ids", f"not in history: {', '.join(missing)}")
    if not inst.evidence_session_ids and not inst.is_abstention:
        raise ValidationError(qid, "evidence_session_ids", "empty evidence set")


# ---------------------------------------------------------------------------
# (de)serialization

def session_from_dict(d: Mapping[str, Any]) -> ChatSession:
    date = d.get("date")
    turns = tuple(
        Turn(t["role"], t["content"].strip(), bool(t.get("has_evidence", False)))
        for t in d["turns"]
    )
    return ChatSession(str(d["session_id"]), Timestamp.parse(date) if date else None, turns)


def session_to_dict(s: ChatSession) -> dict[str, Any]:
    turns = []
    for t in s.turns:
        rec: dict[str, Any] = {"role": t.speaker, "content": t.text}
        if t.has_evidence:
            rec["has_evidence"] = True
        turns.append(rec)
    out: dict[str, Any] = {"session_id": s.session_id}
    if s.timestamp is not None:
        out["date"] = str(s.timestamp)
    out["turns"] = turns
    return out


def instance_from_dict(d: Mapping[str, Any]) -> BenchmarkInstance:
    return BenchmarkInstance(
        question_id=str(d["question_id"]),
        question_type=d["question_type"],
        question=d["question"].strip(),
        question_date=Timestamp.parse(d["question_date"]),
        answer=str(d["answer"]).strip(),
        history=tuple(session_from_dict(s) for s in d["haystack_sessions"]),
        evidence_session_ids=frozenset(d.get("evidence_session_ids") or ()),
    )


def instance_to_dict(inst: BenchmarkInstance) -> dict[str, Any]:
    return {
        "question_id": inst.question_id,
        "question_type": inst.question_type,
        "question": inst.question,
        "question_date": str(inst.question_date),
        "answer": inst.answer,
        "haystack_sessions": [session_to_dict(s) for s in inst.history],
        "evidence_session_ids": sorted(inst.evidence_session_ids),
    }


# Mapping for the officially released benchmark files, which store sessions
# as parallel arrays. Unverified against the public release; override via
# ``load_dataset(..., adapter=...)`` if field names differ.
RELEASED_FORMAT = {
    "question_id": "question_id",
    "question_type": "question_type",
    "question": "question",
    "question_date": "question_date",
    "answer": "answer",
    "session_ids": "haystack_session_ids",
    "session_dates": "haystack_dates",
    "sessions": "haystack_sessions",
    "evidence_session_ids": "answer_session_ids",
    "evidence_flag": "has_answer",
}


def adapt_released(d: Mapping[str, Any], mapping: Mapping[str, str] = RELEASED_FORMAT) -> dict[str, Any]:
    """Convert a parallel-array record into this package's schema."""
    qid = str(d[mapping["question_id"]])
    qtype = d[mapping["question_type"]]
    if qid.endswith("_abs"):
        qtype = "abstention"
    sessions = []
    for sid, date, turns in zip(d[mapping["session_ids"]], d[mapping["session_dates"]], d[mapping["sessions"]]):
        sessions.append({
            "session_id": sid,
            "date": date,
            "turns": [
                {"role": t["role"], "content": t["content"],
                 "has_evidence": bool(t.get(mapping["evidence_flag"], False))}
                for t in turns if str(t.get("content", "")).strip()
            ],
        })
    evidence = [] if qtype == "abstention" else list(d.get(mapping["evidence_session_ids"]) or [])
    return {
        "question_id": qid,
        "question_type": qtype,
        "question": d[mapping["question"]],
        "question_date": d[mapping["question_date"]],
        "answer": str(d[mapping["answer"]]),
        "haystack_sessions": sessions,
        "evidence_session_ids": evidence,
    }


def _iter_records(path: Path) -> Iterator[tuple[int, Any]]:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        # whole-file JSON array (the released benchmark ships this way)
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetParseError(path, e.lineno, e.msg) from None
        for i, rec in enumerate(data, 1):
            yield i, rec
        return
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetParseError(path, lineno, e.msg) from None


def load_dataset(path, on_invalid: str = "raise", adapter=None) -> list[BenchmarkInstance]:
    """Load and validate a dataset file, returning instances in file order.

    ``on_invalid`` is ``"raise"`` or ``"skip"`` (log a warning and drop the
    instance). ``adapter`` maps raw records to the native schema first.
    """
    if on_invalid not in ("raise", "skip"):
        raise ValueError(f"on_invalid must be 'raise' or 'skip', not {on_invalid!r}")
    path = Path(path)
    out = []
    for lineno, rec in _iter_records(path):
        qid = str(rec.get("question_id", f"<line {lineno}>")) if isinstance(rec, dict) else f"<line {lineno}>"
        try:
            if adapter is not None:
                rec = adapter(rec)
            try:
                inst = instance_from_dict(rec)
            except KeyError as e:
                raise ValidationError(qid, e.args[0], "missing field") from None
            except (ValueError, TypeError, AttributeError) as e:
                raise ValidationError(qid, "record", str(e)) from None
            validate_instance(inst)
        except ValidationError as e:
            if on_invalid == "raise":
                raise
            log.warning("skipping line %d: %s", lineno, e)
            continue
        out.append(inst)
    return out


def dump_dataset(path, instances: Iterable[BenchmarkInstance]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_dict(inst), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# views

def sequential_view(instance: BenchmarkInstance) -> Iterator[ChatSession]:
    """Yield sessions in the order a live system would ingest them."""
    sessions = list(instance.history)
    ordered = sorted(sessions, key=lambda s: s.timestamp.sort_key)
    if ordered != sessions:
        log.warning("instance %s: history not in timestamp order; re-sorted", instance.question_id)
    yield from ordered


def user_only_text(turns: ChatSession | Sequence[Turn]) -> str:
    if isinstance(turns, ChatSession):
        turns = turns.turns
    parts = [t.text for t in turns if t.speaker == "user"]
    if not parts:
        raise EmptyContentError("no user turns")
    return "\n".join(parts)


def transcript(turns: Sequence[Turn]) -> str:
    """Both-role text used as a reading value."""
    return "\n".join(f"{t.speaker}: {t.text}" for t in turns)
