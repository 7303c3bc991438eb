"""Compile long chat histories: filler sampling, evidence placement, timestamps.

All randomness comes from ``CompileSpec.seed``; each stage draws from its
own stream so changing one stage never perturbs another.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import random
from fractions import Fraction
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .memstore import ChatSession, Timestamp, session_from_dict

DEFAULT_MIXTURE = {"sharegpt": 0.25, "ultrachat": 0.25, "simulated": 0.50}
MAY_2023 = (Timestamp(dt.date(2023, 5, 1)), Timestamp(dt.date(2023, 5, 31)))


class CapacityError(ValueError):
    pass


class AnchorError(ValueError):
    pass


@dataclass
class SessionPool:
    name: str
    sessions: list[ChatSession]
    tags: list[frozenset[str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.tags:
            self.tags = [frozenset()] * len(self.sessions)
        if len(self.tags) != len(self.sessions):
            raise ValueError(f"pool {self.name}: tags and sessions differ in length")

    def eligible(self, exclude_tags: frozenset[str]) -> list[ChatSession]:
        return [s for s, t in zip(self.sessions, self.tags) if not (t & exclude_tags)]

    @classmethod
    def from_jsonl(cls, name: str, path) -> "SessionPool":
        sessions, tags = [], []
        for line in Path(path).read_text(encoding="utf-8").split("\n"):
            if line.strip():
                rec = json.loads(line)
                sessions.append(session_from_dict(rec))
                tags.append(frozenset(rec.get("tags", ())))
        return cls(name, sessions, tags)


@dataclass
class CompileSpec:
    total_sessions: int
    evidence: list[ChatSession] = field(default_factory=list)
    mixture: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIXTURE))
    default_period: tuple[Timestamp, Timestamp] = MAY_2023
    seed: int = 0
    evidence_ordered: bool = True
    exclude_tags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.total_sessions <= 0:
            raise ValueError("total_sessions must be positive")
        if self.total_sessions < len(self.evidence):
            raise ValueError("total_sessions is smaller than the number of evidence sessions")
        if any(f < 0 for f in self.mixture.values()):
            raise ValueError("mixture fractions must be non-negative")
        if abs(sum(self.mixture.values()) - 1.0) > 1e-9:
            raise ValueError(f"mixture fractions sum to {sum(self.mixture.values())}, not 1")
        if self.default_period[0] > self.default_period[1]:
            raise ValueError("default_period start is after its end")

    def rng(self, stage: str) -> random.Random:
        return random.Random(f"{self.seed}/{stage}")


def allocate(n: int, mixture: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder apportionment of ``n`` over the mixture.

    Remainder ties go to the pool listed first. Quotas are exact rationals of
    the fractions as written, so float noise cannot break a tie.
    """
    quotas = {name: Fraction(repr(f)) * n for name, f in mixture.items()}
    counts = {name: math.floor(q) for name, q in quotas.items()}
    left = n - sum(counts.values())
    order = sorted(mixture, key=lambda name: -(quotas[name] - counts[name]))  # stable sort
    for name in order[:left]:
        counts[name] += 1
    return counts


def sample_fillers(spec: CompileSpec, pools: Mapping[str, SessionPool]) -> list[ChatSession]:
    n = spec.total_sessions - len(spec.evidence)
    counts = allocate(n, spec.mixture)
    rng = spec.rng("sample")
    evidence_ids = {s.session_id for s in spec.evidence}
    out: list[ChatSession] = []
    for name, count in counts.items():
        if count == 0:
            continue
        if name not in pools:
            raise CapacityError(f"pool {name!r} is missing but {count} sessions were requested")
        candidates = [s for s in pools[name].eligible(spec.exclude_tags) if s.session_id not in evidence_ids]
        if len(candidates) < count:
            raise CapacityError(f"pool {name!r} has {len(candidates)} usable sessions, {count} requested")
        out.extend(rng.sample(candidates, count))
    ids = [s.session_id for s in out]
    if len(set(ids)) != len(ids):
        raise ValueError("filler session ids collide across pools")
    return out


def place_evidence(fillers: Sequence[ChatSession], evidence: Sequence[ChatSession], seed,
                   ordered: bool = True) -> list[ChatSession]:
    """Shuffle fillers and evidence together, then put evidence back in its
    required order over the slots it landed in. The correction never moves
    a filler."""
    rng = random.Random(f"{seed}/place")
    combined = [(False, i) for i in range(len(fillers))] + [(True, i) for i in range(len(evidence))]
    rng.shuffle(combined)
    if ordered:
        ev_slots = [pos for pos, (is_ev, _) in enumerate(combined) if is_ev]
        for j, pos in enumerate(ev_slots):
            combined[pos] = (True, j)
    return [evidence[i] if is_ev else fillers[i] for is_ev, i in combined]


def period_before(question_date: Timestamp, period=MAY_2023) -> tuple[Timestamp, Timestamp]:
    """Clamp ``period`` so that every drawn time falls strictly before the
    question's day (the period end covers its whole last day)."""
    last = Timestamp(question_date.date - dt.timedelta(days=1))
    if period[1].date <= last.date:
        return period
    return (min(period[0], last), last)


def _minute(ts: Timestamp) -> int:
    return ts.date.toordinal() * 1440 + (ts.time_of_day or 0) // 60


def _from_minute(m: int) -> Timestamp:
    day, minute = divmod(m, 1440)
    return Timestamp(dt.date.fromordinal(day), minute * 60)


def assign_timestamps(sessions: Sequence[ChatSession], spec: CompileSpec) -> list[ChatSession]:
    """Sessions that already carry a timestamp are anchors; every other
    session gets a uniform minute-resolution time between its neighbouring
    anchors (or the default period at either end), sorted within each gap."""
    anchors = [(i, s.timestamp) for i, s in enumerate(sessions) if s.timestamp is not None]
    for (_, a), (_, b) in zip(anchors, anchors[1:]):
        if b < a:
            raise AnchorError(f"anchor {b} follows later anchor {a}")
    rng = spec.rng("timestamps")
    period_lo = _minute(spec.default_period[0])
    period_hi = spec.default_period[1].date.toordinal() * 1440 + 1439
    out = list(sessions)
    bounds = [(-1, None)] + anchors + [(len(sessions), None)]
    for (i, lo_ts), (j, hi_ts) in zip(bounds, bounds[1:]):
        gap = range(i + 1, j)
        if not gap:
            continue
        lo = _minute(lo_ts) if lo_ts is not None else None
        hi = _minute(hi_ts) if hi_ts is not None else None
        if lo is None:
            lo = period_lo if hi is None else min(period_lo, hi)
        if hi is None:
            hi = max(period_hi, lo)
        drawn = sorted(rng.randint(lo, hi) for _ in gap)
        for pos, m in zip(gap, drawn):
            out[pos] = replace(out[pos], timestamp=_from_minute(m))
    return out


def compile_history(spec: CompileSpec, pools: Mapping[str, SessionPool]) -> list[ChatSession]:
    fillers = [replace(s, timestamp=None) for s in sample_fillers(spec, pools)]
    ordered = place_evidence(fillers, spec.evidence, spec.seed, spec.evidence_ordered)
    if not spec.evidence_ordered:
        # unordered evidence may still carry fixed dates; those must not cross
        slots = [i for i, s in enumerate(ordered) if s.timestamp is not None]
        fixed = sorted((ordered[i] for i in slots), key=lambda s: s.timestamp.sort_key)
        for i, s in zip(slots, fixed):
            ordered[i] = s
    return assign_timestamps(ordered, spec)
