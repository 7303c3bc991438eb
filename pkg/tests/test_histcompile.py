import json

import pytest

from longmem.histcompile import (
    MAY_2023, AnchorError, CapacityError, CompileSpec, SessionPool, allocate, assign_timestamps,
    compile_history, period_before, place_evidence, sample_fillers,
)
from longmem.memstore import ChatSession, Timestamp, Turn, session_to_dict


def s(sid, ts=None):
    return ChatSession(sid, Timestamp.parse(ts) if ts else None, (Turn("user", sid), Turn("assistant", "ok")))


def pools(n=20, tagged=()):
    out = {}
    for name in ("sharegpt", "ultrachat", "simulated"):
        sessions = [s(f"{name}-{i}") for i in range(n)]
        tags = [frozenset({"unsafe"}) if f"{name}-{i}" in tagged else frozenset() for i in range(n)]
        out[name] = SessionPool(name, sessions, tags)
    return out


@pytest.mark.parametrize("n,mixture,expected", [
    (10, {"sharegpt": 0.25, "ultrachat": 0.25, "simulated": 0.5}, {"sharegpt": 3, "ultrachat": 2, "simulated": 5}),
    (4, {"sharegpt": 0.25, "ultrachat": 0.25, "simulated": 0.5}, {"sharegpt": 1, "ultrachat": 1, "simulated": 2}),
    (1, {"sharegpt": 0.25, "ultrachat": 0.25, "simulated": 0.5}, {"sharegpt": 0, "ultrachat": 0, "simulated": 1}),
    (7, {"a": 0.1, "b": 0.3, "c": 0.6}, {"a": 1, "b": 2, "c": 4}),
    (0, {"a": 1.0}, {"a": 0}),
    (3, {"x": 1 / 3, "y": 1 / 3, "z": 1 / 3}, {"x": 1, "y": 1, "z": 1}),
])
def test_allocate(n, mixture, expected):
    got = allocate(n, mixture)
    assert got == expected and sum(got.values()) == n


@pytest.mark.parametrize("kwargs", [
    {"total_sessions": 0},
    {"total_sessions": 1, "evidence": [s("e1"), s("e2")]},
    {"total_sessions": 5, "mixture": {"a": 0.5, "b": 0.4}},
    {"total_sessions": 5, "mixture": {"a": 1.5, "b": -0.5}},
    {"total_sessions": 5, "default_period": (MAY_2023[1], MAY_2023[0])},
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        CompileSpec(**kwargs)


def test_sample_fillers_counts_and_exclusions():
    spec = CompileSpec(12, [s("e1")], seed=3, exclude_tags=frozenset({"unsafe"}))
    p = pools(10, tagged={"simulated-0", "simulated-1"})
    fillers = sample_fillers(spec, p)
    counts = {name: sum(x.session_id.startswith(name) for x in fillers) for name in p}
    assert counts == allocate(11, spec.mixture)
    assert not {"simulated-0", "simulated-1"} & {x.session_id for x in fillers}


def test_capacity_errors():
    with pytest.raises(CapacityError):
        sample_fillers(CompileSpec(100), pools(5))
    with pytest.raises(CapacityError, match="missing"):
        sample_fillers(CompileSpec(4, mixture={"nope": 1.0}), pools())


def test_place_evidence_ordered_and_fillers_untouched():
    fillers = [s(f"f{i}") for i in range(8)]
    ev = [s("e0"), s("e1"), s("e2")]
    for seed in range(20):
        out = place_evidence(fillers, ev, seed)
        raw = place_evidence(fillers, ev, seed, ordered=False)
        ids = [x.session_id for x in out]
        assert [i for i in ids if i.startswith("e")] == ["e0", "e1", "e2"]
        # the correction pass only swaps evidence among evidence slots
        assert [x.session_id[0] for x in out] == [x.session_id[0] for x in raw]
        assert [i for i in ids if i.startswith("f")] == [x.session_id for x in raw if x.session_id[0] == "f"]
    assert place_evidence([], ev, 0) == ev


def test_place_evidence_unordered_varies():
    fillers = [s(f"f{i}") for i in range(8)]
    ev = [s("e0"), s("e1"), s("e2")]
    orders = {tuple(x.session_id for x in place_evidence(fillers, ev, seed, ordered=False) if x.session_id[0] == "e")
              for seed in range(30)}
    assert len(orders) > 1


def test_assign_timestamps_respects_anchors_and_period():
    sessions = [s("a"), s("b"), s("anchor", "2023/05/10 12:00"), s("c"), s("d")]
    spec = CompileSpec(5, seed=1)
    out = assign_timestamps(sessions, spec)
    stamps = [x.timestamp for x in out]
    assert stamps[2] == Timestamp.parse("2023/05/10 12:00")
    assert all(a <= b for a, b in zip(stamps, stamps[1:]))
    assert stamps[0] >= Timestamp.parse("2023/05/01")
    assert stamps[-1] <= Timestamp.parse("2023/05/31 23:59")
    assert all(t.time_of_day % 60 == 0 for t in stamps)


def test_anchor_before_period_start():
    out = assign_timestamps([s("a"), s("anchor", "2023/04/02 08:00"), s("b")], CompileSpec(3, seed=2))
    assert out[0].timestamp <= out[1].timestamp <= out[2].timestamp


def test_out_of_order_anchors_rejected():
    with pytest.raises(AnchorError):
        assign_timestamps([s("x", "2023/05/10"), s("y", "2023/05/01")], CompileSpec(2))


def test_compile_history_end_to_end():
    ev = [s("e0", "2023/05/05 10:00"), s("e1"), s("e2", "2023/05/20 09:30")]
    spec = CompileSpec(15, ev, seed=11)
    hist = compile_history(spec, pools())
    ids = [x.session_id for x in hist]
    assert len(hist) == 15 and len(set(ids)) == 15
    assert [i for i in ids if i.startswith("e")] == ["e0", "e1", "e2"]
    stamps = [x.timestamp for x in hist]
    assert all(a <= b for a, b in zip(stamps, stamps[1:]))
    assert hist[ids.index("e0")].timestamp == ev[0].timestamp
    assert compile_history(spec, pools()) == hist
    assert compile_history(CompileSpec(15, ev, seed=12), pools()) != hist


def test_unordered_anchored_evidence_stays_chronological():
    ev = [s("late", "2023/05/25"), s("early", "2023/05/03")]
    for seed in range(10):
        hist = compile_history(CompileSpec(8, ev, seed=seed, evidence_ordered=False), pools())
        stamps = [x.timestamp for x in hist]
        assert all(a <= b for a, b in zip(stamps, stamps[1:]))


def test_filler_timestamps_are_reassigned():
    p = pools()
    p["simulated"] = SessionPool("simulated", [s(f"simulated-{i}", "2020/01/01") for i in range(20)])
    hist = compile_history(CompileSpec(6, seed=0), p)
    assert all(x.timestamp.date.year == 2023 for x in hist)


def test_period_before():
    q = Timestamp.parse("2023/05/20")
    lo, hi = period_before(q)
    assert lo == MAY_2023[0] and hi == Timestamp.parse("2023/05/19")
    assert period_before(Timestamp.parse("2023/07/01")) == MAY_2023
    lo, hi = period_before(Timestamp.parse("2023/04/10"))
    assert lo == hi == Timestamp.parse("2023/04/09")


def test_pool_from_jsonl(tmp_path):
    p = tmp_path / "pool.jsonl"
    p.write_text("\n".join(json.dumps({**session_to_dict(s(f"x{i}")), "tags": ["t"] if i else []}) for i in range(3)))
    pool = SessionPool.from_jsonl("x", p)
    assert [x.session_id for x in pool.eligible(frozenset({"t"}))] == ["x0"]
    with pytest.raises(ValueError):
        SessionPool("bad", [s("a")], [frozenset(), frozenset()])
