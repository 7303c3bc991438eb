import datetime as dt
import json

import pytest
from hypothesis import given, settings, strategies as st

from longmem.memstore import (
    BenchmarkInstance, ChatSession, DatasetParseError, EmptyContentError, Timestamp, Turn,
    ValidationError, adapt_released, dump_dataset, instance_from_dict, instance_to_dict,
    load_dataset, sequential_view, transcript, user_only_text,
)


def sess(sid, date, *texts, evidence=()):
    turns = []
    for i, t in enumerate(texts):
        turns.append(Turn("user" if i % 2 == 0 else "assistant", t, i in evidence))
    return ChatSession(sid, Timestamp.parse(date) if date else None, tuple(turns))


def inst(qid="q1", qtype="multi-session", qdate="2023/06/01", history=None, evidence=("a",)):
    history = history or [sess("a", "2023/05/01", "hello", "hi")]
    return BenchmarkInstance(qid, qtype, "What?", Timestamp.parse(qdate), "x", tuple(history), frozenset(evidence))


# -- Timestamp ---------------------------------------------------------------

@pytest.mark.parametrize("text,expected", [
    ("2023/05/20", "2023/05/20"),
    ("2023/5/2", "2023/05/02"),
    ("2023/05/20 14:03", "2023/05/20 14:03"),
    ("2023/05/20 (Sat) 14:03", "2023/05/20 14:03"),
    ("2023/05/20 14:03:09", "2023/05/20 14:03:09"),
    ("  2023/05/20  ", "2023/05/20"),
])
def test_timestamp_parse_and_str(text, expected):
    assert str(Timestamp.parse(text)) == expected


@pytest.mark.parametrize("bad", ["2023-05-20", "2023/13/01", "2023/02/30", "2023/05/20 25:00", "yesterday", ""])
def test_timestamp_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        Timestamp.parse(bad)


def test_timestamp_ordering_date_only_is_midnight():
    a, b = Timestamp.parse("2023/05/10"), Timestamp.parse("2023/05/10 00:00")
    assert not a < b and not b < a and a <= b and b <= a
    assert Timestamp.parse("2023/05/09 23:59") < a < Timestamp.parse("2023/05/10 00:01")


def test_timestamp_of():
    d = dt.date(2023, 1, 2)
    assert Timestamp.of(d) == Timestamp(d)
    assert Timestamp.of("2023/01/02") == Timestamp(d)
    t = Timestamp(d, 60)
    assert Timestamp.of(t) is t


timestamps = st.builds(
    Timestamp,
    st.dates(dt.date(1990, 1, 1), dt.date(2100, 12, 31)),
    st.one_of(st.none(), st.integers(0, 86399)),
)


@given(timestamps)
def test_timestamp_roundtrip(ts):
    assert Timestamp.parse(str(ts)) == ts


# -- turns and sessions ------------------------------------------------------

def test_turn_validation():
    with pytest.raises(ValueError):
        Turn("system", "hi")
    with pytest.raises(ValueError):
        Turn("user", "   ")


def test_session_check():
    sess("s", None, "a", "b", "c").check()
    with pytest.raises(ValueError, match="no user turn"):
        ChatSession("s", None, (Turn("assistant", "hi"),)).check()
    with pytest.raises(ValueError, match="alternate"):
        ChatSession("s", None, (Turn("user", "a"), Turn("user", "b"))).check()


def test_user_only_text_and_transcript():
    s = sess("s", None, "first", "reply", "second")
    assert user_only_text(s) == "first\nsecond"
    assert transcript(s.turns) == "user: first\nassistant: reply\nuser: second"
    with pytest.raises(EmptyContentError):
        user_only_text([Turn("assistant", "only me")])


# -- validation --------------------------------------------------------------

def test_valid_instance_loads(tmp_path):
    p = tmp_path / "d.jsonl"
    dump_dataset(p, [inst()])
    [loaded] = load_dataset(p)
    assert loaded == inst()


def test_session_after_question_is_error(tmp_path):
    bad = inst(qdate="2023/04/01")
    p = tmp_path / "d.jsonl"
    dump_dataset(p, [bad])
    with pytest.raises(ValidationError) as e:
        load_dataset(p)
    assert e.value.instance_id == "q1" and e.value.field == "question_date"


def test_session_on_question_date_only_warns(tmp_path, caplog):
    p = tmp_path / "d.jsonl"
    dump_dataset(p, [inst(qdate="2023/05/01")])
    assert len(load_dataset(p)) == 1
    assert "shares the question timestamp" in caplog.text


@pytest.mark.parametrize("kwargs,field", [
    ({"evidence": ("zzz",)}, "evidence_session_ids"),
    ({"evidence": ()}, "evidence_session_ids"),
    ({"qtype": "trivia"}, "question_type"),
    ({"history": [sess("a", "2023/05/01", "x", "y"), sess("a", "2023/05/02", "x", "y")]}, "haystack_sessions"),
    ({"history": [sess("a", None, "x", "y")]}, "haystack_sessions"),
])
def test_invalid_instances(tmp_path, kwargs, field):
    p = tmp_path / "d.jsonl"
    dump_dataset(p, [inst(**kwargs)])
    with pytest.raises(ValidationError) as e:
        load_dataset(p)
    assert e.value.field == field


def test_abstention_may_have_empty_evidence(tmp_path):
    p = tmp_path / "d.jsonl"
    dump_dataset(p, [inst(qtype="abstention", evidence=())])
    assert load_dataset(p)[0].is_abstention


def test_skip_mode_drops_bad_lines(tmp_path, caplog):
    p = tmp_path / "d.jsonl"
    dump_dataset(p, [inst("good"), inst("bad", evidence=("nope",)), inst("good2")])
    got = load_dataset(p, on_invalid="skip")
    assert [i.question_id for i in got] == ["good", "good2"]
    assert "skipping line 2" in caplog.text


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(instance_to_dict(inst())) + "\n{not json\n")
    with pytest.raises(DatasetParseError) as e:
        load_dataset(p)
    assert e.value.lineno == 2


def test_missing_field_is_validation_error(tmp_path):
    d = instance_to_dict(inst())
    del d["question"]
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(ValidationError) as e:
        load_dataset(p)
    assert e.value.field == "question"


def test_whole_file_json_array(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps([instance_to_dict(inst("a1")), instance_to_dict(inst("a2"))]))
    assert [i.question_id for i in load_dataset(p)] == ["a1", "a2"]


def test_released_adapter():
    rec = {
        "question_id": "x_abs", "question_type": "multi-session", "question": "Q?", "question_date": "2023/06/01 (Thu) 10:00",
        "answer": 3, "haystack_session_ids": ["s1"], "haystack_dates": ["2023/05/01 (Mon) 09:00"],
        "haystack_sessions": [[{"role": "user", "content": "hi", "has_answer": True}, {"role": "assistant", "content": ""}]],
        "answer_session_ids": ["s1"],
    }
    out = instance_from_dict(adapt_released(rec))
    assert out.is_abstention and out.evidence_session_ids == frozenset()
    assert out.answer == "3"
    assert out.history[0].turns == (Turn("user", "hi", True),)


def test_sequential_view_sorts_and_warns(caplog):
    i = inst(history=[sess("b", "2023/05/03", "x"), sess("a", "2023/05/01", "y")])
    assert [s.session_id for s in sequential_view(i)] == ["a", "b"]
    assert "re-sorted" in caplog.text


# -- round trip --------------------------------------------------------------

texts = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=30).filter(lambda t: t.strip() == t and t)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 4))
    history = []
    for i in range(n):
        m = draw(st.integers(1, 4))
        turns = tuple(Turn("user" if j % 2 == 0 else "assistant", draw(texts), draw(st.booleans())) for j in range(m))
        ts = Timestamp(dt.date(2023, 5, 1) + dt.timedelta(days=i), draw(st.one_of(st.none(), st.integers(0, 86399))))
        history.append(ChatSession(f"s{i}", ts, turns))
    evidence = draw(st.sets(st.sampled_from([s.session_id for s in history]), min_size=1))
    return BenchmarkInstance("q", "multi-session", draw(texts), Timestamp(dt.date(2023, 6, 1)), draw(texts),
                             tuple(history), frozenset(evidence))


@settings(max_examples=60, deadline=None)
@given(instances())
def test_instance_roundtrip(tmp_path_factory, instance):
    p = tmp_path_factory.mktemp("rt") / "d.jsonl"
    dump_dataset(p, [instance])
    assert load_dataset(p) == [instance]
