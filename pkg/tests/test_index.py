import datetime as dt
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longmem import derive
from longmem.derive import DerivedText
from longmem.index import (
    ConfigError, IndexConfig, LexicalIndex, MemoryItem, build_index, decompose, expand_key, load_index,
    save_index,
)
from longmem.memstore import ChatSession, Timestamp, Turn
from longmem.providers import HashEmbedder, StubGenerator, tokenize
from longmem.stubs import offline_generator


def sess(sid, day, *pairs, ts=None):
    turns = []
    for speaker, text in pairs:
        turns.append(Turn(speaker, text))
    return ChatSession(sid, ts or Timestamp(dt.date(2023, 5, day)), tuple(turns))


S1 = sess("s1", 1, ("user", "I bought a red bike."), ("assistant", "Nice bike!"),
          ("user", "Where can I ride it?"), ("assistant", "Try the river trail."))


@pytest.mark.parametrize("g,k,ok", [
    ("session", "value_only", True),
    ("round", "value_plus_fact", True),
    ("round", "summary_only", False),
    ("round", "value_plus_summary", False),
    ("session", "value_plus_summary", True),
    ("facts", "value_only", True),
    ("facts", "value_plus_fact", False),
    ("summary", "keyphrase_only", False),
    ("turn", "value_only", False),
    ("session", "bogus", False),
])
def test_config_validation(g, k, ok):
    cfg = IndexConfig(g, k)
    assert (cfg.problems() == []) == ok
    if not ok:
        with pytest.raises(ConfigError):
            cfg.validate()


def test_session_decomposition():
    [it] = decompose(S1, "session")
    assert it.item_id == "s1" and it.source_session_id == "s1"
    assert it.user_text == "I bought a red bike.\nWhere can I ride it?"
    assert it.value_text.startswith("user: I bought a red bike.\nassistant: Nice bike!")
    assert it.turn_indices == (0, 1, 2, 3)


def test_round_decomposition():
    items = decompose(S1, "round")
    assert [i.item_id for i in items] == ["s1:r0", "s1:r1"]
    assert items[1].value_text == "user: Where can I ride it?\nassistant: Try the river trail."
    assert items[1].user_text == "Where can I ride it?"
    assert [i.turn_indices for i in items] == [(0, 1), (2, 3)]
    assert [i.source_round_index for i in items] == [0, 1]


def test_rounds_skip_leading_assistant_and_keep_trailing_user():
    s = sess("s", 1, ("assistant", "Welcome"), ("user", "hi"), ("assistant", "hello"), ("user", "bye"))
    items = decompose(s, "round")
    assert [i.turn_indices for i in items] == [(1, 2), (3,)]


def test_session_without_user_turn_is_skipped(caplog):
    s = sess("s", 1, ("assistant", "monologue"))
    assert decompose(s, "round") == []
    assert "no user turns" in caplog.text


def test_derived_granularities_need_generator():
    with pytest.raises(ConfigError):
        decompose(S1, "facts")


def test_facts_granularity_items():
    g = StubGenerator({derive.facts_prompt(S1.turns[0].text + "\n" + S1.turns[2].text):
                       '["The user bought a red bike.", "The user wants places to ride."]'})
    items = decompose(S1, "facts", g)
    assert [i.item_id for i in items] == ["s1:f0", "s1:f1"]
    assert items[1].value_text == items[1].user_text == "The user wants places to ride."


def test_summary_granularity_item():
    g = StubGenerator({derive.summary_prompt("I bought a red bike.\nWhere can I ride it?"): "Bike purchase."})
    [it] = decompose(S1, "summary", g)
    assert it.item_id == "s1:s" and it.value_text == "Bike purchase."


def _item(user="I like tea"):
    return MemoryItem("x", "user: " + user, user, "s", Timestamp(dt.date(2023, 5, 1)))


def test_expand_key_strategies():
    facts = {"facts": DerivedText("facts", "x", ("f one", "f two"))}
    assert expand_key(_item(), "value_only").key_text == "I like tea"
    assert expand_key(_item(), "value_plus_fact", facts).key_text == "f one\nf two\nI like tea"
    assert expand_key(_item(), "fact_only", facts).key_text == "f one\nf two"
    summ = {"summary": DerivedText("summary", "x", "tea talk")}
    assert expand_key(_item(), "value_plus_summary", summ).key_text == "tea talk\nI like tea"
    kp = {"keyphrases": DerivedText("keyphrases", "x", ("tea", "drinks"))}
    assert expand_key(_item(), "keyphrase_only", kp).key_text == "tea\ndrinks"
    assert expand_key(_item(), "value_plus_fact", facts).value_text == "user: I like tea"


def test_expand_key_empty_derived(caplog):
    empty = {"facts": DerivedText("facts", "x", ())}
    assert expand_key(_item(), "value_plus_fact", empty).key_text == "I like tea"
    assert expand_key(_item(), "fact_only", empty).key_text == "I like tea"
    assert "falling back" in caplog.text


def test_expand_key_errors():
    with pytest.raises(ConfigError):
        expand_key(_item(), "value_plus_fact", {})
    with pytest.raises(ConfigError):
        expand_key(_item(), "nope")
    rnd = MemoryItem("x:r0", "v", "u", "x", Timestamp(dt.date(2023, 5, 1)), source_round_index=0)
    with pytest.raises(ConfigError):
        expand_key(rnd, "summary_only", {"summary": DerivedText("summary", "x", "s")})


def test_key_expansion_weakly_increases_tf():
    base = expand_key(_item("I went hiking"), "value_only")
    grown = expand_key(_item("I went hiking"), "value_plus_fact",
                       {"facts": DerivedText("facts", "x", ("The user went hiking in Zion.",))})
    tf = lambda it: Counter(tokenize(it.key_text))["hiking"]
    assert tf(grown) >= tf(base) and tf(grown) == 2


# -- lexical index -------------------------------------------------------------

docs_strategy = st.lists(st.lists(st.sampled_from(list("abcdefg")), max_size=12), min_size=1, max_size=20)


@given(docs_strategy)
def test_postings_match_brute_force(docs):
    lex = LexicalIndex(docs)
    assert lex.n_docs == len(docs)
    assert lex.doc_len == [len(d) for d in docs]
    assert lex.avgdl == pytest.approx(sum(map(len, docs)) / len(docs))
    for tok in "abcdefgz":
        want = {i: d.count(tok) for i, d in enumerate(docs) if tok in d}
        assert dict(lex.postings.get(tok, {})) == want
        assert lex.df(tok) == len(want)
    assert LexicalIndex.from_dict(lex.to_dict()).postings == lex.postings


# -- build / prefix / persistence ----------------------------------------------------

@st.composite
def histories(draw):
    n = draw(st.integers(0, 6))
    words = st.sampled_from("i my bought went to paris on 2023/05/02 2023/04/30 the cat dog".split())
    out = []
    for s in range(n):
        turns = []
        for _ in range(draw(st.integers(1, 3))):
            turns.append(Turn("user", " ".join(draw(st.lists(words, min_size=1, max_size=8)))))
            turns.append(Turn("assistant", "ok"))
        out.append(ChatSession(f"s{s}", Timestamp(dt.date(2023, 5, 1 + s)), tuple(turns)))
    return out


@settings(max_examples=40, deadline=None)
@given(histories(), st.sampled_from(["session", "round"]),
       st.sampled_from(["value_only", "value_plus_fact", "fact_only", "value_plus_keyphrase"]), st.data())
def test_prefix_indexing_property(sessions, gran, ks, data):
    cfg = IndexConfig(gran, ks, time_indexing=True)
    gen = offline_generator()
    full = build_index(sessions, cfg, gen)
    cut = data.draw(st.integers(0, len(sessions)))
    pre = build_index(sessions[:cut], cfg, gen)
    keep = {s.session_id for s in sessions[:cut]}
    assert pre.items == [it for it in full.items if it.source_session_id in keep]


def test_time_index_unions_event_and_session_dates():
    s = sess("s1", 10, ("user", "On 2023/05/02 I went to Paris."), ("assistant", "ok"))
    mem = build_index([s], IndexConfig("session", "value_only", time_indexing=True), offline_generator())
    assert mem.items[0].event_dates == (dt.date(2023, 5, 2),)
    assert mem.time_index == {dt.date(2023, 5, 2): {"s1"}, dt.date(2023, 5, 10): {"s1"}}


def test_time_indexing_off_leaves_index_empty():
    mem = build_index([S1], IndexConfig())
    assert mem.time_index == {} and mem.items[0].event_dates == ()


def test_tolerant_build_skips_failed_sessions(caplog):
    bad = sess("bad", 2, ("user", "hello there"), ("assistant", "hi"))
    g = StubGenerator({derive.facts_prompt("I bought a red bike.\nWhere can I ride it?"): '["fact"]'},
                      fallback=lambda p: "not json")
    with pytest.raises(derive.DerivationError):
        build_index([S1, bad], IndexConfig("session", "value_plus_fact"), g)
    mem = build_index([S1, bad], IndexConfig("session", "value_plus_fact"), g, tolerant=True)
    assert [i.item_id for i in mem.items] == ["s1"]
    assert "session bad skipped" in caplog.text


def test_duplicate_item_ids_rejected():
    with pytest.raises(ValueError):
        build_index([S1, S1], IndexConfig())


def test_save_load_roundtrip(tmp_path):
    sessions = [S1, sess("s2", 3, ("user", "On 2023/05/02 I saw a cat."), ("assistant", "cute"))]
    mem = build_index(sessions, IndexConfig("round", "value_plus_fact", True), offline_generator(), HashEmbedder(32))
    loaded = load_index(save_index(mem, tmp_path / "idx"))
    assert loaded.items == mem.items
    assert loaded.lexical.postings == mem.lexical.postings and loaded.lexical.doc_len == mem.lexical.doc_len
    assert loaded.time_index == mem.time_index
    assert loaded.config == mem.config
    np.testing.assert_array_equal(loaded.dense, mem.dense)
    assert loaded.item("s2:r0").event_dates == (dt.date(2023, 5, 2),)
    assert loaded.position("s2:r0") == 2


def test_load_rejects_unknown_format(tmp_path):
    d = save_index(build_index([S1], IndexConfig()), tmp_path / "idx")
    (d / "manifest.json").write_text('{"format": "other/9", "config": {}}')
    with pytest.raises(ValueError, match="unsupported"):
        load_index(d)
