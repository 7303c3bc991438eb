"""Generate the small synthetic datasets used by the test suite and the smoke runs.

    python scripts/make_fixture_dataset.py            # writes tests/fixtures/*.jsonl
    python scripts/make_fixture_dataset.py --pools-only configs/pools

Filler pools are templated chats; evidence sessions carry the answer. Every
history is compiled with the same machinery as ``longmem compile``.
"""

import argparse
import json
from pathlib import Path

from longmem.histcompile import CompileSpec, SessionPool, compile_history, period_before
from longmem.memstore import BenchmarkInstance, ChatSession, Timestamp, Turn, dump_dataset, load_dataset, session_to_dict

ROOT = Path(__file__).resolve().parents[1]

CODING = ["reverse a string in python", "sort a dict by value", "read a csv with pandas",
          "write a bash loop over files", "center a div in css", "parse json in javascript",
          "merge two git branches", "profile a slow sql query", "debounce a function",
          "unit test a flask route", "format dates in java", "set up a python virtualenv"]
GENERAL = ["how volcanoes form", "the history of the printing press", "why the sky is blue",
           "how vaccines work", "the rules of cricket", "what causes tides", "how bees communicate",
           "the plot of moby dick", "how solar panels work", "why leaves change color",
           "the origin of chess", "how airplanes stay up"]
PERSONAL = ["planning a picnic with friends", "choosing a new running shoe", "fixing a leaky faucet",
            "organizing my closet", "learning to bake bread", "picking a podcast for my commute",
            "repotting my houseplants", "budgeting for the holidays", "starting a journal",
            "finding a yoga class", "painting my bedroom", "training my puppy to sit"]


def _filler(pool: str, i: int, topic: str) -> ChatSession:
    if pool == "sharegpt":
        turns = [Turn("user", f"Can you show me how to {topic}?"),
                 Turn("assistant", f"Sure. To {topic}, start with a small example and build from there."),
                 Turn("user", "Thanks, can you make it shorter?"),
                 Turn("assistant", "Here is a compact version of the same idea.")]
    elif pool == "ultrachat":
        turns = [Turn("user", f"Explain {topic}."),
                 Turn("assistant", f"Here is an overview of {topic} with the key facts.")]
    else:
        turns = [Turn("user", f"I need some help with {topic}."),
                 Turn("assistant", f"Happy to help with {topic}. What have you tried so far?"),
                 Turn("user", "Not much yet, just getting started."),
                 Turn("assistant", "Then let's begin with the basics.")]
    return ChatSession(f"{pool}_{i}", None, tuple(turns))


def make_pools(copies: int = 3) -> dict[str, SessionPool]:
    pools = {}
    for name, topics in (("sharegpt", CODING), ("ultrachat", GENERAL), ("simulated", PERSONAL)):
        sessions = [_filler(name, i, t) for i, t in enumerate(topics * copies)]
        pools[name] = SessionPool(name, sessions)
    return pools


def _ev(sid, user, assistant="Got it, thanks for sharing.", date=None, extra=None):
    turns = [Turn("user", "Hi, quick question about my plans.", False),
             Turn("assistant", "Of course, what's up?", False),
             Turn("user", user, True),
             Turn("assistant", assistant, assistant != "Got it, thanks for sharing.")]
    if extra:
        turns += [Turn("user", extra), Turn("assistant", "Sounds good.")]
    return ChatSession(sid, Timestamp.parse(date) if date else None, tuple(turns))


QUESTIONS = [
    dict(question_id="q01", question_type="single-session-user",
         question="What breed is my new dog?", answer="corgi", question_date="2023/06/01",
         evidence=[_ev("ev01", "We just adopted a corgi named Biscuit and I need a food recommendation.")]),
    dict(question_id="q02", question_type="single-session-assistant",
         question="Which hiking trail did you recommend for my trip to Zion?", answer="Angels Landing",
         question_date="2023/06/01",
         evidence=[_ev("ev02", "I'm visiting Zion next month, any trail ideas?",
                       "You should try Angels Landing if you are comfortable with heights.")]),
    dict(question_id="q03", question_type="single-session-preference",
         question="Can you suggest a dinner recipe for me tonight?", answer="vegetarian",
         question_date="2023/06/01",
         evidence=[_ev("ev03", "I'm vegetarian and I love spicy food, what should I stock in my pantry?")]),
    dict(question_id="q04", question_type="multi-session",
         question="How many musical instruments do I currently own?", answer="three",
         question_date="2023/06/01",
         evidence=[_ev("ev04a", "I own a guitar and a keyboard, how should I store them?"),
                   _ev("ev04b", "I bought a violin yesterday, so that makes three instruments I own.")]),
    dict(question_id="q05", question_type="knowledge-update",
         question="Where do I work now?", answer="Acme Robotics", question_date="2023/06/01",
         evidence=[_ev("ev05a", "I work at Globex as an analyst, how do I ask for a raise?"),
                   _ev("ev05b", "I just switched jobs, I now work at Acme Robotics as an engineer.")]),
    dict(question_id="q06", question_type="temporal-reasoning",
         question="What did I do between 2023/05/10 and 2023/05/12?", answer="pottery class",
         question_date="2023/05/30",
         evidence=[_ev("ev06", "On 2023/05/11 I took a pottery class and want to buy a wheel.", date="2023/05/11 18:30")]),
    dict(question_id="q07", question_type="temporal-reasoning",
         question="Which came first, my marathon or my trip to Paris?", answer="marathon",
         question_date="2023/05/30",
         evidence=[_ev("ev07a", "I ran my first marathon today, my legs hurt.", date="2023/05/07 09:00"),
                   _ev("ev07b", "I'm flying to Paris tomorrow, what should I pack?", date="2023/05/20 20:15")]),
    dict(question_id="q08", question_type="abstention",
         question="What color is my motorcycle?", answer="You did not mention owning a motorcycle.",
         question_date="2023/06/01", evidence=[]),
    dict(question_id="q09", question_type="single-session-user",
         question="What is the name of my sister?", answer="Lucia",
         question_date="2023/06/01",
         evidence=[_ev("ev09", "My sister Lucia is getting married, help me plan a toast.")]),
    dict(question_id="q10", question_type="multi-session",
         question="How many countries have I visited this year?", answer="two",
         question_date="2023/06/01",
         evidence=[_ev("ev10a", "I visited Japan in February and loved the ramen."),
                   _ev("ev10b", "After Japan I went to Peru, so that's two countries this year.")]),
]


def build(total_sessions: int = 12, seed: int = 7) -> list[BenchmarkInstance]:
    pools = make_pools()
    out = []
    for n, q in enumerate(QUESTIONS):
        qdate = Timestamp.parse(q["question_date"])
        spec = CompileSpec(total_sessions=total_sessions, evidence=list(q["evidence"]), seed=seed + n,
                           default_period=period_before(qdate))
        history = compile_history(spec, pools)
        ev_ids = frozenset(s.session_id for s in q["evidence"]) if q["question_type"] != "abstention" else frozenset()
        out.append(BenchmarkInstance(
            q["question_id"], q["question_type"], q["question"], qdate,
            q["answer"], tuple(history), ev_ids,
        ))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default=str(ROOT / "tests" / "fixtures"))
    ap.add_argument("--pools-only", metavar="DIR", help="write the filler pools as JSON-lines and exit")
    args = ap.parse_args()
    if args.pools_only:
        d = Path(args.pools_only)
        d.mkdir(parents=True, exist_ok=True)
        for name, pool in make_pools(1).items():
            with open(d / f"{name}.jsonl", "w") as f:
                for s in pool.sessions:
                    f.write(json.dumps({**session_to_dict(s), "tags": []}) + "\n")
        return
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    data = build()
    dump_dataset(d / "tiny_dataset.jsonl", data)
    dump_dataset(d / "three_dataset.jsonl", data[:3])
    assert len(load_dataset(d / "tiny_dataset.jsonl")) == 10
    print(f"wrote {d / 'tiny_dataset.jsonl'} and {d / 'three_dataset.jsonl'}")


if __name__ == "__main__":
    main()
