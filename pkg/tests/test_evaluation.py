import json
import random

import pytest

from memoloop import MemoRecord, ScriptedBackend, ScriptedExchange, new_session
from memoloop.evaluation import (
    LEXICAL_SCORER,
    ConsistencyCase,
    SimilarityScorer,
    StreamTurn,
    case_from_obj,
    default_lexical_scorer,
    get_scorer,
    load_cases,
    register_scorer,
    run_consistency_eval,
    score_memo_writing,
    score_memo_writing_corpus,
    score_response,
    score_retrieval,
)
from memoloop.pipeline import PipelineConfig


def rec(topic, start, end, summary=None):
    return MemoRecord(topic=topic, start=start, end=end, summary=summary)


# --- independent oracles (enumeration-based, no shared code paths) -------


def oracle_writing(pred, gold, scorer=default_lexical_scorer):
    """Brute force: try every pred/gold pairing, award credit on exact spans."""
    topic_credit = 0.0
    summary_credit = 0.0
    for p in pred:
        for g in gold:
            if (p.start, p.end) == (g.start, g.end):
                if p.topic.strip().casefold() == g.topic.strip().casefold():
                    topic_credit += 1.0
                if p.summary is not None and g.summary is not None:
                    summary_credit += scorer(p.summary, g.summary)

    def prf(credit):
        if not pred and not gold:
            return 1.0, 1.0, 1.0
        p = credit / len(pred) if pred else 0.0
        r = credit / len(gold) if gold else 0.0
        f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        return p, r, f

    return prf(topic_credit), prf(summary_credit)


def oracle_retrieval(pred, gold):
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    if not pred or not gold:
        return 0.0, 0.0, 0.0
    hits = 0
    for p in pred:
        for g in gold:
            if p == g:
                hits += 1
    prec = hits / len(pred)
    rec_ = hits / len(gold)
    f = 0.0 if prec + rec_ == 0 else 2 * prec * rec_ / (prec + rec_)
    return prec, rec_, f


def random_record_list(rng, max_records=6, total=30, topics=("a", "b", "c", "d")):
    """Non-intersecting records with spans drawn from a fixed grid."""
    n = rng.randint(0, max_records)
    starts = sorted(rng.sample(range(1, total, 3), n)) if n else []
    records = []
    for s in starts:
        records.append(
            rec(
                rng.choice(topics),
                s,
                s + rng.randint(0, 2),
                rng.choice([None, "x y z", "x y", "p q r s"]),
            )
        )
    return records


# --- lexical scorer ------------------------------------------------------


def test_lexical_identity():
    assert default_lexical_scorer("a b c", "a b c") == 1.0


def test_lexical_partial_overlap():
    # multiset counts: overlap 2, |cand| 2, |ref| 4 -> p=1, r=0.5, f1=2/3
    assert default_lexical_scorer("a b", "a b c d") == pytest.approx(2 / 3)


def test_lexical_empty_candidate():
    assert default_lexical_scorer("", "a") == 0.0


def test_lexical_half_overlap():
    assert default_lexical_scorer("alpha beta", "alpha gamma") == pytest.approx(0.5)


def test_lexical_ignores_case_and_punctuation():
    assert default_lexical_scorer("Hello, World!", "hello world") == 1.0


def test_scorer_registry_rejects_lawbreakers():
    with pytest.raises(ValueError):
        register_scorer(SimilarityScorer("bad-identity", lambda c, r: 0.5))
    with pytest.raises(ValueError):
        register_scorer(
            SimilarityScorer("bad-range", lambda c, r: 2.0 if c != r else 1.0)
        )
    assert get_scorer("lexical") is LEXICAL_SCORER
    with pytest.raises(KeyError):
        get_scorer("neural")


# --- memo-writing scores -------------------------------------------------


def test_writing_identical_lists_score_one():
    gold = [
        rec("worry", 1, 8, "Sabrina is worried about her sister."),
        rec("taxi conversation", 9, 20, "user takes a taxi."),
    ]
    score = score_memo_writing(gold, gold)
    assert score.topic_f1 == 1.0
    assert score.summary_f1 == 1.0


def test_writing_span_gate_blocks_all_credit():
    pred = [rec("worry", 1, 7, "s"), rec("taxi conversation", 8, 20, "s")]
    gold = [rec("worry", 1, 8, "s"), rec("taxi conversation", 9, 20, "s")]
    score = score_memo_writing(pred, gold)
    assert score.topic_f1 == 0.0
    assert score.summary_f1 == 0.0


def test_writing_span_offset_by_one_zeroes_that_pair():
    gold = [rec("t", 1, 8, "s")]
    for pred in ([rec("t", 1, 9, "s")], [rec("t", 2, 8, "s")]):
        score = score_memo_writing(pred, gold)
        assert score.topic_f1 == 0.0 and score.summary_f1 == 0.0


def test_writing_paraphrased_summary_uses_scorer():
    # hand count: pred tokens 5, gold tokens 7, overlap 4 -> f1 = 32/48 = 2/3
    pred = [rec("worry", 1, 8, "user comforts the worried bot")]
    gold = [rec("worry", 1, 8, "bot is worried and user comforts her")]
    score = score_memo_writing(pred, gold)
    assert score.topic_f1 == 1.0
    assert score.summary_p == pytest.approx(2 / 3)
    assert score.summary_f1 == pytest.approx(2 / 3)


def test_writing_topic_match_is_trim_casefold():
    pred = [rec("  Worry ", 1, 8)]
    gold = [rec("worry", 1, 8)]
    assert score_memo_writing(pred, gold).topic_f1 == 1.0


def test_writing_missing_summary_scores_zero_credit():
    pred = [rec("t", 1, 8)]
    gold = [rec("t", 1, 8, "has one")]
    score = score_memo_writing(pred, gold)
    assert score.topic_f1 == 1.0
    assert score.summary_f1 == 0.0


def test_writing_rejects_intersecting_input():
    with pytest.raises(ValueError):
        score_memo_writing([rec("a", 1, 5), rec("b", 3, 8)], [rec("a", 1, 8)])


def test_writing_micro_aggregation_differs_from_mean_of_instances():
    # one instance with 1 record, one with 3: micro pools the counts
    pairs = [
        ([rec("a", 1, 2)], [rec("a", 1, 2)]),
        ([rec("x", 1, 2), rec("y", 3, 4), rec("z", 5, 6)], [rec("x", 1, 2)]),
    ]
    score = score_memo_writing_corpus(pairs)
    assert score.topic_p == pytest.approx(2 / 4)
    assert score.topic_r == pytest.approx(2 / 2)


def test_writing_oracle_equivalence_randomized():
    rng = random.Random(20240817)
    for _ in range(100):
        pred = random_record_list(rng)
        gold = random_record_list(rng)
        mine = score_memo_writing(pred, gold)
        (tp, tr, tf), (sp, sr, sf) = oracle_writing(pred, gold)
        assert abs(mine.topic_p - tp) <= 1e-9
        assert abs(mine.topic_r - tr) <= 1e-9
        assert abs(mine.topic_f1 - tf) <= 1e-9
        assert abs(mine.summary_p - sp) <= 1e-9
        assert abs(mine.summary_r - sr) <= 1e-9
        assert abs(mine.summary_f1 - sf) <= 1e-9


# --- retrieval scores ----------------------------------------------------


def test_retrieval_exact_match():
    assert score_retrieval({1, 2, 4}, {1, 2, 4}) == (1.0, 1.0, 1.0)


def test_retrieval_partial():
    p, r, f1 = score_retrieval({1, 2}, {1, 2, 4})
    assert p == 1.0
    assert r == pytest.approx(2 / 3)
    assert f1 == pytest.approx(0.8)
    assert f1 == 0.8  # exact per the 2*1*(2/3)/(5/3) arithmetic


def test_retrieval_disjoint():
    assert score_retrieval({3}, {1, 2, 4}) == (0.0, 0.0, 0.0)


def test_retrieval_empty_cases():
    assert score_retrieval(set(), set()) == (1.0, 1.0, 1.0)
    assert score_retrieval(set(), {1}) == (0.0, 0.0, 0.0)
    assert score_retrieval({1}, set()) == (0.0, 0.0, 0.0)


def test_retrieval_oracle_equivalence_randomized():
    rng = random.Random(99)
    for _ in range(100):
        pred = set(rng.sample(range(1, 9), rng.randint(0, 8)))
        gold = set(rng.sample(range(1, 9), rng.randint(0, 8)))
        mine = score_retrieval(pred, gold)
        ref = oracle_retrieval(pred, gold)
        for a, b in zip(mine, ref):
            assert abs(a - b) <= 1e-9


def test_retrieval_monotonicity():
    rng = random.Random(7)
    for _ in range(200):
        gold = set(rng.sample(range(1, 9), rng.randint(1, 8)))
        pred = set(rng.sample(range(1, 9), rng.randint(0, 7)))
        missing_correct = sorted(gold - pred)
        if missing_correct:
            _, _, base_f1 = score_retrieval(pred, gold)
            _, _, grown_f1 = score_retrieval(pred | {missing_correct[0]}, gold)
            assert grown_f1 >= base_f1 - 1e-12
        wrong = sorted(set(range(1, 9)) - gold - pred)
        if wrong and pred:
            base_p, _, _ = score_retrieval(pred, gold)
            worse_p, _, _ = score_retrieval(pred | {wrong[0]}, gold)
            assert worse_p <= base_p + 1e-12


# --- response score ------------------------------------------------------


def test_response_identity_and_disjoint():
    assert score_response("same words", "same words") == 1.0
    assert score_response("entirely different", "no shared tokens here") == 0.0


def test_response_requires_gold():
    with pytest.raises(ValueError):
        score_response("x", "   ")


# --- consistency cases ---------------------------------------------------


def make_case(case_id, qtype, n_turns=12, spans=((1, 2),)):
    return ConsistencyCase(
        id=case_id,
        stream=tuple(StreamTurn(f"turn {k} about topic {k % 3}") for k in range(n_turns)),
        question="What did we discuss at the start?",
        qtype=qtype,
        judge_history_spans=spans,
    )


def test_case_validation():
    with pytest.raises(ValueError):
        make_case("short", "retrospection", n_turns=5)
    with pytest.raises(ValueError):
        make_case("long", "retrospection", n_turns=16)
    with pytest.raises(ValueError):
        make_case("badtype", "interpolation")
    with pytest.raises(ValueError):
        make_case("badspan", "retrospection", spans=((1, 25),))


def test_case_obj_round_trip(tmp_path):
    obj = {
        "id": "c1",
        "stream": ["hello"] * 11 + [{"text": "tagged", "topic": "math"}],
        "question": "q?",
        "qtype": "conjunction",
        "judge_history_spans": [[1, 4], [9, 10]],
    }
    case = case_from_obj(obj)
    assert case.stream[-1].topic == "math"
    path = tmp_path / "cases.jsonl"
    path.write_text(json.dumps(obj) + "\n\n" + json.dumps(obj | {"id": "c2"}) + "\n")
    cases = load_cases(path)
    assert [c.id for c in cases] == ["c1", "c2"]


def test_load_cases_reports_line_numbers(tmp_path):
    path = tmp_path / "cases.jsonl"
    path.write_text('{"id": "x"}\n')
    with pytest.raises(ValueError, match="cases.jsonl:1"):
        load_cases(path)


def chat_rules_backend():
    return ScriptedBackend([
        ScriptedExchange("not json at all", contains="Task Conversation"),
        ScriptedExchange("1", contains="Topic Options"),
        ScriptedExchange("a grounded reply", contains="User Input"),
    ])


def test_consistency_eval_means_and_exclusions():
    cases = [
        make_case("c-retro", "retrospection"),
        make_case("c-cont", "continuation"),
        make_case("c-conj", "conjunction"),
    ]
    judge = ScriptedBackend([
        "faithless. [[1]]",
        "perfect. [[100]]",
        "near perfect. [[90]]",
    ])
    report = run_consistency_eval(
        cases, lambda: new_session(config=PipelineConfig()), chat_rules_backend(), judge
    )
    assert report["overall"]["mean_rating"] == pytest.approx(63.67, abs=1e-9)
    assert report["overall"]["cases"] == 3
    assert report["by_type"]["retrospection"]["mean_rating"] == 1
    assert report["by_type"]["continuation"]["mean_rating"] == 100
    assert report["by_type"]["conjunction"]["mean_rating"] == 90
    assert report["invalid_verdicts"] == 0
    assert len(report["cases"]) == 3
    assert all("trace" in row for row in report["cases"])


def test_consistency_eval_invalid_verdict_excluded_and_counted():
    cases = [
        make_case("ok-1", "retrospection"),
        make_case("bad", "retrospection"),
        make_case("ok-2", "continuation"),
    ]
    judge = ScriptedBackend(["[[80]]", "I refuse to give a rating.", "[[60]]"])
    report = run_consistency_eval(
        cases, lambda: new_session(config=PipelineConfig()), chat_rules_backend(), judge
    )
    assert report["invalid_verdicts"] == 1
    assert report["overall"]["cases"] == 2
    assert report["overall"]["mean_rating"] == pytest.approx(70.0)
    bad = [row for row in report["cases"] if row["id"] == "bad"][0]
    assert bad["status"] == "invalid_verdict"


def test_consistency_eval_backend_error_fails_one_case():
    cases = [make_case("ok", "retrospection"), make_case("doomed", "continuation")]
    # judge queue runs dry on the second case
    judge = ScriptedBackend(["[[50]]"])
    report = run_consistency_eval(
        cases, lambda: new_session(config=PipelineConfig()), chat_rules_backend(), judge
    )
    assert report["backend_errors"] == 1
    assert report["overall"]["cases"] == 1
    assert report["overall"]["mean_rating"] == 50


def test_consistency_eval_requires_cases():
    with pytest.raises(ValueError):
        run_consistency_eval([], lambda: new_session(), ScriptedBackend([]), ScriptedBackend([]))
