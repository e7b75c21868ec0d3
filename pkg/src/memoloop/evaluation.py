"""Metrics for the three loop stages and the long-range consistency protocol.

Memo-writing predictions are scored span-gated, NER-style: a predicted record
earns credit only when its (start, end) exactly equals a gold span. Topic
credit is exact match after trim+casefold; summary credit is a float in
[0, 1] from a pluggable similarity scorer (default: lexical token F1).
Aggregation is micro: credits and counts are summed corpus-wide before
computing P/R/F1.

Consistency checking replays scripted multi-topic streams through a fresh
pipeline session, asks a long-range question, and has a judge backend rate
the reply's faithfulness 1..100 against the referenced history slices.
"""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .backends import Backend, BackendError, CompletionRequest
from .core import MemoRecord, Session
from .pipeline import handle_user_message
from .prompts import (
    NoRatingFound,
    RatingOutOfRange,
    parse_judge,
    render_judge,
)

logger = logging.getLogger(__name__)

QUESTION_TYPES = ("retrospection", "continuation", "conjunction")


@dataclass(frozen=True)
class SpanMatchScore:
    topic_p: float
    topic_r: float
    topic_f1: float
    summary_p: float
    summary_r: float
    summary_f1: float

    def to_obj(self) -> dict:
        return {
            "topic": {"p": self.topic_p, "r": self.topic_r, "f1": self.topic_f1},
            "summary": {"p": self.summary_p, "r": self.summary_r, "f1": self.summary_f1},
        }


@dataclass(frozen=True)
class SimilarityScorer:
    """Named candidate-vs-reference similarity in [0, 1] with score(x, x) == 1."""

    name: str
    score: Callable[[str, str], float]


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _tokens(text: str) -> list[str]:
    return text.casefold().translate(_PUNCT_TABLE).split()


def default_lexical_scorer(candidate: str, reference: str) -> float:
    """Token-multiset F1 after casefolding and punctuation stripping."""
    cand = Counter(_tokens(candidate))
    ref = Counter(_tokens(reference))
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    p = overlap / sum(cand.values())
    r = overlap / sum(ref.values())
    return 2 * p * r / (p + r)


_SCORERS: dict[str, SimilarityScorer] = {}

_PROBES = ("the cat sat on the mat", "a completely different probe sentence")


def register_scorer(scorer: SimilarityScorer) -> SimilarityScorer:
    """Register a scorer after checking the scorer laws on probe strings."""
    for probe in _PROBES:
        identity = scorer.score(probe, probe)
        if abs(identity - 1.0) > 1e-9:
            raise ValueError(
                f"scorer {scorer.name!r} violates score(x, x) == 1 (got {identity})"
            )
    cross = scorer.score(_PROBES[0], _PROBES[1])
    if not 0.0 <= cross <= 1.0:
        raise ValueError(f"scorer {scorer.name!r} left [0, 1] (got {cross})")
    _SCORERS[scorer.name] = scorer
    return scorer


def get_scorer(name: str) -> SimilarityScorer:
    if name not in _SCORERS:
        raise KeyError(f"unknown scorer {name!r}; registered: {sorted(_SCORERS)}")
    return _SCORERS[name]


LEXICAL_SCORER = register_scorer(SimilarityScorer("lexical", default_lexical_scorer))


# --- memo-writing metric -------------------------------------------------


def _check_non_intersecting(records: Sequence[MemoRecord], side: str) -> None:
    for i, a in enumerate(records):
        for b in records[i + 1 :]:
            if a.start <= b.end and b.start <= a.end:
                raise ValueError(f"{side} records intersect: {a.span} and {b.span}")


def _norm_topic(topic: str) -> str:
    return topic.strip().casefold()


def span_match_credits(
    pred: Sequence[MemoRecord],
    gold: Sequence[MemoRecord],
    scorer: SimilarityScorer = LEXICAL_SCORER,
) -> tuple[float, float]:
    """(topic_credit, summary_credit) over exactly span-matched record pairs."""
    _check_non_intersecting(pred, "pred")
    _check_non_intersecting(gold, "gold")
    gold_by_span = {rec.span: rec for rec in gold}
    topic_credit = 0.0
    summary_credit = 0.0
    for rec in pred:
        match = gold_by_span.get(rec.span)
        if match is None:
            continue
        if _norm_topic(rec.topic) == _norm_topic(match.topic):
            topic_credit += 1.0
        if rec.summary is not None and match.summary is not None:
            summary_credit += scorer.score(rec.summary, match.summary)
    return topic_credit, summary_credit


def _prf(credit: float, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    p = credit / n_pred if n_pred else 0.0
    r = credit / n_gold if n_gold else 0.0
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


def score_memo_writing_corpus(
    pairs: Iterable[tuple[Sequence[MemoRecord], Sequence[MemoRecord]]],
    scorer: SimilarityScorer = LEXICAL_SCORER,
) -> SpanMatchScore:
    """Micro-aggregated span-matched P/R/F1 over (pred, gold) record lists."""
    topic_credit = summary_credit = 0.0
    n_pred = n_gold = 0
    for pred, gold in pairs:
        t, s = span_match_credits(pred, gold, scorer)
        topic_credit += t
        summary_credit += s
        n_pred += len(pred)
        n_gold += len(gold)
    tp, tr, tf = _prf(topic_credit, n_pred, n_gold)
    sp, sr, sf = _prf(summary_credit, n_pred, n_gold)
    return SpanMatchScore(tp, tr, tf, sp, sr, sf)


def score_memo_writing(
    pred: Sequence[MemoRecord],
    gold: Sequence[MemoRecord],
    scorer: SimilarityScorer = LEXICAL_SCORER,
) -> SpanMatchScore:
    return score_memo_writing_corpus([(pred, gold)], scorer)


# --- retrieval metric ----------------------------------------------------


def score_retrieval(pred: set[int], gold: set[int]) -> tuple[float, float, float]:
    """Set precision/recall/F1; empty vs empty scores 1.0, one-sided empty 0."""
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    if not pred or not gold:
        return 0.0, 0.0, 0.0
    hits = len(pred & gold)
    p = hits / len(pred)
    r = hits / len(gold)
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f1


# --- response metric -----------------------------------------------------


def score_response(
    pred: str, gold: str, scorer: SimilarityScorer = LEXICAL_SCORER
) -> float:
    if not gold.strip():
        raise ValueError("gold response must be non-empty")
    return scorer.score(pred, gold)


# --- consistency protocol ------------------------------------------------


@dataclass(frozen=True)
class StreamTurn:
    text: str
    topic: str | None = None


@dataclass(frozen=True)
class ConsistencyCase:
    """A scripted 12-15 turn stream plus one typed long-range question.

    ``judge_history_spans`` name the conversation slices (over the replayed
    stream's 2-lines-per-turn numbering) shown to the judge as reference.
    """

    id: str
    stream: tuple[StreamTurn, ...]
    question: str
    qtype: str
    judge_history_spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not 12 <= len(self.stream) <= 15:
            raise ValueError(
                f"case {self.id}: stream must be 12-15 turns, got {len(self.stream)}"
            )
        if self.qtype not in QUESTION_TYPES:
            raise ValueError(f"case {self.id}: unknown question type {self.qtype!r}")
        if not self.judge_history_spans:
            raise ValueError(f"case {self.id}: judge_history_spans must be non-empty")
        max_line = 2 * len(self.stream)
        for start, end in self.judge_history_spans:
            if not 1 <= start <= end <= max_line:
                raise ValueError(
                    f"case {self.id}: span {start}..{end} outside stream lines 1..{max_line}"
                )


def case_from_obj(obj: dict) -> ConsistencyCase:
    stream = tuple(
        StreamTurn(entry, None)
        if isinstance(entry, str)
        else StreamTurn(entry["text"], entry.get("topic"))
        for entry in obj["stream"]
    )
    return ConsistencyCase(
        id=obj["id"],
        stream=stream,
        question=obj["question"],
        qtype=obj["qtype"],
        judge_history_spans=tuple((s, e) for s, e in obj["judge_history_spans"]),
    )


def load_cases(path: str | Path) -> list[ConsistencyCase]:
    cases = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                cases.append(case_from_obj(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad case: {exc}") from exc
    return cases


def _mean(ratings: Sequence[int]) -> float | None:
    if not ratings:
        return None
    return round(sum(ratings) / len(ratings), 2)


def run_consistency_eval(
    cases: Sequence[ConsistencyCase],
    session_factory: Callable[[], Session],
    chat_backend: Backend,
    judge_backend: Backend,
) -> dict:
    """Replay each case through a fresh session, judge the reply, aggregate.

    A judge verdict that cannot be parsed marks the case invalid; a backend
    error fails only the affected case. Both are excluded from the means and
    counted in the report.
    """
    if not cases:
        raise ValueError("no cases to evaluate")
    case_rows: list[dict] = []
    for case in cases:
        row: dict = {"id": case.id, "qtype": case.qtype, "status": "ok"}
        try:
            session = session_factory()
            for turn in case.stream:
                session, _, _ = handle_user_message(session, turn.text, chat_backend)
            session, reply, trace = handle_user_message(
                session, case.question, chat_backend
            )
            history = []
            for start, end in case.judge_history_spans:
                history.extend(session.conversation.slice(start, end))
            judge_prompt = render_judge(history, case.question, reply)
            judge_raw = judge_backend.complete(CompletionRequest(judge_prompt))
            row["reply"] = reply
            row["trace"] = trace.to_obj()
            row["judge_raw"] = judge_raw
            verdict = parse_judge(judge_raw)
            row["rating"] = verdict.rating
            row["judge_explanation"] = verdict.explanation
        except (NoRatingFound, RatingOutOfRange) as exc:
            logger.warning("case %s: invalid judge verdict (%s)", case.id, exc)
            row["status"] = "invalid_verdict"
            row["error"] = str(exc)
        except BackendError as exc:
            logger.warning("case %s: backend failure (%s)", case.id, exc)
            row["status"] = "backend_error"
            row["error"] = str(exc)
        case_rows.append(row)

    valid = [row for row in case_rows if row["status"] == "ok"]
    by_type = {}
    for qtype in QUESTION_TYPES:
        ratings = [row["rating"] for row in valid if row["qtype"] == qtype]
        if ratings:
            by_type[qtype] = {"mean_rating": _mean(ratings), "cases": len(ratings)}
    return {
        "overall": {
            "mean_rating": _mean([row["rating"] for row in valid]),
            "cases": len(valid),
        },
        "by_type": by_type,
        "invalid_verdicts": sum(r["status"] == "invalid_verdict" for r in case_rows),
        "backend_errors": sum(r["status"] == "backend_error" for r in case_rows),
        "cases": case_rows,
    }
