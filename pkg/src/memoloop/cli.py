"""Command-line entry points.

Subcommands: chat (interactive terminal session), serve (HTTP service),
build-data (instruction-set construction), evaluate (consistency harness),
score (offline metric runs on prediction/gold files).

Exit codes: 0 ok, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from .backends import BackendError
from .config import load_engine_config
from .core import MemoRecord
from .dataset import (
    BUILDERS,
    TASKS,
    BuildConfig,
    BuildError,
    CorpusError,
    dataset_stats,
    emit_instances,
    format_stats,
    load_corpus,
    split_eval,
)
from .evaluation import (
    get_scorer,
    load_cases,
    run_consistency_eval,
    score_memo_writing_corpus,
    score_response,
    score_retrieval,
)
from .pipeline import TurnFailure, handle_user_message, new_session
from .storage import save_snapshot

logger = logging.getLogger(__name__)

OK, USAGE_ERROR, DATA_ERROR, BACKEND_ERROR = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memoloop",
        description="Conversational memory engine: memo writing, retrieval, grounded replies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    chat = sub.add_parser("chat", help="interactive terminal chat over one session")
    chat.add_argument("--config", required=True, help="engine config JSON")
    chat.add_argument("--session-id", default=None, help="session id (default: random)")

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", required=True, help="engine config JSON")

    build = sub.add_parser("build-data", help="construct instruction sets from a corpus")
    build.add_argument("--task", choices=[*TASKS, "all"], default="all")
    build.add_argument("--corpus", required=True, help="corpus JSONL (one SourceDialogue per line)")
    build.add_argument("--out", required=True, help="output instances JSONL")
    build.add_argument("--seed", type=int, default=0)
    build.add_argument(
        "--count",
        "--counts",
        action="append",
        default=[],
        metavar="TASK=N",
        help="target instance count per task (repeatable)",
    )
    build.add_argument("--noto-probability", type=float, default=0.10)
    build.add_argument("--noto-gold-share", type=float, default=0.05)
    build.add_argument("--eval-fraction", type=float, default=0.0,
                       help="carve this fraction into a held-out eval file")
    build.add_argument("--eval-out", default=None,
                       help="eval split path (default: <out>.eval.jsonl)")

    evaluate = sub.add_parser("evaluate", help="run the long-range consistency harness")
    evaluate.add_argument("--cases", required=True, help="ConsistencyCase JSONL")
    evaluate.add_argument("--config", default=None, help="engine config JSON (chat + judge backends)")
    evaluate.add_argument("--chat-backend", default=None,
                          help="backend config JSON file; overrides the engine config")
    evaluate.add_argument("--judge-backend", default=None,
                          help="backend config JSON file; overrides the engine config")
    evaluate.add_argument("--report", required=True, help="report JSON output path")

    score = sub.add_parser("score", help="offline metrics on prediction/gold files")
    score.add_argument("--task", choices=["writing", "retrieval", "response"], required=True)
    score.add_argument("--pred", required=True, help="predictions JSONL")
    score.add_argument("--gold", required=True, help="gold JSONL")
    score.add_argument("--scorer", default="lexical", help="similarity scorer name")

    return parser


# --- chat ----------------------------------------------------------------


def run_chat(args) -> int:
    config = load_engine_config(args.config)
    config.validate()
    backend = config.build_chat_backend()
    session = new_session(args.session_id, config.pipeline)
    save_snapshot(session, config.storage_path)
    print(f"session {session.id} (blank line or /quit to exit, /memo and /trace inspect state)")
    trace_obj = None
    while True:
        try:
            text = input("you> ")
        except EOFError:
            break
        text = text.strip()
        if not text or text == "/quit":
            break
        if text == "/memo":
            print(json.dumps(session.memo.to_obj(), indent=2, ensure_ascii=False))
            continue
        if text == "/trace":
            print(json.dumps(trace_obj, indent=2, ensure_ascii=False))
            continue
        try:
            session, reply, trace = handle_user_message(session, text, backend)
        except TurnFailure as failure:
            session = failure.session
            save_snapshot(session, config.storage_path, trace_obj)
            print(f"error: backend failed during {failure.stage}: {failure.cause}", file=sys.stderr)
            return BACKEND_ERROR
        trace_obj = trace.to_obj()
        save_snapshot(session, config.storage_path, trace_obj)
        print(f"bot> {reply}")
    return OK


# --- serve ---------------------------------------------------------------


def run_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = load_engine_config(args.config)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port)
    return OK


# --- build-data ----------------------------------------------------------


def parse_counts(pairs: list[str]) -> dict:
    counts = {}
    for pair in pairs:
        task, _, value = pair.partition("=")
        if task not in TASKS or not value.isdigit():
            raise ValueError(f"bad --count {pair!r}; expected TASK=N with TASK in {TASKS}")
        counts[task] = int(value)
    return counts


def run_build_data(args) -> int:
    counts = parse_counts(args.count)
    config = BuildConfig(
        seed=args.seed,
        noto_probability=args.noto_probability,
        noto_gold_share=args.noto_gold_share,
        target_counts=counts,
    )
    corpus = load_corpus(args.corpus)
    tasks = TASKS if args.task == "all" else (args.task,)
    instances = []
    for task in tasks:
        instances.extend(BUILDERS[task](corpus, config))
    if args.eval_fraction:
        rng = random.Random(f"{args.seed}:eval-split")
        train, held_out = split_eval(instances, args.eval_fraction, rng)
        eval_path = args.eval_out or f"{args.out}.eval.jsonl"
        emit_instances(train, args.out)
        emit_instances(held_out, eval_path)
        print(f"wrote {len(train)} instances to {args.out}, {len(held_out)} to {eval_path}")
    else:
        emit_instances(instances, args.out)
        print(f"wrote {len(instances)} instances to {args.out}")
    print(format_stats(dataset_stats(instances)))
    return OK


# --- evaluate -------------------------------------------------------------


def _backend_from_file(path: str):
    from .backends import build_backend

    return build_backend(json.loads(Path(path).read_text(encoding="utf-8")))


def run_evaluate(args) -> int:
    config = load_engine_config(args.config) if args.config else None
    cases = load_cases(args.cases)
    if args.chat_backend:
        chat_backend = _backend_from_file(args.chat_backend)
    elif config:
        chat_backend = config.build_chat_backend()
    else:
        raise ValueError("evaluate needs --chat-backend or a --config with one")
    if args.judge_backend:
        judge_backend = _backend_from_file(args.judge_backend)
    elif config:
        judge_backend = config.build_judge_backend()
    else:
        raise ValueError("evaluate needs --judge-backend or a --config with one")
    pipeline_config = config.pipeline if config else None
    report = run_consistency_eval(
        cases,
        lambda: new_session(config=pipeline_config),
        chat_backend,
        judge_backend,
    )
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2, ensure_ascii=False), encoding="utf-8")
    overall = report["overall"]
    print(f"overall: mean rating {overall['mean_rating']} over {overall['cases']} cases")
    for qtype, row in report["by_type"].items():
        print(f"{qtype}: mean rating {row['mean_rating']} over {row['cases']} cases")
    if report["invalid_verdicts"]:
        print(f"invalid verdicts: {report['invalid_verdicts']}")
    if report["backend_errors"]:
        print(f"backend errors: {report['backend_errors']}")
    print(f"report written to {report_path}")
    return OK


# --- score ----------------------------------------------------------------


def _read_jsonl(path: str) -> list:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def _ordinal_set(row, where: str) -> set[int]:
    if not isinstance(row, list) or not all(
        isinstance(o, int) and not isinstance(o, bool) for o in row
    ):
        raise ValueError(f"{where}: each line must be a JSON array of integer ordinals")
    return set(row)


def run_score(args) -> int:
    scorer = get_scorer(args.scorer)
    pred_rows = _read_jsonl(args.pred)
    gold_rows = _read_jsonl(args.gold)
    if len(pred_rows) != len(gold_rows):
        raise ValueError(
            f"pred has {len(pred_rows)} rows but gold has {len(gold_rows)}"
        )
    if not pred_rows:
        raise ValueError("no rows to score")

    if args.task == "retrieval":
        triples = [
            score_retrieval(_ordinal_set(p, f"{args.pred}:{k + 1}"),
                            _ordinal_set(g, f"{args.gold}:{k + 1}"))
            for k, (p, g) in enumerate(zip(pred_rows, gold_rows))
        ]
        n = len(triples)
        p = sum(t[0] for t in triples) / n
        r = sum(t[1] for t in triples) / n
        f1 = sum(t[2] for t in triples) / n
        print(f"retrieval over {n} instances: P {p:.4f}  R {r:.4f}  F1 {f1:.4f}")
    elif args.task == "writing":
        pairs = [
            (
                [MemoRecord.from_obj(o) for o in pred],
                [MemoRecord.from_obj(o) for o in gold],
            )
            for pred, gold in zip(pred_rows, gold_rows)
        ]
        score = score_memo_writing_corpus(pairs, scorer)
        print(
            f"writing over {len(pairs)} instances: "
            f"topic P {score.topic_p:.4f} R {score.topic_r:.4f} F1 {score.topic_f1:.4f}  "
            f"summary P {score.summary_p:.4f} R {score.summary_r:.4f} F1 {score.summary_f1:.4f}"
        )
    else:
        values = [score_response(p, g, scorer) for p, g in zip(pred_rows, gold_rows)]
        mean = sum(values) / len(values)
        print(f"response similarity over {len(values)} instances: {mean:.4f} ({scorer.name})")
    return OK


HANDLERS = {
    "chat": run_chat,
    "serve": run_serve,
    "build-data": run_build_data,
    "evaluate": run_evaluate,
    "score": run_score,
}

DATA_ERRORS = (
    OSError,
    json.JSONDecodeError,
    CorpusError,
    BuildError,
    ValueError,
    KeyError,
    TypeError,
)


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code == 0 else USAGE_ERROR
    try:
        return HANDLERS[args.command](args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return BACKEND_ERROR
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(cli())


if __name__ == "__main__":
    main()
