"""Command-line entry point: ``auditor <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import report as rpt
from .context import Task, build_bugid_context, build_responsiveness_context, select_events
from .corpus import BugLabelMode, FilterSpec, LabelVocabulary, TimeWindow, apply_filters
from .evaluate import (
    BUGID_CLASSES,
    CRITICAL_CLASS,
    RESPONSIVENESS_CLASSES,
    EvalError,
    read_labels,
    render_ranking,
    render_report,
    score,
    sweep_report,
)
from .framework import decision_table, derive_verdict
from .ingest import Corpus, GitHubClient, IngestError, RepoRef, ingest_repos, load_cache_dir, parse_key, snapshot_load
from .llm import AnswerCache, ChatBackend, LLMError, ModelAnswer, PromptTemplate, default_template, grid, sweep
from .pipeline import AuditConfig, PipelineError, annotation_from_answer, read_annotations, run_audit, write_run

log = logging.getLogger("auditor")


def read_repo_list(spec: str) -> list[RepoRef]:
    """A file with one ``owner/name`` per line (``#`` comments allowed) or a comma list."""
    path = Path(spec)
    if path.is_file():
        items = [ln.split("#", 1)[0].strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    else:
        items = [s.strip() for s in spec.split(",")]
    return [RepoRef.parse(s) for s in items if s]


def _load_corpus(args: argparse.Namespace, repos: list[RepoRef] | None = None) -> Corpus:
    if getattr(args, "snapshot", None):
        return snapshot_load(args.snapshot)
    if getattr(args, "cache", None):
        return load_cache_dir(args.cache, repos)
    raise SystemExit("one of --snapshot or --cache is required")


def _vocab(args: argparse.Namespace) -> LabelVocabulary:
    return LabelVocabulary.load(args.vocab) if getattr(args, "vocab", None) else LabelVocabulary()


def _template(path: str | None, task: Task) -> PromptTemplate:
    return PromptTemplate.load(path) if path else default_template(task)


def cmd_fetch(args: argparse.Namespace) -> int:
    repos = read_repo_list(args.repos)
    timelines = (lambda issue: not issue.is_pull_request) if args.timelines else None
    with GitHubClient(wait_on_rate_limit=not args.no_wait) as client:
        corpus = ingest_repos(client, args.cache, repos, workers=args.workers, timelines_for=timelines)
        print(f"{len(corpus.issues)} issues across {len(repos)} repositories, {client.request_count} requests")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    corpus = _load_corpus(args)
    mode = BugLabelMode(args.bug_mode)
    llm_bug = None
    if mode is not BugLabelMode.REGEX_LABELS:
        if not args.predictions:
            raise SystemExit(f"--bug-mode {mode.value} needs --predictions from a bug-identification run")
        labels = read_labels(args.predictions, "bug_identification")
        llm_bug = {(RepoRef.parse(r), n): v == "bug" for (r, n), v in labels.items()}
    spec = FilterSpec(
        exclude_prs=True,
        require_closed=not args.include_open,
        window=TimeWindow.parse(args.window) if args.window else None,
        bug_label_mode=mode,
    )
    _, trace = apply_filters(corpus.live_issues(), spec, _vocab(args), llm_bug)
    print(json.dumps(trace.to_json(), indent=2) if args.json else trace.to_text(), end="" if not args.json else "\n")
    return 0


def cmd_framework(args: argparse.Namespace) -> int:
    print(decision_table(), end="")
    return 0


def cmd_context(args: argparse.Namespace) -> int:
    repo, number = parse_key(args.issue)
    corpus = _load_corpus(args, [repo])
    issue = corpus.issues.get((repo, number))
    if issue is None:
        print(f"{args.issue}: not in the snapshot", file=sys.stderr)
        return 2
    if Task(args.task) is Task.BUG_IDENTIFICATION:
        block = build_bugid_context(issue, args.budget)
    else:
        events = select_events(corpus.timeline(issue.key))
        block = build_responsiveness_context(
            issue, events, corpus.contributors_for(repo), budget=args.budget, flag_bots=not args.no_bot_flag
        )
    if args.out:
        Path(args.out).write_text(block.text, encoding="utf-8")
    else:
        print(block.text)
    print(f"# ~{block.token_estimate} tokens, truncated={block.truncated}", file=sys.stderr)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    repos = read_repo_list(args.repos) if args.repos else []
    corpus = _load_corpus(args, repos) if (args.snapshot or args.cache) else Corpus()
    config = AuditConfig(
        window=TimeWindow.parse(args.window) if args.window else None,
        include_open=args.include_open,
        bug_mode=BugLabelMode(args.bug_mode),
        vocab=_vocab(args),
        bugid_template=_template(args.bugid_template, Task.BUG_IDENTIFICATION),
        resp_template=_template(args.resp_template, Task.RESPONSIVENESS),
        token_budget=args.budget,
        flag_bots=not args.no_bot_flag,
        workers=args.workers,
    )
    annotations = read_annotations(args.annotations) if args.annotations else None
    needs_backend = config.bug_mode is not BugLabelMode.REGEX_LABELS or annotations is None
    backend = ChatBackend() if needs_backend and repos else None
    out = Path(args.out)
    cache = AnswerCache(args.answer_cache or out / "answers.jsonl") if backend else None
    client = GitHubClient(wait_on_rate_limit=not args.no_wait) if args.fetch else None
    try:
        result = run_audit(
            repos, config, corpus, backend=backend, cache=cache, annotations=annotations,
            client=client, cache_root=args.cache if args.fetch else None,
        )
    finally:
        if client is not None:
            client.close()
        if backend is not None:
            backend.close()
    target = write_run(result, out)
    for stage in result.run.stages:
        print(f"{stage.name:<24} {stage.input_count:>7} -> {stage.output_count:<7} {dict(sorted(stage.exclusions.items()))}")
    print(f"{len(result.verdicts)} verdicts written to {target}")
    if args.include_open:
        print("note: open issues included; results are not comparable with closed-only runs")
    if cache is not None:
        print(f"answer cache: {cache.hits} hits, {cache.misses} misses, {backend.calls} backend calls")
    if result.failures:
        print(f"{len(result.failures)} issues failed; see exclusions.jsonl", file=sys.stderr)
    return result.exit_code


def _classes(task: str) -> tuple[str, ...]:
    return BUGID_CLASSES if task == Task.BUG_IDENTIFICATION.value else RESPONSIVENESS_CLASSES


def cmd_eval(args: argparse.Namespace) -> int:
    gold = {k: v for k, v in read_labels(args.gold, args.task).items() if v is not None}
    pred = read_labels(args.pred, args.task)
    result = score(gold, pred, _classes(args.task), drop_unparseable=args.drop_unparseable)
    if args.json:
        print(json.dumps(result.report.to_json(), indent=2, sort_keys=True))
    else:
        print(render_report(result.report), end="")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    task = Task(args.task)
    corpus = _load_corpus(args)
    gold = {k: v for k, v in read_labels(args.gold, args.task).items() if v is not None}
    keys = sorted((RepoRef.parse(r), n) for r, n in gold)
    contexts = {}
    for key in keys:
        issue = corpus.issues.get(key)
        if issue is None:
            log.warning("%s#%d: in gold but not in snapshot", key[0].slug, key[1])
            continue
        if task is Task.BUG_IDENTIFICATION:
            contexts[key] = build_bugid_context(issue, args.budget)
        else:
            events = select_events(corpus.timeline(key))
            contexts[key] = build_responsiveness_context(issue, events, corpus.contributors_for(key[0]), budget=args.budget)
    template = _template(args.template, task)
    field = next(iter(template.output_schema))
    backend = ChatBackend()
    try:
        cells = sweep(template, contexts, grid(), backend, AnswerCache(args.answer_cache), workers=args.workers)
    finally:
        backend.close()
    predictions = {}
    for cfg, cell in cells.items():
        preds = {}
        for key, answer in cell.answers.items():
            label = None
            if answer.ok:
                label = answer.parsed[field] if task is Task.BUG_IDENTIFICATION else _resp_label(answer)
            preds[(key[0].slug, key[1])] = label
        predictions[cfg] = preds
    ranked = sweep_report(
        predictions, gold, _classes(args.task), critical_class=CRITICAL_CLASS[args.task],
        drop_unparseable=args.drop_unparseable,
    )
    print(render_ranking(ranked), end="")
    return 0


def _resp_label(answer: ModelAnswer) -> str:
    return derive_verdict(annotation_from_answer(answer)).value.value


def cmd_report(args: argparse.Namespace) -> int:
    summaries = rpt.summaries_from_run(args.run, min_verdicts=args.min_verdicts)
    try:
        summary = rpt.summarize_ecosystem(summaries)
    except rpt.NoEligibleProjects:
        summary = rpt.EcosystemSummary(summaries)
    print(rpt.render(summary, args.format), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auditor", description="Audit maintainer responsiveness to bug reports.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p: argparse.ArgumentParser) -> None:
        p.add_argument("--snapshot", help="snapshot file written by snapshot_store")
        p.add_argument("--cache", help="ingest cache directory")

    p = sub.add_parser("fetch", help="crawl repositories into the cache")
    p.add_argument("--repos", required=True, help="repos.txt or owner/name[,owner/name...]")
    p.add_argument("--cache", required=True)
    p.add_argument("--timelines", action="store_true", help="also fetch timelines of every non-PR issue")
    p.add_argument("--no-wait", action="store_true", help="fail instead of sleeping on rate limits")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_fetch)

    p = sub.add_parser("filter", help="print the filtering funnel")
    source(p)
    p.add_argument("--window", help="e.g. 2017-08..2020-08 (end month inclusive)")
    p.add_argument("--bug-mode", choices=[m.value for m in BugLabelMode], default="regex")
    p.add_argument("--predictions", help="bug-identification predictions for llm/either modes")
    p.add_argument("--vocab", help="label vocabulary YAML")
    p.add_argument("--include-open", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("framework", help="decision framework utilities")
    p.add_argument("--print-table", action="store_true", required=True)
    p.set_defaults(fn=cmd_framework)

    p = sub.add_parser("context", help="render the model context for one issue")
    source(p)
    p.add_argument("--issue", required=True, help="owner/name#123")
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.RESPONSIVENESS.value)
    p.add_argument("--budget", type=int, default=6000)
    p.add_argument("--no-bot-flag", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_context)

    p = sub.add_parser("run", help="run the full audit")
    source(p)
    p.add_argument("--repos", help="repos.txt or owner/name[,owner/name...]")
    p.add_argument("--window")
    p.add_argument("--out", required=True)
    p.add_argument("--annotations", help="human annotations JSONL; replaces the annotation model stage")
    p.add_argument("--bug-mode", choices=[m.value for m in BugLabelMode], default="llm")
    p.add_argument("--vocab")
    p.add_argument("--include-open", action="store_true")
    p.add_argument("--answer-cache", help="defaults to <out>/answers.jsonl")
    p.add_argument("--bugid-template")
    p.add_argument("--resp-template")
    p.add_argument("--budget", type=int, default=6000)
    p.add_argument("--no-bot-flag", action="store_true")
    p.add_argument("--fetch", action="store_true", help="crawl repositories missing from --cache")
    p.add_argument("--no-wait", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="score predictions against gold labels")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.RESPONSIVENESS.value)
    p.add_argument("--drop-unparseable", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="score every sampling configuration of the grid")
    source(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.BUG_IDENTIFICATION.value)
    p.add_argument("--template")
    p.add_argument("--answer-cache", required=True)
    p.add_argument("--budget", type=int, default=6000)
    p.add_argument("--drop-unparseable", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="summarize a run")
    p.add_argument("--run", required=True, help="runs/<id>")
    p.add_argument("--format", choices=[f.value for f in rpt.Format], default="text")
    p.add_argument("--min-verdicts", type=int, default=1)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (IngestError, LLMError, PipelineError, EvalError, ValueError) as exc:
        print(f"auditor: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
