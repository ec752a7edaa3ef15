"""End-to-end audit: snapshot, filters, two model stages, verdicts, aggregation."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any

from ._time import format_ts, utcnow
from .context import (
    DEFAULT_COMMENT_CLIP,
    DEFAULT_EVENT_KINDS,
    DEFAULT_TOKEN_BUDGET,
    Task,
    build_bugid_context,
    build_responsiveness_context,
    select_events,
)
from .corpus import BugLabelMode, LabelVocabulary, TimeWindow, is_bug_labeled
from .framework import Annotation, Annotator, BugType, InvalidAnnotation, TaxonomyReason, Verdict, VerdictClass, derive_verdict
from .ingest import Corpus, GitHubClient, IngestError, RepoCache, ingest_repo
from .ingest.cache import dump_line
from .ingest.types import ContributorSet, IssueKey, IssueState, RawIssue, RawTimelineEvent, RepoRef, format_key
from .llm import (
    BUGID_DEFAULT,
    RESPONSIVENESS_DEFAULT,
    AnswerCache,
    ChatBackend,
    LLMError,
    ModelAnswer,
    PromptTemplate,
    SamplingConfig,
    cached_complete,
    default_template,
)

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


class UnparseableAnswer(PipelineError):
    def __init__(self, answer: ModelAnswer) -> None:
        super().__init__(answer.error or "unparseable model output")
        self.answer = answer


@dataclass(frozen=True)
class AuditConfig:
    window: TimeWindow | None = None
    include_open: bool = False
    bug_mode: BugLabelMode = BugLabelMode.LLM_CLASSIFIED
    vocab: LabelVocabulary = field(default_factory=LabelVocabulary)
    bugid_sampling: SamplingConfig = BUGID_DEFAULT
    resp_sampling: SamplingConfig = RESPONSIVENESS_DEFAULT
    bugid_template: PromptTemplate = field(default_factory=lambda: default_template(Task.BUG_IDENTIFICATION))
    resp_template: PromptTemplate = field(default_factory=lambda: default_template(Task.RESPONSIVENESS))
    token_budget: int = DEFAULT_TOKEN_BUDGET
    comment_clip: int = DEFAULT_COMMENT_CLIP
    event_kinds: frozenset[str] = DEFAULT_EVENT_KINDS
    flag_bots: bool = True
    workers: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "window": str(self.window) if self.window else None,
            "include_open": self.include_open,
            "bug_mode": self.bug_mode.value,
            "vocab": self.vocab.to_mapping(),
            "bugid_sampling": self.bugid_sampling.to_dict(),
            "resp_sampling": self.resp_sampling.to_dict(),
            "bugid_template": self.bugid_template.version,
            "resp_template": self.resp_template.version,
            "token_budget": self.token_budget,
            "comment_clip": self.comment_clip,
            "event_kinds": sorted(self.event_kinds),
            "flag_bots": self.flag_bots,
        }


@dataclass
class StageRecord:
    name: str
    input_count: int
    output_count: int
    excluded_count: int
    started_at: datetime
    finished_at: datetime
    exclusions: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_count": self.input_count,
            "output_count": self.output_count,
            "excluded_count": self.excluded_count,
            "exclusions": dict(sorted(self.exclusions.items())),
            "started_at": format_ts(self.started_at),
            "finished_at": format_ts(self.finished_at),
        }


@dataclass(frozen=True)
class Exclusion:
    key: IssueKey
    stage: str
    reason: str
    detail: str | None = None

    def to_record(self) -> dict[str, Any]:
        return {
            "repo": self.key[0].slug,
            "number": self.key[1],
            "stage": self.stage,
            "reason": self.reason,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class VerdictRecord:
    key: IssueKey
    verdict: Verdict
    evidence: tuple[str, ...]
    model: str
    template_version: str
    config_digest: str
    annotator: Annotator

    def to_record(self) -> dict[str, Any]:
        reason = self.verdict.reason
        return {
            "repo": self.key[0].slug,
            "number": self.key[1],
            "bug_type": self.verdict.bug_type.value if self.verdict.bug_type else None,
            "verdict": self.verdict.value.value,
            "reason": reason.sub.value if reason else None,
            "evidence": list(self.evidence),
            "model": self.model,
            "template_version": self.template_version,
            "config_digest": self.config_digest,
            "annotator": self.annotator.value,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> VerdictRecord:
        reason = TaxonomyReason.for_sub(rec["reason"]) if rec.get("reason") else None
        bug_type = BugType(rec["bug_type"]) if rec.get("bug_type") else None
        return cls(
            key=(RepoRef.parse(rec["repo"]), int(rec["number"])),
            verdict=Verdict(VerdictClass(rec["verdict"]), bug_type, reason),
            evidence=tuple(rec.get("evidence") or ()),
            model=rec.get("model", ""),
            template_version=rec.get("template_version", ""),
            config_digest=rec.get("config_digest", ""),
            annotator=Annotator(rec.get("annotator", "llm")),
        )


@dataclass
class AuditRun:
    run_id: str
    stages: list[StageRecord]
    config: dict[str, Any]
    repos: list[str]

    def stage(self, name: str) -> StageRecord:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_json(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "repos": self.repos,
            "config": self.config,
            "stages": [s.to_json() for s in self.stages],
        }


@dataclass
class AuditResult:
    run: AuditRun
    verdicts: list[VerdictRecord]
    exclusions: list[Exclusion]
    bugid_predictions: dict[IssueKey, str | None] = field(default_factory=dict)
    resp_predictions: dict[IssueKey, str | None] = field(default_factory=dict)

    @property
    def failures(self) -> list[Exclusion]:
        return [e for e in self.exclusions if e.reason == "failed"]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def annotation_from_answer(answer: ModelAnswer, evidence: Sequence[str] = ()) -> Annotation:
    if not answer.ok or answer.parsed is None:
        raise UnparseableAnswer(answer)
    p = answer.parsed
    return Annotation(
        is_duplicate=bool(p["is_duplicate"]),
        is_complex=False,
        bug_type=BugType(p["bug_type"]),
        was_fixed=bool(p["was_fixed"]),
        annotator=Annotator.LLM,
        evidence=tuple(evidence),
    )


def annotate_with_llm(
    issue: RawIssue,
    events: Sequence[RawTimelineEvent],
    contributors: ContributorSet | None,
    template: PromptTemplate,
    cfg: SamplingConfig,
    backend: ChatBackend,
    cache: AnswerCache | None = None,
    *,
    event_kinds: Iterable[str] = DEFAULT_EVENT_KINDS,
    budget: int = DEFAULT_TOKEN_BUDGET,
    comment_clip: int = DEFAULT_COMMENT_CLIP,
    flag_bots: bool = True,
) -> Annotation:
    """Ask the model for the duplicate / bug-type / fixed fields of one bug report."""
    selected = select_events(events, event_kinds)
    ctx = build_responsiveness_context(
        issue, selected, contributors, budget=budget, comment_clip=comment_clip, flag_bots=flag_bots
    )
    answer = cached_complete(template, ctx, cfg, backend, cache, issue.key)
    return annotation_from_answer(answer, ctx.included_events)


def read_annotations(path: Path | str) -> dict[IssueKey, Annotation | tuple[Annotation, TaxonomyReason]]:
    """Human annotations: ``{repo, number, is_duplicate, is_complex, bug_type, was_fixed, reason?}`` lines."""
    out: dict[IssueKey, Any] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        ann = Annotation(
            is_duplicate=bool(rec.get("is_duplicate", False)),
            is_complex=bool(rec.get("is_complex", False)),
            bug_type=BugType(rec["bug_type"]) if rec.get("bug_type") else None,
            was_fixed=rec.get("was_fixed"),
            annotator=Annotator.HUMAN,
            evidence=tuple(rec.get("evidence") or ()),
        )
        key = (RepoRef.parse(rec["repo"]), int(rec["number"]))
        out[key] = (ann, TaxonomyReason.for_sub(rec["reason"])) if rec.get("reason") else ann
    return out


def snapshot_id(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for rec in corpus.iter_records():
        h.update(dump_line(rec).encode("utf-8"))
    return h.hexdigest()


class _Ledger:
    """Single writer for stage records and exclusions."""

    def __init__(self, clock: Callable[[], datetime]) -> None:
        self.clock = clock
        self.stages: list[StageRecord] = []
        self.exclusions: list[Exclusion] = []

    def stage(
        self, name: str, items: list[RawIssue], keep: Callable[[RawIssue], str | None]
    ) -> list[RawIssue]:
        """``keep`` returns ``None`` to pass an issue on, else an exclusion reason."""
        started = self.clock()
        survivors, counts = [], {}
        for issue in items:
            reason = keep(issue)
            if reason is None:
                survivors.append(issue)
            else:
                counts[reason] = counts.get(reason, 0) + 1
                self.exclusions.append(Exclusion(issue.key, name, reason))
        self.record(name, len(items), len(survivors), counts, started)
        return survivors

    def record(self, name: str, n_in: int, n_out: int, counts: dict[str, int], started: datetime) -> None:
        rec = StageRecord(name, n_in, n_out, n_in - n_out, started, self.clock(), counts)
        if rec.excluded_count != sum(counts.values()):
            raise PipelineError(f"stage {name} lost track of {rec.excluded_count - sum(counts.values())} issues")
        self.stages.append(rec)


def _parallel(fn: Callable[[RawIssue], Any], items: list[RawIssue], workers: int) -> list[Any]:
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_audit(
    repos: Sequence[RepoRef],
    config: AuditConfig,
    corpus: Corpus,
    *,
    backend: ChatBackend | None = None,
    cache: AnswerCache | None = None,
    annotations: Mapping[IssueKey, Any] | None = None,
    client: GitHubClient | None = None,
    cache_root: Path | str | None = None,
    clock: Callable[[], datetime] = utcnow,
) -> AuditResult:
    """Run every stage in order; per-issue failures are excluded, never fatal.

    ``annotations`` replaces the second model stage with human annotations.
    ``client`` and ``cache_root`` let the run crawl repositories (and
    timelines) that the given corpus does not cover.
    """
    repos = sorted(set(repos))
    ledger = _Ledger(clock)
    uses_llm_stage1 = config.bug_mode is not BugLabelMode.REGEX_LABELS
    if (uses_llm_stage1 or annotations is None) and backend is None and repos:
        raise PipelineError("a chat backend is required unless regex bug mode and annotations are both used")

    started = clock()
    if client is not None and cache_root is not None:
        for repo in repos:
            if repo not in corpus.repos:
                try:
                    corpus = corpus.merge(ingest_repo(client, cache_root, repo))
                except IngestError as exc:
                    logger.error("ingesting %s failed: %s", repo, exc)
    corpus = corpus.subset(repos)
    issues = corpus.sorted_issues()
    run_id = _run_id(repos, config, corpus, backend, annotations)

    live = []
    ingest_counts: dict[str, int] = {}
    for issue in issues:
        if issue.key in corpus.tombstones:
            ingest_counts["deleted"] = ingest_counts.get("deleted", 0) + 1
            ledger.exclusions.append(Exclusion(issue.key, "ingest", "deleted"))
        else:
            live.append(issue)
    ledger.record("ingest", len(issues), len(live), ingest_counts, started)

    current = ledger.stage("exclude_pull_requests", live, lambda i: "pull_request" if i.is_pull_request else None)
    current = ledger.stage(
        "exclude_open",
        current,
        lambda i: "open" if i.state is IssueState.OPEN and not config.include_open else None,
    )
    window = config.window
    current = ledger.stage(
        "time_window", current, lambda i: None if window is None or i.created_at in window else "out_of_window"
    )

    # stage 1: bug report identification
    bugid_predictions: dict[IssueKey, str | None] = {}

    def identify(issue: RawIssue) -> tuple[str | None, str | None]:
        """(label, error) where label is bug / not_bug / None when unparseable."""
        regex_hit = is_bug_labeled(issue.labels, config.vocab)
        if config.bug_mode is BugLabelMode.REGEX_LABELS:
            return ("bug" if regex_hit else "not_bug"), None
        if config.bug_mode is BugLabelMode.EITHER and regex_hit:
            return "bug", None
        ctx = build_bugid_context(issue, config.token_budget)
        try:
            answer = cached_complete(config.bugid_template, ctx, config.bugid_sampling, backend, cache, issue.key)
        except LLMError as exc:
            return None, f"{type(exc).__name__}: {exc}"
        if not answer.ok:
            return None, None
        return answer.parsed["classification"], None

    outcomes = dict(zip((i.key for i in current), _parallel(identify, current, config.workers)))
    details: dict[IssueKey, str] = {}

    def stage1(issue: RawIssue) -> str | None:
        label, error = outcomes[issue.key]
        if error is not None:
            details[issue.key] = error
            return "failed"
        bugid_predictions[issue.key] = label
        if label is None:
            return "unparseable"
        return None if label == "bug" else "not_bug"

    current = ledger.stage("bug_identification", current, stage1)

    # stage 2: annotation (model or human)
    missing_timelines = 0

    def events_for(issue: RawIssue) -> tuple[RawTimelineEvent, ...]:
        nonlocal missing_timelines
        if issue.key in corpus.timelines:
            return corpus.timelines[issue.key]
        if client is not None and cache_root is not None:
            return tuple(client.fetch_timeline(issue.repo, issue.number, cache=RepoCache(cache_root, issue.repo)))
        missing_timelines += 1
        return ()

    def annotate(issue: RawIssue) -> tuple[Any, str | None]:
        if annotations is not None:
            return annotations.get(issue.key), None
        try:
            events = events_for(issue)
            return annotate_with_llm(
                issue,
                events,
                corpus.contributors_for(issue.repo),
                config.resp_template,
                config.resp_sampling,
                backend,
                cache,
                event_kinds=config.event_kinds,
                budget=config.token_budget,
                comment_clip=config.comment_clip,
                flag_bots=config.flag_bots,
            ), None
        except UnparseableAnswer as exc:
            return exc, None
        except (LLMError, IngestError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    annotated = dict(zip((i.key for i in current), _parallel(annotate, current, config.workers)))
    resp_predictions: dict[IssueKey, str | None] = {}

    def stage2(issue: RawIssue) -> str | None:
        result, error = annotated[issue.key]
        if error is not None:
            details[issue.key] = error
            return "failed"
        if isinstance(result, UnparseableAnswer):
            resp_predictions[issue.key] = None
            return "unparseable"
        if result is None:
            return "unannotated"
        return None

    current = ledger.stage("annotation", current, stage2)

    verdicts: list[VerdictRecord] = []

    def stage3(issue: RawIssue) -> str | None:
        result, _ = annotated[issue.key]
        ann, reason = result if isinstance(result, tuple) else (result, None)
        try:
            verdict = derive_verdict(ann)
        except InvalidAnnotation as exc:
            details[issue.key] = str(exc)
            return "invalid_annotation"
        if reason is not None and verdict.value is VerdictClass.NOT_RESPONSIVE:
            verdict = verdict.with_reason(reason)
        resp_predictions[issue.key] = verdict.value.value
        if verdict.value is VerdictClass.DUPLICATE:
            return "duplicate"
        if verdict.value is VerdictClass.COMPLEX:
            return "complex"
        human = ann.annotator is Annotator.HUMAN
        verdicts.append(VerdictRecord(
            key=issue.key,
            verdict=verdict,
            evidence=ann.evidence,
            model="human" if human else backend.model,
            template_version="annotations" if human else config.resp_template.version,
            config_digest="" if human else config.resp_sampling.digest,
            annotator=ann.annotator,
        ))
        return None

    current = ledger.stage("derive_verdict", current, stage3)
    started = clock()
    ledger.record("aggregate", len(current), len(current), {}, started)

    exclusions = [replace(e, detail=details.get(e.key)) if e.key in details else e for e in ledger.exclusions]
    run_config = {**config.to_dict(), "missing_timelines": missing_timelines}
    run = AuditRun(run_id, ledger.stages, run_config, [r.slug for r in repos])
    return AuditResult(run, verdicts, exclusions, bugid_predictions, resp_predictions)


def _run_id(
    repos: Sequence[RepoRef],
    config: AuditConfig,
    corpus: Corpus,
    backend: ChatBackend | None,
    annotations: Mapping[IssueKey, Any] | None,
) -> str:
    blob = {
        "repos": [r.slug for r in repos],
        "config": config.to_dict(),
        "model": backend.model if backend is not None else None,
        "annotations": sorted(format_key(k) for k in annotations) if annotations is not None else None,
        "snapshot": snapshot_id(corpus),
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def _write_lines(path: Path, records: Iterable[dict[str, Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def write_run(result: AuditResult, out_dir: Path | str) -> Path:
    """Persist a run under ``out_dir/<run_id>/`` and return that directory."""
    target = Path(out_dir) / result.run.run_id
    target.mkdir(parents=True, exist_ok=True)
    (target / "run.json").write_text(json.dumps(result.run.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_lines(target / "verdicts.jsonl", (v.to_record() for v in sorted(result.verdicts, key=lambda v: v.key)))
    _write_lines(
        target / "exclusions.jsonl",
        (e.to_record() for e in sorted(result.exclusions, key=lambda e: (e.key, e.stage))),
    )
    for name, preds in (("bugid_predictions.jsonl", result.bugid_predictions), ("predictions.jsonl", result.resp_predictions)):
        _write_lines(
            target / name,
            ({"repo": k[0].slug, "number": k[1], "label": v} for k, v in sorted(preds.items())),
        )
    return target


def read_verdicts(run_dir: Path | str) -> list[VerdictRecord]:
    path = Path(run_dir) / "verdicts.jsonl"
    return [VerdictRecord.from_record(json.loads(x)) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]


def read_exclusions(run_dir: Path | str) -> list[dict[str, Any]]:
    path = Path(run_dir) / "exclusions.jsonl"
    return [json.loads(x) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]
