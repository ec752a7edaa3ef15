"""Filter raw snapshots into an analysis corpus and curate ground truth."""

from __future__ import annotations

import enum
import json
import random
import re
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any

import yaml

from ._time import format_ts, parse_ts
from .framework import Verdict, VerdictClass
from .ingest.types import IssueKey, IssueState, RawIssue, RepoRef, format_key, parse_key

_SEPARATORS = re.compile(r"[-_:/\s]+")

DEFAULT_BUG_PATTERNS = (
    r"bugs?",
    r"(?:possibly|possible|potential|confirmed|type|kind) bugs?",
)
DEFAULT_NONBUG_SEEDS = ("feature", "request", "idea", "proposal", "quality")


class InvalidPattern(ValueError):
    pass


class InvalidVocabulary(ValueError):
    pass


def canonicalize(label: str) -> str:
    """Lowercase, trim, and turn ``-``, ``_``, ``:``, ``/`` and whitespace runs into single spaces."""
    return _SEPARATORS.sub(" ", label.lower()).strip()


def _singular(token: str) -> str:
    return token[:-1] if len(token) > 3 and token.endswith("s") else token


@dataclass(frozen=True)
class LabelVocabulary:
    bug_patterns: tuple[str, ...] = DEFAULT_BUG_PATTERNS
    nonbug_allowlist: frozenset[str] = frozenset(DEFAULT_NONBUG_SEEDS)
    excluded_cooccurring: frozenset[str] = frozenset()
    _compiled: tuple[re.Pattern[str], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.bug_patterns:
            raise InvalidVocabulary("bug_patterns must not be empty")
        compiled = []
        for pat in self.bug_patterns:
            try:
                # anchor on token boundaries of the canonical form
                compiled.append(re.compile(rf"(?:^|\s)(?:{pat})(?:\s|$)"))
            except re.error as exc:
                raise InvalidPattern(f"bad bug pattern {pat!r}: {exc}") from exc
        object.__setattr__(self, "_compiled", tuple(compiled))
        object.__setattr__(
            self, "nonbug_allowlist", frozenset(canonicalize(x) for x in self.nonbug_allowlist)
        )
        clash = sorted(x for x in self.nonbug_allowlist if self.matches_bug(x))
        if clash:
            raise InvalidVocabulary(f"non-bug labels also match a bug pattern: {clash}")

    def matches_bug(self, label: str) -> bool:
        canon = canonicalize(label)
        return any(p.search(canon) for p in self._compiled)

    def is_nonbug_label(self, label: str) -> bool:
        """True if a label is a variation of an allowlisted non-bug label."""
        if self.matches_bug(label):
            return False
        canon = canonicalize(label)
        if canon in self.nonbug_allowlist:
            return True
        seeds = {_singular(s) for s in self.nonbug_allowlist}
        return any(_singular(tok) in seeds for tok in canon.split())

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> LabelVocabulary:
        return cls(
            bug_patterns=tuple(data.get("bug_patterns") or DEFAULT_BUG_PATTERNS),
            nonbug_allowlist=frozenset(data.get("nonbug_allowlist") or DEFAULT_NONBUG_SEEDS),
            excluded_cooccurring=frozenset(data.get("excluded_cooccurring") or ()),
        )

    @classmethod
    def load(cls, path: Path | str) -> LabelVocabulary:
        """Read a YAML (or JSON) vocabulary file with ``bug_patterns`` and ``nonbug_allowlist`` keys."""
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise InvalidVocabulary(f"{path}: expected a mapping")
        return cls.from_mapping(data)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "bug_patterns": list(self.bug_patterns),
            "nonbug_allowlist": sorted(self.nonbug_allowlist),
            "excluded_cooccurring": sorted(self.excluded_cooccurring),
        }


def is_bug_labeled(labels: Iterable[str], vocab: LabelVocabulary) -> bool:
    return any(vocab.matches_bug(label) for label in labels)


def is_nonbug_labeled(labels: Iterable[str], vocab: LabelVocabulary) -> bool:
    """Labeled exclusively with allowlisted non-bug labels."""
    labels = list(labels)
    return bool(labels) and all(vocab.is_nonbug_label(label) for label in labels)


class BugLabelMode(str, enum.Enum):
    REGEX_LABELS = "regex"
    LLM_CLASSIFIED = "llm"
    EITHER = "either"


@dataclass(frozen=True)
class TimeWindow:
    """Half-open ``[start, end)`` interval on issue creation time."""

    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError("window start must precede its end")

    def __contains__(self, moment: datetime) -> bool:
        return self.start <= moment < self.end

    @classmethod
    def parse(cls, text: str) -> TimeWindow:
        """Parse ``START..END``; a ``YYYY-MM`` or ``YYYY-MM-DD`` end covers that whole month or day."""
        left, sep, right = text.partition("..")
        if not sep:
            raise ValueError(f"expected START..END, got {text!r}")
        return cls(_parse_bound(left, end=False), _parse_bound(right, end=True))

    def __str__(self) -> str:
        return f"{format_ts(self.start)}..{format_ts(self.end)}"


def _parse_bound(text: str, *, end: bool) -> datetime:
    text = text.strip()
    if re.fullmatch(r"\d{4}-\d{2}", text):
        year, month = map(int, text.split("-"))
        if end:
            year, month = (year + 1, 1) if month == 12 else (year, month + 1)
        return datetime(year, month, 1, tzinfo=timezone.utc)
    if re.fullmatch(r"\d{4}-\d{2}-\d{2}", text):
        day = datetime.fromisoformat(text).replace(tzinfo=timezone.utc)
        return day + timedelta(days=1) if end else day
    return parse_ts(text)


@dataclass(frozen=True)
class FilterSpec:
    exclude_prs: bool = True
    require_closed: bool = True
    window: TimeWindow | None = None
    bug_label_mode: BugLabelMode = BugLabelMode.REGEX_LABELS


@dataclass
class FilterTrace:
    stages: list[tuple[str, int]]
    metadata: dict[str, Any] = field(default_factory=dict)

    def counts(self) -> list[int]:
        return [n for _, n in self.stages]

    def to_json(self) -> dict[str, Any]:
        return {"stages": [{"name": n, "count": c} for n, c in self.stages], "metadata": self.metadata}

    def to_text(self) -> str:
        width = max(len(n) for n, _ in self.stages)
        lines = [f"{'stage'.ljust(width)}  {'count':>8}  {'removed':>8}"]
        prev = None
        for name, count in self.stages:
            removed = "" if prev is None else str(prev - count)
            lines.append(f"{name.ljust(width)}  {count:>8}  {removed:>8}")
            prev = count
        return "\n".join(lines) + "\n"


def is_pull_request(issue: RawIssue) -> bool:
    return issue.is_pull_request


def is_closed(issue: RawIssue) -> bool:
    return issue.state is IssueState.CLOSED


def apply_filters(
    issues: Iterable[RawIssue],
    spec: FilterSpec,
    vocab: LabelVocabulary | None = None,
    llm_bug: Mapping[IssueKey, bool] | Callable[[RawIssue], bool] | None = None,
) -> tuple[list[RawIssue], FilterTrace]:
    """Run the funnel: PR exclusion, bug identification, closed-only, time window.

    ``llm_bug`` supplies stage-1 model decisions for the ``llm`` and
    ``either`` modes; issues it does not cover count as non-bugs.
    """
    vocab = vocab or LabelVocabulary()
    current = list(issues)
    stages = [("input", len(current))]
    if spec.exclude_prs:
        current = [i for i in current if not i.is_pull_request]
    stages.append(("exclude_pull_requests", len(current)))

    def by_model(issue: RawIssue) -> bool:
        if llm_bug is None:
            return False
        if callable(llm_bug):
            return bool(llm_bug(issue))
        return bool(llm_bug.get(issue.key, False))

    mode = spec.bug_label_mode
    if mode is BugLabelMode.REGEX_LABELS:
        current = [i for i in current if is_bug_labeled(i.labels, vocab)]
    elif mode is BugLabelMode.LLM_CLASSIFIED:
        current = [i for i in current if by_model(i)]
    else:
        current = [i for i in current if is_bug_labeled(i.labels, vocab) or by_model(i)]
    stages.append(("identify_bug_reports", len(current)))
    if spec.require_closed:
        current = [i for i in current if is_closed(i)]
    stages.append(("exclude_open", len(current)))
    if spec.window is not None:
        current = [i for i in current if i.created_at in spec.window]
    stages.append(("time_window", len(current)))
    metadata = {
        "bug_label_mode": mode.value,
        "window": str(spec.window) if spec.window else None,
        "window_field": "created_at",
    }
    return current, FilterTrace(stages, metadata)


@dataclass(frozen=True)
class NonBugCandidates:
    labels: tuple[str, ...]
    cooccurring: frozenset[str]

    def to_vocabulary(self, bug_vocab: LabelVocabulary) -> LabelVocabulary:
        return LabelVocabulary(
            bug_patterns=bug_vocab.bug_patterns,
            nonbug_allowlist=frozenset(self.labels),
            excluded_cooccurring=self.cooccurring,
        )


def curate_nonbug_labels(issues: Iterable[RawIssue], bug_vocab: LabelVocabulary) -> NonBugCandidates:
    """Labels that are neither bug labels nor ever seen alongside one."""
    all_labels: set[str] = set()
    cooccurring: set[str] = set()
    for issue in issues:
        all_labels.update(issue.labels)
        if is_bug_labeled(issue.labels, bug_vocab):
            cooccurring.update(lab for lab in issue.labels if not bug_vocab.matches_bug(lab))
    candidates = sorted(
        lab for lab in all_labels if lab not in cooccurring and not bug_vocab.matches_bug(lab)
    )
    return NonBugCandidates(tuple(candidates), frozenset(cooccurring))


def sample_for_review(
    candidates: Iterable[str], issues: Iterable[RawIssue], k: int, seed: int | str
) -> dict[str, list[IssueKey]]:
    """Up to ``k`` issues per candidate label, reproducible for a given seed."""
    if k < 1:
        raise ValueError("k must be at least 1")
    by_label: dict[str, list[IssueKey]] = {}
    for issue in issues:
        for lab in issue.labels:
            by_label.setdefault(lab, []).append(issue.key)
    sample = {}
    for lab in sorted(set(candidates)):
        pool = sorted(set(by_label.get(lab, ())))
        rng = random.Random(f"{seed}:{lab}")
        picked = pool if len(pool) <= k else rng.sample(pool, k)
        sample[lab] = sorted(picked)
    return sample


class GroundTruthSource(str, enum.Enum):
    MANUAL = "manual"
    NONBUG_CURATION = "nonbug_curation"
    USER_PROVIDED = "user_provided"


@dataclass(frozen=True)
class GroundTruthRecord:
    key: IssueKey
    gold_is_bug: bool
    gold_verdict: Verdict | None = None
    source: GroundTruthSource = GroundTruthSource.USER_PROVIDED

    def __post_init__(self) -> None:
        if self.gold_verdict is not None and not self.gold_is_bug:
            raise ValueError(f"{format_key(self.key)}: a verdict requires gold_is_bug")

    def to_record(self) -> dict[str, Any]:
        v = self.gold_verdict
        return {
            "repo": self.key[0].slug,
            "number": self.key[1],
            "is_bug": self.gold_is_bug,
            "verdict": v.value.value if v else None,
            "bug_type": v.bug_type.value if v and v.bug_type else None,
            "source": self.source.value,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> GroundTruthRecord:
        from .framework import BugType

        verdict = None
        if rec.get("verdict"):
            bug_type = BugType(rec["bug_type"]) if rec.get("bug_type") else None
            verdict = Verdict(VerdictClass(rec["verdict"]), bug_type)
        key = (RepoRef.parse(rec["repo"]), int(rec["number"]))
        return cls(
            key=key,
            gold_is_bug=bool(rec.get("is_bug", verdict is not None)),
            gold_verdict=verdict,
            source=GroundTruthSource(rec.get("source", "user_provided")),
        )


def nonbug_ground_truth(issues: Iterable[RawIssue], vocab: LabelVocabulary) -> list[GroundTruthRecord]:
    """Non-PR issues labeled only with allowlisted non-bug labels."""
    return [
        GroundTruthRecord(i.key, False, None, GroundTruthSource.NONBUG_CURATION)
        for i in sorted(issues, key=lambda x: x.key)
        if not i.is_pull_request and is_nonbug_labeled(i.labels, vocab)
    ]


def write_ground_truth(records: Iterable[GroundTruthRecord], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")


def read_ground_truth(path: Path | str) -> list[GroundTruthRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(GroundTruthRecord.from_record(json.loads(line)))
    return out


__all__ = [
    "BugLabelMode", "FilterSpec", "FilterTrace", "GroundTruthRecord", "GroundTruthSource",
    "InvalidPattern", "InvalidVocabulary", "LabelVocabulary", "NonBugCandidates", "TimeWindow",
    "apply_filters", "canonicalize", "curate_nonbug_labels", "is_bug_labeled", "is_closed",
    "is_nonbug_labeled", "is_pull_request", "nonbug_ground_truth", "parse_key",
    "read_ground_truth", "sample_for_review", "write_ground_truth",
]
