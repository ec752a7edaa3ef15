"""Line-delimited JSON snapshots and the per-repository resumable cache.

Every file starts with a header object::

    {"schema_version": 1, "record_kind": "header", "repo": "owner/name", "fetched_at": "..."}

followed by one record per line whose ``record_kind`` is one of ``issue``,
``timeline_event``, ``contributor_set`` or ``tombstone``. Records are upserts:
a later line for the same identity replaces an earlier one.
"""

from __future__ import annotations

import json
import os
import threading
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .._time import format_ts, parse_ts
from .types import ContributorSet, IssueKey, RawIssue, RawTimelineEvent, RepoRef, Tombstone

SCHEMA_VERSION = 1

_DECODERS = {
    "issue": RawIssue.from_record,
    "timeline_event": RawTimelineEvent.from_record,
    "contributor_set": ContributorSet.from_record,
    "tombstone": Tombstone.from_record,
}


class CorruptSnapshot(ValueError):
    def __init__(self, path: Path | str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


def dump_line(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def header(repo: RepoRef | None, fetched_at: datetime | None) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "record_kind": "header",
        "repo": repo.slug if repo else None,
        "fetched_at": format_ts(fetched_at),
    }


def read_records(path: Path | str) -> tuple[dict[str, Any], list[tuple[int, Any]]]:
    """Parse and validate a cache file. Returns the header and decoded records."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        # a file not ending in a newline was cut off mid-write
        if lines:
            raise CorruptSnapshot(path, len(lines), "truncated final line")
    if not lines:
        raise CorruptSnapshot(path, 1, "missing header")
    head = _parse_json(path, 1, lines[0])
    if head.get("record_kind") != "header":
        raise CorruptSnapshot(path, 1, "first line is not a header")
    if head.get("schema_version") != SCHEMA_VERSION:
        raise CorruptSnapshot(path, 1, f"unsupported schema_version {head.get('schema_version')!r}")
    records = []
    for lineno, text in enumerate(lines[1:], start=2):
        raw = _parse_json(path, lineno, text)
        kind = raw.get("record_kind")
        decoder = _DECODERS.get(kind)
        if decoder is None:
            raise CorruptSnapshot(path, lineno, f"unknown record_kind {kind!r}")
        try:
            records.append((lineno, decoder(raw)))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptSnapshot(path, lineno, f"invalid {kind} record: {exc}") from exc
    return head, records


def _parse_json(path: Path, lineno: int, text: str) -> dict[str, Any]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptSnapshot(path, lineno, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(value, dict):
        raise CorruptSnapshot(path, lineno, "record is not a JSON object")
    return value


def _write_atomic(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    os.replace(tmp, path)


@dataclass
class Corpus:
    """Issues, timelines and contributor sets for one or more repositories."""

    issues: dict[IssueKey, RawIssue] = field(default_factory=dict)
    timelines: dict[IssueKey, tuple[RawTimelineEvent, ...]] = field(default_factory=dict)
    contributors: dict[RepoRef, ContributorSet] = field(default_factory=dict)
    tombstones: dict[IssueKey, Tombstone] = field(default_factory=dict)
    fetched_at: datetime | None = None

    @property
    def repos(self) -> list[RepoRef]:
        found = {k[0] for k in self.issues} | set(self.contributors)
        return sorted(found)

    def sorted_issues(self) -> list[RawIssue]:
        return [self.issues[k] for k in sorted(self.issues)]

    def live_issues(self) -> list[RawIssue]:
        return [i for i in self.sorted_issues() if i.key not in self.tombstones]

    def timeline(self, key: IssueKey) -> tuple[RawTimelineEvent, ...]:
        return self.timelines.get(key, ())

    def contributors_for(self, repo: RepoRef) -> ContributorSet:
        found = self.contributors.get(repo)
        if found is None:
            return ContributorSet(repo, frozenset(), self.fetched_at or datetime(1970, 1, 1, tzinfo=timezone.utc))
        return found

    def merge(self, other: Corpus) -> Corpus:
        return Corpus(
            issues={**self.issues, **other.issues},
            timelines={**self.timelines, **other.timelines},
            contributors={**self.contributors, **other.contributors},
            tombstones={**self.tombstones, **other.tombstones},
            fetched_at=max((t for t in (self.fetched_at, other.fetched_at) if t), default=None),
        )

    def subset(self, repos: Iterable[RepoRef]) -> Corpus:
        wanted = set(repos)
        return Corpus(
            issues={k: v for k, v in self.issues.items() if k[0] in wanted},
            timelines={k: v for k, v in self.timelines.items() if k[0] in wanted},
            contributors={k: v for k, v in self.contributors.items() if k in wanted},
            tombstones={k: v for k, v in self.tombstones.items() if k[0] in wanted},
            fetched_at=self.fetched_at,
        )

    def iter_records(self) -> Iterator[dict[str, Any]]:
        """Canonical record order: issues, tombstones, contributors, timelines."""
        for key in sorted(self.issues):
            yield self.issues[key].to_record()
        for key in sorted(self.tombstones):
            yield self.tombstones[key].to_record()
        for repo in sorted(self.contributors):
            yield self.contributors[repo].to_record()
        for key in sorted(self.timelines):
            for event in self.timelines[key]:
                yield event.to_record()

    def add(self, record: Any) -> None:
        if isinstance(record, RawIssue):
            self.issues[record.key] = record
        elif isinstance(record, Tombstone):
            self.tombstones[record.key] = record
        elif isinstance(record, ContributorSet):
            self.contributors[record.repo] = record
        elif isinstance(record, RawTimelineEvent):
            events = {e.event_id: e for e in self.timelines.get(record.issue_key, ())}
            events[record.event_id] = record
            self.timelines[record.issue_key] = chronological(events.values())
        else:
            raise TypeError(f"unsupported record {type(record).__name__}")


def chronological(events: Iterable[RawTimelineEvent]) -> tuple[RawTimelineEvent, ...]:
    return tuple(sorted(events, key=lambda e: e.created_at))


def snapshot_store(corpus: Corpus, path: Path | str) -> None:
    repos = corpus.repos
    head = header(repos[0] if len(repos) == 1 else None, corpus.fetched_at)
    lines = [dump_line(head)]
    lines.extend(dump_line(rec) for rec in corpus.iter_records())
    _write_atomic(Path(path), lines)


def snapshot_load(path: Path | str) -> Corpus:
    head, records = read_records(path)
    corpus = Corpus(fetched_at=parse_ts(head.get("fetched_at")))
    grouped: dict[IssueKey, dict[str, RawTimelineEvent]] = {}
    for _, rec in records:
        if isinstance(rec, RawTimelineEvent):
            grouped.setdefault(rec.issue_key, {})[rec.event_id] = rec
        else:
            corpus.add(rec)
    for key, events in grouped.items():
        corpus.timelines[key] = chronological(events.values())
    return corpus


class RepoCache:
    """Resumable on-disk cache for one repository.

    Layout under ``root/owner/name/``: ``issues.jsonl`` (append-only issue and
    tombstone log), ``contributors.jsonl``, ``timelines/<number>.jsonl`` and
    ``progress.json`` holding the next issue page while a crawl is unfinished.
    """

    def __init__(self, root: Path | str, repo: RepoRef) -> None:
        self.repo = repo
        self.dir = Path(root) / repo.owner / repo.name
        self._lock = threading.Lock()

    @property
    def issues_path(self) -> Path:
        return self.dir / "issues.jsonl"

    @property
    def contributors_path(self) -> Path:
        return self.dir / "contributors.jsonl"

    @property
    def progress_path(self) -> Path:
        return self.dir / "progress.json"

    def timeline_path(self, number: int) -> Path:
        return self.dir / "timelines" / f"{number}.jsonl"

    def ensure_issue_log(self, fetched_at: datetime) -> None:
        with self._lock:
            if not self.issues_path.exists():
                _write_atomic(self.issues_path, [dump_line(header(self.repo, fetched_at))])

    def append(self, record: RawIssue | Tombstone) -> None:
        with self._lock:
            with self.issues_path.open("a", encoding="utf-8", newline="\n") as fh:
                fh.write(dump_line(record.to_record()))
                fh.flush()

    def load_issues(self) -> tuple[dict[int, RawIssue], dict[int, Tombstone]]:
        if not self.issues_path.exists():
            return {}, {}
        _, records = read_records(self.issues_path)
        issues: dict[int, RawIssue] = {}
        tombstones: dict[int, Tombstone] = {}
        for _, rec in records:
            if isinstance(rec, RawIssue):
                issues[rec.number] = rec
                # a fresh copy of a deleted issue revives it
                tombstones.pop(rec.number, None)
            elif isinstance(rec, Tombstone):
                tombstones[rec.number] = rec
        return issues, tombstones

    def compact(self) -> None:
        """Rewrite the issue log in canonical order with one line per identity."""
        with self._lock:
            if not self.issues_path.exists():
                return
            head, _ = read_records(self.issues_path)
        issues, tombstones = self.load_issues()
        lines = [dump_line(head)]
        lines.extend(dump_line(issues[n].to_record()) for n in sorted(issues))
        lines.extend(dump_line(tombstones[n].to_record()) for n in sorted(tombstones))
        with self._lock:
            _write_atomic(self.issues_path, lines)

    def load_timeline(self, number: int) -> tuple[RawTimelineEvent, ...] | None:
        path = self.timeline_path(number)
        if not path.exists():
            return None
        _, records = read_records(path)
        events = {r.event_id: r for _, r in records if isinstance(r, RawTimelineEvent)}
        return chronological(events.values())

    def store_timeline(self, number: int, events: Iterable[RawTimelineEvent], fetched_at: datetime) -> None:
        lines = [dump_line(header(self.repo, fetched_at))]
        lines.extend(dump_line(e.to_record()) for e in events)
        with self._lock:
            _write_atomic(self.timeline_path(number), lines)

    def load_contributors(self) -> ContributorSet | None:
        if not self.contributors_path.exists():
            return None
        _, records = read_records(self.contributors_path)
        found = [r for _, r in records if isinstance(r, ContributorSet)]
        return found[-1] if found else None

    def store_contributors(self, contributors: ContributorSet) -> None:
        lines = [dump_line(header(self.repo, contributors.fetched_at)), dump_line(contributors.to_record())]
        with self._lock:
            _write_atomic(self.contributors_path, lines)

    def read_progress(self) -> dict[str, Any] | None:
        if not self.progress_path.exists():
            return None
        return json.loads(self.progress_path.read_text(encoding="utf-8"))

    def write_progress(self, progress: dict[str, Any]) -> None:
        with self._lock:
            _write_atomic(self.progress_path, [json.dumps(progress, sort_keys=True) + "\n"])

    def clear_progress(self) -> None:
        with self._lock:
            self.progress_path.unlink(missing_ok=True)

    def to_corpus(self) -> Corpus:
        issues, tombstones = self.load_issues()
        corpus = Corpus()
        if self.issues_path.exists():
            head, _ = read_records(self.issues_path)
            corpus.fetched_at = parse_ts(head.get("fetched_at"))
        for rec in issues.values():
            corpus.issues[rec.key] = rec
        for tomb in tombstones.values():
            corpus.tombstones[tomb.key] = tomb
        contributors = self.load_contributors()
        if contributors is not None:
            corpus.contributors[self.repo] = contributors
        for number in sorted(issues):
            events = self.load_timeline(number)
            if events is not None:
                corpus.timelines[(self.repo, number)] = events
        return corpus


def load_cache_dir(root: Path | str, repos: Iterable[RepoRef] | None = None) -> Corpus:
    """Collect every cached repository under ``root`` (or just ``repos``) into one corpus."""
    root = Path(root)
    if repos is None:
        repos = sorted(
            RepoRef(p.parent.name, p.name)
            for p in root.glob("*/*")
            if (p / "issues.jsonl").exists() or (p / "contributors.jsonl").exists()
        )
    corpus = Corpus()
    for repo in repos:
        corpus = corpus.merge(RepoCache(root, repo).to_corpus())
    return corpus
